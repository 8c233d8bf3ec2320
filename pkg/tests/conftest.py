"""Shared pytest wiring: the acceptance-criterion summary block.

Each acceptance test registers a detail line when its criterion holds;
this hook prints one PASS/FAIL line per criterion after the run,
outside stdout capture.
"""

import re

ACCEPT_DETAIL: dict[int, str] = {}
_RESULTS: dict[str, str] = {}
_NUM_RE = re.compile(r"test_(\d+)_")


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance" in report.nodeid:
        _RESULTS[report.nodeid] = report.outcome


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for nodeid, outcome in sorted(_RESULTS.items()):
        name = nodeid.split("::")[-1]
        match = _NUM_RE.match(name)
        detail = ACCEPT_DETAIL.get(int(match.group(1)) if match else -1, "")
        status = "PASS" if outcome == "passed" else "FAIL"
        line = f"{status}  {name}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)
