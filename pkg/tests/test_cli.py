import csv
import json
import os

import numpy as np
import pytest

from bulkrram.cli import main
from bulkrram.ivfit import synth_sclc, write_iv_csv

FIXTURE_NET = os.path.join(os.path.dirname(__file__), "fixtures",
                           "ring_champion.json")


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestDevice:
    def test_incremental_writes_200_rows(self, tmp_path):
        out = str(tmp_path / "run")
        assert main(["device", "--scheme", "incremental-100",
                     "--out", out]) == 0
        rows = read_rows(os.path.join(out, "pulse_trace.csv"))
        assert len(rows) == 201  # header + 100 set + 100 reset
        assert os.path.exists(os.path.join(out, "pulse_trace.svg"))
        assert os.path.exists(os.path.join(out, "manifest.json"))

    def test_unknown_scheme_usage_error(self, tmp_path):
        assert main(["device", "--scheme", "nope",
                     "--out", str(tmp_path / "x")]) == 2

    def test_repeat_run_byte_identical(self, tmp_path):
        a, b = str(tmp_path / "a"), str(tmp_path / "b")
        main(["device", "--scheme", "identical-a", "--out", a])
        main(["device", "--scheme", "identical-a", "--out", b])
        for name in ("pulse_trace.csv", "pulse_trace.svg"):
            with open(os.path.join(a, name), "rb") as fa, \
                    open(os.path.join(b, name), "rb") as fb:
                assert fa.read() == fb.read()


class TestFit:
    def make_input(self, tmp_path):
        grid = np.logspace(np.log10(0.01), np.log10(2.0), 120)
        trace = synth_sclc(1e-5, (1, 2, 5), (0.1, 0.6),
                           np.unique(np.r_[grid, 0.1, 0.6]),
                           sigma=0.01, seed=5)
        path = str(tmp_path / "iv.csv")
        write_iv_csv(trace, path)
        return path

    def test_sclc_fit_recovers(self, tmp_path, capsys):
        path = self.make_input(tmp_path)
        out = str(tmp_path / "run")
        assert main(["fit", "--input", path, "--model", "sclc",
                     "--out", out]) == 0
        rows = {(r[0], r[1]): float(r[2])
                for r in read_rows(os.path.join(out, "fit_report.csv"))[1:]}
        assert rows[("sclc", "v_tfl")] == pytest.approx(0.6, rel=0.05)
        assert rows[("sclc", "s2")] == pytest.approx(2.0, abs=0.15)

    def test_missing_file_parse_error(self, tmp_path):
        assert main(["fit", "--input", str(tmp_path / "none.csv"),
                     "--out", str(tmp_path / "r")]) == 3

    def test_empty_file_parse_error(self, tmp_path):
        empty = tmp_path / "empty.csv"
        empty.write_text("")
        assert main(["fit", "--input", str(empty),
                     "--out", str(tmp_path / "r")]) == 3

    def test_ohmic_sclc_degenerate_exit(self, tmp_path, capsys):
        grid = np.logspace(-2, 0.3, 40)
        path = str(tmp_path / "ohmic.csv")
        write_iv_csv(synth_sclc(1e-6, (1, 1, 1), (0.1, 0.6), grid), path)
        code = main(["fit", "--input", path, "--model", "sclc",
                     "--out", str(tmp_path / "r")])
        assert code == 4
        assert "degenerate" in capsys.readouterr().err.lower()


class TestMargin:
    def test_read_sweep_csv(self, tmp_path):
        out = str(tmp_path / "m")
        assert main(["margin", "--sizes", "2,4", "--r-on", "410e3",
                     "--r-off", "1e6", "--line-r", "2.0", "--out", out]) == 0
        rows = read_rows(os.path.join(out, "read_margin.csv"))
        assert rows[0] == ["n", "r_on_ohm", "r_off_ohm", "line_r_ohm",
                           "margin_V"]
        assert len(rows) == 3

    def test_size_one_rejected(self, tmp_path):
        assert main(["margin", "--sizes", "1,4",
                     "--out", str(tmp_path / "m")]) == 2

    def test_write_mode(self, tmp_path):
        out = str(tmp_path / "w")
        assert main(["margin", "--mode", "write", "--sizes", "2,4",
                     "--r-on", "410e3", "--line-r", "2.0", "--out", out]) == 0
        rows = read_rows(os.path.join(out, "write_drop.csv"))
        assert rows[0] == ["n", "r_on_ohm", "line_r_ohm", "fraction"]

    def test_zero_line_r_matches_ideal_divider(self, tmp_path):
        out = str(tmp_path / "z")
        main(["margin", "--sizes", "4", "--r-on", "410e3", "--r-off", "1e6",
              "--line-r", "0", "--out", out])
        margin = float(read_rows(os.path.join(out, "read_margin.csv"))[1][4])
        g_on, g_off, rest = 1 / 410e3, 1 / 1e6, 3 / 410e3
        ideal = 0.1 * (g_on / (g_on + rest) - g_off / (g_off + rest))
        assert margin == pytest.approx(ideal, rel=1e-12)


class TestMvm:
    def test_zero_noise_perfect_regression(self, tmp_path):
        out = str(tmp_path / "mvm")
        assert main(["mvm", "--trials", "20", "--no-noise", "--seed", "3",
                     "--out", out]) == 0
        stats = dict(line.split(" = ") for line in
                     open(os.path.join(out, "mvm_stats.txt")).read().splitlines())
        assert float(stats["slope"]) == pytest.approx(1.0, abs=1e-9)
        assert float(stats["r2"]) == pytest.approx(1.0, abs=1e-12)

    def test_seed_pinning_identical_files(self, tmp_path):
        a, b = str(tmp_path / "a"), str(tmp_path / "b")
        for out in (a, b):
            main(["mvm", "--trials", "5", "--seed", "11", "--out", out])
        with open(os.path.join(a, "mvm_scatter.csv"), "rb") as fa, \
                open(os.path.join(b, "mvm_scatter.csv"), "rb") as fb:
            assert fa.read() == fb.read()


class TestTrainDeployRace:
    def test_train_generations_zero_persists_best(self, tmp_path):
        out = str(tmp_path / "t")
        assert main(["train", "--track", "ring", "--population", "6",
                     "--generations", "0", "--max-steps", "40",
                     "--seed", "4", "--out", out]) == 0
        assert os.path.exists(os.path.join(out, "best_network.json"))
        rows = read_rows(os.path.join(out, "evolution_trace.csv"))
        assert rows[0] == ["generation", "best_fitness", "mean_fitness"]
        assert len(rows) == 2

    def test_train_trace_monotone(self, tmp_path):
        out = str(tmp_path / "t2")
        assert main(["train", "--track", "ring", "--population", "8",
                     "--generations", "3", "--max-steps", "40",
                     "--seed", "4", "--out", out]) == 0
        rows = read_rows(os.path.join(out, "evolution_trace.csv"))[1:]
        best = [float(r[1]) for r in rows]
        assert all(b >= a for a, b in zip(best, best[1:]))

    def test_deploy_zero_noise_equivalence(self, tmp_path):
        out = str(tmp_path / "d")
        code = main(["deploy", "--network", FIXTURE_NET, "--track", "ring",
                     "--seeds", "2", "--no-noise", "--programming", "ideal",
                     "--max-steps", "400", "--out", out])
        assert code == 0
        rows = read_rows(os.path.join(out, "deploy_scores.csv"))[1:]
        # ideal hardware on the quantized net: zero gap for every seed
        for row in rows:
            assert float(row[4]) == pytest.approx(0.0, abs=1e-12)
        assert os.path.exists(os.path.join(out, "weights_target.csv"))
        assert os.path.exists(os.path.join(out, "weights_programmed.csv"))
        assert os.path.exists(os.path.join(out, "action_histogram.csv"))

    def test_race_trajectory(self, tmp_path):
        out = str(tmp_path / "r")
        assert main(["race", "--network", FIXTURE_NET, "--track", "ring",
                     "--max-steps", "200", "--out", out]) == 0
        rows = read_rows(os.path.join(out, "trajectory.csv"))
        assert rows[0] == ["t_s", "x_m", "y_m", "heading_rad", "speed_mps",
                           "steer_rad", "alive"]
        assert len(rows) > 100

    def test_bad_network_file_parse_error(self, tmp_path):
        bad = tmp_path / "net.json"
        bad.write_text("{ nope }")
        assert main(["race", "--network", str(bad), "--track", "ring",
                     "--out", str(tmp_path / "r")]) == 3


class TestConfigAndManifest:
    def test_manifest_rerun_reproduces(self, tmp_path):
        a = str(tmp_path / "a")
        main(["device", "--scheme", "identical-b", "--out", a])
        manifest = os.path.join(a, "manifest.json")
        b = str(tmp_path / "b")
        assert main(["device", "--scheme", "identical-b", "--config",
                     manifest, "--out", b]) == 0
        for name in ("pulse_trace.csv",):
            with open(os.path.join(a, name), "rb") as fa, \
                    open(os.path.join(b, name), "rb") as fb:
                assert fa.read() == fb.read()

    def test_config_file_overrides_defaults(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"device": {"preset": "S4-pulse"}}))
        out = str(tmp_path / "o")
        assert main(["device", "--scheme", "identical-a",
                     "--config", str(cfg), "--out", out]) == 0
        doc = json.load(open(os.path.join(out, "manifest.json")))
        assert doc["config"]["device"]["preset"] == "S4-pulse"

    def test_unknown_config_key_rejected(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"mystery": 1}))
        assert main(["device", "--scheme", "identical-a", "--config",
                     str(cfg), "--out", str(tmp_path / "o")]) == 2

    def test_env_overrides_outdir(self, tmp_path, monkeypatch):
        target = str(tmp_path / "env-out")
        monkeypatch.setenv("BULKRRAM_OUTDIR", target)
        assert main(["device", "--scheme", "identical-a",
                     "--out", str(tmp_path / "ignored")]) == 0
        assert os.path.exists(os.path.join(target, "pulse_trace.csv"))


class TestCheckpointResume:
    def test_train_resume_continues_generations(self, tmp_path):
        ck = str(tmp_path / "ck.json")
        main(["train", "--track", "ring", "--population", "6",
              "--generations", "2", "--max-steps", "40", "--seed", "5",
              "--checkpoint", ck, "--out", str(tmp_path / "a")])
        assert os.path.exists(ck)
        out = str(tmp_path / "b")
        assert main(["train", "--track", "ring", "--population", "6",
                     "--generations", "4", "--max-steps", "40", "--seed", "5",
                     "--checkpoint", ck, "--resume", "--out", out]) == 0
        rows = read_rows(os.path.join(out, "evolution_trace.csv"))[1:]
        assert int(rows[0][0]) == 2 and int(rows[-1][0]) == 4
