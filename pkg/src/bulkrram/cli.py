"""Experiment driver: one subcommand per study, CSV + SVG artifacts.

Every run resolves its configuration from defaults, an optional JSON
config file, and command-line flags (in that order), then writes the
fully resolved configuration to ``manifest.json`` in the output
directory.  Re-running any command from its manifest reproduces the run
byte for byte.  ``BULKRRAM_OUTDIR`` and ``BULKRRAM_THREADS`` override
the output directory and worker count; no other environment variable is
consulted.

Exit codes: 0 success, 2 usage or configuration error, 3 input parse
error, 4 model degeneracy (no trap-filling region), 5 solver or backend
fault, 1 anything else.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys

import numpy as np

from . import __version__, ivfit, neuroevo, nodal, raceway, snn, svgplot, xbar
from .device import DeviceParams, PresetError, PulseScheme, ltp_ltd_trace, \
    write_trace_csv
from .svgplot import Series

EXIT_OK = 0
EXIT_OTHER = 1
EXIT_USAGE = 2
EXIT_PARSE = 3
EXIT_DEGENERATE = 4
EXIT_SOLVER = 5

DEFAULTS = {
    "seed": 0,
    "out": "",
    "threads": 1,
    "device": {"preset": "S4-DC"},
    "crossbar": {"rows": 16, "cols": 16, "line_r": 0.0, "v_ref": 0.0,
                 "v_read_amp": 0.1},
    "episode": {"dt": 0.02, "max_steps": 1200, "laps_target": 2.0,
                "window_steps": 50},
    "lidar": {"beams": 960, "fov_deg": 270.0, "max_range": 30.0},
    "evolution": {"population": 50, "generations": 30, "tournament_size": 4,
                  "crossover_rate": 0.75, "mutation_rate": 0.9,
                  "duplication_rate": 0.05, "elitism": 1},
}


class ConfigError(ValueError):
    pass


def _deep_update(base: dict, extra: dict) -> dict:
    out = dict(base)
    for key, value in extra.items():
        if key not in base:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {key!r} must be a table")
            out[key] = _deep_update(base[key], value)
        else:
            out[key] = value
    return out


def resolve_config(args: argparse.Namespace, command: str) -> dict:
    cfg = {k: (dict(v) if isinstance(v, dict) else v)
           for k, v in DEFAULTS.items()}
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"bad config JSON: {exc}") from None
        if "config" in doc and "command" in doc:
            doc = doc["config"]  # accept a manifest directly
        cfg = _deep_update(cfg, doc)
    for name in ("seed", "out", "threads"):
        value = getattr(args, name, None)
        if value is not None:
            cfg[name] = value
    for section in ("device", "crossbar", "episode", "lidar", "evolution"):
        for key in DEFAULTS[section]:
            value = getattr(args, f"{section}_{key}", None)
            if value is not None:
                cfg[section][key] = value
    if not cfg["out"]:
        cfg["out"] = os.path.join("runs", command)
    if os.environ.get("BULKRRAM_OUTDIR"):
        cfg["out"] = os.environ["BULKRRAM_OUTDIR"]
    if os.environ.get("BULKRRAM_THREADS"):
        cfg["threads"] = int(os.environ["BULKRRAM_THREADS"])
    return cfg


def write_manifest(cfg: dict, command: str) -> None:
    os.makedirs(cfg["out"], exist_ok=True)
    doc = {"command": command, "package": "bulkrram",
           "version": __version__, "config": cfg}
    with open(os.path.join(cfg["out"], "manifest.json"), "w",
              encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def episode_config(cfg: dict) -> raceway.EpisodeConfig:
    e = cfg["episode"]
    return raceway.EpisodeConfig(dt=e["dt"], max_steps=int(e["max_steps"]),
                                 laps_target=e["laps_target"],
                                 window_steps=int(e["window_steps"]))


def lidar_config(cfg: dict) -> raceway.LidarConfig:
    l = cfg["lidar"]
    return raceway.LidarConfig(beams=int(l["beams"]),
                               fov=math.radians(l["fov_deg"]),
                               max_range=l["max_range"])


def parse_track_spec(spec: str, car_radius: float = 0.15) -> raceway.Track:
    """A track CSV path, or ``ring[:radius=R,half_width=W,points=N]``."""
    if spec == "ring" or spec.startswith("ring:"):
        params = {"radius": 2.9, "half_width": 1.0, "points": 36}
        if ":" in spec:
            for part in spec.split(":", 1)[1].split(","):
                key, _, value = part.partition("=")
                if key not in params:
                    raise ConfigError(f"unknown ring parameter {key!r}")
                params[key] = float(value)
        return raceway.make_ring_track(params["radius"], params["half_width"],
                                       int(params["points"]),
                                       name=spec)
    return raceway.load_track(spec, car_radius)


def _csv_writer(path):
    fh = open(path, "w", newline="", encoding="utf-8")
    return fh, csv.writer(fh)


# ---------------------------------------------------------------- device

def cmd_device(args) -> int:
    cfg = resolve_config(args, "device")
    params = DeviceParams.preset(cfg["device"]["preset"])
    scheme = PulseScheme.by_name(args.scheme)
    if args.width is not None:
        scheme = PulseScheme.custom(scheme.set_amplitudes,
                                    scheme.reset_amplitudes, args.width)
    trace = ltp_ltd_trace(params, scheme)
    write_manifest(cfg, "device")
    out = cfg["out"]
    write_trace_csv(trace, os.path.join(out, "pulse_trace.csv"))
    idx = [p.pulse_index for p in trace]
    g_us = [p.g * 1e6 for p in trace]
    svgplot.save(os.path.join(out, "pulse_trace.svg"),
                 [Series(args.scheme, idx, g_us)],
                 title=f"{args.scheme} conductance staircase",
                 x_label="pulse index", y_label="conductance (uS)")
    print(f"device: {len(trace)} pulses, g {trace[0].g:.3e} -> "
          f"{trace[len(scheme.set_amplitudes) - 1].g:.3e} S "
          f"-> {trace[-1].g:.3e} S; wrote {out}/pulse_trace.csv")
    return EXIT_OK


# ------------------------------------------------------------------- fit

def cmd_fit(args) -> int:
    cfg = resolve_config(args, "fit")
    try:
        trace = ivfit.read_iv_csv(args.input)
    except (OSError, ValueError) as exc:
        print(f"fit: cannot read {args.input}: {exc}", file=sys.stderr)
        return EXIT_PARSE
    write_manifest(cfg, "fit")
    out = cfg["out"]
    models = ("direct", "fn", "sclc") if args.model == "all" else (args.model,)
    report_rows = []
    lines = [f"I-V fit report for {args.input} ({len(trace)} samples)"]
    overlays = [Series("data", list(trace.v), list(trace.i), kind="scatter")]

    for model in models:
        if model == "direct":
            fit = ivfit.fit_direct(trace, v_max=args.v_max)
            lines.append(f"direct tunneling on ({0}, {args.v_max}] V: "
                         f"i = {fit.coeff_a:.6e} * v   "
                         f"(rms residual {fit.rms_residual:.2e})")
            report_rows += [("direct", "coeff_a", fit.coeff_a),
                            ("direct", "rms_residual", fit.rms_residual)]
            vv = [v for v in trace.v if 0 < v <= args.v_max]
            overlays.append(Series("direct fit", vv,
                                   [fit.coeff_a * v for v in vv]))
        elif model == "fn":
            fit = ivfit.fit_fn(trace, v_min=args.v_min)
            lines.append(f"FN tunneling on [{args.v_min}, ..) V: "
                         f"i = {fit.coeff_a:.6e} * v^2 * "
                         f"exp(-{fit.coeff_b:.6f}/v)   "
                         f"(rms residual {fit.rms_residual:.2e})")
            report_rows += [("fn", "coeff_a", fit.coeff_a),
                            ("fn", "coeff_b", fit.coeff_b),
                            ("fn", "rms_residual", fit.rms_residual)]
            vv = [v for v in trace.v if v >= args.v_min]
            overlays.append(Series("fn fit", vv,
                                   [fit.coeff_a * v * v * math.exp(-fit.coeff_b / v)
                                    for v in vv]))
        else:
            fit = ivfit.fit_sclc(trace)
            extraction = ivfit.trap_density(fit.v_tfl, args.thickness,
                                            args.eps_r)
            lines.append(f"SCLC: slopes {fit.slopes[0]:.3f} / "
                         f"{fit.slopes[1]:.3f} / {fit.slopes[2]:.3f}, "
                         f"v_1 = {fit.breakpoints[0]:.4f} V, "
                         f"v_tfl = {fit.v_tfl:.4f} V")
            lines.append(f"trap density n_t = {extraction.n_t:.4e} m^-3 "
                         f"(L = {args.thickness:.3e} m, "
                         f"eps_r = {args.eps_r})")
            report_rows += [("sclc", "v_1", fit.breakpoints[0]),
                            ("sclc", "v_tfl", fit.v_tfl),
                            ("sclc", "s1", fit.slopes[0]),
                            ("sclc", "s2", fit.slopes[1]),
                            ("sclc", "s3", fit.slopes[2]),
                            ("sclc", "n_t", extraction.n_t),
                            ("sclc", "eps_r", args.eps_r),
                            ("sclc", "thickness_m", args.thickness)]

    fh, writer = _csv_writer(os.path.join(out, "fit_report.csv"))
    with fh:
        writer.writerow(("model", "parameter", "value"))
        for row in report_rows:
            writer.writerow((row[0], row[1], repr(float(row[2]))))
    with open(os.path.join(out, "fit_report.txt"), "w",
              encoding="utf-8") as fh2:
        fh2.write("\n".join(lines) + "\n")
    positive = (trace.v > 0) & (trace.i > 0)
    log_ok = bool(np.all(trace.i[positive] > 0)) and positive.sum() >= 2
    svgplot.save(os.path.join(out, "fit_overlay.svg"), overlays,
                 title="I-V fits", x_label="v (V)", y_label="i (A)",
                 log_x=log_ok, log_y=log_ok)
    print("\n".join(lines))
    print(f"wrote {out}/fit_report.csv")
    return EXIT_OK


# ---------------------------------------------------------------- margin

def cmd_margin(args) -> int:
    cfg = resolve_config(args, "margin")
    sizes = [int(s) for s in args.sizes.split(",")]
    if any(n < 2 for n in sizes):
        raise ConfigError("array sizes must be >= 2")
    write_manifest(cfg, "margin")
    out = cfg["out"]
    line_r = args.line_r
    if args.mode == "read":
        r_offs = [float(v) for v in args.r_off.split(",")]
        r_ons = [float(v) for v in args.r_on.split(",")]
        if len(r_ons) == 1:
            r_ons = r_ons * len(r_offs)
        if len(r_ons) != len(r_offs):
            raise ConfigError("--r-on must match --r-off (or be single)")
        fh, writer = _csv_writer(os.path.join(out, "read_margin.csv"))
        series = []
        with fh:
            writer.writerow(("n", "r_on_ohm", "r_off_ohm", "line_r_ohm",
                             "margin_V"))
            for r_on, r_off in zip(r_ons, r_offs):
                margins = []
                for n in sizes:
                    margin = nodal.read_margin(n, r_on, r_off, line_r,
                                               v_pulse=args.v_pulse)
                    margins.append(margin)
                    writer.writerow((n, repr(r_on), repr(r_off),
                                     repr(line_r), repr(margin)))
                series.append(Series(f"R_off {r_off:.2g}", sizes, margins))
        svgplot.save(os.path.join(out, "read_margin.svg"), series,
                     title="read margin vs array size",
                     x_label="array size n", y_label="margin (V)", log_y=True)
        print(f"margin: wrote {out}/read_margin.csv "
              f"({len(sizes) * len(r_offs)} points)")
    else:
        r_ons = [float(v) for v in args.r_on.split(",")]
        fh, writer = _csv_writer(os.path.join(out, "write_drop.csv"))
        series = []
        with fh:
            writer.writerow(("n", "r_on_ohm", "line_r_ohm", "fraction"))
            for r_on in r_ons:
                fracs = []
                for n in sizes:
                    frac = nodal.write_voltage_drop(n, r_on, line_r)
                    fracs.append(frac)
                    writer.writerow((n, repr(r_on), repr(line_r), repr(frac)))
                series.append(Series(f"R_on {r_on:.2g}", sizes, fracs))
        svgplot.save(os.path.join(out, "write_drop.svg"), series,
                     title="write voltage delivery vs array size",
                     x_label="array size n", y_label="fraction of V_write")
        print(f"margin: wrote {out}/write_drop.csv")
    return EXIT_OK


# ------------------------------------------------------------------- mvm

def cmd_mvm(args) -> int:
    cfg = resolve_config(args, "mvm")
    params = DeviceParams.preset(cfg["device"]["preset"])
    xc = cfg["crossbar"]
    rows, cols = int(xc["rows"]), int(xc["cols"])
    config = xbar.CrossbarConfig(rows=rows, cols=cols, line_r=xc["line_r"],
                                 v_ref=xc["v_ref"],
                                 v_read_amp=xc["v_read_amp"])
    crossbar = xbar.Crossbar.ideal(config, params)
    rng = np.random.default_rng(cfg["seed"])
    noise_rng = None if args.no_noise else rng
    expected_all, measured_all = [], []
    for _ in range(args.trials):
        w = rng.uniform(-1.0, 1.0, (rows // 2, cols))
        x = rng.uniform(0.0, 1.0, rows // 2)
        crossbar.set_weights(w)
        measured = xbar.mvm_differential(crossbar, x, rng=noise_rng)
        expected_all.append(w.T @ x)
        measured_all.append(measured)
    expected = np.concatenate(expected_all)
    measured = np.concatenate(measured_all)
    fit = np.polyfit(expected, measured, 1)
    slope, intercept = float(fit[0]), float(fit[1])
    ss_res = float(np.sum((measured - (slope * expected + intercept)) ** 2))
    ss_tot = float(np.sum((measured - measured.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0

    write_manifest(cfg, "mvm")
    out = cfg["out"]
    fh, writer = _csv_writer(os.path.join(out, "mvm_scatter.csv"))
    with fh:
        writer.writerow(("expected", "measured"))
        for e, m in zip(expected, measured):
            writer.writerow((repr(float(e)), repr(float(m))))
    with open(os.path.join(out, "mvm_stats.txt"), "w", encoding="utf-8") as fh2:
        fh2.write(f"trials = {args.trials}\nslope = {slope!r}\n"
                  f"intercept = {intercept!r}\nr2 = {r2!r}\n")
    lo, hi = float(expected.min()), float(expected.max())
    svgplot.save(os.path.join(out, "mvm_scatter.svg"),
                 [Series("measured", list(expected), list(measured),
                         kind="scatter"),
                  Series("ideal", [lo, hi], [lo, hi])],
                 title="measured vs expected MVM output",
                 x_label="expected", y_label="measured")
    print(f"mvm: {args.trials} trials on {rows}x{cols}, slope {slope:.4f}, "
          f"R^2 {r2:.5f}; wrote {out}/mvm_scatter.csv")
    return EXIT_OK


# ----------------------------------------------------------------- train

def cmd_train(args) -> int:
    cfg = resolve_config(args, "train")
    tracks = [parse_track_spec(s) for s in args.track]
    ev = cfg["evolution"]
    evo_cfg = neuroevo.EvolutionConfig(
        population=int(ev["population"]), generations=int(ev["generations"]),
        tournament_size=int(ev["tournament_size"]),
        crossover_rate=ev["crossover_rate"], mutation_rate=ev["mutation_rate"],
        duplication_rate=ev["duplication_rate"], elitism=int(ev["elitism"]),
        seed=int(cfg["seed"]), threads=int(cfg["threads"]))
    env = episode_config(cfg)
    lidar = lidar_config(cfg)
    write_manifest(cfg, "train")
    out = cfg["out"]
    progress = (lambda s: print(
        f"gen {s.generation:3d}  best {s.best_fitness:.3f}  "
        f"mean {s.mean_fitness:.3f}", flush=True)) if args.progress else None
    result = neuroevo.evolve(evo_cfg, tracks=tracks, env_cfg=env, lidar=lidar,
                             checkpoint_path=args.checkpoint,
                             resume=args.resume, on_generation=progress)
    net = result.best_genome.decode()
    with open(os.path.join(out, "best_network.json"), "w",
              encoding="utf-8") as fh:
        fh.write(snn.serialize(net))
    fh, writer = _csv_writer(os.path.join(out, "evolution_trace.csv"))
    with fh:
        writer.writerow(("generation", "best_fitness", "mean_fitness"))
        for s in result.trace:
            writer.writerow((s.generation, repr(s.best_fitness),
                             repr(s.mean_fitness)))
    fh, writer = _csv_writer(os.path.join(out, "per_track_scores.csv"))
    with fh:
        writer.writerow(("track", "score"))
        for track, score in zip(tracks, result.best_record.per_track):
            writer.writerow((track.name, repr(score)))
    svgplot.save(os.path.join(out, "evolution_trace.svg"),
                 [Series("best", [s.generation for s in result.trace],
                         [s.best_fitness for s in result.trace]),
                  Series("mean", [s.generation for s in result.trace],
                         [s.mean_fitness for s in result.trace])],
                 title="evolution trace", x_label="generation",
                 y_label="fitness")
    print(f"train: best fitness {result.best_fitness:.4f} after "
          f"{evo_cfg.generations} generations; wrote {out}/best_network.json")
    return EXIT_OK


# ---------------------------------------------------------------- deploy

def _action_histogram(actions) -> dict:
    hist: dict = {}
    for steer, speed in actions:
        hist[("steering", steer)] = hist.get(("steering", steer), 0) + 1
        hist[("speed", speed)] = hist.get(("speed", speed), 0) + 1
    return hist


def cmd_deploy(args) -> int:
    cfg = resolve_config(args, "deploy")
    params = DeviceParams.preset(cfg["device"]["preset"])
    with open(args.network, encoding="utf-8") as fh:
        net = snn.deserialize(fh.read())
    tracks = [parse_track_spec(s) for s in args.track]
    env = episode_config(cfg)
    lidar = lidar_config(cfg)
    qnet = snn.quantize_network(net, args.bits)

    exact_scores = []
    exact_actions: list = []
    for track in tracks:
        acts: list = []
        exact_scores.append(raceway.run_episode(net, track, env, lidar=lidar,
                                                actions=acts))
        exact_actions.extend(acts)

    hw_rows = []
    hw_hist_total: dict = {}
    first_backend = None
    for k in range(args.seeds):
        if args.no_noise:
            noise_rng, d2d_seed = None, None
        else:
            noise_rng = np.random.default_rng(int(cfg["seed"]) * 100_003 + k)
            d2d_seed = k
        backend = snn.CrossbarBackend.for_network(
            qnet, params, line_r=cfg["crossbar"]["line_r"], rng=noise_rng,
            programming=args.programming, seed=d2d_seed)
        if first_backend is None:
            first_backend = backend
        for track in tracks:
            acts = []
            score = raceway.run_episode(qnet, track, env, lidar=lidar,
                                        backend=backend, actions=acts)
            hw_rows.append((track.name, k, score))
            for key, count in _action_histogram(acts).items():
                hw_hist_total[key] = hw_hist_total.get(key, 0) + count

    write_manifest(cfg, "deploy")
    out = cfg["out"]
    exact_by_track = {t.name: s for t, s in zip(tracks, exact_scores)}
    fh, writer = _csv_writer(os.path.join(out, "deploy_scores.csv"))
    with fh:
        writer.writerow(("track", "noise_seed", "exact_score",
                         "crossbar_score", "gap"))
        for name, k, score in hw_rows:
            writer.writerow((name, k, repr(exact_by_track[name]), repr(score),
                             repr(exact_by_track[name] - score)))
    exact_hist = _action_histogram(exact_actions)
    keys = sorted(set(exact_hist) | set(hw_hist_total))
    fh, writer = _csv_writer(os.path.join(out, "action_histogram.csv"))
    with fh:
        writer.writerow(("group", "value", "count_exact",
                         "count_crossbar_mean"))
        for group, value in keys:
            writer.writerow((group, repr(value),
                             exact_hist.get((group, value), 0),
                             repr(hw_hist_total.get((group, value), 0)
                                  / max(args.seeds, 1))))
    # target vs programmed conductance maps for the first noise seed
    if first_backend is not None and first_backend.crossbar is not None:
        comp = qnet.compiled()
        post = np.flatnonzero(~comp.is_input)
        w = comp.w_stack[:, post]
        g_plus, g_minus = xbar.encode_differential(w, params)
        targets = np.empty((2 * w.shape[0], w.shape[1]))
        targets[0::2], targets[1::2] = g_plus, g_minus
        xbar.write_grid_csv(targets, os.path.join(out, "weights_target.csv"))
        xbar.write_grid_csv(first_backend.crossbar.g,
                            os.path.join(out, "weights_programmed.csv"))
        corr = float(np.corrcoef(targets.ravel(),
                                 first_backend.crossbar.g.ravel())[0, 1])
    else:
        corr = float("nan")
    mean_exact = float(np.mean(exact_scores))
    mean_hw = float(np.mean([r[2] for r in hw_rows]))
    gap = mean_exact - mean_hw
    with open(os.path.join(out, "deploy_report.txt"), "w",
              encoding="utf-8") as fh2:
        fh2.write(f"tracks = {len(tracks)}\nnoise_seeds = {args.seeds}\n"
                  f"mean_exact = {mean_exact!r}\nmean_crossbar = {mean_hw!r}\n"
                  f"mean_gap = {gap!r}\nweight_map_correlation = {corr!r}\n")
    print(f"deploy: exact {mean_exact:.4f}, crossbar {mean_hw:.4f} "
          f"(gap {gap:+.4f}), weight-map corr {corr:.5f}; wrote {out}/")
    return EXIT_OK


# ------------------------------------------------------------------ race

def cmd_race(args) -> int:
    cfg = resolve_config(args, "race")
    with open(args.network, encoding="utf-8") as fh:
        net = snn.deserialize(fh.read())
    track = parse_track_spec(args.track)
    env = episode_config(cfg)
    lidar = lidar_config(cfg)
    backend = None
    if args.backend == "crossbar":
        params = DeviceParams.preset(cfg["device"]["preset"])
        qnet = snn.quantize_network(net, args.bits)
        rng = None if args.no_noise else np.random.default_rng(cfg["seed"])
        d2d_seed = None if args.no_noise else int(cfg["seed"])
        backend = snn.CrossbarBackend.for_network(
            qnet, params, line_r=cfg["crossbar"]["line_r"], rng=rng,
            programming=args.programming, seed=d2d_seed)
        net = qnet
    trajectory: list = []
    score = raceway.run_episode(net, track, env, lidar=lidar, backend=backend,
                                trajectory=trajectory)
    write_manifest(cfg, "race")
    out = cfg["out"]
    raceway.write_trajectory_csv(trajectory,
                                 os.path.join(out, "trajectory.csv"))
    with open(os.path.join(out, "episode_summary.txt"), "w",
              encoding="utf-8") as fh2:
        fh2.write(f"track = {track.name}\nbackend = {args.backend}\n"
                  f"steps = {len(trajectory)}\nscore = {score!r}\n")
    print(f"race: score {score:.4f} over {len(trajectory)} control steps "
          f"on {track.name} ({args.backend}); wrote {out}/trajectory.csv")
    return EXIT_OK


# ----------------------------------------------------------------- wiring

def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="JSON config file (or a manifest)")
    sub.add_argument("--out", help="output directory")
    sub.add_argument("--seed", type=int, help="global seed")
    sub.add_argument("--threads", type=int, help="worker processes")
    sub.add_argument("--preset", dest="device_preset",
                     help="device preset name (S4-DC or S4-pulse)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bulkrram",
        description="Bulk-switching RRAM compute-in-memory experiments")
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("device", help="pulse-scheme conductance staircases")
    _add_common(p)
    p.add_argument("--scheme", default="incremental-100",
                   help="identical-a, identical-b, or incremental-100")
    p.add_argument("--width", type=float, help="override pulse width (s)")
    p.set_defaults(func=cmd_device)

    p = subs.add_parser("fit", help="conduction-regime fits of an I-V CSV")
    _add_common(p)
    p.add_argument("--input", required=True, help="I-V CSV (v_V,i_A)")
    p.add_argument("--model", default="all",
                   choices=("direct", "fn", "sclc", "all"))
    p.add_argument("--v-max", type=float, default=0.06,
                   help="direct-tunneling window upper edge (V)")
    p.add_argument("--v-min", type=float, default=0.5,
                   help="FN window lower edge (V)")
    p.add_argument("--thickness", type=float, default=40e-9,
                   help="oxide thickness for trap density (m)")
    p.add_argument("--eps-r", type=float, default=40.0,
                   help="relative permittivity for trap density")
    p.set_defaults(func=cmd_fit)

    p = subs.add_parser("margin", help="read-margin / write-drop sweeps")
    _add_common(p)
    p.add_argument("--mode", default="read", choices=("read", "write"))
    p.add_argument("--sizes", default="8,16,32,64,128")
    p.add_argument("--r-on", default="410e3", help="comma list (ohm)")
    p.add_argument("--r-off", default="1e6,10e6", help="comma list (ohm)")
    p.add_argument("--line-r", type=float, default=2.0)
    p.add_argument("--v-pulse", type=float, default=0.1)
    p.set_defaults(func=cmd_margin)

    p = subs.add_parser("mvm", help="measured-vs-expected MVM regression")
    _add_common(p)
    p.add_argument("--rows", dest="crossbar_rows", type=int)
    p.add_argument("--cols", dest="crossbar_cols", type=int)
    p.add_argument("--line-r", dest="crossbar_line_r", type=float)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--no-noise", action="store_true")
    p.set_defaults(func=cmd_mvm)

    p = subs.add_parser("train", help="evolve a racing controller")
    _add_common(p)
    p.add_argument("--track", action="append", required=True,
                   help="track CSV or ring[:radius=..,half_width=..,points=..]"
                        " (repeatable)")
    p.add_argument("--population", dest="evolution_population", type=int)
    p.add_argument("--generations", dest="evolution_generations", type=int)
    p.add_argument("--dt", dest="episode_dt", type=float)
    p.add_argument("--max-steps", dest="episode_max_steps", type=int)
    p.add_argument("--checkpoint", help="checkpoint file path")
    p.add_argument("--resume", action="store_true")
    p.add_argument("--progress", action="store_true",
                   help="print per-generation fitness")
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("deploy", help="map a network onto the simulated "
                                       "crossbar and compare backends")
    _add_common(p)
    p.add_argument("--network", required=True, help="network JSON file")
    p.add_argument("--track", action="append", required=True)
    p.add_argument("--seeds", type=int, default=20, help="noise seeds")
    p.add_argument("--bits", type=int, default=4)
    p.add_argument("--programming", default="closed-loop",
                   choices=("ideal", "closed-loop", "open-loop"))
    p.add_argument("--no-noise", action="store_true",
                   help="disable spread and read noise (ideal hardware)")
    p.add_argument("--line-r", dest="crossbar_line_r", type=float)
    p.add_argument("--dt", dest="episode_dt", type=float)
    p.add_argument("--max-steps", dest="episode_max_steps", type=int)
    p.set_defaults(func=cmd_deploy)

    p = subs.add_parser("race", help="run one episode and log the trajectory")
    _add_common(p)
    p.add_argument("--network", required=True)
    p.add_argument("--track", required=True)
    p.add_argument("--backend", default="exact",
                   choices=("exact", "crossbar"))
    p.add_argument("--bits", type=int, default=4)
    p.add_argument("--programming", default="closed-loop",
                   choices=("ideal", "closed-loop", "open-loop"))
    p.add_argument("--no-noise", action="store_true")
    p.add_argument("--dt", dest="episode_dt", type=float)
    p.add_argument("--max-steps", dest="episode_max_steps", type=int)
    p.set_defaults(func=cmd_race)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ivfit.DegenerateFit as exc:
        print(f"error: degenerate fit: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (nodal.SingularNetwork, snn.BackendFault) as exc:
        print(f"error: solver fault: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (PresetError, snn.ParseError, raceway.TrackParseError,
            raceway.GeometryError, ivfit.InsufficientData,
            ivfit.NonPositiveCurrent) as exc:
        print(f"error: bad input: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (ConfigError, ValueError) as exc:
        print(f"error: bad configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
