"""Command-line entry point: ``gtf simulate|calibrate|solve|analyze``.

Exit codes: 0 success, 2 configuration or input error, 3 numerical or
degenerate-geometry error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import analysis, io
from .config import RunConfig, load_config
from .errors import GtfError, InputError, NumericalError
from .geometry import calibrate_stations
from .pipeline import gate, interpolate, run, unify_frames
from .radio import check_half_duplex, delivery_rates, write_event_log
from .scenario import run_scenario
from .types import STATIONS, US_PER_S

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3
MODES = ("static", "dynamic", "perturb", "gnss")


def _layout(cfg: RunConfig):
    if "layout" in cfg.inputs or "dir" in cfg.inputs:
        try:
            return io.layout_from_json(io.read_json(cfg.input_path("layout")))
        except InputError:
            if "layout" in cfg.inputs:
                raise
    return cfg.layout


def cmd_simulate(cfg: RunConfig, out: Path) -> int:
    res = run_scenario(cfg)
    spec = res.trajectory
    io.write_measurements(out / "measurements.csv", res.measurements)
    io.write_measurements(out / "measurements_realtime.csv", res.realtime_measurements)
    write_event_log(out / "events.csv", res.events)
    step = cfg.interpolation.step_us
    gt_t = np.arange(-(-spec.t0_us // step) * step, spec.t_end_us + 1, step, dtype=np.int64)
    io.write_ground_truth(out / "ground_truth.csv", spec, gt_t)
    io.write_json(out / "skews.json", io.skews_to_json(res.skews))
    io.write_markers(out / "markers.csv", res.markers)
    true_cal = {"schema": "gtf.calibration/1",
                "t12": io.transform_to_json(cfg.stations[1].model.pose),
                "t13": io.transform_to_json(cfg.stations[2].model.pose), "rms": 0.0}
    io.write_json(out / "calibration_true.json", true_cal)
    io.write_json(out / "layout.json", io.layout_to_json(cfg.layout))
    io.write_json(out / "trajectory.json", spec.to_json())
    if res.gnss is not None:
        io.write_gnss(out / "gnss.csv", res.gnss)
    rates = delivery_rates(res.events, res.measure_start_us, spec.t_end_us)
    summary = {
        "seed": cfg.seed,
        "measure_start_us": res.measure_start_us,
        "trajectory_t0_us": spec.t0_us,
        "trajectory_end_us": spec.t_end_us,
        "samples_per_station": {st.value: len(res.station_logs[st].measurements) for st in STATIONS},
        "lost_per_station": {st.value: res.station_logs[st].n_lost for st in STATIONS},
        "outage_per_station": {st.value: res.station_logs[st].n_outage for st in STATIONS},
        "delivered": len(res.delivered),
        "aggregate_rate_hz": res.delivery_rate(),
        "per_station_rate_hz": {str(k): v for k, v in rates.items()},
        "resyncs": res.resyncs,
        "sync_failures": res.sync_failures,
        "half_duplex_ok": check_half_duplex(res.events),
        "final_skew_error_us": {st.value: res.skews[st].delta - s.clock.skew_at(spec.t_end_us)
                                for st, s in zip(STATIONS, cfg.stations)},
    }
    io.write_json(out / "summary.json", summary)
    print(f"simulated {len(res.measurements)} samples, {len(res.delivered)} delivered "
          f"({summary['aggregate_rate_hz']:.3f} Hz aggregate)")
    return EXIT_OK


def cmd_calibrate(cfg: RunConfig, out: Path) -> int:
    cal = calibrate_stations(io.read_markers(cfg.input_path("markers")))
    io.write_json(out / "calibration.json", io.calibration_to_json(cal))
    print(f"calibration rms {cal.rms * 1000:.3f} mm over {len(cal.marker_ids)} markers")
    return EXIT_OK


def _load_tracks(cfg: RunConfig):
    ms = io.read_measurements(cfg.input_path("measurements"))
    cal = io.read_calibration(cfg.input_path("calibration"))
    skews = io.read_skews(cfg.input_path("skews"))
    return ms, cal, skews


def cmd_solve(cfg: RunConfig, out: Path) -> int:
    ms, cal, skews = _load_tracks(cfg)
    poses = run(ms, cal, skews, _layout(cfg), cfg.interpolation)
    io.write_poses(out / "poses.csv", poses)
    print(f"{sum(p.valid for p in poses)} valid of {len(poses)} poses")
    return EXIT_OK


def _grid_rows(grid: analysis.BinnedGrid):
    xe, ye, means = grid.x.edges, grid.y.edges, grid.means
    for i in range(grid.x.n):
        for j in range(grid.y.n):
            yield xe[i], xe[i + 1], ye[j], ye[j + 1], float(means[i, j]), int(grid.counts[i, j])


def analyze_static(cfg: RunConfig, out: Path, figures: bool):
    ms, cal, skews = _load_tracks(cfg)
    spec = io.read_trajectory(cfg.input_path("trajectory"))
    a = cfg.analysis
    intervals = analysis.static_segments(spec, a.get("v_threshold", 0.01), a.get("w_threshold", 0.01))
    tracks = unify_frames(gate(ms), cal, skews)
    t, X = analysis.static_triplets(tracks, intervals)
    series = analysis.inter_prism_errors(X, _layout(cfg), t)
    edges, counts = analysis.error_histogram(series, a.get("hist_bin_m", 0.0005), a.get("hist_limit_m", 0.015))
    io.write_table(out / "fig5_hist.csv", ("bin_lo_m", "bin_hi_m", *(f"count_{n}" for n in analysis.PAIR_NAMES)),
                   ((edges[i], edges[i + 1], *(int(counts[n][i]) for n in analysis.PAIR_NAMES))
                    for i in range(len(edges) - 1)))
    summ = analysis.summarize(series)
    io.write_table(out / "fig5_summary.csv", ("pair", "mean_m", "std_m", "n"),
                   ((k, *summ[k]) for k in analysis.PAIR_NAMES))
    if figures:
        from .plotting import histogram_figure
        histogram_figure(edges, counts, out / "fig5_hist.png")
    for k in analysis.PAIR_NAMES:
        m, s, n = summ[k]
        print(f"static {k}: mean {m * 1000:.3f} mm, std {s * 1000:.3f} mm, n={n}")


def _dynamic_series(cfg: RunConfig):
    ms, cal, skews = _load_tracks(cfg)
    interp = interpolate(unify_frames(gate(ms), cal, skews), cfg.interpolation)
    return analysis.inter_prism_errors(interp, _layout(cfg))


def analyze_dynamic(cfg: RunConfig, out: Path, figures: bool):
    spec = io.read_trajectory(cfg.input_path("trajectory"))
    series = _dynamic_series(cfg)
    inside = (series.t >= spec.t0_us) & (series.t <= spec.t_end_us)
    series = series.subset(inside)
    v, acc, w = analysis.dynamics_signals(spec, series.t)
    g_vw, g_aw = analysis.bin_by_dynamics(series, v, acc, w)
    header = ("x_lo", "x_hi", "omega_lo", "omega_hi", "mean_error_m", "count")
    io.write_table(out / "fig6_grid_v_w.csv", header, _grid_rows(g_vw))
    io.write_table(out / "fig6_grid_a_w.csv", header, _grid_rows(g_aw))
    if figures:
        from .plotting import grid_figure
        grid_figure(g_vw, out / "fig6_grid_v_w.png", "speed vs angular speed")
        grid_figure(g_aw, out / "fig6_grid_a_w.png", "acceleration vs angular speed")
    print(f"dynamic: {len(series)} samples binned")


def analyze_perturb(cfg: RunConfig, out: Path, figures: bool, parallel: int):
    curve = analysis.perturbation_study(_layout(cfg), cfg.seed, trials=int(cfg.analysis.get("trials", analysis.TRIALS)),
                                        parallel=parallel)
    header = ("sigma_m",
              "pos_mean_x_m", "pos_mean_y_m", "pos_mean_z_m", "pos_std_x_m", "pos_std_y_m", "pos_std_z_m",
              "zyx_yaw_mean_rad", "zyx_pitch_mean_rad", "zyx_roll_mean_rad", "zyx_yaw_std_rad", "zyx_pitch_std_rad", "zyx_roll_std_rad",
              "position_error_m", "orientation_error_rad")
    rows = ((curve.sigma[i], *curve.pos_mean[i], *curve.pos_std[i], *curve.euler_mean[i], *curve.euler_std[i],
             curve.position_error[i], curve.orientation_error[i]) for i in range(len(curve.sigma)))
    io.write_table(out / "fig7_curves.csv", header, rows)
    if figures:
        from .plotting import perturbation_figure
        perturbation_figure(curve, out / "fig7_curves.png")
    i = int(np.argmin(np.abs(curve.sigma - 0.010)))
    print(f"perturb: sigma {curve.sigma[i] * 1000:.0f} mm -> position {curve.position_error[i] * 1000:.2f} mm, "
          f"orientation {curve.orientation_error[i]:.4f} rad")


def analyze_gnss(cfg: RunConfig, out: Path, figures: bool):
    g = io.read_gnss(cfg.input_path("gnss"))
    series = _dynamic_series(cfg)
    labels = np.array(g.regime)
    comps = []
    for name in dict.fromkeys(g.regime):
        tt = g.t_us[labels == name]
        window = (int(tt.min()), int(tt.max()) + 1)
        comps.append(analysis.gnss_compare(g.t_us, g.pos1, g.pos2, series, regime=name, window=window))
    rows = []
    for c in comps:
        rows.append((c.regime, "gnss", c.gnss.mean, c.gnss.std, c.gnss.n, c.dropped))
        rows.append((c.regime, "total_station", c.total_station.mean, c.total_station.std, c.total_station.n, 0))
    io.write_table(out / "fig8_summary.csv", ("regime", "source", "mean_m", "std_m", "n", "dropped"), rows)
    if figures:
        from .plotting import gnss_figure
        gnss_figure(comps, out / "fig8_summary.png")
    for c in comps:
        print(f"gnss {c.regime}: GNSS mean {c.gnss.mean * 1000:.1f} mm, "
              f"total station mean {c.total_station.mean * 1000:.2f} mm")


def cmd_analyze(cfg: RunConfig, out: Path, modes: Sequence[str], figures: bool = False, parallel: int = 1) -> int:
    if not modes:
        raise InputError("no analysis mode given (use --mode or analysis.modes in the config)")
    for m in modes:
        if m not in MODES:
            raise InputError(f"unknown analysis mode {m!r}; choose from {', '.join(MODES)}")
    for m in modes:
        if m == "static":
            analyze_static(cfg, out, figures)
        elif m == "dynamic":
            analyze_dynamic(cfg, out, figures)
        elif m == "perturb":
            analyze_perturb(cfg, out, figures, parallel)
        else:
            analyze_gnss(cfg, out, figures)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gtf", description="Total-station ground-truth toolkit")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("simulate", "calibrate", "solve", "analyze"):
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="run configuration (JSON)")
        s.add_argument("--out", required=True, help="output directory")
        s.add_argument("--seed", type=int, default=None, help="override the config's root seed")
        s.add_argument("--parallel", type=int, default=1, help="worker processes for independent trials")
        if name == "analyze":
            s.add_argument("--mode", action="append", choices=MODES,
                           help="analysis to run; repeatable (default: analysis.modes from the config)")
            s.add_argument("--figures", action="store_true", help="also render PNG figures next to the CSVs")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.parallel < 1:
            raise InputError("--parallel must be at least 1")
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise InputError("--seed must be non-negative")
            cfg = replace(cfg, seed=args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        cfg = replace(cfg, output_dir=out)
        if args.command == "simulate":
            return cmd_simulate(cfg, out)
        if args.command == "calibrate":
            return cmd_calibrate(cfg, out)
        if args.command == "solve":
            return cmd_solve(cfg, out)
        modes = args.mode or list(cfg.analysis.get("modes", []))
        return cmd_analyze(cfg, out, modes, args.figures, args.parallel)
    except InputError as exc:
        print(f"gtf: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"gtf: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except GtfError as exc:
        print(f"gtf: error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
