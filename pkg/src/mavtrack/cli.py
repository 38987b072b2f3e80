"""Command line entry point: ``mavtrack calibrate|track|compare``.

Exit codes: 0 success (a lost track is a result, not a failure),
2 configuration error, 3 calibration failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .config import ScenarioConfig, load_config
from .errors import CalibrationError, ConfigError, ModelStateError
from .integrator import FRAME_STATS_HEADER, Modality
from .pipeline import SPACING_HEADER, RunResult, run_modes, write_spacing_csv
from .scene import GROUND_TRUTH_HEADER
from .sensing import DensityModel, calibrate, default_calibration_scene
from .tracker import TRACK_HEADER, parse_mode

DENSITY_HEADER = ["d", "f", "mu", "sigma"]
COMPARE_HEADER = ["mode", "track_duration", "lost", "revolutions", "mean_position_error",
                  "rmse_fused", "rmse_HF", "rmse_MF", "miss_rate", "n_states"]
EXIT_OK, EXIT_CONFIG, EXIT_CALIBRATION = 0, 2, 3


def check_csv(path: str | Path, header: list[str]) -> None:
    """Schema self-test: exact header and a constant column count."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != header:
        raise RuntimeError(f"{path}: header {rows[0] if rows else None} != {header}")
    bad = [i for i, r in enumerate(rows[1:], start=2) if len(r) != len(header)]
    if bad:
        raise RuntimeError(f"{path}: line {bad[0]} has the wrong number of columns")


def _write_rows(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    check_csv(path, header)


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=1, allow_nan=False) + "\n")


def _fmt(x) -> str:
    return "" if x is None else f"{x:.6f}"


def write_density_csv(path: Path, model: DensityModel) -> None:
    _write_rows(path, DENSITY_HEADER, [[f"{d:g}", f"{f:g}", f"{mu:.6f}", f"{sd:.6f}"]
                                       for d, f, mu, sd in model.table_rows()])


def write_result(out: Path, result: RunResult) -> None:
    out.mkdir(parents=True, exist_ok=True)
    result.record.write_csv(out / "track.csv")
    check_csv(out / "track.csv", TRACK_HEADER)
    result.ground_truth.write_csv(out / "ground_truth.csv")
    check_csv(out / "ground_truth.csv", GROUND_TRUTH_HEADER)
    write_spacing_csv(out / "spacing.csv", result.spacing_rows())
    check_csv(out / "spacing.csv", SPACING_HEADER)
    _write_rows(out / "frame_stats.csv", FRAME_STATS_HEADER,
                [[m, f"{t:.6f}", f"{dt:.6f}", n] for m, t, dt, n in result.frame_stats])
    _write_json(out / "diagnostics.json", result.diagnostics())


def compare_row(result: RunResult) -> list:
    d = result.diagnostics()
    return [result.mode, _fmt(d["track_duration"]), int(d["lost"]), _fmt(d["revolutions"]),
            _fmt(d["mean_position_error"]), *(_fmt(d["rmse"][m.value]) for m in (Modality.FUSED, Modality.HF, Modality.MF)),
            _fmt(d["miss_rate"]), d["n_states"]]


def _mode_dir(mode: str) -> str:
    return mode.replace(":", "_")


def _load_model(path: str | None) -> DensityModel:
    if path is None:
        raise ConfigError("--model is required", "model")
    try:
        model = DensityModel.load(path)
    except OSError as exc:
        raise ConfigError(f"cannot read model {path}: {exc.strerror}", "model") from None
    if not model.calibrated:
        raise ModelStateError("model is not calibrated")
    return model


def _setup(args) -> tuple[ScenarioConfig, Path]:
    cfg = load_config(args.config, args.seed)
    out = Path(args.out) if args.out else (cfg.out or Path("results"))
    return cfg, out


def cmd_calibrate(args) -> int:
    cfg, out = _setup(args)
    cal = cfg.calibration
    scenario = cfg.scenario
    model = calibrate(default_calibration_scene(scenario.scene), scenario.scan, cal.distances,
                      cal.frequencies, cal.repetitions, scenario.seed)
    out.mkdir(parents=True, exist_ok=True)
    model.save(out / "model.json")
    write_density_csv(out / "density.csv", model)
    print(f"wrote {out / 'model.json'} and {out / 'density.csv'}")
    return EXIT_OK


def cmd_track(args) -> int:
    cfg, out = _setup(args)
    model = _load_model(args.model)
    modes = args.mode or [cfg.scenario.mode]
    if len(modes) != 1:
        raise ConfigError("track takes a single --mode; use compare for several", "mode")
    result = run_modes(cfg.scenario, model, modes)[0]
    write_result(out, result)
    d = result.diagnostics()
    print(f"{result.mode}: tracked {d['track_duration']:.2f} s of {d['duration']:.2f} s"
          f"{' (lost)' if d['lost'] else ''}, mean error {d['mean_position_error']} m")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg, out = _setup(args)
    model = _load_model(args.model)
    raw = args.mode or [cfg.scenario.mode]
    modes = []
    for m in (x for item in raw for x in item.split(",") if x.strip()):
        m = parse_mode(m)[0]
        if m not in modes:
            modes.append(m)
    if cfg.scenario.ugv_control:
        # the UGV follows each tracker, so every mode needs its own stream
        results = [run_modes(cfg.scenario, model, [m])[0] for m in modes]
    else:
        results = run_modes(cfg.scenario, model, modes)
    out.mkdir(parents=True, exist_ok=True)
    for r in results:
        write_result(out / _mode_dir(r.mode), r)
    _write_rows(out / "comparison.csv", COMPARE_HEADER, [compare_row(r) for r in results])
    for r in results:
        print(f"{r.mode:>12}: {r.track_duration:7.2f} s{' (lost)' if r.record.lost else ''}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mavtrack", description="MAV tracking with adaptive lidar integration.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn, helptext in (("calibrate", cmd_calibrate, "build a density model"),
                               ("track", cmd_track, "run one tracking experiment"),
                               ("compare", cmd_compare, "run several rate modes on one scenario")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--config", required=True, help="YAML scenario file")
        s.add_argument("--out", help="output directory (default: config 'out' or ./results)")
        s.add_argument("--seed", type=int, help="overrides the config seed")
        if name != "calibrate":
            s.add_argument("--model", help="density model JSON from 'calibrate'")
            s.add_argument("--mode", action="append",
                           help="adaptive or fixed:<Hz>; repeat or comma-separate for compare")
        s.set_defaults(func=fn)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ModelStateError) as exc:
        key = getattr(exc, "key", None)
        print(f"config error{f' [{key}]' if key else ''}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CalibrationError as exc:
        print(f"calibration failed: {exc}", file=sys.stderr)
        return EXIT_CALIBRATION


if __name__ == "__main__":
    sys.exit(main())
