"""Command-line entry point: ``loraloc simulate|campaign|fit|estimate|serve|presets``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .campaign import run_campaign, write_grid_csv, write_summary, write_trials_csv
from .config import GRIDS, PRESETS, RunConfig, load_config, parse_config
from .coordinator import Coordinator, serve
from .errors import ConfigError, LocalizationError, MissionFailure
from .geo import GeoPoint, LocalPoint, from_local
from .multilat import EstimatorOptions, estimate_position, read_datapoints_csv
from .propagation import (
    DEFAULT_ANTENNA,
    URBAN_ESP,
    AntennaModel,
    PathLossForm,
    PathLossModel,
    fit_noise,
    fit_path_loss,
    group_by_geometry,
    read_characterization_csv,
)
from .simkit import run_mission, trajectory_geojson, write_events_ndjson

log = logging.getLogger("loraloc")


def _resolve_config(args) -> RunConfig:
    if args.config and args.preset:
        raise ConfigError("--preset", "give either --config or --preset, not both")
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = parse_config({"preset": args.preset} if args.preset else {})
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "trials", None) is not None:
        cfg = replace(cfg, trials=args.trials)
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_simulate(args) -> int:
    cfg = _resolve_config(args)
    out = _out_dir(args)
    try:
        result = run_mission(cfg.mission, cfg.world, cfg.models, cfg.seed, cfg.estimator, record=True)
    except MissionFailure as exc:
        print(f"mission failed: {exc}", file=sys.stderr)
        print(json.dumps(exc.diagnostics, sort_keys=True), file=sys.stderr)
        return 3
    summary = {"preset": cfg.name, "seed": cfg.seed, **result.summary()}
    _write_json(out / "result.json", summary)
    write_events_ndjson(out / "events.ndjson", result.events)
    with open(out / "trajectory.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("drone_id", "t_s", "east_m", "north_m", "up_m"))
        for drone_id, pts in sorted(result.trajectory.items()):
            for t, x, y, z in pts:
                w.writerow((drone_id, repr(t), repr(x), repr(y), repr(z)))
    if cfg.world.origin is not None:
        _write_json(out / "trajectory.geojson", trajectory_geojson(result, cfg.world.origin))
    print(
        f"error {result.error:.2f} m, flight time {result.flight_time:.1f} s, "
        f"{result.n_datapoints} datapoints -> {out}"
    )
    return 0


def cmd_campaign(args) -> int:
    out = _out_dir(args)
    if args.preset in GRIDS and not args.config:
        cells = []
        for name in GRIDS[args.preset]:
            sub = argparse.Namespace(**{**vars(args), "preset": name})
            cfg = _resolve_config(sub)
            stats = run_campaign(cfg, workers=args.workers)
            write_trials_csv(out / f"{name}.csv", stats.trials)
            write_summary(out / f"{name}.summary.json", stats)
            cells.append(stats)
            log.info("cell %s done", name)
        write_grid_csv(out / "grid.csv", cells)
        for s in cells:
            e = s.summary()["error_m"]
            f = s.summary()["flight_time_s"]
            print(f"{s.name:24s} median error {e.get('median', float('nan')):6.2f} m  "
                  f"mean flight {f.get('mean', float('nan')):6.1f} s  failed {len(s.trials) - len(s.succeeded)}")
        return 0
    cfg = _resolve_config(args)
    stats = run_campaign(cfg, workers=args.workers)
    write_trials_csv(out / "trials.csv", stats.trials)
    write_summary(out / "summary.json", stats)
    s = stats.summary()
    print(
        f"{s['n_trials']} trials ({s['n_failed']} failed): median error "
        f"{s['error_m'].get('median', float('nan')):.2f} m, mean flight time "
        f"{s['flight_time_s'].get('mean', float('nan')):.1f} s -> {out}"
    )
    return 0


def _antenna(name: str) -> AntennaModel:
    return AntennaModel.flat() if name == "flat" else DEFAULT_ANTENNA


def cmd_fit(args) -> int:
    samples = read_characterization_csv(args.csv)
    ant = _antenna(args.antenna)
    model = fit_path_loss(samples, args.form, ant)
    report = {"path_loss": model.to_dict(), "antenna": ant.to_dict(), "n_samples": len(samples)}
    try:
        report["noise_sigma_db"] = fit_noise(group_by_geometry(samples)).sigma
    except ValueError as exc:
        report["noise_sigma_db"] = None
        log.warning("noise not estimated: %s", exc)
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def _load_model(spec: str | None) -> PathLossModel:
    if spec is None or spec == "urban-esp":
        return URBAN_ESP
    obj = json.loads(Path(spec).read_text())
    obj = obj.get("path_loss", obj)
    keys = ("a", "b", "form", "linear_slope", "linear_intercept", "min_distance")
    return PathLossModel(**{k: obj[k] for k in keys if k in obj and obj[k] is not None})


def _parse_origin(text: str) -> GeoPoint:
    parts = [float(v) for v in text.split(",")]
    if len(parts) not in (2, 3):
        raise argparse.ArgumentTypeError("origin must be LAT,LON[,ALT]")
    return GeoPoint(*parts)


def cmd_estimate(args) -> int:
    points = read_datapoints_csv(args.csv)
    plm = _load_model(args.model)
    opts = EstimatorOptions(beacon_alt=args.beacon_alt, keep_low_confidence=args.keep_low_confidence)
    est = estimate_position(points, plm, _antenna(args.antenna), opts)
    report = est.to_dict()
    if args.origin is not None:
        g = from_local(est.position, args.origin)
        report["geodetic"] = {"lat": g.lat, "lon": g.lon, "alt": g.alt}
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def cmd_serve(args) -> int:
    cfg = _resolve_config(args)
    journal = open(args.journal, "a") if args.journal else None
    try:
        coord = Coordinator(
            cfg.mission, cfg.models.estimator_path_loss, cfg.models.estimator_antenna,
            cfg.estimator, cfg.world.origin, journal=journal,
        )
        init = None
        if args.initial is not None:
            e, n = (float(v) for v in args.initial.split(","))
            init = LocalPoint(e, n, cfg.world.beacon.up)
        serve(coord, sys.stdin, sys.stdout, init)
    finally:
        if journal is not None:
            journal.close()
    return 0


def cmd_presets(args) -> int:
    for name in sorted(PRESETS):
        print(name)
    for name, cells in GRIDS.items():
        print(f"{name} (grid: {', '.join(cells)})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="loraloc", description="Drone-aided LoRa node localization toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def config_args(sp, trials: bool = False):
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--preset", help="named preset (see `loraloc presets`)")
        sp.add_argument("--seed", type=int, help="base seed (overrides the config)")
        if trials:
            sp.add_argument("--trials", type=int, help="number of trials (overrides the config)")

    sp = sub.add_parser("simulate", help="run one mission and write its artifacts")
    config_args(sp)
    sp.add_argument("--out-dir", default="out", help="output directory (default: out)")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("campaign", help="Monte Carlo campaign over consecutive seeds")
    config_args(sp, trials=True)
    sp.add_argument("--workers", type=int, help="worker processes (default: from config)")
    sp.add_argument("--out-dir", default="out", help="output directory (default: out)")
    sp.set_defaults(func=cmd_campaign)

    sp = sub.add_parser("fit", help="fit a path-loss model to a characterization CSV")
    sp.add_argument("csv")
    sp.add_argument("--form", choices=[f.value for f in PathLossForm], default="exponential")
    sp.add_argument("--antenna", choices=["measured", "flat"], default="measured")
    sp.add_argument("--out", help="also write the report to this JSON file")
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("estimate", help="offline multilateration from a datapoint CSV")
    sp.add_argument("csv")
    sp.add_argument("--model", help="model JSON (as written by `fit --out`); default: urban ESP model")
    sp.add_argument("--antenna", choices=["measured", "flat"], default="measured")
    sp.add_argument("--beacon-alt", type=float, default=0.0, help="beacon altitude in the local frame")
    sp.add_argument("--keep-low-confidence", action="store_true")
    sp.add_argument("--origin", type=_parse_origin, help="LAT,LON[,ALT] to also report geodetic output")
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("serve", help="run the coordinator over ndjson on stdin/stdout")
    config_args(sp)
    sp.add_argument("--initial", help="EAST,NORTH network estimate; starts the mission immediately")
    sp.add_argument("--journal", help="append accepted uplinks to this ndjson file")
    sp.set_defaults(func=cmd_serve)

    sp = sub.add_parser("presets", help="list shipped presets")
    sp.set_defaults(func=cmd_presets)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (LocalizationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
