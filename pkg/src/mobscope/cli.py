"""Command-line workflow: ``mobscope <command> [options]``.

Every command writes CSV artifacts and prints one JSON summary line on
stdout.  Failures print one JSON line ``{"status": "error", ...}`` on stderr
and exit with status 2.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from dataclasses import asdict
from typing import Optional, Sequence

import numpy as np

from . import io as mio
from .activity import activity_level, detect_anchors, level_set, weighted_edf
from .cluster import conditional_center, cut, distance_matrix, single_linkage
from .grid import GridSpec, TimeGrid
from .kde import Bandwidths, GPSDensity, canonical_estimator, conditional_kde

logger = logging.getLogger("mobscope")


class CliError(Exception):
    def __init__(self, kind: str, message: str, problems: Sequence = ()):
        super().__init__(message)
        self.kind = kind
        self.problems = list(problems)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", message)


def _emit(obj, stream=None) -> None:
    stream = stream or sys.stdout
    stream.write(json.dumps(obj, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


# --------------------------------------------------------------------------- shared plumbing


def _config(args) -> mio.RunConfig:
    cfg = mio.RunConfig.from_json(args.config) if getattr(args, "config", None) else mio.RunConfig()
    for name in ("estimator", "bandwidth", "time_bandwidth", "grid", "xi", "sigma", "n_time_grid", "grid_cells"):
        v = getattr(args, name, None)
        if v is not None:
            setattr(cfg, name, v)
    if getattr(args, "interval", None) is not None:
        cfg.interval = list(args.interval)
    return cfg.validate()


def _number_or_reference(text: str):
    if text == "reference":
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number or 'reference', got {text!r}") from None


def _load(args):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        data, report = mio.ingest_csv(args.data, epoch=args.epoch, day_start_hour=args.day_start_hour,
                                      return_report=True)
    for w in caught:
        logger.warning("%s", w.message)
    return data, report


def _bandwidths(cfg, data) -> Bandwidths:
    return GPSDensity(bandwidth=cfg.bandwidth, time_bandwidth=cfg.time_bandwidth)._resolve_bandwidths(data)


def _grid(cfg, data, bw) -> GridSpec:
    if isinstance(cfg.grid, dict):
        return GridSpec(**cfg.grid)
    if cfg.grid == "world":
        from .simulate import load_world
        return load_world()[0].grid(cfg.sigma)
    pts = data.points
    span = float(np.ptp(pts, axis=0).max())
    margin = cfg.grid_margin if cfg.grid_margin is not None else 3 * bw.h_x + 0.05 * span
    cell = (span + 2 * margin) / cfg.grid_cells
    if not cell > 0:
        cell = bw.h_x
    return GridSpec.around(pts, cell, margin)


def _fit_density(cfg, data, bw) -> GPSDensity:
    return GPSDensity(cfg.estimator, bw.h_x, bw.h_t, cfg.n_time_grid,
                      tuple(cfg.interval) if cfg.interval else None).fit(data)


def _bw_summary(bw):
    return {"h_x": bw.h_x, "h_t": bw.h_t}


# --------------------------------------------------------------------------- commands


def cmd_simulate(args):
    from .simulate import load_world, simulate_dataset, skewed_template

    world, patterns = load_world(args.world)
    template = skewed_template() if args.mode == "realistic" else None
    data = simulate_dataset(world, patterns, args.n_days, args.m, args.sigma, args.mode, template,
                            args.seed, args.spacing)
    if args.group:
        keep = [i for i, g in enumerate(data.meta_values("group")) if g == args.group]
        if not keep:
            raise CliError("empty", f"no simulated day belongs to group {args.group!r}")
        data = data.subset(keep)
    mio.write_dataset(data, args.out)
    return {"out": args.out, "n_days": data.n_days, "n_obs": data.n_obs,
            "patterns": np.bincount(data.meta_values("pattern"), minlength=len(patterns)).tolist()}


def cmd_estimate(args):
    cfg = _config(args)
    data, report = _load(args)
    bw = _bandwidths(cfg, data)
    grid = _grid(cfg, data, bw)
    fld = _fit_density(cfg, data, bw).evaluate(grid)
    mio.write_density(fld, args.out)
    return {"out": args.out, "estimator": canonical_estimator(cfg.estimator), "bandwidths": _bw_summary(bw),
            "grid": asdict(grid), "integral": fld.integral(), **report}


def cmd_conditional(args):
    cfg = _config(args)
    data, report = _load(args)
    bw = _bandwidths(cfg, data)
    grid = _grid(cfg, data, bw)
    fld = conditional_kde(data, bw, grid, args.t)
    mio.write_density(fld, args.out)
    return {"out": args.out, "t": args.t, "bandwidths": _bw_summary(bw), "integral": fld.integral(), **report}


def cmd_anchors(args):
    cfg = _config(args)
    if args.threshold is None and args.lam is None:
        raise CliError("config", "give --lam (time fraction) or --threshold (density)")
    data, report = _load(args)
    bw = _bandwidths(cfg, data)
    grid = _grid(cfg, data, bw)
    dens = _fit_density(cfg, data, bw)
    fld = dens.evaluate(grid)
    anchors = detect_anchors(fld, args.lam, cfg.sigma, threshold=args.threshold,
                             points=dens.points_, masses=dens.masses_, h=bw.h_x)
    mio.write_anchors(anchors, args.out)
    if args.level_set_out:
        mio.write_mask(level_set(fld, anchors[0].threshold if anchors else
                                 (args.threshold if args.threshold is not None
                                  else args.lam / (2 * np.pi * cfg.sigma ** 2))), args.level_set_out)
    return {"out": args.out, "n_anchors": len(anchors), "bandwidths": _bw_summary(bw),
            "anchors": [[a.location[0], a.location[1]] for a in anchors]}


def cmd_activity_space(args):
    cfg = _config(args)
    data, report = _load(args)
    bw = _bandwidths(cfg, data)
    grid = _grid(cfg, data, bw)
    dens = _fit_density(cfg, data, bw)
    if dens.day_weights_ is None:
        raise CliError("config", "activity spaces need a full-day estimator (drop the interval)")
    edf = weighted_edf(data, dens.day_weights_)
    p = dens.density(edf.points)
    level, k = activity_level(p, edf.masses, args.rho)
    fld = dens.evaluate(grid)
    mask = level_set(fld, level)
    mio.write_mask(mask, args.out)
    return {"out": args.out, "rho": args.rho, "level": level, "k_star": k,
            "covered_mass": float(edf.masses[p >= level].sum()), "mask_edf_mass": edf.mass_in(mask),
            "mask_density_mass": fld.mass_in(mask.membership), "area": mask.area,
            "bandwidths": _bw_summary(bw)}


def cmd_cluster(args):
    cfg = _config(args)
    if (args.k is None) == (args.height is None):
        raise CliError("config", "give exactly one of --k or --height")
    data, report = _load(args)
    bw = _bandwidths(cfg, data)
    grid = _grid(cfg, data, bw)
    D = distance_matrix(data, bw, grid, cfg.xi, TimeGrid(cfg.n_time_grid))
    dend = single_linkage(D)
    labels = cut(dend, k=args.k, height=args.height)
    ids = data.meta_values("day_id")
    mio.write_labels(labels, args.out, ids)
    if args.dendrogram_out:
        mio.write_dendrogram(dend, args.dendrogram_out)
    if args.distances_out:
        mio.write_distances(D, args.distances_out)
    return {"out": args.out, "n_clusters": labels.n_clusters, "singletons": int(labels.singleton.sum()),
            "bandwidths": _bw_summary(bw), "xi": cfg.xi}


def cmd_centers(args):
    cfg = _config(args)
    data, report = _load(args)
    bw = _bandwidths(cfg, data)
    ids = data.meta_values("day_id")
    if args.labels:
        table = mio.read_labels(args.labels)
        missing = [d for d in ids if d not in table]
        if missing:
            raise CliError("input", f"{len(missing)} day(s) have no label, first {missing[0]!r}")
        labels = np.array([table[d] for d in ids])
    else:
        labels = np.ones(data.n_days, dtype=int)
    times = np.array(args.t) if args.t else (np.arange(args.n_times) + 0.5) / args.n_times
    centers = {int(g): conditional_center(data, labels, int(g), bw.h_t, times) for g in np.unique(labels)}
    mio.write_centers(times, centers, args.out)
    return {"out": args.out, "clusters": sorted(centers), "n_times": int(times.size), "h_t": bw.h_t}


def cmd_evaluate(args):
    from .evaluation import ExperimentConfig, ordering_checks, run_experiment

    over = {}
    if args.reps is not None:
        over["repetitions"] = args.reps
    if args.seed is not None:
        over["seed"] = args.seed
    if args.n_mc is not None:
        over["n_mc"] = args.n_mc
    cfg = ExperimentConfig.preset(args.preset, **over)
    table = run_experiment(cfg)
    table.to_csv(args.out)
    checks = ordering_checks(table)
    if args.checks_out:
        mio._write_rows(args.checks_out, ["check", "passed", "detail"],
                        ([name, int(ok), detail] for name, ok, detail in checks))
    failed = [name for name, ok, _ in checks if not ok and not name.startswith("info:")]
    if args.strict and failed:
        raise CliError("checks", f"{len(failed)} check(s) failed", failed)
    return {"out": args.out, "rows": len(table), "checks": len(checks), "failed": failed}


# --------------------------------------------------------------------------- parser


def _add_common(p, data=True):
    if data:
        p.add_argument("--data", required=True, help="input CSV (day_id,t,x,y)")
        p.add_argument("--epoch", action="store_true", help="time column is epoch_s (seconds)")
        p.add_argument("--day-start-hour", type=float, default=0.0)
    p.add_argument("--config", help="RunConfig JSON document")
    p.add_argument("--estimator", help="conditional|fc, weighted|fw, naive, daily")
    p.add_argument("--bandwidth", type=_number_or_reference)
    p.add_argument("--time-bandwidth", type=_number_or_reference)
    p.add_argument("--grid", choices=["world"], help="use the default-world lattice")
    p.add_argument("--grid-cells", type=int)
    p.add_argument("--n-time-grid", type=int)
    p.add_argument("--sigma", type=float)
    p.add_argument("--xi", type=float)
    p.add_argument("--interval", type=float, nargs=2, metavar=("START", "LENGTH"))


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="mobscope", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="simulate days from a world/pattern JSON")
    p.add_argument("--world", help="world JSON (default: bundled world)")
    p.add_argument("--n-days", type=int, default=30)
    p.add_argument("--m", type=int, default=479)
    p.add_argument("--sigma", type=float, default=0.2)
    p.add_argument("--mode", choices=["even", "realistic"], default="even")
    p.add_argument("--spacing", choices=["midpoint", "interior"], default="midpoint")
    p.add_argument("--group", choices=["weekday", "weekend"], help="keep only days of this group")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="average or interval density on a grid")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("conditional", help="conditional density at one time")
    _add_common(p)
    p.add_argument("--t", type=float, required=True, help="time as a fraction of the day")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_conditional)

    p = sub.add_parser("anchors", help="anchor modes above a level")
    _add_common(p)
    p.add_argument("--lam", type=float, help="time fraction defining the level")
    p.add_argument("--threshold", type=float, help="raw density threshold")
    p.add_argument("--level-set-out")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_anchors)

    p = sub.add_parser("activity-space", help="probability-indexed activity space mask")
    _add_common(p)
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_activity_space)

    p = sub.add_parser("cluster", help="single-linkage clustering of days")
    _add_common(p)
    p.add_argument("--k", type=int)
    p.add_argument("--height", type=float)
    p.add_argument("--dendrogram-out")
    p.add_argument("--distances-out")
    p.add_argument("--out", required=True, help="labels CSV")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("centers", help="conditional center curves per cluster")
    _add_common(p)
    p.add_argument("--labels", help="labels CSV from `cluster` (default: one cluster)")
    p.add_argument("--t", type=float, nargs="+", help="times as day fractions")
    p.add_argument("--n-times", type=int, default=96)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_centers)

    p = sub.add_parser("evaluate", help="simulation study MISE table")
    p.add_argument("--preset", choices=["desk", "full", "smoke"], default="desk")
    p.add_argument("--reps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--n-mc", type=int)
    p.add_argument("--checks-out")
    p.add_argument("--strict", action="store_true", help="exit nonzero when a check fails")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        summary = args.func(args)
    except CliError as exc:
        _emit({"status": "error", "error": exc.kind, "message": str(exc), "problems": exc.problems}, sys.stderr)
        return 2
    except mio.ConfigError as exc:
        _emit({"status": "error", "error": "config", "message": str(exc), "problems": exc.problems}, sys.stderr)
        return 2
    except mio.IngestError as exc:
        _emit({"status": "error", "error": "input", "message": str(exc),
               "problems": [f"line {ln}: {m}" for ln, m in exc.problems]}, sys.stderr)
        return 2
    except (ValueError, OSError, KeyError, TypeError) as exc:
        _emit({"status": "error", "error": type(exc).__name__, "message": str(exc), "problems": []}, sys.stderr)
        return 2
    _emit({"status": "ok", "command": args.command, **summary})
    return 0


if __name__ == "__main__":
    sys.exit(main())
