"""CSV ingestion and exporters, plus the JSON run configuration."""

from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from collections import defaultdict
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .data import Day, GpsDataset
from .grid import DensityField, GridSpec, RegionMask

logger = logging.getLogger(__name__)

SECONDS_PER_DAY = 86400.0
T_EPS = 1e-9


class IngestError(ValueError):
    """Input file problems; ``problems`` lists ``(line, message)`` pairs."""

    def __init__(self, message: str, problems: Sequence = ()):
        super().__init__(message)
        self.problems = list(problems)


class ConfigError(ValueError):
    """Every validation failure of a :class:`RunConfig`, collected before any work starts."""

    def __init__(self, problems: Sequence[str]):
        super().__init__("; ".join(problems))
        self.problems = list(problems)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % float(v)


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([c if isinstance(c, str) else _fmt(c) for c in r])


# --------------------------------------------------------------------------- ingestion


def _day_fraction(epoch_s: float, day_start_hour: float) -> float:
    return ((epoch_s - day_start_hour * 3600.0) % SECONDS_PER_DAY) / SECONDS_PER_DAY


def ingest_csv(path, epoch: bool = False, day_start_hour: float = 0.0, return_report: bool = False):
    """Read fixes from a CSV with columns ``day_id,t,x,y`` (or ``day_id,epoch_s,x,y``).

    Times are mapped to the fraction of the day (epoch seconds relative to
    ``day_start_hour``) and clipped into ``[1e-9, 1 - 1e-9]``.  Rows sharing a
    ``(day, t)`` are collapsed to their mean location and days left with fewer
    than two fixes are dropped with a warning.  An optional ``pattern`` column
    is kept as day metadata.

    Raises
    ------
    IngestError
        Missing columns, unparseable rows (with line numbers) or no usable day.
    """
    tcol = "epoch_s" if epoch else "t"
    need = ["day_id", tcol, "x", "y"]
    if not 0 <= day_start_hour < 24:
        raise IngestError(f"day_start_hour must lie in [0, 24), got {day_start_hour}")
    groups: dict = defaultdict(lambda: defaultdict(list))
    patterns: dict = {}
    problems = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        missing = [c for c in need if c not in header]
        if missing:
            raise IngestError(f"{path}: missing column(s) {missing}; found {header}")
        reader.fieldnames = header
        for rec in reader:
            line = reader.line_num
            try:
                day = rec["day_id"].strip()
                day = int(day) if day.lstrip("-").isdigit() else day
                raw_t, x, y = float(rec[tcol]), float(rec["x"]), float(rec["y"])
            except (TypeError, ValueError, AttributeError) as exc:
                problems.append((line, f"unparseable row: {exc}"))
                continue
            if not all(math.isfinite(v) for v in (raw_t, x, y)):
                problems.append((line, "non-finite value"))
                continue
            if epoch:
                t = _day_fraction(raw_t, day_start_hour)
            else:
                if not 0 <= raw_t <= 1:
                    problems.append((line, f"t={raw_t} outside [0, 1]"))
                    continue
                t = raw_t
            t = min(max(t, T_EPS), 1 - T_EPS)
            groups[day][t].append((x, y))
            if rec.get("pattern") not in (None, ""):
                patterns.setdefault(day, rec["pattern"])
    if problems:
        shown = ", ".join(f"line {ln}: {msg}" for ln, msg in problems[:10])
        raise IngestError(f"{path}: {len(problems)} bad row(s): {shown}", problems)
    days, dropped, collapsed = [], 0, 0
    for day_id in sorted(groups, key=lambda d: (isinstance(d, str), d)):
        by_t = groups[day_id]
        ts = sorted(by_t)
        collapsed += sum(len(by_t[t]) - 1 for t in ts)
        if len(ts) < 2:
            dropped += 1
            continue
        xy = np.array([np.mean(by_t[t], axis=0) for t in ts])
        meta = {"day_id": day_id}
        if day_id in patterns:
            p = patterns[day_id]
            meta["pattern"] = int(p) if p.lstrip("-").isdigit() else p
        days.append(Day(np.array(ts), xy, meta))
    if dropped:
        warnings.warn(f"dropped {dropped} day(s) with fewer than two distinct fixes", UserWarning, stacklevel=2)
    if not days:
        raise IngestError(f"{path}: no day with at least two fixes")
    data = GpsDataset(days)
    # largest cyclic gap between fixes, as a fraction of the day; gaps are not imputed
    gaps = [float(np.diff(np.concatenate([d.t, [d.t[0] + 1]])).max()) for d in data.days]
    report = {"n_days": data.n_days, "n_obs": data.n_obs, "dropped_days": dropped,
              "collapsed_rows": collapsed, "max_time_gap": max(gaps), "median_max_time_gap": float(np.median(gaps))}
    return (data, report) if return_report else data


# --------------------------------------------------------------------------- writers


def write_dataset(data: GpsDataset, path) -> None:
    """``day_id,t,x,y`` rows (plus ``pattern`` when every day carries one), full precision."""
    ids = [d.meta.get("day_id", i) for i, d in enumerate(data.days)]
    with_pattern = all("pattern" in d.meta for d in data.days)
    header = ["day_id", "t", "x", "y"] + (["pattern"] if with_pattern else [])
    rows = []
    for did, d in zip(ids, data.days):
        for t, (x, y) in zip(d.t, d.xy):
            rows.append([did if isinstance(did, str) else int(did), t, x, y]
                        + ([d.meta["pattern"]] if with_pattern else []))
    _write_rows(path, header, rows)


def write_density(fld: DensityField, path) -> None:
    c = fld.grid.centers()
    _write_rows(path, ["x_center", "y_center", "value"],
                zip(c[:, 0], c[:, 1], fld.values.ravel()))


def read_density(path, grid: GridSpec) -> DensityField:
    arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return DensityField(grid, arr[:, 2].reshape(grid.shape))


def write_mask(mask: RegionMask, path) -> None:
    c = mask.grid.centers()
    m = mask.membership.ravel()
    _write_rows(path, ["cell_index", "x_center", "y_center", "in_region", "level"],
                ([k, c[k, 0], c[k, 1], int(m[k]), mask.level] for k in range(m.size)))


def write_anchors(anchors, path) -> None:
    _write_rows(path, ["x", "y", "density", "lambda"],
                ([a.location[0], a.location[1], a.density, a.level] for a in anchors))


def write_dendrogram(dend, path) -> None:
    _write_rows(path, ["id_a", "id_b", "height", "size"],
                ([int(a), int(b), h, int(s)] for (a, b), h, s in zip(dend.merges, dend.heights, dend.sizes)))


def write_labels(labels, path, day_ids: Optional[Sequence] = None) -> None:
    ids = day_ids if day_ids is not None else range(len(labels.labels))
    _write_rows(path, ["day", "label", "singleton_flag"],
                ([d if isinstance(d, str) else int(d), int(g), int(s)]
                 for d, g, s in zip(ids, labels.labels, labels.singleton)))


def read_labels(path) -> dict:
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            d = rec["day"]
            out[int(d) if d.lstrip("-").isdigit() else d] = int(rec["label"])
    return out


def write_centers(times, centers: dict, path) -> None:
    rows = []
    for g in sorted(centers):
        for t, (x, y) in zip(times, np.atleast_2d(centers[g])):
            rows.append([int(g), t, x, y])
    _write_rows(path, ["label", "t", "x", "y"], rows)


def write_distances(D, path) -> None:
    v = D.values
    _write_rows(path, ["day_a", "day_b", "distance"],
                ([a, b, v[a, b]] for a in range(v.shape[0]) for b in range(v.shape[0])))


# --------------------------------------------------------------------------- configuration


@dataclass
class RunConfig:
    """Settings shared by the command-line tools.

    ``bandwidth`` / ``time_bandwidth`` are numbers or ``"reference"``.
    ``grid`` is ``None`` (automatic lattice around the data), ``"world"`` (the
    simulation lattice of the default world) or a dict of :class:`GridSpec`
    fields.  ``interval`` is a circular arc ``[start, length]`` in day fractions.
    """

    estimator: str = "conditional"
    bandwidth: Union[str, float] = "reference"
    time_bandwidth: Union[str, float] = "reference"
    grid: Union[None, str, dict] = None
    grid_cells: int = 120
    grid_margin: Optional[float] = None
    n_time_grid: int = 1440
    xi: float = 1e-4
    sigma: float = 0.2
    interval: Optional[list] = None
    outputs: dict = field(default_factory=dict)

    def problems(self) -> list:
        from .kde import ESTIMATORS, _ALIASES

        out = []
        if self.estimator not in _ALIASES:
            out.append(f"estimator: unknown {self.estimator!r}; choose from {list(ESTIMATORS)}")
        for name in ("bandwidth", "time_bandwidth"):
            v = getattr(self, name)
            if v != "reference" and not (_is_number(v) and v > 0):
                out.append(f"{name}: must be 'reference' or a positive number, got {v!r}")
        if _is_number(self.time_bandwidth) and self.time_bandwidth > 0.5:
            out.append(f"time_bandwidth: must not exceed 0.5 of a day, got {self.time_bandwidth}")
        for name in ("n_time_grid", "grid_cells"):
            v = getattr(self, name)
            if not (isinstance(v, int) and v >= 2):
                out.append(f"{name}: must be an integer >= 2, got {v!r}")
        for name in ("xi", "sigma"):
            v = getattr(self, name)
            if not (_is_number(v) and v > 0):
                out.append(f"{name}: must be positive, got {v!r}")
        if self.grid_margin is not None and not (_is_number(self.grid_margin) and self.grid_margin >= 0):
            out.append(f"grid_margin: must be nonnegative, got {self.grid_margin!r}")
        if isinstance(self.grid, dict):
            try:
                GridSpec(**self.grid)
            except (TypeError, ValueError) as exc:
                out.append(f"grid: {exc}")
        elif self.grid not in (None, "world"):
            out.append(f"grid: expected null, 'world' or a grid object, got {self.grid!r}")
        if self.interval is not None:
            ok = (isinstance(self.interval, (list, tuple)) and len(self.interval) == 2
                  and all(_is_number(v) for v in self.interval))
            if not ok or not (0 <= self.interval[0] <= 1 and 0 < self.interval[1] <= 1):
                out.append(f"interval: expected [start in [0,1], length in (0,1]], got {self.interval!r}")
        return out

    def validate(self) -> "RunConfig":
        p = self.problems()
        if p:
            raise ConfigError(p)
        return self

    @classmethod
    def from_json(cls, source) -> "RunConfig":
        if isinstance(source, dict):
            doc = source
        else:
            doc = json.loads(Path(source).read_text(encoding="utf-8"))
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError([f"unknown config key(s) {unknown}"])
        return cls(**doc)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)
