"""Simple Movement Model simulator and Monte Carlo ground-truth densities.

A day is an alternating sequence of stays at anchors and constant-speed
moves along polyline roads; step durations are truncated normals and the
final stay absorbs whatever remains of the 24 hours.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .data import Day, GpsDataset
from .grid import DensityField, GridSpec

HOURS = 24.0

SeedLike = Union[None, int, np.random.Generator]


def make_rng(seed: SeedLike, *key: int) -> np.random.Generator:
    """Generator for stream ``key`` of ``seed``; streams are independent of call order."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key)))


# --------------------------------------------------------------------------- world


class Polyline:
    """Piecewise-linear path parametrized by arc-length fraction."""

    def __init__(self, vertices):
        v = np.asarray(vertices, dtype=float).reshape(-1, 2)
        if v.shape[0] < 2:
            raise ValueError("a polyline needs at least two vertices")
        seg = np.hypot(*np.diff(v, axis=0).T)
        self.vertices = v
        self.cumlen = np.concatenate([[0.0], np.cumsum(seg)])
        if self.length <= 0:
            raise ValueError("polyline has zero length")

    @property
    def length(self) -> float:
        return float(self.cumlen[-1])

    @property
    def start(self) -> np.ndarray:
        return self.vertices[0]

    @property
    def end(self) -> np.ndarray:
        return self.vertices[-1]

    def reversed(self) -> "Polyline":
        return Polyline(self.vertices[::-1])

    def point_at(self, frac) -> np.ndarray:
        s = np.clip(np.asarray(frac, dtype=float), 0.0, 1.0) * self.length
        return np.stack([np.interp(s, self.cumlen, self.vertices[:, 0]),
                         np.interp(s, self.cumlen, self.vertices[:, 1])], axis=-1)


@dataclass
class Road:
    name: str
    start: str
    end: str
    path: Polyline


@dataclass
class World:
    """Named anchor points and the roads connecting them."""

    anchors: dict
    roads: dict

    def __post_init__(self):
        self.anchors = {k: np.asarray(v, dtype=float) for k, v in self.anchors.items()}
        for road in self.roads.values():
            for end, point in ((road.start, road.path.start), (road.end, road.path.end)):
                if end not in self.anchors:
                    raise ValueError(f"road {road.name!r} references unknown anchor {end!r}")
                if np.hypot(*(self.anchors[end] - point)) > 1e-9:
                    raise ValueError(f"road {road.name!r} does not end at anchor {end!r}")

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        pts = [np.atleast_2d(p) for p in self.anchors.values()]
        pts += [r.path.vertices for r in self.roads.values()]
        allp = np.concatenate(pts, axis=0)
        return allp.min(axis=0), allp.max(axis=0)

    def grid(self, sigma: float, n_x: int = 121, n_y: int = 99, cell: float = 0.2) -> GridSpec:
        """Evaluation lattice centered on the world, covering it with a ``3 sigma`` margin."""
        lo, hi = self.bounding_box()
        return GridSpec.around(np.vstack([lo, hi]), cell, margin=3 * sigma, n_x=n_x, n_y=n_y)


@dataclass
class Step:
    kind: str  # "stay" | "move"
    ref: str
    mu: Optional[float] = None
    eta: Optional[float] = None
    q: Optional[float] = None


@dataclass
class ActionPattern:
    """One possible day schedule: stays and moves with duration laws (hours)."""

    probability: float
    steps: list
    name: str = ""
    group: str = ""
    _resolved: list = field(default=None, repr=False)

    def __post_init__(self):
        if self.probability < 0:
            raise ValueError("pattern probability must be nonnegative")
        kinds = [s.kind for s in self.steps]
        if not kinds or kinds[0] != "stay" or kinds[-1] != "stay":
            raise ValueError(f"pattern {self.name!r} must begin and end with a stay")
        for a, b in zip(kinds, kinds[1:]):
            if a == b:
                raise ValueError(f"pattern {self.name!r} must alternate stays and moves")
        for s in self.steps[:-1]:
            if s.mu is None or s.eta is None or s.q is None:
                raise ValueError(f"pattern {self.name!r}: non-final steps need mu, eta and q")
            if s.eta <= 0 or s.q < 0 or s.mu < 0:
                raise ValueError(f"pattern {self.name!r}: need eta > 0, q >= 0, mu >= 0")
        if sum(s.mu for s in self.steps[:-1]) >= HOURS:
            raise ValueError(f"pattern {self.name!r}: mean durations exceed a day")

    @property
    def mus(self) -> np.ndarray:
        return np.array([s.mu for s in self.steps[:-1]], dtype=float)

    @property
    def etas(self) -> np.ndarray:
        return np.array([s.eta for s in self.steps[:-1]], dtype=float)

    @property
    def qs(self) -> np.ndarray:
        return np.array([s.q for s in self.steps[:-1]], dtype=float)

    def resolve(self, world: World) -> list:
        """Steps as ``("stay", point)`` / ``("move", Polyline)`` oriented along the schedule."""
        out = []
        for k, s in enumerate(self.steps):
            if s.kind == "stay":
                if s.ref not in world.anchors:
                    raise ValueError(f"unknown anchor {s.ref!r}")
                out.append(("stay", world.anchors[s.ref]))
                continue
            if s.ref not in world.roads:
                raise ValueError(f"unknown road {s.ref!r}")
            road = world.roads[s.ref]
            before, after = self.steps[k - 1].ref, self.steps[k + 1].ref
            if (road.start, road.end) == (before, after):
                out.append(("move", road.path))
            elif (road.end, road.start) == (before, after):
                out.append(("move", road.path.reversed()))
            else:
                raise ValueError(f"road {s.ref!r} does not connect {before!r} to {after!r}")
        return out


def _parse_prob(p) -> float:
    return float(Fraction(p)) if isinstance(p, str) else float(p)


def load_world(source=None) -> tuple[World, list]:
    """Read a world + pattern JSON document (path, JSON text or dict).

    ``None`` loads the bundled six-anchor default world.
    """
    if source is None:
        doc = json.loads(resources.files("mobscope.resources").joinpath("default_world.json").read_text())
    elif isinstance(source, dict):
        doc = source
    elif isinstance(source, str) and source.lstrip().startswith("{"):
        doc = json.loads(source)
    else:
        doc = json.loads(Path(source).read_text())

    names = [a["name"] for a in doc["anchors"]]
    if len(set(names)) != len(names):
        raise ValueError("anchor names must be unique")
    rnames = [r["name"] for r in doc.get("roads", [])]
    if len(set(rnames)) != len(rnames):
        raise ValueError("road names must be unique")
    anchors = {a["name"]: (float(a["x"]), float(a["y"])) for a in doc["anchors"]}
    roads = {r["name"]: Road(r["name"], r["from"], r["to"], Polyline(r["vertices"]))
             for r in doc.get("roads", [])}
    world = World(anchors, roads)

    patterns = []
    for k, p in enumerate(doc.get("patterns", [])):
        steps = [Step(s["type"], s["ref"], s.get("mu_h"), s.get("eta_h"), s.get("q_h")) for s in p["steps"]]
        patterns.append(ActionPattern(_parse_prob(p["prob"]), steps, p.get("name", f"pattern{k + 1}"),
                                      p.get("group", "")))
    if patterns:
        check_patterns(world, patterns)
    return world, patterns


def check_patterns(world: World, patterns: Sequence[ActionPattern]) -> None:
    if not patterns:
        raise ValueError("need at least one action pattern")
    total = sum(p.probability for p in patterns)
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"pattern probabilities sum to {total}, not 1")
    for p in patterns:
        if p._resolved is None:
            p._resolved = p.resolve(world)


def stay_fractions(patterns: Sequence[ActionPattern]) -> dict:
    """Expected fraction of the day spent at each anchor, ``P(S(U) = a)``.

    Exact, since symmetric truncation keeps each duration's mean at ``mu``.
    """
    out: dict = {}
    for p in patterns:
        hours = list(p.mus) + [HOURS - p.mus.sum()]
        for s, h in zip(p.steps, hours):
            if s.kind == "stay":
                out[s.ref] = out.get(s.ref, 0.0) + p.probability * h / HOURS
    return out


# --------------------------------------------------------------------------- trajectories


@dataclass
class Hold:
    point: np.ndarray
    t_start: float
    t_end: float


@dataclass
class Traverse:
    path: Polyline
    t_start: float
    t_end: float


class Trajectory:
    """Continuous latent path on ``[0, 1]`` made of holds and constant-speed traversals."""

    def __init__(self, segments: Sequence):
        self.segments = list(segments)
        ends = np.array([s.t_end for s in self.segments])
        starts = np.array([s.t_start for s in self.segments])
        if starts[0] != 0.0 or ends[-1] != 1.0 or np.any(starts[1:] != ends[:-1]):
            raise ValueError("segments must tile [0, 1]")
        self._ends = ends

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        t = np.atleast_1d(t)
        if np.any((t < 0) | (t > 1)):
            raise ValueError("trajectory time outside [0, 1]")
        idx = np.minimum(np.searchsorted(self._ends, t, side="left"), len(self.segments) - 1)
        out = np.empty((t.shape[0], 2))
        for k in np.unique(idx):
            sel = idx == k
            seg = self.segments[k]
            if isinstance(seg, Hold):
                out[sel] = seg.point
            else:
                span = seg.t_end - seg.t_start
                frac = (t[sel] - seg.t_start) / span if span > 0 else np.ones(sel.sum())
                out[sel] = seg.path.point_at(frac)
        return out[0] if scalar else out


def eval_trajectory(traj: Trajectory, t) -> np.ndarray:
    """``S(t)`` for a scalar or array of times in [0, 1]."""
    return traj(t)


def _truncated_normal(mu, eta, q, rng, size=None) -> np.ndarray:
    """Normal(mu, eta^2) conditioned on the open interval (mu - q, mu + q), by rejection."""
    mu, eta, q = (np.asarray(a, dtype=float) for a in (mu, eta, q))
    shape = np.broadcast_shapes(mu.shape, eta.shape, q.shape) if size is None else size
    mu, eta, q = (np.broadcast_to(a, shape) for a in (mu, eta, q))
    out = np.where(q > 0, np.nan, mu).astype(float)
    todo = q > 0
    while np.any(todo):
        draw = rng.normal(mu[todo], eta[todo])
        ok = np.abs(draw - mu[todo]) < q[todo]
        vals = out[todo]
        vals[ok] = draw[ok]
        out[todo] = vals
        todo = np.isnan(out)
    return out


def sample_durations(pattern: ActionPattern, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
    """Step durations in hours; the last column is the remainder of the day."""
    n = 1 if size is None else size
    head = _truncated_normal(pattern.mus, pattern.etas, pattern.qs, rng, size=(n, len(pattern.mus)))
    rest = HOURS - head.sum(axis=1)
    if np.any(rest <= 0):
        raise ValueError(f"pattern {pattern.name!r}: sampled durations fill the whole day; shrink mu or q")
    out = np.column_stack([head, rest])
    return out[0] if size is None else out


def build_trajectory(resolved: list, durations_h) -> Trajectory:
    z = np.asarray(durations_h, dtype=float) / HOURS
    bounds = np.concatenate([[0.0], np.cumsum(z)])
    bounds[-1] = 1.0
    segs = []
    for (kind, obj), a, b in zip(resolved, bounds[:-1], bounds[1:]):
        segs.append(Hold(obj, a, b) if kind == "stay" else Traverse(obj, a, b))
    return Trajectory(segs)


def _draw_pattern(patterns, rng, size=None):
    probs = np.array([p.probability for p in patterns], dtype=float)
    return rng.choice(len(patterns), size=size, p=probs / probs.sum())


def sample_day(world: World, patterns: Sequence[ActionPattern], rng_seed: SeedLike = None):
    """Draw one day: ``(pattern_index, durations in hours, Trajectory)``."""
    check_patterns(world, patterns)
    rng = make_rng(rng_seed)
    k = int(_draw_pattern(patterns, rng))
    dur = sample_durations(patterns[k], rng)
    return k, dur, build_trajectory(patterns[k]._resolved, dur)


# --------------------------------------------------------------------------- observation


def _silverman(x: np.ndarray) -> float:
    if x.shape[0] < 2:
        return 1.0 / 48
    iqr = np.subtract(*np.percentile(x, [75, 25]))
    spread = min(x.std(ddof=1), iqr / 1.34) if iqr > 0 else x.std(ddof=1)
    return 0.9 * spread * x.shape[0] ** -0.2 if spread > 0 else 1.0 / 48


def generate_timestamps(mode: str, m: int, template: Optional[Sequence] = None,
                        rng_seed: SeedLike = None, spacing: str = "midpoint") -> np.ndarray:
    """Sorted observation times in (0, 1) for one day.

    ``mode="even"`` gives ``(2j - 1) / (2m)`` (or ``j / (m + 1)`` with
    ``spacing="interior"``). ``mode="realistic"`` picks one day from the
    ``template`` pool and subsamples it, or tops it up with draws from a
    Gaussian smoother of its times, until exactly ``m`` remain.
    """
    if m < 2:
        raise ValueError("need m >= 2 timestamps per day")
    if mode == "even":
        j = np.arange(1, m + 1)
        if spacing == "midpoint":
            return (2 * j - 1) / (2 * m)
        if spacing == "interior":
            return j / (m + 1)
        raise ValueError(f"unknown even spacing {spacing!r}")
    if mode != "realistic":
        raise ValueError(f"unknown timestamp mode {mode!r}")
    if not template:
        raise ValueError("realistic timestamps need a non-empty template pool")
    rng = make_rng(rng_seed)
    pool = [np.unique(np.asarray(d, dtype=float)) for d in template]
    pool = [d[(d > 0) & (d < 1)] for d in pool]
    pool = [d for d in pool if d.size]
    if not pool:
        raise ValueError("template pool has no timestamps inside (0, 1)")
    base = pool[rng.integers(len(pool))]
    if base.size == m:
        return base.copy()
    if base.size > m:
        return np.sort(rng.choice(base, size=m, replace=False))
    h = _silverman(base)
    out = set(base.tolist())
    while len(out) < m:
        need = m - len(out)
        draw = rng.choice(base, size=need) + h * rng.standard_normal(need)
        for v in draw[(draw > 0) & (draw < 1)]:
            if len(out) < m:
                out.add(float(v))
    return np.sort(np.fromiter(out, dtype=float))


def skewed_template(n_days: int = 40, mean_count: int = 300, seed: SeedLike = 2024) -> list:
    """Synthetic irregular sampling pool: a daytime bump, an evening bump, sparse nights."""
    rng = make_rng(seed)
    days = []
    for _ in range(n_days):
        k = max(int(rng.poisson(mean_count)), 2)
        comp = rng.choice(3, size=k, p=[0.45, 0.30, 0.25])
        hours = np.where(comp == 0, rng.normal(14.0, 2.5, k),
                         np.where(comp == 1, rng.normal(20.0, 1.5, k), rng.uniform(0, HOURS, k)))
        t = np.unique(np.mod(hours, HOURS) / HOURS)
        days.append(t[(t > 0) & (t < 1)])
    return days


def observe(traj: Trajectory, times, sigma: float, rng_seed: SeedLike = None, meta: Optional[dict] = None) -> Day:
    """Noisy fixes ``S(t_j) + eps_j`` with isotropic Gaussian noise of std ``sigma``."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    times = np.asarray(times, dtype=float)
    rng = make_rng(rng_seed)
    xy = traj(times) + sigma * rng.standard_normal((times.shape[0], 2))
    return Day(times, xy, dict(meta or {}))


def simulate_dataset(world: World, patterns: Sequence[ActionPattern], n_days: int, m: int,
                     sigma: float, mode: str = "even", template: Optional[Sequence] = None,
                     seed: SeedLike = 0, spacing: str = "midpoint") -> GpsDataset:
    """Simulate ``n_days`` independent days; day ``i`` uses RNG streams keyed by ``(seed, i)``."""
    check_patterns(world, patterns)
    if isinstance(seed, np.random.Generator):
        seed = int(seed.integers(2**63))
    days = []
    for i in range(n_days):
        k, dur, traj = sample_day(world, patterns, make_rng(seed, i, 0))
        times = generate_timestamps(mode, m, template, make_rng(seed, i, 1), spacing=spacing)
        meta = {"day_id": i, "pattern": k, "pattern_name": patterns[k].name,
                "group": patterns[k].group, "durations_h": dur}
        days.append(observe(traj, times, sigma, make_rng(seed, i, 2), meta))
    return GpsDataset(days)


# --------------------------------------------------------------------------- oracle


def sample_latent_positions(world: World, patterns: Sequence[ActionPattern], n: int,
                            rng_seed: SeedLike = None, times=None, interval=None) -> np.ndarray:
    """``S(U)`` for ``n`` independent days, ``U`` uniform on [0, 1] (or on ``interval``).

    ``times`` fixes ``U`` per draw (scalar or length-``n`` array) instead.
    ``interval`` is a circular arc ``(start, length)``.
    """
    check_patterns(world, patterns)
    rng = make_rng(rng_seed)
    which = _draw_pattern(patterns, rng, size=n)
    if times is not None:
        u = np.broadcast_to(np.asarray(times, dtype=float), (n,)).copy()
    elif interval is not None:
        start, length = interval
        if length <= 0:
            raise ValueError("empty time interval")
        u = np.mod(start + length * rng.random(n), 1.0)
    else:
        u = rng.random(n)
    u_h = u * HOURS
    out = np.empty((n, 2))
    for k, pat in enumerate(patterns):
        sel = np.flatnonzero(which == k)
        if sel.size == 0:
            continue
        dur = sample_durations(pat, rng, size=sel.size)
        ends = np.cumsum(dur, axis=1)
        ends[:, -1] = HOURS
        uk = u_h[sel]
        step = np.minimum((ends < uk[:, None]).sum(axis=1), dur.shape[1] - 1)
        starts = ends - dur
        for s, (kind, obj) in enumerate(pat._resolved):
            hit = step == s
            if not np.any(hit):
                continue
            rows = sel[hit]
            if kind == "stay":
                out[rows] = obj
            else:
                span = dur[hit, s]
                frac = np.divide(uk[hit] - starts[hit, s], span, out=np.ones_like(span), where=span > 0)
                out[rows] = obj.point_at(frac)
    return out


def _gauss_1d(centers, locs, sigma):
    z = (centers[:, None] - locs[None, :]) / sigma
    return np.exp(-0.5 * z * z) / (np.sqrt(2 * np.pi) * sigma)


def gaussian_deposit(positions, sigma: float, grid: GridSpec, weights=None,
                     second_moment: bool = False, chunk: int = 8192):
    """Sum over ``positions`` of (weighted) isotropic Gaussian densities at the cell centers.

    Returns the ``(n_x, n_y)`` sum, and with ``second_moment`` also the sum of
    squared unweighted kernels.
    """
    pos = np.asarray(positions, dtype=float).reshape(-1, 2)
    w = None if weights is None else np.asarray(weights, dtype=float)
    xc, yc = grid.x_centers, grid.y_centers
    s1 = np.zeros(grid.shape)
    s2 = np.zeros(grid.shape) if second_moment else None
    for a in range(0, pos.shape[0], chunk):
        p = pos[a:a + chunk]
        gx = _gauss_1d(xc, p[:, 0], sigma)
        gy = _gauss_1d(yc, p[:, 1], sigma)
        s1 += (gx if w is None else gx * w[a:a + chunk]) @ gy.T
        if second_moment:
            s2 += (gx * gx) @ (gy * gy).T
    return (s1, s2) if second_moment else s1


def _mc_field(positions, sigma, grid) -> DensityField:
    n = positions.shape[0]
    s1, s2 = gaussian_deposit(positions, sigma, grid, second_moment=True)
    mean = s1 / n
    var = np.maximum(s2 / n - mean * mean, 0.0)
    return DensityField(grid, mean, stderr=np.sqrt(var / n))


def true_density_oracle(world: World, patterns: Sequence[ActionPattern], sigma: float,
                        grid: GridSpec, n_mc: int = 200_000, rng_seed: SeedLike = 0) -> DensityField:
    """Monte Carlo average GPS density with exact Gaussian noise deposits.

    Only Monte Carlo error remains; the per-cell standard error is in ``stderr``.
    """
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    if sigma <= 0:
        raise ValueError("the oracle needs sigma > 0")
    return _mc_field(sample_latent_positions(world, patterns, n_mc, rng_seed), sigma, grid)


def interval_oracle(world: World, patterns: Sequence[ActionPattern], sigma: float, grid: GridSpec,
                    interval, n_mc: int = 200_000, rng_seed: SeedLike = 0) -> DensityField:
    """Interval-specific GPS density for ``U`` uniform on the arc ``interval = (start, length)``."""
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    if interval[1] <= 0:
        raise ValueError("empty time interval")
    return _mc_field(sample_latent_positions(world, patterns, n_mc, rng_seed, interval=interval), sigma, grid)


def conditional_oracle(world: World, patterns: Sequence[ActionPattern], sigma: float, grid: GridSpec,
                       t: float, n_mc: int = 20_000, rng_seed: SeedLike = 0) -> DensityField:
    """Conditional GPS density at time ``t``."""
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    return _mc_field(sample_latent_positions(world, patterns, n_mc, rng_seed, times=t), sigma, grid)


def integrated_conditional_oracle(world: World, patterns: Sequence[ActionPattern], sigma: float,
                                  grid: GridSpec, n_t: int = 1440, n_per_t: int = 100,
                                  rng_seed: SeedLike = 0) -> DensityField:
    """Midpoint-rule integral over ``n_t`` times of independent conditional oracles.

    ``stderr`` is the exact standard error of the stratified estimate.
    """
    times = (np.arange(n_t) + 0.5) / n_t
    total = np.zeros(grid.shape)
    var = np.zeros(grid.shape)
    for ell, t in enumerate(times):
        f = conditional_oracle(world, patterns, sigma, grid, t, n_per_t, make_rng(rng_seed, ell))
        total += f.values
        var += f.stderr ** 2
    return DensityField(grid, total / n_t, stderr=np.sqrt(var) / n_t)


def ball_mass_oracle(positions, centers, radius: float, sigma: float) -> tuple[float, float]:
    """Mass of ``S(U) + eps`` inside the union of disjoint balls ``B(c, radius)``.

    Each draw contributes its exact Gaussian ball probability (a noncentral
    chi-square CDF with 2 degrees of freedom), so only Monte Carlo error over
    ``positions`` remains.  Returns ``(mean, standard error)``.
    """
    from scipy.stats import ncx2

    pos = np.asarray(positions, dtype=float).reshape(-1, 2)
    c = np.asarray(centers, dtype=float).reshape(-1, 2)
    if radius <= 0 or sigma <= 0:
        raise ValueError("radius and sigma must be positive")
    if c.shape[0] > 1:
        gaps = np.linalg.norm(c[:, None] - c[None, :], axis=-1)[np.triu_indices(c.shape[0], 1)]
        if np.any(gaps <= 2 * radius):
            raise ValueError("balls overlap; the union mass would double count")
    x = (radius / sigma) ** 2
    per_draw = np.zeros(pos.shape[0])
    for ci in c:
        nc = ((pos - ci) ** 2).sum(axis=1) / sigma ** 2
        per_draw += ncx2.cdf(x, 2, nc)
    n = per_draw.shape[0]
    return float(per_draw.mean()), float(per_draw.std(ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
