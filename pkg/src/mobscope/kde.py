"""Kernel estimators of average, interval and conditional GPS densities.

Every estimator here is a weighted 2-D Gaussian KDE; they differ only in
the mass given to each fix.  Masses are stored per observation and sum to
one over the dataset, so ``f(x) = sum_k mass_k * K_h(x - X_k)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import logsumexp
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_gps_data, check_grid, check_points, check_time
from .data import GpsDataset
from .grid import DensityField, GridSpec, TimeGrid

_LOG_SQRT_2PI = 0.5 * np.log(2 * np.pi)
_LOG_UNDERFLOW = np.log(1e-300)


class UnsupportedTimeWarning(RuntimeWarning):
    """No fix lies within numerical reach of the time kernel at some evaluation time."""


@dataclass(frozen=True)
class Bandwidths:
    """Spatial bandwidth ``h_x`` (planar units) and time bandwidth ``h_t`` (fraction of a day)."""

    h_x: float
    h_t: float = 0.05

    def __post_init__(self):
        if not self.h_x > 0:
            raise ValueError(f"h_x must be positive, got {self.h_x}")
        if not 0 < self.h_t <= 0.5:
            raise ValueError(f"h_t must lie in (0, 0.5], got {self.h_t}")


@dataclass
class DayWeights:
    """Per-observation weights in dataset order.

    ``kind`` is ``"time"`` (mid-point weights, each day sums to 1),
    ``"conditional"`` (integrated-conditional weights, total ``n``),
    ``"naive"`` or ``"daily"``.  ``values / n_days`` are probability masses.
    """

    values: np.ndarray
    counts: np.ndarray
    kind: str
    unsupported_times: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.counts = np.asarray(self.counts, dtype=int)
        if self.values.shape[0] != self.counts.sum():
            raise ValueError("weights do not match the day sizes")
        if np.any(self.values < 0) or not np.all(np.isfinite(self.values)):
            raise ValueError("weights must be finite and nonnegative")

    @property
    def n_days(self) -> int:
        return self.counts.shape[0]

    @property
    def masses(self) -> np.ndarray:
        return self.values / self.n_days

    def per_day(self) -> list:
        return np.split(self.values, np.cumsum(self.counts)[:-1])


# --------------------------------------------------------------------------- time


def cyclic_time_distance(t1, t2):
    """``min(|t1 - t2|, 1 - |t1 - t2|)``: time apart on a 24-hour clock, in days."""
    d = np.abs(np.asarray(t1, dtype=float) - np.asarray(t2, dtype=float))
    d = np.minimum(d, 1.0 - d)
    return float(d) if d.ndim == 0 else d


def time_weights(times) -> np.ndarray:
    """Mid-point weights ``(t_{j+1} - t_{j-1}) / 2`` with the day wrapped at midnight.

    ``times`` may be a :class:`~mobscope.data.Day` or a sorted array.
    """
    t = np.asarray(getattr(times, "t", times), dtype=float)
    if t.shape[0] < 2:
        raise ValueError("mid-point weights need at least two fixes")
    if np.any(np.diff(t) <= 0):
        raise ValueError("timestamps must be strictly increasing")
    prev = np.concatenate([[t[-1] - 1.0], t[:-1]])
    nxt = np.concatenate([t[1:], [1.0 + t[0]]])
    return (nxt - prev) / 2.0


def in_arc(t, interval) -> np.ndarray:
    """Membership of times in the half-open circular arc ``[start, start + length)``."""
    start, length = interval
    if length >= 1:
        return np.ones(np.shape(t), dtype=bool)
    return np.mod(np.asarray(t) - start, 1.0) < length


def check_interval(interval) -> tuple:
    if interval is None:
        return (0.0, 1.0)
    start, length = float(interval[0]), float(interval[1])
    if not 0 < length <= 1:
        raise ValueError(f"interval length must lie in (0, 1], got {length}")
    return (np.mod(start, 1.0), length)


# --------------------------------------------------------------------------- spatial kernel sums


def _gauss_1d(centers, locs, h):
    z = (centers[:, None] - locs[None, :]) / h
    return np.exp(-0.5 * z * z) / (np.sqrt(2 * np.pi) * h)


def grid_kde(points, masses, h: float, grid: GridSpec, chunk: int = 8192) -> np.ndarray:
    """``sum_k mass_k K_h(x - X_k)`` at every cell center.

    The isotropic Gaussian factorizes over axes, so the grid sum is one
    matrix product per chunk; no tail truncation is needed.
    """
    pts = np.asarray(points, dtype=float)
    w = np.asarray(masses, dtype=float)
    xc, yc = grid.x_centers, grid.y_centers
    out = np.zeros(grid.shape)
    for a in range(0, pts.shape[0], chunk):
        p = pts[a:a + chunk]
        gx = _gauss_1d(xc, p[:, 0], h) * w[a:a + chunk]
        out += gx @ _gauss_1d(yc, p[:, 1], h).T
    return out


def point_kde(query, points, masses, h: float, max_block: int = 1 << 22) -> np.ndarray:
    """Direct kernel sums at arbitrary query points.

    Works on blocks of at most ``max_block`` query-point pairs to bound memory.
    """
    q = check_points(query)
    pts = np.asarray(points, dtype=float)
    w = np.asarray(masses, dtype=float)
    out = np.empty(q.shape[0])
    norm = 1.0 / (2 * np.pi * h * h)
    chunk = max(1, max_block // max(1, pts.shape[0]))
    s = -0.5 / (h * h)
    for a in range(0, q.shape[0], chunk):
        dx = q[a:a + chunk, 0, None] - pts[None, :, 0]
        dy = q[a:a + chunk, 1, None] - pts[None, :, 1]
        dx *= dx
        dy *= dy
        dx += dy
        dx *= s
        np.exp(dx, out=dx)
        out[a:a + chunk] = dx @ w * norm
    return out


def _field(grid, data_points, masses, h) -> DensityField:
    return DensityField(grid, grid_kde(data_points, masses, h, grid))


# --------------------------------------------------------------------------- weights


def naive_weights(data: GpsDataset) -> DayWeights:
    """Equal mass per fix, expressed on the per-day scale (total ``n``)."""
    data = check_gps_data(data)
    return DayWeights(np.full(data.n_obs, data.n_days / data.n_obs), data.counts, "naive")


def time_weight_vector(data: GpsDataset) -> DayWeights:
    data = check_gps_data(data)
    return DayWeights(np.concatenate([time_weights(d.t) for d in data.days]), data.counts, "time")


def _log_time_kernel(t_eval, t_obs, h_t):
    d = cyclic_time_distance(t_eval[:, None], t_obs[None, :])
    return -0.5 * (d / h_t) ** 2 - _LOG_SQRT_2PI


def _conditional_masses(data: GpsDataset, h_t: float, times, block: int = 0):
    """Yield ``(rows, masses, supported)`` blocks of the conditional masses.

    Row ``l`` holds ``(1/m_i) K_T(d_T(t_ij, t_l)/h_t) / sum_{i'j'} (1/m_i') K_T(...)``
    for every fix; computed in log space so distant times never underflow.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    t_obs = data.times
    log_inv_m = -np.log(data.counts[data.day_index].astype(float))
    if block <= 0:
        block = max(1, int(2_000_000 // max(t_obs.shape[0], 1)))
    for a in range(0, times.shape[0], block):
        lk = _log_time_kernel(times[a:a + block], t_obs, h_t)
        supported = lk.max(axis=1) >= _LOG_UNDERFLOW
        ln = lk + log_inv_m
        ln -= logsumexp(ln, axis=1, keepdims=True)
        yield slice(a, a + lk.shape[0]), np.exp(ln), supported


def _warn_unsupported(bad_times):
    if len(bad_times):
        warnings.warn(f"{len(bad_times)} evaluation time(s) have no fix within reach of the time "
                      f"kernel (first: t={bad_times[0]:.6f}); weights fall back to the nearest fixes",
                      UnsupportedTimeWarning, stacklevel=3)


def conditional_weights(data, h_t: float, t: float) -> DayWeights:
    """Local weights ``omega_ij(t)`` (total ``n``) of the conditional estimator at time ``t``."""
    data = check_gps_data(data)
    t = check_time(t)
    _, mass, ok = next(_conditional_masses(data, h_t, [t]))
    if not ok[0]:
        _warn_unsupported([t])
    return DayWeights(mass[0] * data.n_days, data.counts, "conditional",
                      np.array([] if ok[0] else [t]))


def integrated_conditional_weights(data, bw: Bandwidths, time_grid: TimeGrid = TimeGrid(),
                                   interval=None) -> DayWeights:
    """Integrated-conditional weights ``W~_ij``, the midpoint-rule time average of ``omega_ij``.

    With ``interval`` the average runs over the grid times inside the arc only,
    which gives the interval weights divided by the arc length.
    """
    data = check_gps_data(data)
    arc = check_interval(interval)
    times = time_grid.times
    sel = in_arc(times, arc)
    if not np.any(sel):
        raise ValueError(f"no time-grid point falls inside the interval {arc}")
    times = times[sel]
    acc = np.zeros(data.n_obs)
    bad = []
    for rows, mass, ok in _conditional_masses(data, bw.h_t, times):
        acc += mass.sum(axis=0)
        bad.extend(times[rows][~ok].tolist())
    _warn_unsupported(bad)
    return DayWeights(acc * data.n_days / times.shape[0], data.counts, "conditional", np.array(bad))


def daily_average_weights(data, bw: Bandwidths, time_grid: TimeGrid = TimeGrid(),
                          interval=None) -> DayWeights:
    """Weights of the time-integrated average of per-day conditional KDEs."""
    data = check_gps_data(data)
    arc = check_interval(interval)
    times = time_grid.times
    times = times[in_arc(times, arc)]
    if times.size == 0:
        raise ValueError(f"no time-grid point falls inside the interval {arc}")
    acc = np.zeros(data.n_obs)
    bounds = np.concatenate([[0], np.cumsum(data.counts)])
    bad = []
    block = max(1, int(2_000_000 // data.n_obs))
    for a in range(0, times.shape[0], block):
        tb = times[a:a + block]
        lk = _log_time_kernel(tb, data.times, bw.h_t)
        ok = lk.max(axis=1) >= _LOG_UNDERFLOW
        bad.extend(tb[~ok].tolist())
        for i in range(data.n_days):
            part = lk[:, bounds[i]:bounds[i + 1]]
            acc[bounds[i]:bounds[i + 1]] += np.exp(part - logsumexp(part, axis=1, keepdims=True)).sum(axis=0)
    _warn_unsupported(bad)
    return DayWeights(acc / times.shape[0], data.counts, "daily", np.array(bad))


def _arc_overlap(lo, hi, arc) -> np.ndarray:
    """Length of ``[lo, hi]`` (on the unwrapped line, ``hi - lo <= 1``) inside the periodic arc."""
    start, length = arc
    total = np.zeros(np.shape(lo))
    for k in (-1.0, 0.0, 1.0):
        a, b = start + k, start + length + k
        total += np.clip(np.minimum(hi, b) - np.maximum(lo, a), 0.0, None)
    return total


def interval_time_weights(data, interval) -> tuple:
    """Mid-point weights of in-interval fixes, clipped to the arc and renormalized per day.

    Each fix stands for the span between the mid-points to its neighbours;
    only the part of that span inside the arc counts.  Returns
    ``(keep, masses)``: a boolean selector over fixes and the masses of the
    kept fixes (summing to one). Days without fixes in the arc drop out.
    """
    data = check_gps_data(data)
    arc = check_interval(interval)
    keep = in_arc(data.times, arc)
    if not np.any(keep):
        raise ValueError(f"no observation falls inside the interval {arc}")
    if arc[1] >= 1:
        w = time_weight_vector(data).values
    else:
        spans = []
        for d in data.days:
            t = d.t
            prev = np.concatenate([[t[-1] - 1.0], t[:-1]])
            nxt = np.concatenate([t[1:], [1.0 + t[0]]])
            spans.append(_arc_overlap((prev + t) / 2, (t + nxt) / 2, arc))
        w = np.concatenate(spans) * keep
    day_tot = np.bincount(data.day_index, weights=w, minlength=data.n_days)
    n_active = int((day_tot > 0).sum())
    masses = np.divide(w, day_tot[data.day_index], out=np.zeros_like(w), where=keep) / n_active
    return keep, masses[keep]


# --------------------------------------------------------------------------- estimators


def naive_kde(data, h: float, grid: GridSpec) -> DensityField:
    """Plain KDE of all fixes, ignoring timestamps."""
    data = check_gps_data(data)
    return _field(check_grid(grid), data.points, np.full(data.n_obs, 1.0 / data.n_obs), h)


def time_weighted_kde(data, h: float, grid: GridSpec) -> DensityField:
    """KDE with each fix weighted by the time span it represents."""
    data = check_gps_data(data)
    return _field(check_grid(grid), data.points, time_weight_vector(data).masses, h)


def conditional_kde(data, bw: Bandwidths, grid: GridSpec, t: float) -> DensityField:
    """Conditional density estimate at time ``t``."""
    data = check_gps_data(data)
    w = conditional_weights(data, bw.h_t, t)
    return _field(check_grid(grid), data.points, w.masses, bw.h_x)


def integrated_conditional_kde(data, bw: Bandwidths, grid: GridSpec,
                               time_grid: TimeGrid = TimeGrid()) -> DensityField:
    """Time integral of the conditional estimate, computed as one weighted KDE."""
    data = check_gps_data(data)
    w = integrated_conditional_weights(data, bw, time_grid)
    return _field(check_grid(grid), data.points, w.masses, bw.h_x)


def interval_kde(data, bw: Bandwidths, grid: GridSpec, interval, estimator: str = "conditional",
                 time_grid: TimeGrid = TimeGrid()) -> DensityField:
    """Density over the circular time arc ``interval = (start, length)``.

    ``estimator`` is ``"conditional"`` (conditional estimate averaged over the
    arc), ``"weighted"`` (in-arc fixes with renormalized mid-point weights) or
    ``"naive"`` (in-arc fixes, equal weights).
    """
    data = check_gps_data(data)
    grid = check_grid(grid)
    if estimator == "conditional":
        w = integrated_conditional_weights(data, bw, time_grid, interval)
        return _field(grid, data.points, w.masses, bw.h_x)
    if estimator == "weighted":
        keep, masses = interval_time_weights(data, interval)
        return _field(grid, data.points[keep], masses, bw.h_x)
    if estimator == "naive":
        keep = in_arc(data.times, check_interval(interval))
        if not np.any(keep):
            raise ValueError("no observation falls inside the interval")
        return _field(grid, data.points[keep], np.full(keep.sum(), 1.0 / keep.sum()), bw.h_x)
    raise ValueError(f"unknown interval estimator {estimator!r}")


def daily_average_conditional(data, bw: Bandwidths, grid: GridSpec, t: float) -> DensityField:
    """Average over days of each day's own conditional KDE at time ``t``."""
    data = check_gps_data(data)
    t = check_time(t)
    lk = _log_time_kernel(np.array([t]), data.times, bw.h_t)[0]
    if lk.max() < _LOG_UNDERFLOW:
        _warn_unsupported([t])
    masses = np.empty(data.n_obs)
    bounds = np.concatenate([[0], np.cumsum(data.counts)])
    for i in range(data.n_days):
        part = lk[bounds[i]:bounds[i + 1]]
        masses[bounds[i]:bounds[i + 1]] = np.exp(part - logsumexp(part)) / data.n_days
    return _field(check_grid(grid), data.points, masses, bw.h_x)


ESTIMATORS = ("naive", "weighted", "conditional", "daily")
_ALIASES = {"fw": "weighted", "w": "weighted", "time": "weighted", "fc": "conditional",
            "c": "conditional", "naive": "naive", "weighted": "weighted",
            "conditional": "conditional", "daily": "daily"}


def canonical_estimator(name: str) -> str:
    try:
        return _ALIASES[name]
    except KeyError:
        raise ValueError(f"unknown estimator {name!r}; choose from {ESTIMATORS}") from None


def estimator_weights(data, estimator: str, bw: Optional[Bandwidths] = None,
                      time_grid: TimeGrid = TimeGrid(), interval=None) -> tuple:
    """``(points, masses, weights)`` defining the named estimator as a weighted KDE.

    ``weights`` is the :class:`DayWeights` over the kept fixes, or ``None`` for
    interval-restricted mid-point/naive estimators.
    """
    data = check_gps_data(data)
    name = canonical_estimator(estimator)
    full = interval is None or check_interval(interval)[1] >= 1
    if name in ("conditional", "daily"):
        if bw is None:
            raise ValueError(f"the {name} estimator needs a time bandwidth")
        fn = integrated_conditional_weights if name == "conditional" else daily_average_weights
        w = fn(data, bw, time_grid, None if full else interval)
        return data.points, w.masses, w
    if full:
        w = naive_weights(data) if name == "naive" else time_weight_vector(data)
        return data.points, w.masses, w
    keep = in_arc(data.times, check_interval(interval))
    if name == "weighted":
        keep, masses = interval_time_weights(data, interval)
    else:
        if not np.any(keep):
            raise ValueError("no observation falls inside the interval")
        masses = np.full(keep.sum(), 1.0 / keep.sum())
    return data.points[keep], masses, None


class GPSDensity(BaseEstimator):
    """Average (or interval-specific) GPS density estimator.

    Parameters
    ----------
    estimator : {"conditional", "weighted", "naive", "daily"}
        Weighting of the fixes: integrated conditional KDE, mid-point time
        weights, plain KDE, or the time-integrated average of per-day
        conditional KDEs.
    bandwidth : float or "reference"
        Spatial bandwidth; ``"reference"`` applies :func:`mobscope.evaluation.reference_bandwidths`.
    time_bandwidth : float or "reference"
        Time bandwidth as a fraction of a day.
    n_time_grid : int
        Number of midpoint-rule nodes for time integrals.
    interval : tuple (start, length) or None
        Circular time arc for an interval-specific density.

    Attributes
    ----------
    bandwidths_ : Bandwidths
    points_ : ndarray of shape (n_kept, 2)
    masses_ : ndarray of shape (n_kept,)
        Probability mass per kept fix (sums to one).
    day_weights_ : DayWeights or None
    n_days_ : int
    """

    def __init__(self, estimator="conditional", bandwidth="reference", time_bandwidth="reference",
                 n_time_grid=1440, interval=None):
        self.estimator = estimator
        self.bandwidth = bandwidth
        self.time_bandwidth = time_bandwidth
        self.n_time_grid = n_time_grid
        self.interval = interval

    def _resolve_bandwidths(self, data) -> Bandwidths:
        ref = None
        if self.bandwidth == "reference" or self.time_bandwidth == "reference":
            from .evaluation import reference_bandwidths
            ref = reference_bandwidths(data)
        h_x = ref.h_x if self.bandwidth == "reference" else float(self.bandwidth)
        h_t = ref.h_t if self.time_bandwidth == "reference" else float(self.time_bandwidth)
        return Bandwidths(h_x, h_t)

    def fit(self, X, y=None):
        data = check_gps_data(X)
        self.bandwidths_ = self._resolve_bandwidths(data)
        self.estimator_ = canonical_estimator(self.estimator)
        self.points_, self.masses_, self.day_weights_ = estimator_weights(
            data, self.estimator_, self.bandwidths_, TimeGrid(self.n_time_grid), self.interval)
        self.n_days_ = data.n_days
        self.data_ = data
        return self

    def density(self, points) -> np.ndarray:
        """Estimated density at ``points`` by direct kernel sums."""
        check_is_fitted(self, "masses_")
        return point_kde(points, self.points_, self.masses_, self.bandwidths_.h_x)

    def score_samples(self, points) -> np.ndarray:
        """Log-density at ``points`` (the scikit-learn density-estimator convention)."""
        with np.errstate(divide="ignore"):
            return np.log(self.density(points))

    def score(self, points, y=None) -> float:
        return float(self.score_samples(points).sum())

    def evaluate(self, grid: GridSpec) -> DensityField:
        """Estimated density at every cell center of ``grid``."""
        check_is_fitted(self, "masses_")
        return _field(check_grid(grid), self.points_, self.masses_, self.bandwidths_.h_x)

    def conditional(self, grid: GridSpec, t: float) -> DensityField:
        """Conditional density estimate at time ``t`` with the fitted bandwidths."""
        check_is_fitted(self, "masses_")
        return conditional_kde(self.data_, self.bandwidths_, grid, t)
