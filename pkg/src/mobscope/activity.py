"""Level sets, anchor locations, activity spaces and identification bounds."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_gps_data, check_grid, check_points, check_positive, check_probability
from .grid import DensityField, GridSpec, RegionMask
from .kde import DayWeights, GPSDensity, point_kde

logger = logging.getLogger(__name__)


def chi2_2_cdf(t):
    """CDF of the chi-square distribution with two degrees of freedom, ``1 - exp(-t/2)``."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(np.isnan(t)):
        raise ValueError("chi2_2_cdf needs t >= 0")
    out = -np.expm1(-0.5 * t)
    return float(out) if out.ndim == 0 else out


def anchor_level_threshold(lam: float, sigma: float) -> float:
    """Density floor ``lam / (2 pi sigma^2)`` at a location visited a fraction ``lam`` of the day."""
    lam = float(lam)
    if not 0 < lam <= 1:
        raise ValueError(f"lambda must lie in (0, 1], got {lam}")
    if not sigma > 0:
        raise ValueError("sigma must be positive; the threshold is undefined without measurement noise")
    return lam / (2 * np.pi * sigma * sigma)


def level_set(field: DensityField, level: float) -> RegionMask:
    """Cells whose center density is at least ``level`` (and positive)."""
    v = field.values
    return RegionMask(field.grid, (v >= level) & (v > 0), float(level))


# --------------------------------------------------------------------------- anchors


@dataclass
class AnchorEstimate:
    """A density mode inside the anchor level set.

    Attributes
    ----------
    location : ndarray of shape (2,)
    density : float
        Estimated density at ``location``.
    level : float
        The time fraction ``lambda`` (or raw threshold) that defined the level set.
    threshold : float
        Density threshold actually applied.
    iterations : int
        Mean-shift iterations used; 0 when no refinement ran.
    converged : bool
    """

    location: np.ndarray
    density: float
    level: float
    threshold: float
    iterations: int = 0
    converged: bool = True


def _grid_local_maxima(values: np.ndarray) -> np.ndarray:
    """Cells not exceeded by any 8-neighbor; on ties the lexicographically first cell wins."""
    nx, ny = values.shape
    pad = np.full((nx + 2, ny + 2), -np.inf)
    pad[1:-1, 1:-1] = values
    keep = np.ones(values.shape, dtype=bool)
    for di in (-1, 0, 1):
        for dk in (-1, 0, 1):
            if di == 0 and dk == 0:
                continue
            nb = pad[1 + di:1 + di + nx, 1 + dk:1 + dk + ny]
            # neighbor later in (i, k) order: a tie is allowed; earlier: must be strictly greater
            later = (di, dk) > (0, 0)
            keep &= (values >= nb) if later else (values > nb)
    return np.argwhere(keep)


def mean_shift(seeds, points, masses, h: float, max_iter: int = 50, tol: float = 1e-6):
    """Weighted Gaussian mean-shift from each seed.

    Returns ``(modes, iterations, converged)``; a seed stops once its step is
    below ``tol * h``.
    """
    x = check_points(seeds).copy()
    pts = np.asarray(points, dtype=float)
    w = np.asarray(masses, dtype=float)
    iters = np.zeros(x.shape[0], dtype=int)
    done = np.zeros(x.shape[0], dtype=bool)
    for _ in range(max_iter):
        act = np.flatnonzero(~done)
        if act.size == 0:
            break
        d2 = ((x[act, None, :] - pts[None, :, :]) ** 2).sum(axis=-1)
        # shift by the row minimum so far-away seeds do not underflow to 0/0
        k = np.exp(-0.5 * (d2 - d2.min(axis=1, keepdims=True)) / (h * h)) * w
        new = (k @ pts) / k.sum(axis=1, keepdims=True)
        step = np.linalg.norm(new - x[act], axis=1)
        x[act] = new
        iters[act] += 1
        done[act[step < tol * h]] = True
    return x, iters, done


def _hessian_max_eig(x, points, masses, h: float) -> float:
    """Largest eigenvalue of the central-difference Hessian of the KDE, step ``h / 10``."""
    e = h / 10
    f = lambda p: point_kde(np.asarray(p, dtype=float)[None, :], points, masses, h)[0]  # noqa: E731
    f0 = f(x)
    ex, ey = np.array([e, 0.0]), np.array([0.0, e])
    fxx = (f(x + ex) - 2 * f0 + f(x - ex)) / e ** 2
    fyy = (f(x + ey) - 2 * f0 + f(x - ey)) / e ** 2
    fxy = (f(x + ex + ey) - f(x + ex - ey) - f(x - ex + ey) + f(x - ex - ey)) / (4 * e * e)
    return float(np.linalg.eigvalsh(np.array([[fxx, fxy], [fxy, fyy]])).max())


def detect_anchors(field: DensityField, lam: Optional[float] = None, sigma: Optional[float] = None, *,
                   threshold: Optional[float] = None, points=None, masses=None, h: Optional[float] = None,
                   max_iter: int = 50, tol: float = 1e-6) -> list:
    """Local density modes inside the anchor level set.

    Parameters
    ----------
    field : DensityField
        Estimated average density on a grid.
    lam, sigma : float
        Time fraction and noise scale giving the threshold ``lam / (2 pi sigma^2)``.
    threshold : float, optional
        Raw density threshold, used instead of ``lam``/``sigma``.
    points, masses, h : optional
        The weighted KDE behind ``field``.  When given, grid maxima are refined
        by mean-shift, merged within ``h / 2`` and kept only if the refined mode
        clears the threshold and has a negative-definite Hessian.

    Returns
    -------
    list of AnchorEstimate, sorted by decreasing density.
    """
    if threshold is None:
        if lam is None or sigma is None:
            raise ValueError("give either threshold or both lam and sigma")
        threshold = anchor_level_threshold(lam, sigma)
        level = float(lam)
    else:
        threshold = float(threshold)
        level = float(lam) if lam is not None else threshold
    grid = field.grid
    cells = [c for c in _grid_local_maxima(field.values) if field.values[c[0], c[1]] >= threshold
             and field.values[c[0], c[1]] > 0]
    seeds = np.array([[grid.x_centers[i], grid.y_centers[k]] for i, k in cells]).reshape(-1, 2)
    if seeds.shape[0] == 0:
        return []
    if points is None:
        vals = np.array([field.values[i, k] for i, k in cells])
        out = [AnchorEstimate(s, float(v), level, threshold) for s, v in zip(seeds, vals)]
        return sorted(out, key=lambda a: (-a.density, *a.location))
    if h is None or masses is None:
        raise ValueError("mean-shift refinement needs points, masses and h")
    h = check_positive(float(h), "h")
    pts = check_points(points)
    w = np.asarray(masses, dtype=float)
    modes, iters, conv = mean_shift(seeds, pts, w, h, max_iter, tol)
    dens = point_kde(modes, pts, w, h)
    order = np.lexsort((modes[:, 1], modes[:, 0], -dens))
    kept: list = []
    for j in order:
        if dens[j] < threshold:
            continue
        if any(np.linalg.norm(modes[j] - a.location) < h / 2 for a in kept):
            continue
        if _hessian_max_eig(modes[j], pts, w, h) >= 0:
            logger.debug("dropping stationary point at %s: Hessian not negative definite", modes[j])
            continue
        kept.append(AnchorEstimate(modes[j], float(dens[j]), level, threshold, int(iters[j]), bool(conv[j])))
    return kept


class AnchorDetector(BaseEstimator):
    """Fit an average-density estimator and report its anchor modes.

    Parameters
    ----------
    lam : float
        Time fraction defining the level set (with ``sigma``).
    sigma : float
        Measurement-noise scale.
    threshold : float, optional
        Raw density threshold overriding ``lam`` / ``sigma``.
    estimator, bandwidth, time_bandwidth, n_time_grid
        Passed to :class:`GPSDensity`.
    grid : GridSpec, optional
        Search lattice; default is a 0.1-bandwidth lattice around the data.

    Attributes
    ----------
    anchors_ : list of AnchorEstimate
    density_ : GPSDensity
    field_ : DensityField
    """

    def __init__(self, lam=0.0055, sigma=0.2, threshold=None, estimator="conditional", bandwidth="reference",
                 time_bandwidth="reference", n_time_grid=1440, grid=None):
        self.lam = lam
        self.sigma = sigma
        self.threshold = threshold
        self.estimator = estimator
        self.bandwidth = bandwidth
        self.time_bandwidth = time_bandwidth
        self.n_time_grid = n_time_grid
        self.grid = grid

    def fit(self, X, y=None):
        data = check_gps_data(X)
        self.density_ = GPSDensity(self.estimator, self.bandwidth, self.time_bandwidth,
                                   self.n_time_grid).fit(data)
        h = self.density_.bandwidths_.h_x
        grid = self.grid if self.grid is not None else GridSpec.around(data.points, h / 2, margin=3 * h)
        self.field_ = self.density_.evaluate(check_grid(grid))
        self.anchors_ = detect_anchors(self.field_, self.lam, self.sigma, threshold=self.threshold,
                                       points=self.density_.points_, masses=self.density_.masses_, h=h)
        return self

    @property
    def locations_(self) -> np.ndarray:
        check_is_fitted(self, "anchors_")
        return np.array([a.location for a in self.anchors_]).reshape(-1, 2)

    def predict(self, points) -> np.ndarray:
        """Index of the nearest anchor for each point (-1 when no anchor was found)."""
        pts = check_points(points)
        loc = self.locations_
        if loc.shape[0] == 0:
            return np.full(pts.shape[0], -1)
        return np.argmin(((pts[:, None] - loc[None]) ** 2).sum(-1), axis=1)


# --------------------------------------------------------------------------- activity space


@dataclass
class WeightedEDF:
    """Point masses ``W_ij / n`` on the fixes: the time-weighted empirical distribution."""

    points: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        self.points = check_points(self.points)
        self.masses = np.asarray(self.masses, dtype=float).ravel()
        if self.masses.shape[0] != self.points.shape[0]:
            raise ValueError(f"{self.masses.shape[0]} masses for {self.points.shape[0]} points")
        if np.any(self.masses < 0) or not np.all(np.isfinite(self.masses)):
            raise ValueError("EDF masses must be finite and nonnegative")
        total = self.masses.sum()
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"EDF masses sum to {total!r}, not 1")

    def __len__(self) -> int:
        return self.points.shape[0]

    def mass_in(self, region: Union[RegionMask, Callable]) -> float:
        """Total mass of the fixes inside ``region``.

        ``region`` is a boolean predicate on ``(k, 2)`` points or a
        :class:`RegionMask` (a fix belongs to the cell containing it; fixes off
        the grid count as outside).
        """
        return float(self.masses[self.contains(region)].sum())

    def contains(self, region) -> np.ndarray:
        if isinstance(region, RegionMask):
            g = region.grid
            i = np.floor((self.points[:, 0] - g.x_min) / g.dx).astype(int)
            k = np.floor((self.points[:, 1] - g.y_min) / g.dy).astype(int)
            on = (i >= 0) & (i < g.n_x) & (k >= 0) & (k < g.n_y)
            out = np.zeros(len(self), dtype=bool)
            out[on] = region.membership[i[on], k[on]]
            return out
        return np.asarray(region(self.points), dtype=bool)

    def cdf(self, x) -> float:
        """``F(x) = sum of masses with X <= x`` componentwise."""
        x = np.asarray(x, dtype=float)
        return float(self.masses[np.all(self.points <= x, axis=1)].sum())


def weighted_edf(data, weights) -> WeightedEDF:
    """EDF with mass ``W_ij / n`` per fix.

    ``weights`` is a :class:`DayWeights` (or a per-fix array) on the per-day
    scale: mid-point weights sum to 1 within each day, integrated-conditional
    weights sum to ``n`` overall.
    """
    data = check_gps_data(data)
    values = weights.values if isinstance(weights, DayWeights) else np.asarray(weights, dtype=float)
    if values.shape != (data.n_obs,):
        raise ValueError(f"{values.shape} weights for {data.n_obs} observations")
    if isinstance(weights, DayWeights) and not np.array_equal(weights.counts, data.counts):
        raise ValueError("weights were built for days of different sizes")
    return WeightedEDF(data.points, values / data.n_days)


def _density_at(density, points) -> np.ndarray:
    if density is None:
        raise ValueError("activity_space needs the fitted density (callable, estimator or values)")
    if hasattr(density, "density"):
        return np.asarray(density.density(points), dtype=float)
    if callable(density):
        return np.asarray(density(points), dtype=float)
    return np.asarray(density, dtype=float)


# coverage comparisons allow for rounding in sums of masses that hit rho exactly
RHO_TOL = 1e-12


def activity_level(p, masses, rho: float) -> tuple[float, int]:
    """Level ``p_(k*)`` with ``k*`` the largest index whose upper tail mass reaches ``rho``.

    ``p`` are the densities at the fixes and ``masses`` their EDF masses.
    Returns ``(level, k*)`` with ``k*`` indexing the ascending sort.
    """
    rho = check_probability(rho, "rho")
    p = np.asarray(p, dtype=float)
    w = np.asarray(masses, dtype=float)
    order = np.argsort(p, kind="stable")
    tail = np.cumsum(w[order][::-1])[::-1]
    hits = np.flatnonzero(tail >= rho - RHO_TOL)
    k = int(hits[-1]) if hits.size else 0
    return float(p[order][k]), k


def activity_space(field: DensityField, edf: WeightedEDF, rho: float, density=None):
    """Smallest upper level set of ``field`` whose EDF mass reaches ``rho``.

    Parameters
    ----------
    field : DensityField
    edf : WeightedEDF
    rho : float in (0, 1)
    density : callable, fitted estimator or array
        Exact estimated density at ``edf.points`` (kernel sums, not grid lookups).

    Returns
    -------
    (RegionMask, level)
    """
    rho = check_probability(rho, "rho")
    p = _density_at(density, edf.points)
    if p.shape != (len(edf),):
        raise ValueError("density values do not match the EDF points")
    level, k = activity_level(p, edf.masses, rho)
    mask = level_set(field, level)
    mask.meta.update(rho=rho, k_star=k, covered_mass=float(edf.masses[p >= level].sum()))
    return mask, level


def brute_force_activity_level(p, masses, rho: float, n_levels: int = 512) -> float:
    """Level by direct search over ``n_levels`` evenly spaced values plus every observed density."""
    p = np.asarray(p, dtype=float)
    w = np.asarray(masses, dtype=float)
    grid = np.linspace(p.min(), p.max(), n_levels)
    best = -np.inf
    for lam in np.union1d(grid, p):
        if w[p >= lam].sum() >= rho - RHO_TOL:
            best = max(best, lam)
    return float(best)


class ActivitySpace(BaseEstimator):
    """Probability-indexed activity space of a fitted average density.

    Parameters
    ----------
    rho : float in (0, 1)
        Target fraction of time covered.
    estimator : {"conditional", "weighted"}
        Source of both the density and the EDF weights.
    bandwidth, time_bandwidth, n_time_grid
        Passed to :class:`GPSDensity`.
    grid : GridSpec, optional
        Lattice for the mask; without it only ``level_`` is computed.

    Attributes
    ----------
    level_ : float
    covered_mass_ : float
    mask_ : RegionMask or None
    """

    def __init__(self, rho=0.9, estimator="conditional", bandwidth="reference", time_bandwidth="reference",
                 n_time_grid=1440, grid=None):
        self.rho = rho
        self.estimator = estimator
        self.bandwidth = bandwidth
        self.time_bandwidth = time_bandwidth
        self.n_time_grid = n_time_grid
        self.grid = grid

    def fit(self, X, y=None):
        data = check_gps_data(X)
        self.density_ = GPSDensity(self.estimator, self.bandwidth, self.time_bandwidth,
                                   self.n_time_grid).fit(data)
        if self.density_.day_weights_ is None:
            raise ValueError("activity spaces need full-day weights")
        edf = weighted_edf(data, self.density_.day_weights_)
        p = self.density_.density(edf.points)
        self.level_, k = activity_level(p, edf.masses, self.rho)
        self.covered_mass_ = float(edf.masses[p >= self.level_].sum())
        self.mask_ = None
        if self.grid is not None:
            self.mask_ = level_set(self.density_.evaluate(check_grid(self.grid)), self.level_)
            self.mask_.meta.update(rho=self.rho, k_star=k, covered_mass=self.covered_mass_)
        return self

    def predict(self, points) -> np.ndarray:
        """True where the estimated density reaches the activity level."""
        check_is_fitted(self, "level_")
        return self.density_.density(points) >= self.level_


# --------------------------------------------------------------------------- identification bounds


@dataclass(frozen=True)
class RegionBounds:
    """Lower bounds implied by a region probability.

    ``high_activity`` is ``mass * F(r^2 / sigma^2)``, the GPS mass guaranteed in
    the ``r``-neighborhood of a region (or point) visited with probability
    ``mass``.  ``activity`` is ``max(0, 1 - (1 - mass) / F)``, the visit
    probability guaranteed in the ``r``-neighborhood of a region holding GPS
    mass ``mass``; ``vacuous`` marks the case where that bound is not positive.
    """

    high_activity: float
    activity: float
    vacuous: bool
    chi2_cdf: float


def region_probability_bounds(mass: float, r: float, sigma: float) -> RegionBounds:
    mass = check_probability(mass, "mass", open_interval=False)
    if not r > 0:
        raise ValueError(f"radius must be positive, got {r}")
    check_positive(float(sigma), "sigma")
    F = chi2_2_cdf((r / sigma) ** 2)
    raw = 1.0 - (1.0 - mass) / F
    return RegionBounds(mass * F, max(raw, 0.0), bool(raw <= 0), F)
