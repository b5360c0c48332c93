"""Day-level clustering on log-density distances and per-cluster dynamics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.distance import pdist, squareform
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_gps_data, check_grid, check_positive, check_time
from .data import GpsDataset
from .grid import DensityField, GridSpec, TimeGrid, check_same_grid
from .kde import (Bandwidths, _conditional_masses, _warn_unsupported, conditional_kde, grid_kde,
                  integrated_conditional_weights)


# --------------------------------------------------------------------------- per-day fields


def per_day_densities(data, bw: Bandwidths, grid: GridSpec, time_grid: TimeGrid = TimeGrid(),
                      days: Optional[Sequence[int]] = None) -> list:
    """Integrated-conditional KDE of each day, rescaled to unit mass.

    The weights ``W~_ij`` are those of the whole dataset (the time kernel's
    normalizer pools all days); each day's weights are then divided by their
    sum so every field is a probability density.
    """
    data = check_gps_data(data)
    grid = check_grid(grid)
    w = integrated_conditional_weights(data, bw, time_grid).per_day()
    out = []
    for i in (range(data.n_days) if days is None else days):
        wi = w[i]
        total = wi.sum()
        if not total > 0:
            raise ValueError(f"day {i} has no weight under the time kernel; increase h_t")
        out.append(DensityField(grid, grid_kde(data.days[i].xy, wi / total, bw.h_x, grid)))
    return out


def per_day_density(data, day: int, bw: Bandwidths, grid: GridSpec,
                    time_grid: TimeGrid = TimeGrid()) -> DensityField:
    data = check_gps_data(data)
    if not 0 <= day < data.n_days:
        raise IndexError(f"day index {day} out of range for {data.n_days} days")
    return per_day_densities(data, bw, grid, time_grid, days=[day])[0]


# --------------------------------------------------------------------------- distances


@dataclass
class DistanceMatrix:
    """Symmetric nonnegative day-by-day distances with a zero diagonal."""

    values: np.ndarray
    labels: Optional[list] = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError(f"distance matrix must be square, got {v.shape}")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValueError("distances must be finite and nonnegative")
        if not np.allclose(v, v.T, rtol=0, atol=1e-9 * max(1.0, float(v.max(initial=0)))):
            raise ValueError("distance matrix is not symmetric")
        if np.any(np.diag(v) != 0):
            raise ValueError("distance matrix needs a zero diagonal")
        self.values = 0.5 * (v + v.T)

    @property
    def n(self) -> int:
        return self.values.shape[0]


def _log_stack(fields, xi):
    return np.stack([np.log(f.values.ravel() + xi) for f in fields])


def log_density_distance(fa: DensityField, fb: DensityField, xi: float = 1e-4) -> float:
    """``integral of (log(fa + xi) - log(fb + xi))^2`` by cell quadrature."""
    check_same_grid(fa.grid, fb.grid)
    xi = check_positive(xi, "xi")
    d = np.log(fa.values + xi) - np.log(fb.values + xi)
    return float((d * d).sum() * fa.grid.cell_area)


def distance_matrix(data_or_fields, bw: Optional[Bandwidths] = None, grid: Optional[GridSpec] = None,
                    xi: float = 1e-4, time_grid: TimeGrid = TimeGrid()) -> DistanceMatrix:
    """Pairwise log-density distances between days.

    Accepts a dataset (fields are built with :func:`per_day_densities`) or a
    list of :class:`DensityField` on a shared grid.
    """
    xi = check_positive(xi, "xi")
    if isinstance(data_or_fields, (list, tuple)) and data_or_fields and \
            isinstance(data_or_fields[0], DensityField):
        fields = list(data_or_fields)
    else:
        if bw is None or grid is None:
            raise ValueError("building per-day fields needs bandwidths and a grid")
        fields = per_day_densities(data_or_fields, bw, grid, time_grid)
    for f in fields[1:]:
        check_same_grid(fields[0].grid, f.grid)
    if len(fields) < 2:
        return DistanceMatrix(np.zeros((len(fields), len(fields))))
    D = squareform(pdist(_log_stack(fields, xi), "sqeuclidean")) * fields[0].grid.cell_area
    return DistanceMatrix(D)


# --------------------------------------------------------------------------- single linkage


@dataclass
class Dendrogram:
    """Merge list over ``n`` leaves with scipy-style ids.

    Leaves are ``0 .. n-1``; merge ``k`` creates cluster ``n + k`` from
    ``merges[k]`` at height ``heights[k]``.
    """

    merges: np.ndarray
    heights: np.ndarray
    sizes: np.ndarray

    @property
    def n_leaves(self) -> int:
        return self.merges.shape[0] + 1

    def to_linkage(self) -> np.ndarray:
        """The ``(n-1, 4)`` matrix used by :mod:`scipy.cluster.hierarchy`."""
        return np.column_stack([self.merges.astype(float), self.heights, self.sizes.astype(float)])


def single_linkage(D) -> Dendrogram:
    """Agglomerative single-linkage clustering.

    Each step merges the closest pair of active clusters; equal distances are
    resolved by the lexicographically smallest ``(id_a, id_b)`` pair.
    """
    D = D if isinstance(D, DistanceMatrix) else DistanceMatrix(D)
    n = D.n
    if n < 2:
        raise ValueError("single linkage needs at least two days")
    dist = D.values.copy()
    np.fill_diagonal(dist, np.inf)
    ids = np.arange(n)
    size = np.ones(n, dtype=int)
    active = np.ones(n, dtype=bool)
    merges = np.empty((n - 1, 2), dtype=int)
    heights = np.empty(n - 1)
    sizes = np.empty(n - 1, dtype=int)
    for k in range(n - 1):
        sub = np.where(active[:, None] & active[None, :], dist, np.inf)
        best = sub.min()
        a_idx, b_idx = np.nonzero(np.triu(sub == best, 1))
        pair_ids = np.sort(np.column_stack([ids[a_idx], ids[b_idx]]), axis=1)
        pick = np.lexsort((pair_ids[:, 1], pair_ids[:, 0]))[0]
        a, b = a_idx[pick], b_idx[pick]
        if ids[a] > ids[b]:
            a, b = b, a
        merges[k] = (ids[a], ids[b])
        heights[k] = best
        sizes[k] = size[a] + size[b]
        # slot a now holds the merged cluster
        row = np.minimum(dist[a], dist[b])
        dist[a], dist[:, a] = row, row
        dist[a, a] = np.inf
        active[b] = False
        ids[a] = n + k
        size[a] = sizes[k]
    return Dendrogram(merges, heights, sizes)


@dataclass
class ClusterLabels:
    """Per-day labels ``1..M`` in order of first appearance; ``singleton`` flags one-day clusters."""

    labels: np.ndarray
    singleton: np.ndarray = field(default=None)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=int)
        u = np.unique(self.labels)
        if self.labels.size and not np.array_equal(u, np.arange(1, u.size + 1)):
            raise ValueError("labels must be contiguous from 1")
        counts = np.bincount(self.labels)
        self.singleton = counts[self.labels] == 1

    @property
    def n_clusters(self) -> int:
        return int(self.labels.max(initial=0))

    def members(self, g: int) -> np.ndarray:
        return np.flatnonzero(self.labels == g)


def _relabel(raw) -> np.ndarray:
    _, first, inv = np.unique(raw, return_index=True, return_inverse=True)
    rank = np.empty(first.size, dtype=int)
    rank[np.argsort(first)] = np.arange(1, first.size + 1)
    return rank[inv]


def cut(dend: Dendrogram, k: Optional[int] = None, height: Optional[float] = None) -> ClusterLabels:
    """Flat clusters from the first ``n - k`` merges, or from all merges at or below ``height``."""
    n = dend.n_leaves
    if (k is None) == (height is None):
        raise ValueError("give exactly one of k or height")
    if k is not None:
        if not 1 <= int(k) <= n:
            raise ValueError(f"k must lie in [1, {n}], got {k}")
        n_merge = n - int(k)
    else:
        n_merge = int(np.searchsorted(dend.heights, float(height), side="right"))
    parent = np.arange(2 * n - 1)

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for j in range(n_merge):
        a, b = dend.merges[j]
        parent[find(a)] = n + j
        parent[find(b)] = n + j
    return ClusterLabels(_relabel([find(i) for i in range(n)]))


# --------------------------------------------------------------------------- per-cluster dynamics


def _cluster_days(data, labels, g) -> GpsDataset:
    lab = labels.labels if isinstance(labels, ClusterLabels) else np.asarray(labels)
    if lab.shape[0] != data.n_days:
        raise ValueError(f"{lab.shape[0]} labels for {data.n_days} days")
    idx = np.flatnonzero(lab == g)
    if idx.size == 0:
        raise ValueError(f"cluster {g} has no days")
    return data.subset(idx)


def cluster_conditional_density(data, labels, g: int, bw: Bandwidths, grid: GridSpec, t: float) -> DensityField:
    """Conditional density at time ``t`` pooled over the days labeled ``g``."""
    data = check_gps_data(data)
    return conditional_kde(_cluster_days(data, labels, g), bw, grid, t)


def conditional_center(data, labels, g: int, h_t: float, t) -> np.ndarray:
    """Kernel-regression mean location of cluster ``g`` at time(s) ``t``.

    Returns shape ``(2,)`` for scalar ``t``, else ``(len(t), 2)``.  Times
    where the time kernel underflows for every fix raise
    :class:`~mobscope.kde.UnsupportedTimeWarning` and fall back to the nearest
    fixes in time.
    """
    data = check_gps_data(data)
    sub = _cluster_days(data, labels, g)
    scalar = np.ndim(t) == 0
    times = np.array([check_time(s) for s in np.atleast_1d(t)])
    out = np.empty((times.size, 2))
    bad = []
    for rows, mass, ok in _conditional_masses(sub, h_t, times):
        out[rows] = mass @ sub.points
        bad.extend(times[rows][~ok].tolist())
    _warn_unsupported(bad)
    return out[0] if scalar else out


class DayClustering(BaseEstimator, ClusterMixin):
    """Single-linkage clustering of days by log-density distance.

    Parameters
    ----------
    n_clusters : int, optional
        Cut the dendrogram into this many clusters.
    distance_threshold : float, optional
        Cut at this merge height instead.
    bandwidth, time_bandwidth : float or "reference"
    xi : float
        Stabilizer inside the logarithm.
    grid : GridSpec, optional
        Quadrature lattice; default covers the data with ``h_x``-sized cells.
    n_time_grid : int

    Attributes
    ----------
    labels_ : ndarray of int
        Labels ``1..M``.
    singleton_ : ndarray of bool
    distances_ : DistanceMatrix
    dendrogram_ : Dendrogram
    """

    def __init__(self, n_clusters=2, distance_threshold=None, bandwidth="reference",
                 time_bandwidth="reference", xi=1e-4, grid=None, n_time_grid=1440):
        self.n_clusters = n_clusters
        self.distance_threshold = distance_threshold
        self.bandwidth = bandwidth
        self.time_bandwidth = time_bandwidth
        self.xi = xi
        self.grid = grid
        self.n_time_grid = n_time_grid

    def fit(self, X, y=None):
        from .kde import GPSDensity

        data = check_gps_data(X)
        self.bandwidths_ = GPSDensity(bandwidth=self.bandwidth,
                                      time_bandwidth=self.time_bandwidth)._resolve_bandwidths(data)
        h = self.bandwidths_.h_x
        grid = self.grid if self.grid is not None else GridSpec.around(data.points, h, margin=4 * h)
        self.grid_ = check_grid(grid)
        self.distances_ = distance_matrix(data, self.bandwidths_, self.grid_, self.xi, TimeGrid(self.n_time_grid))
        self.dendrogram_ = single_linkage(self.distances_)
        if self.distance_threshold is not None:
            res = cut(self.dendrogram_, height=self.distance_threshold)
        else:
            res = cut(self.dendrogram_, k=self.n_clusters)
        self.labels_ = res.labels
        self.singleton_ = res.singleton
        self.data_ = data
        return self

    def centers(self, t) -> dict:
        """Conditional center of every cluster at time(s) ``t``."""
        check_is_fitted(self, "labels_")
        return {g: conditional_center(self.data_, self.labels_, g, self.bandwidths_.h_t, t)
                for g in range(1, self.labels_.max() + 1)}
