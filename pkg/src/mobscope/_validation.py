"""Input checks shared by the estimators."""

from __future__ import annotations

import numbers

import numpy as np

from .data import GpsDataset
from .grid import GridSpec


def check_gps_data(X) -> GpsDataset:
    """Return ``X`` as a :class:`GpsDataset`.

    Accepts a dataset or an ``(N, 4)`` array-like of ``(day_id, t, x, y)`` rows.
    """
    if isinstance(X, GpsDataset):
        return X
    return GpsDataset.from_array(X)


def check_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1 and pts.shape[0] == 2:
        pts = pts[None, :]
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"expected planar points of shape (k, 2), got {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points contain non-finite values")
    return pts


def check_positive(value, name: str) -> float:
    if not isinstance(value, numbers.Real) or not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be a positive number, got {value!r}")
    return float(value)


def check_probability(value, name: str, *, open_interval: bool = True) -> float:
    v = float(value)
    ok = 0 < v < 1 if open_interval else 0 <= v <= 1
    if not ok:
        bounds = "(0, 1)" if open_interval else "[0, 1]"
        raise ValueError(f"{name} must lie in {bounds}, got {value!r}")
    return v


def check_time(t) -> float:
    t = float(t)
    if not 0 <= t <= 1:
        raise ValueError(f"time must lie in [0, 1], got {t}")
    return t


def check_grid(grid) -> GridSpec:
    if not isinstance(grid, GridSpec):
        raise TypeError(f"expected a GridSpec, got {type(grid).__name__}")
    return grid
