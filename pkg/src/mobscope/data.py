"""Timestamped GPS fixes grouped by day."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Optional, Sequence

import numpy as np


@dataclass
class Day:
    """One day of fixes: strictly increasing times in (0, 1) and planar points."""

    t: np.ndarray
    xy: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float).ravel()
        self.xy = np.asarray(self.xy, dtype=float).reshape(-1, 2)
        if self.t.shape[0] != self.xy.shape[0]:
            raise ValueError(f"{self.t.shape[0]} timestamps but {self.xy.shape[0]} points")
        if self.t.shape[0] < 2:
            raise ValueError("a day needs at least two fixes")
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("timestamps must be strictly increasing within a day")
        if self.t[0] <= 0 or self.t[-1] >= 1:
            raise ValueError("timestamps must lie in the open interval (0, 1)")
        if not np.all(np.isfinite(self.xy)):
            raise ValueError("non-finite coordinates")

    @property
    def m(self) -> int:
        return self.t.shape[0]


class GpsDataset:
    """A list of :class:`Day` with flattened views used by the estimators.

    Observations are ordered day by day; ``day_index[k]`` gives the position
    of observation ``k``'s day in :attr:`days`.
    """

    def __init__(self, days: Iterable[Day]):
        self.days = list(days)
        if not self.days:
            raise ValueError("dataset has no days")

    def __len__(self) -> int:
        return len(self.days)

    def __repr__(self) -> str:
        return f"GpsDataset(n_days={self.n_days}, n_obs={self.n_obs})"

    @property
    def n_days(self) -> int:
        return len(self.days)

    @cached_property
    def counts(self) -> np.ndarray:
        return np.array([d.m for d in self.days], dtype=int)

    @property
    def n_obs(self) -> int:
        return int(self.counts.sum())

    @cached_property
    def times(self) -> np.ndarray:
        return np.concatenate([d.t for d in self.days])

    @cached_property
    def points(self) -> np.ndarray:
        return np.concatenate([d.xy for d in self.days], axis=0)

    @cached_property
    def day_index(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_days), self.counts)

    def subset(self, indices: Sequence[int]) -> "GpsDataset":
        return GpsDataset([self.days[i] for i in indices])

    def meta_values(self, key: str, default=None) -> list:
        return [d.meta.get(key, default) for d in self.days]

    def to_array(self, day_ids: Optional[Sequence[int]] = None) -> np.ndarray:
        """Stack as ``(N, 4)`` rows of ``(day_id, t, x, y)``."""
        ids = np.arange(self.n_days) if day_ids is None else np.asarray(day_ids)
        return np.column_stack([ids[self.day_index], self.times, self.points])

    @classmethod
    def from_array(cls, X) -> "GpsDataset":
        """Build from ``(N, 4)`` rows ``(day_id, t, x, y)``; rows are sorted by time per day."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != 4:
            raise ValueError(f"expected an (N, 4) array of (day_id, t, x, y), got shape {X.shape}")
        days = []
        for d in np.unique(X[:, 0]):
            rows = X[X[:, 0] == d]
            rows = rows[np.argsort(rows[:, 1], kind="stable")]
            days.append(Day(rows[:, 1], rows[:, 2:4], {"day_id": int(d) if float(d).is_integer() else d}))
        return cls(days)
