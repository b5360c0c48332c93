"""Planar evaluation lattices, density fields and region masks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class GridSpec:
    """Rectangular lattice of ``n_x * n_y`` cells.

    Cell ``(i, k)`` has its center at ``(x_min + (i + 0.5) dx, y_min + (k + 0.5) dy)``.
    """

    x_min: float
    y_min: float
    n_x: int
    n_y: int
    dx: float
    dy: float

    def __post_init__(self):
        if int(self.n_x) < 1 or int(self.n_y) < 1:
            raise ValueError(f"grid needs at least one cell per axis, got {self.n_x}x{self.n_y}")
        if not (self.dx > 0 and self.dy > 0):
            raise ValueError(f"cell sizes must be positive, got dx={self.dx}, dy={self.dy}")
        object.__setattr__(self, "n_x", int(self.n_x))
        object.__setattr__(self, "n_y", int(self.n_y))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_x, self.n_y)

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy

    @property
    def x_centers(self) -> np.ndarray:
        return self.x_min + (np.arange(self.n_x) + 0.5) * self.dx

    @property
    def y_centers(self) -> np.ndarray:
        return self.y_min + (np.arange(self.n_y) + 0.5) * self.dy

    @property
    def extent(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.x_min + self.n_x * self.dx,
                self.y_min, self.y_min + self.n_y * self.dy)

    def centers(self) -> np.ndarray:
        """Cell centers as an ``(n_x * n_y, 2)`` array in row-major (x outer) order."""
        xx, yy = np.meshgrid(self.x_centers, self.y_centers, indexing="ij")
        return np.column_stack([xx.ravel(), yy.ravel()])

    def cell_of(self, point) -> tuple[int, int]:
        """Index of the cell containing ``point`` (clipped to the lattice)."""
        i = int(np.floor((point[0] - self.x_min) / self.dx))
        k = int(np.floor((point[1] - self.y_min) / self.dy))
        return min(max(i, 0), self.n_x - 1), min(max(k, 0), self.n_y - 1)

    @classmethod
    def around(cls, points, cell: float, margin: float = 0.0,
               n_x: Optional[int] = None, n_y: Optional[int] = None) -> "GridSpec":
        """Grid covering the bounding box of ``points`` plus ``margin``.

        With ``n_x``/``n_y`` given the lattice size is fixed and centered on the
        bounding box; it is enlarged if the padded box does not fit.
        """
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        lo = pts.min(axis=0) - margin
        hi = pts.max(axis=0) + margin
        need = np.ceil((hi - lo) / cell - 1e-9).astype(int)
        nx = max(int(need[0]), n_x or 0, 1)
        ny = max(int(need[1]), n_y or 0, 1)
        mid = (lo + hi) / 2
        return cls(float(mid[0] - nx * cell / 2), float(mid[1] - ny * cell / 2), nx, ny, float(cell), float(cell))


def check_same_grid(a: GridSpec, b: GridSpec) -> None:
    if a != b:
        raise ValueError(f"grid mismatch: {a} vs {b}")


@dataclass
class DensityField:
    """Density values (per unit area) at the cell centers of ``grid``.

    ``stderr`` optionally carries a per-cell Monte Carlo standard error.
    """

    grid: GridSpec
    values: np.ndarray
    stderr: Optional[np.ndarray] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values shape {self.values.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("density field has non-finite values")
        if np.any(self.values < 0):
            # round-off from cancellation never exceeds a few ulps of the peak
            floor = -1e-12 * max(1.0, float(np.abs(self.values).max()))
            if np.any(self.values < floor):
                raise ValueError("density field has negative values")
            self.values = np.maximum(self.values, 0.0)

    def integral(self) -> float:
        """Midpoint-rule mass over the grid."""
        return float(self.values.sum() * self.grid.cell_area)

    def argmax_point(self) -> np.ndarray:
        i, k = np.unravel_index(np.argmax(self.values), self.values.shape)
        return np.array([self.grid.x_centers[i], self.grid.y_centers[k]])

    def mass_in(self, mask: np.ndarray) -> float:
        return float(self.values[mask].sum() * self.grid.cell_area)

    def normalized(self) -> "DensityField":
        total = self.integral()
        if total <= 0:
            raise ValueError("cannot normalize a field with zero mass")
        return DensityField(self.grid, self.values / total)


@dataclass(frozen=True)
class TimeGrid:
    """Midpoints ``(l + 0.5) / n_t`` of ``n_t`` equal bins of the unit day."""

    n_t: int = 1440

    def __post_init__(self):
        if int(self.n_t) < 2:
            raise ValueError(f"time grid needs n_t >= 2, got {self.n_t}")

    @property
    def times(self) -> np.ndarray:
        return (np.arange(self.n_t) + 0.5) / self.n_t


@dataclass
class RegionMask:
    """Boolean cell membership on ``grid``; ``level`` is the threshold that produced it."""

    grid: GridSpec
    membership: np.ndarray
    level: float = float("nan")
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.membership = np.asarray(self.membership, dtype=bool)
        if self.membership.shape != self.grid.shape:
            raise ValueError("mask shape does not match grid")

    @property
    def area(self) -> float:
        return float(self.membership.sum() * self.grid.cell_area)

    def issubset(self, other: "RegionMask") -> bool:
        check_same_grid(self.grid, other.grid)
        return bool(np.all(~self.membership | other.membership))
