"""Regular-grid discretization of a rectangular study region.

All field vectors, covariance matrices and cell counts in this package are
indexed by grid cell in row-major order: cell ``j = iy * nx + ix`` where
``ix`` counts columns (x direction) and ``iy`` counts rows (y direction).
An optional inclusion mask restricts the active cells to a subset of the
full rectangle (e.g. to approximate a non-rectangular region); in that case
``N`` is the number of active cells and all vectors follow the active-cell
ordering (full-grid row-major order restricted to active cells).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DomainError, InvalidRegionError


@dataclass(frozen=True)
class SpatialGrid:
    """Regular nx-by-ny grid of cells covering [x_min, x_max] x [y_min, y_max].

    Cell membership is half-open, [left, right) x [bottom, top), with the
    last column/row closed on the region boundary so every in-region point
    belongs to exactly one cell. ``include`` optionally lists the active
    full-grid cell indices (sorted, unique); ``None`` means all cells.
    """

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    nx: int
    ny: int
    include: tuple[int, ...] | None = None

    def __post_init__(self):
        if not (np.isfinite(self.x_min) and np.isfinite(self.x_max)
                and np.isfinite(self.y_min) and np.isfinite(self.y_max)):
            raise InvalidRegionError("region bounds must be finite")
        if self.x_max <= self.x_min or self.y_max <= self.y_min:
            raise InvalidRegionError(
                f"degenerate region: [{self.x_min}, {self.x_max}] x "
                f"[{self.y_min}, {self.y_max}]")
        if self.nx < 1 or self.ny < 1:
            raise InvalidRegionError("nx and ny must be >= 1")
        if self.include is not None:
            idx = np.asarray(self.include, dtype=int)
            if idx.size == 0:
                raise InvalidRegionError("inclusion mask selects no cells")
            if (np.diff(idx) <= 0).any() or idx[0] < 0 or idx[-1] >= self.nx * self.ny:
                raise InvalidRegionError(
                    "inclusion mask must be sorted, unique, in [0, nx*ny)")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.nx

    @property
    def dy(self) -> float:
        return (self.y_max - self.y_min) / self.ny

    @property
    def cell_area(self) -> float:
        """Area of one cell (uniform across the grid)."""
        return self.dx * self.dy

    @cached_property
    def full_index(self) -> np.ndarray:
        """Active-cell index -> full-grid row-major index."""
        if self.include is None:
            return np.arange(self.nx * self.ny)
        return np.asarray(self.include, dtype=int)

    @cached_property
    def active_of_full(self) -> np.ndarray:
        """Full-grid index -> active index, or -1 for excluded cells."""
        out = np.full(self.nx * self.ny, -1, dtype=int)
        out[self.full_index] = np.arange(self.full_index.size)
        return out

    @property
    def n_cells(self) -> int:
        """Number of active cells N (equals nx*ny when unmasked)."""
        return self.full_index.size

    @cached_property
    def centroids(self) -> np.ndarray:
        """(N, 2) active-cell centroid coordinates, row-major order."""
        full = self.full_index
        ix = full % self.nx
        iy = full // self.nx
        x = self.x_min + (ix + 0.5) * self.dx
        y = self.y_min + (iy + 0.5) * self.dy
        return np.column_stack([x, y])

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return ((pts[:, 0] >= self.x_min) & (pts[:, 0] <= self.x_max)
                & (pts[:, 1] >= self.y_min) & (pts[:, 1] <= self.y_max))

    def to_json(self) -> str:
        obj = {"x_min": self.x_min, "x_max": self.x_max,
               "y_min": self.y_min, "y_max": self.y_max,
               "nx": self.nx, "ny": self.ny}
        if self.include is not None:
            obj["include"] = list(self.include)
        return json.dumps(obj)

    @classmethod
    def from_json(cls, text: str) -> "SpatialGrid":
        obj = json.loads(text)
        include = obj.get("include")
        return cls(x_min=obj["x_min"], x_max=obj["x_max"],
                   y_min=obj["y_min"], y_max=obj["y_max"],
                   nx=int(obj["nx"]), ny=int(obj["ny"]),
                   include=tuple(include) if include is not None else None)


@dataclass(frozen=True)
class CellBinning:
    """Assignment of observation locations to grid cells.

    ``cell_of[i]`` is the active-cell index containing observation i;
    ``counts[j]`` is the number of observations in active cell j.
    """

    cell_of: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        cell_of = np.asarray(self.cell_of, dtype=int)
        counts = np.asarray(self.counts, dtype=int)
        object.__setattr__(self, "cell_of", cell_of)
        object.__setattr__(self, "counts", counts)
        if (counts < 0).any():
            raise ValueError("cell counts must be nonnegative")
        if counts.sum() != cell_of.size:
            raise ValueError("cell counts must sum to the number of observations")

    @property
    def n(self) -> int:
        return self.cell_of.size


def build_grid(bounds: tuple[float, float, float, float], nx: int, ny: int,
               include: tuple[int, ...] | None = None) -> SpatialGrid:
    """Build a regular grid over ``bounds = (x_min, x_max, y_min, y_max)``."""
    x_min, x_max, y_min, y_max = bounds
    return SpatialGrid(x_min=float(x_min), x_max=float(x_max),
                       y_min=float(y_min), y_max=float(y_max),
                       nx=int(nx), ny=int(ny), include=include)


def bin_locations(grid: SpatialGrid, locations: np.ndarray) -> CellBinning:
    """Assign each location to its containing cell.

    Membership is half-open per axis ([left, right), [bottom, top)); points
    exactly on the region's upper boundary fall in the last column/row.
    Raises :class:`DomainError` naming the first offending index for points
    outside the region or inside an excluded cell.
    """
    pts = np.atleast_2d(np.asarray(locations, dtype=float))
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("locations must be an (n, 2) array")
    inside = grid.contains(pts)
    if not inside.all():
        bad = int(np.nonzero(~inside)[0][0])
        raise DomainError(
            f"location {bad} at ({pts[bad, 0]}, {pts[bad, 1]}) lies outside "
            f"the region [{grid.x_min}, {grid.x_max}] x [{grid.y_min}, {grid.y_max}]")
    ix = np.floor((pts[:, 0] - grid.x_min) / grid.dx).astype(int)
    iy = np.floor((pts[:, 1] - grid.y_min) / grid.dy).astype(int)
    # points exactly on the top/right boundary belong to the last cell
    ix = np.minimum(ix, grid.nx - 1)
    iy = np.minimum(iy, grid.ny - 1)
    full = iy * grid.nx + ix
    active = grid.active_of_full[full]
    if (active < 0).any():
        bad = int(np.nonzero(active < 0)[0][0])
        raise DomainError(
            f"location {bad} at ({pts[bad, 0]}, {pts[bad, 1]}) falls in an "
            f"excluded cell of the inclusion mask")
    counts = np.bincount(active, minlength=grid.n_cells)
    return CellBinning(cell_of=active, counts=counts)
