"""Sampling-design side of the model.

Discretized conditional density of the observation locations given the
latent field, simulation of preferentially sampled locations, and the
end-to-end data simulator. The number of locations n is always fixed and
conditioned on, so the intensity intercept never enters any density here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import NumericalError
from .grid import CellBinning, SpatialGrid, bin_locations
from .random_field import LatentField, Params, correlation_matrix, sample_gp


@dataclass(frozen=True)
class PreferentialDataset:
    """Observed locations and responses, binned against a declared grid."""

    locations: np.ndarray
    y: np.ndarray
    grid: SpatialGrid
    binning: CellBinning

    def __post_init__(self):
        locs = np.atleast_2d(np.asarray(self.locations, dtype=float))
        y = np.asarray(self.y, dtype=float)
        object.__setattr__(self, "locations", locs)
        object.__setattr__(self, "y", y)
        if locs.shape[0] != y.size:
            raise ValueError("locations and responses must have equal length")
        if y.size < 1:
            raise ValueError("dataset must contain at least one observation")
        if self.binning.n != y.size:
            raise ValueError("binning is inconsistent with the dataset size")
        if not np.isfinite(y).all():
            raise ValueError("responses must be finite")

    @property
    def n(self) -> int:
        return self.y.size

    @classmethod
    def from_locations(cls, grid: SpatialGrid, locations: np.ndarray,
                       y: np.ndarray) -> "PreferentialDataset":
        binning = bin_locations(grid, locations)
        return cls(locations=locations, y=y, grid=grid, binning=binning)


def cell_selection_probs(s: LatentField, grid: SpatialGrid, beta: float) -> np.ndarray:
    """Cell probabilities Delta*exp(beta*s_j) / sum_k Delta*exp(beta*s_k).

    Computed with the max-shift identity; with a uniform cell area the
    Delta factors cancel.
    """
    v = beta * s.values
    if not np.isfinite(v).all():
        raise NumericalError(
            "non-finite exp(beta*s) weights; consider centering s")
    shifted = v - v.max()
    w = np.exp(shifted)
    return w / w.sum()


def sample_locations(s: LatentField, grid: SpatialGrid, beta: float,
                     n: int, seed: int) -> np.ndarray:
    """Sample n locations from the discretized preferential design.

    Cells are drawn independently with probability proportional to
    Delta*exp(beta*s_j); each point is then placed uniformly inside its
    cell. Deterministic given ``seed`` (cells drawn first, then the two
    uniform jitters per point).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if len(s) != grid.n_cells:
        raise ValueError("field length does not match the grid")
    p = cell_selection_probs(s, grid, beta)
    rng = np.random.default_rng(seed)
    cells = rng.choice(grid.n_cells, size=n, p=p)
    full = grid.full_index[cells]
    ix = full % grid.nx
    iy = full // grid.nx
    ux = rng.random(n)
    uy = rng.random(n)
    x = grid.x_min + (ix + ux) * grid.dx
    y = grid.y_min + (iy + uy) * grid.dy
    return np.column_stack([x, y])


def log_f_x_given_s(binning: CellBinning, s: LatentField, beta: float,
                    grid: SpatialGrid) -> float:
    """Discretized log-density of the locations given the field.

    beta * sum_j n_j s_j - n * log(sum_j Delta * exp(beta * s_j)), with the
    normalizer evaluated by log-sum-exp.
    """
    if len(s) != grid.n_cells or binning.counts.size != grid.n_cells:
        raise ValueError("field/binning length does not match the grid")
    n = binning.n
    log_norm = math.log(grid.cell_area) + logsumexp(beta * s.values)
    return float(beta * (binning.counts @ s.values) - n * log_norm)


@dataclass(frozen=True)
class SimulatedData:
    """Output of the end-to-end simulator: locations, responses, true field."""

    locations: np.ndarray
    y: np.ndarray
    field: LatentField


def simulate_preferential(grid: SpatialGrid, theta: Params, n: int,
                          seed: int) -> SimulatedData:
    """Simulate a dataset from the preferential model on ``grid``.

    Draws the field on the grid centroids, samples n locations from the
    discretized design density, and generates responses from the field
    value at the containing cell plus nugget noise. ``theta.beta`` must be
    a real number (use 0.0 for a non-preferential design).
    """
    if theta.beta is None:
        raise ValueError("simulation requires a concrete beta (use 0.0)")
    ss = np.random.SeedSequence(seed)
    seed_field, seed_locs, seed_noise = ss.spawn(3)
    R = correlation_matrix(grid.centroids, theta.phi)
    field = sample_gp(R, theta.sigma2, seed_field)
    locations = sample_locations(field, grid, theta.beta, n, seed_locs)
    cells = bin_locations(grid, locations).cell_of
    noise_rng = np.random.default_rng(seed_noise)
    y = theta.mu + field.values[cells] + math.sqrt(theta.tau2) * noise_rng.standard_normal(n)
    return SimulatedData(locations=locations, y=y, field=field)
