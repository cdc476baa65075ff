"""Stationary zero-mean Gaussian field machinery.

Exponential correlation, dense covariance construction, unconditional
sampling, and conditional simulation of the field given noisy observations
(the importance distribution used by the Monte Carlo likelihood
approximation).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.spatial.distance import cdist

from .errors import DegenerateMatrixError, NumericalError, ParameterError
from .grid import SpatialGrid

# Relative jitter escalation for near-singular kernel matrices: start at
# 1e-10 times the mean diagonal, multiply by 10 up to 1e-6, then give up.
JITTER_START = 1e-10
JITTER_MAX = 1e-6


@dataclass(frozen=True)
class Params:
    """Model parameter vector (mu, tau2, sigma2, phi, beta).

    ``mu`` is the constant mean of the response, ``tau2`` the nugget
    (measurement-error) variance, ``sigma2`` the field variance, ``phi``
    the exponential correlation range, and ``beta`` the preferability
    (sampling-intensity) coefficient. ``beta=None`` marks a fit that does
    not model the sampling design (non-preferential).
    """

    mu: float
    tau2: float
    sigma2: float
    phi: float
    beta: float | None = None

    def __post_init__(self):
        for name in ("mu", "tau2", "sigma2", "phi"):
            v = getattr(self, name)
            if not np.isfinite(v):
                raise ParameterError(f"{name} must be finite, got {v}")
        if self.tau2 < 0:
            raise ParameterError(f"tau2 must be >= 0, got {self.tau2}")
        if self.sigma2 <= 0:
            raise ParameterError(f"sigma2 must be > 0, got {self.sigma2}")
        if self.phi <= 0:
            raise ParameterError(f"phi must be > 0, got {self.phi}")
        if self.beta is not None and not np.isfinite(self.beta):
            raise ParameterError(f"beta must be finite or None, got {self.beta}")

    def replace(self, **kwargs) -> "Params":
        fields = {"mu": self.mu, "tau2": self.tau2, "sigma2": self.sigma2,
                  "phi": self.phi, "beta": self.beta}
        fields.update(kwargs)
        return Params(**fields)

    def to_dict(self) -> dict:
        return {"mu": self.mu, "tau2": self.tau2, "sigma2": self.sigma2,
                "phi": self.phi, "beta": self.beta}

    @classmethod
    def from_dict(cls, d: dict) -> "Params":
        return cls(mu=float(d["mu"]), tau2=float(d["tau2"]),
                   sigma2=float(d["sigma2"]), phi=float(d["phi"]),
                   beta=None if d.get("beta") is None else float(d["beta"]))


@dataclass(frozen=True)
class LatentField:
    """Realization of the latent field S on the grid's active centroids."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if v.ndim != 1:
            raise ValueError("field values must be a 1-d vector")
        if not np.isfinite(v).all():
            raise ValueError("field values must be finite")

    def __len__(self) -> int:
        return self.values.size


def exp_correlation(h, phi: float):
    """Exponential correlation exp(-h/phi) at distance h >= 0."""
    if phi <= 0:
        raise ParameterError(f"phi must be > 0, got {phi}")
    h = np.asarray(h, dtype=float)
    if (h < 0).any():
        raise ValueError("distances must be nonnegative")
    out = np.exp(-h / phi)
    return float(out) if out.ndim == 0 else out


def correlation_matrix(points: np.ndarray, phi: float) -> np.ndarray:
    """Dense exponential correlation matrix among ``points``.

    Raises :class:`DegenerateMatrixError` if two points coincide, since the
    resulting matrix is singular before any factorization is attempted.
    """
    if phi <= 0:
        raise ParameterError(f"phi must be > 0, got {phi}")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    d = cdist(pts, pts)
    if pts.shape[0] > 1:
        off = d + np.diag(np.full(pts.shape[0], np.inf))
        if (off == 0).any():
            i, j = np.argwhere(off == 0)[0]
            raise DegenerateMatrixError(
                f"duplicate points at indices {i} and {j} make the "
                f"correlation matrix singular")
    return np.exp(-d / phi)


def cholesky_with_jitter(mat: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``mat``, adding escalating diagonal jitter.

    Jitter is relative to the mean diagonal of ``mat`` (so it scales with
    the variance when a covariance rather than a correlation is passed).
    Returns ``(L, jitter_added)``.
    """
    mean_diag = float(np.trace(mat)) / mat.shape[0]
    rel = 0.0
    tried = []
    while True:
        try:
            bump = rel * mean_diag
            m = mat if rel == 0.0 else mat + bump * np.eye(mat.shape[0])
            return np.linalg.cholesky(m), bump
        except np.linalg.LinAlgError:
            tried.append(rel)
            rel = JITTER_START if rel == 0.0 else rel * 10.0
            if rel > JITTER_MAX:
                raise NumericalError(
                    f"Cholesky failed after relative jitters {tried}") from None


def sample_gp(R: np.ndarray, sigma2: float, seed: int) -> LatentField:
    """Draw from N(0, sigma2 * R). Deterministic given ``seed``."""
    if sigma2 < 0:
        raise ParameterError(f"sigma2 must be >= 0, got {sigma2}")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(R.shape[0])
    if sigma2 == 0.0:
        return LatentField(np.zeros(R.shape[0]))
    L, _ = cholesky_with_jitter(R)
    return LatentField(math.sqrt(sigma2) * (L @ z))


def _conditional_draw(rng: np.random.Generator, y: np.ndarray,
                      obs_cells: np.ndarray, mu: float, tau2: float,
                      sigma2: float, R: np.ndarray, chol_R: np.ndarray,
                      obs_factor=None) -> np.ndarray:
    """One conditional-simulation draw of S | Y = y on the grid.

    Uses the conditioning-by-kriging identity: with S ~ N(0, sigma2*R),
    Z ~ N(0, tau2*I_n) and C the cell-indicator matrix of the observations,
    S + Sigma C' (C Sigma C' + tau2 I)^{-1} (y - mu + Z - C S) is distributed
    as S | Y = y. ``obs_factor`` is an optional pre-computed cho_factor of
    (C Sigma C' + tau2 I) for reuse across draws at fixed parameters.
    """
    N = R.shape[0]
    n = y.size
    s = math.sqrt(sigma2) * (chol_R @ rng.standard_normal(N))
    z = math.sqrt(tau2) * rng.standard_normal(n) if tau2 > 0 else np.zeros(n)
    if obs_factor is None:
        obs_factor = _conditional_obs_factor(obs_cells, tau2, sigma2, R)
    rhs = y - mu + z - s[obs_cells]
    alpha = cho_solve(obs_factor, rhs)
    return s + sigma2 * (R[:, obs_cells] @ alpha)


def _conditional_obs_factor(obs_cells: np.ndarray, tau2: float,
                            sigma2: float, R: np.ndarray):
    M = sigma2 * R[np.ix_(obs_cells, obs_cells)] + tau2 * np.eye(obs_cells.size)
    try:
        return cho_factor(M, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"singular observation system: {exc}") from None


def conditional_gp_given_y(data, grid: SpatialGrid, theta: Params,
                           seed: int, R: np.ndarray | None = None,
                           chol_R: np.ndarray | None = None) -> LatentField:
    """Draw from S | Y = y on the grid centroids. Deterministic given seed.

    ``R``/``chol_R`` may be supplied to amortize the N x N factorization
    across many draws at the same ``phi``.
    """
    if R is None:
        R = correlation_matrix(grid.centroids, theta.phi)
    if chol_R is None:
        chol_R, _ = cholesky_with_jitter(R)
    rng = np.random.default_rng(seed)
    values = _conditional_draw(rng, np.asarray(data.y, dtype=float),
                               data.binning.cell_of, theta.mu, theta.tau2,
                               theta.sigma2, R, chol_R)
    return LatentField(values)


def gaussian_quad_and_logdet(chol_L: np.ndarray, s: np.ndarray) -> tuple[float, float]:
    """(s' M^{-1} s, log|M|) from the lower Cholesky factor of M."""
    w = solve_triangular(chol_L, s, lower=True)
    quad = float(w @ w)
    logdet = 2.0 * float(np.log(np.diag(chol_L)).sum())
    return quad, logdet
