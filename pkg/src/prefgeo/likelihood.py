"""Log-density kernels of the model.

All kernels keep their 2*pi normalizing constants so objective values are
directly comparable across estimators.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.spatial.distance import cdist

from .errors import NumericalError, ParameterError
from .grid import SpatialGrid
from .point_process import PreferentialDataset, log_f_x_given_s
from .random_field import (LatentField, Params, cholesky_with_jitter,
                           gaussian_quad_and_logdet)

LOG_2PI = math.log(2.0 * math.pi)


def log_f_y_given_xs(y: np.ndarray, s_at_obs: np.ndarray, mu: float,
                     tau2: float) -> float:
    """Gaussian measurement log-density: y_i ~ N(mu + s(x_i), tau2)."""
    if tau2 <= 0:
        raise ParameterError(f"tau2 must be > 0, got {tau2}")
    y = np.asarray(y, dtype=float)
    s = np.asarray(s_at_obs, dtype=float)
    resid = y - mu - s
    n = y.size
    return float(-0.5 * n * (LOG_2PI + math.log(tau2))
                 - 0.5 * (resid @ resid) / tau2)


def log_f_s(s: LatentField | np.ndarray, sigma2: float, R: np.ndarray,
            chol_R: np.ndarray | None = None) -> float:
    """Zero-mean Gaussian log-density of the field with covariance sigma2*R."""
    if sigma2 <= 0:
        raise ParameterError(f"sigma2 must be > 0, got {sigma2}")
    values = s.values if isinstance(s, LatentField) else np.asarray(s, dtype=float)
    if chol_R is None:
        chol_R, _ = cholesky_with_jitter(R)
    quad, logdet_R = gaussian_quad_and_logdet(chol_R, values)
    N = values.size
    return float(-0.5 * N * (LOG_2PI + math.log(sigma2))
                 - 0.5 * logdet_R - 0.5 * quad / sigma2)


def complete_loglik(theta: Params, s: LatentField, data: PreferentialDataset,
                    grid: SpatialGrid, R: np.ndarray,
                    chol_R: np.ndarray | None = None) -> float:
    """Complete-data log-likelihood log f(y | x, s) + log f(x | s) + log f(s)."""
    if theta.beta is None:
        raise ParameterError("complete log-likelihood requires a concrete beta")
    s_obs = s.values[data.binning.cell_of]
    return (log_f_y_given_xs(data.y, s_obs, theta.mu, theta.tau2)
            + log_f_x_given_s(data.binning, s, theta.beta, grid)
            + log_f_s(s, theta.sigma2, R, chol_R=chol_R))


def nonpref_marginal_loglik(theta: Params, data: PreferentialDataset) -> float:
    """Marginal Gaussian log-density of y ignoring the sampling design.

    Mean mu*1, covariance tau2*I + sigma2*R(phi) with correlations computed
    from the exact inter-point distances (not the grid binning).
    """
    locs = data.locations
    y = np.asarray(data.y, dtype=float)
    n = y.size
    d = cdist(locs, locs)
    cov = theta.sigma2 * np.exp(-d / theta.phi) + theta.tau2 * np.eye(n)
    try:
        factor = cho_factor(cov, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"marginal covariance not positive definite: {exc}") from None
    resid = y - theta.mu
    alpha = cho_solve(factor, resid)
    logdet = 2.0 * float(np.log(np.diag(factor[0])).sum())
    return float(-0.5 * n * LOG_2PI - 0.5 * logdet - 0.5 * (resid @ alpha))


@dataclass(frozen=True)
class SufficientStats:
    """Stochastic-approximation accumulators for the E-step.

    ``s_mean_at_cells`` accumulates the per-cell field mean, ``s_obs`` and
    ``s2_obs`` the field value and its square at each observation's cell
    (so the residual term can be evaluated at any mu), ``log_norm`` the
    log intensity normalizer at the beta current when each draw was taken,
    and ``quad`` the prior quadratic form at the corresponding phi.
    ``draws`` retains the current iteration's L field draws so the
    beta/phi terms can be re-evaluated at candidate parameters.
    """

    s_mean_at_cells: np.ndarray
    s_obs: np.ndarray
    s2_obs: np.ndarray
    log_norm: float
    quad: float
    draws: np.ndarray

    def __post_init__(self):
        if not (np.isfinite(self.s_mean_at_cells).all()
                and np.isfinite(self.s_obs).all()
                and np.isfinite(self.s2_obs).all()
                and np.isfinite(self.log_norm) and np.isfinite(self.quad)):
            raise NumericalError("non-finite sufficient statistics")
        if self.quad < 0:
            raise NumericalError("negative quadratic-form accumulator")
