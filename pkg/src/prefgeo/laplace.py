"""Mode and curvature of the joint log-density as a function of the field.

The joint log f(y, x, S) is concave in S (Gaussian terms are quadratic and
the point-process term's Hessian -n*beta^2*(diag(p) - p p') is negative
semidefinite), so Newton ascent with backtracking converges from any start.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.linalg.lapack import dpotri

from .errors import NumericalError
from .grid import SpatialGrid
from .likelihood import complete_loglik, log_f_s
from .point_process import PreferentialDataset
from .random_field import LatentField, Params, cholesky_with_jitter, correlation_matrix

MAX_NEWTON_ITER = 200
MAX_BACKTRACK = 40


def _cell_aggregates(data: PreferentialDataset | None, mu: float, n_cells: int):
    """Per-cell observation count m_j and residual sum t_j = sum(y_i - mu)."""
    if data is None:
        return np.zeros(n_cells), np.zeros(n_cells)
    cells = data.binning.cell_of
    m = np.bincount(cells, minlength=n_cells).astype(float)
    t = np.bincount(cells, weights=np.asarray(data.y) - mu, minlength=n_cells)
    return m, t


def _softmax(v: np.ndarray) -> np.ndarray:
    w = np.exp(v - v.max())
    return w / w.sum()


def joint_grad_neg_hess(s: np.ndarray, theta: Params,
                        data: PreferentialDataset | None,
                        grid: SpatialGrid, R_inv: np.ndarray):
    """Gradient and negative Hessian of log f(y, x, S) with respect to S."""
    n = data.n if data is not None else 0
    counts = (data.binning.counts.astype(float) if data is not None
              else np.zeros(grid.n_cells))
    m, t = _cell_aggregates(data, theta.mu, grid.n_cells)
    p = _softmax(theta.beta * s)
    grad = ((t - m * s) / theta.tau2
            + theta.beta * (counts - n * p)
            - (R_inv @ s) / theta.sigma2)
    neg_hess = R_inv / theta.sigma2 + n * theta.beta ** 2 * (np.diag(p) - np.outer(p, p))
    neg_hess[np.diag_indices_from(neg_hess)] += m / theta.tau2
    return grad, neg_hess


def laplace_mode_and_hessian(theta: Params, data: PreferentialDataset | None,
                             grid: SpatialGrid, s0: np.ndarray | None = None,
                             R: np.ndarray | None = None,
                             chol_R: np.ndarray | None = None,
                             gtol: float = 1e-8,
                             max_iter: int = MAX_NEWTON_ITER):
    """Newton ascent on S -> log f(y, x, S) at fixed parameters.

    Returns ``(mode, neg_hessian_at_mode, value_at_mode)``. ``s0`` warm
    starts the ascent (zeros otherwise). With ``data=None`` the objective
    is the prior alone (mode 0).
    """
    if theta.beta is None:
        raise NumericalError("mode finding requires a concrete beta")
    if R is None:
        R = correlation_matrix(grid.centroids, theta.phi)
    if chol_R is None:
        chol_R, _ = cholesky_with_jitter(R)
    inv_tri, info = dpotri(chol_R, lower=1)
    if info != 0:
        raise NumericalError(f"correlation-matrix inversion failed (info={info})")
    R_inv = inv_tri + np.tril(inv_tri, -1).T

    def objective(vec: np.ndarray) -> float:
        if data is None:
            return log_f_s(vec, theta.sigma2, R, chol_R=chol_R)
        return complete_loglik(theta, LatentField(vec), data, grid, R, chol_R=chol_R)

    s = np.zeros(grid.n_cells) if s0 is None else np.asarray(s0, dtype=float).copy()
    f = objective(s)
    for _ in range(max_iter):
        grad, neg_hess = joint_grad_neg_hess(s, theta, data, grid, R_inv)
        if np.max(np.abs(grad)) < gtol:
            return LatentField(s), neg_hess, f
        try:
            step = cho_solve(cho_factor(neg_hess, lower=True), grad)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"Newton system not positive definite: {exc}") from None
        t_step = 1.0
        slope = float(grad @ step)
        for _ in range(MAX_BACKTRACK):
            cand = s + t_step * step
            f_cand = objective(cand)
            if f_cand >= f + 1e-4 * t_step * slope:
                s, f = cand, f_cand
                break
            t_step *= 0.5
        else:
            raise NumericalError("Newton backtracking exhausted without ascent")
    grad, neg_hess = joint_grad_neg_hess(s, theta, data, grid, R_inv)
    if np.max(np.abs(grad)) < gtol:
        return LatentField(s), neg_hess, f
    raise NumericalError(
        f"Newton ascent did not converge: |grad|_inf = {np.max(np.abs(grad)):.3e}")
