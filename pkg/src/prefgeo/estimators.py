"""The four fitting procedures: NPG, MCLA, Laplace, and MCEM/SAEM.

All optimizer-based fits share the same parameter transform (variances and
the range on the log scale) and box bounds, and run bounded Nelder-Mead.
The EM fitters alternate a blocked-MH E-step with a mostly closed-form
M-step.

M-step memory handling: the residual statistics and (at fixed range) the
prior quadratic form are plain stochastic-approximation accumulators, so
their updates carry the full weighted history. The intensity normalizer
and, when the range is free, the prior quadratic form depend on the very
parameters being maximized, so no finite accumulator can represent their
history as a function; for those terms the numerical sub-steps maximize
the current iteration's Monte Carlo average and the history enters the
objective only as an additive constant. With the memory-free weight
(gamma = 1, i.e. MCEM, or any run before the memory phase) every term is
the plain Monte Carlo average and the distinction disappears.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize, minimize_scalar
from scipy.special import logsumexp

from .errors import DomainError, NumericalError, ParameterError
from .grid import SpatialGrid
from .laplace import laplace_mode_and_hessian
from .likelihood import (LOG_2PI, SufficientStats, complete_loglik,
                         nonpref_marginal_loglik)
from .point_process import PreferentialDataset
from .predictor import MhConfig, sample_predictive
from .random_field import (LatentField, Params, _conditional_obs_factor,
                           cholesky_with_jitter, correlation_matrix)

OPT_XATOL = 1e-4
OPT_FATOL = 1e-7
OPT_MAXFEV = 4000
BETA_BOUNDS = (-20.0, 20.0)
LOG_VAR_BOUNDS = (-12.0, 6.0)


@dataclass(frozen=True)
class EmConfig:
    """Settings for the MCEM/SAEM fitters."""

    W: int = 400                  # maximum iterations
    c: float = 0.25               # memory-free fraction of iterations
    L: int = 20                   # field draws per E-step
    mh: MhConfig = field(default_factory=lambda: MhConfig(
        iterations=1000, burn_in=100, block_size=10, adapt=True))
    tol: float = 1e-3             # relative-change convergence threshold
    fix_phi: float | None = None

    def __post_init__(self):
        if self.W < 1:
            raise ValueError("W must be >= 1")
        if self.L < 1:
            raise ValueError("L must be >= 1")
        if not 0.0 <= self.c <= 1.0:
            raise ValueError("c must lie in [0, 1]")
        if self.tol <= 0:
            raise ValueError("tol must be > 0")
        if self.fix_phi is not None and self.fix_phi <= 0:
            raise ValueError("fix_phi must be > 0")


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    theta: Params
    objective: float


@dataclass
class FitReport:
    """Result of one fit: estimate, iteration trace, convergence status."""

    estimator: str
    theta_hat: Params
    trace: list[TraceRow]
    converged: bool
    reason: str
    elapsed: float
    seed: int | None
    warnings: list[str] = field(default_factory=list)
    se_approx: dict | None = None

    def __post_init__(self):
        if not self.trace:
            raise ValueError("trace must be non-empty")
        if self.trace[-1].theta != self.theta_hat:
            raise ValueError("theta_hat must equal the last trace entry")

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator,
            "theta_hat": self.theta_hat.to_dict(),
            "converged": self.converged,
            "reason": self.reason,
            "elapsed": self.elapsed,
            "seed": self.seed,
            "warnings": list(self.warnings),
            "se_approx": self.se_approx,
            "iterations": len(self.trace),
        }


# ---------------------------------------------------------------------------
# shared optimizer plumbing

def _region_diameter(locations: np.ndarray) -> float:
    lo = locations.min(axis=0)
    hi = locations.max(axis=0)
    return float(max(np.hypot(*(hi - lo)), 1e-8))


def _transform_bounds(data: PreferentialDataset, with_beta: bool,
                      fix_phi: float | None = None):
    y = data.y
    sd = max(float(y.std()), 1e-6)
    diam = _region_diameter(data.locations)
    bounds = [(float(y.min()) - 10 * sd, float(y.max()) + 10 * sd),
              LOG_VAR_BOUNDS, LOG_VAR_BOUNDS]
    if fix_phi is None:
        bounds.append((math.log(diam / 1000.0), math.log(diam)))
    if with_beta:
        bounds.append(BETA_BOUNDS)
    return bounds


def _pack(theta: Params, with_beta: bool, fix_phi: float | None = None) -> np.ndarray:
    x = [theta.mu,
         math.log(theta.tau2) if theta.tau2 > 0 else LOG_VAR_BOUNDS[0],
         math.log(theta.sigma2)]
    if fix_phi is None:
        x.append(math.log(theta.phi))
    if with_beta:
        x.append(theta.beta if theta.beta is not None else 0.0)
    return np.array(x)


def _unpack(x: np.ndarray, with_beta: bool, fix_phi: float | None = None) -> Params:
    i = 3
    if fix_phi is None:
        phi = math.exp(float(x[3]))
        i = 4
    else:
        phi = fix_phi
    beta = float(x[i]) if with_beta else None
    return Params(mu=float(x[0]), tau2=math.exp(float(x[1])),
                  sigma2=math.exp(float(x[2])), phi=phi, beta=beta)


def _clip_to_bounds(x: np.ndarray, bounds) -> np.ndarray:
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    return np.clip(x, lo + 1e-9, hi - 1e-9)


class _CachedObjective:
    """Memoizes objective values and tracks the best point seen."""

    def __init__(self, fn):
        self.fn = fn
        self.cache: dict[bytes, float] = {}
        self.best_val = np.inf
        self.best_x: np.ndarray | None = None

    def __call__(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        key = x.tobytes()
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        val = float(self.fn(x))
        self.cache[key] = val
        if val < self.best_val:
            self.best_val = val
            self.best_x = x.copy()
        return val


def _run_nelder_mead(objective, x0, bounds, unpack, estimator, seed,
                     maxfev, t_start, xatol=OPT_XATOL, fatol=OPT_FATOL):
    wrapped = _CachedObjective(objective)
    trace: list[TraceRow] = []

    def callback(xk):
        trace.append(TraceRow(iteration=len(trace) + 1,
                              theta=unpack(xk),
                              objective=-wrapped(xk)))

    x0 = _clip_to_bounds(np.asarray(x0, dtype=float), bounds)
    result = minimize(wrapped, x0, method="Nelder-Mead", bounds=bounds,
                      callback=callback,
                      options={"xatol": xatol, "fatol": fatol,
                               "maxfev": maxfev, "maxiter": maxfev})
    x_hat = result.x
    # on failure plateaus NM can terminate off the best visited point
    if wrapped.best_x is not None and wrapped.best_val < float(result.fun):
        x_hat = wrapped.best_x
    theta_hat = unpack(x_hat)
    trace.append(TraceRow(iteration=len(trace) + 1, theta=theta_hat,
                          objective=-min(float(result.fun), wrapped.best_val)))
    reason = ("optimizer converged" if result.success
              else f"optimizer stopped: {result.message}")
    return FitReport(estimator=estimator, theta_hat=theta_hat, trace=trace,
                     converged=bool(result.success), reason=reason,
                     elapsed=time.perf_counter() - t_start, seed=seed)


def _numeric_hessian(f, x: np.ndarray, step: float = 1e-4) -> np.ndarray:
    """Central-difference Hessian of f at x."""
    k = x.size
    h = step * np.maximum(np.abs(x), 1.0)
    H = np.empty((k, k))
    f0 = f(x)
    for i in range(k):
        ei = np.zeros(k)
        ei[i] = h[i]
        H[i, i] = (f(x + ei) - 2.0 * f0 + f(x - ei)) / h[i] ** 2
        for j in range(i + 1, k):
            ej = np.zeros(k)
            ej[j] = h[j]
            H[i, j] = H[j, i] = (
                f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej)
                + f(x - ei - ej)) / (4.0 * h[i] * h[j])
    return H


def _se_from_transformed_hessian(loglik_t, x_hat: np.ndarray, with_beta: bool,
                                 fix_phi: float | None = None,
                                 phi_value: float | None = None) -> dict | None:
    """Delta-method standard errors from the transformed-scale Hessian."""
    try:
        H = _numeric_hessian(loglik_t, x_hat)
        cov = np.linalg.inv(-H)
        d = np.diag(cov)
        if (d <= 0).any():
            return None
        se_t = np.sqrt(d)
    except (np.linalg.LinAlgError, NumericalError):
        return None
    theta = _unpack(x_hat, with_beta, fix_phi)
    out = {"mu": float(se_t[0]),
           "tau2": float(se_t[1] * theta.tau2),
           "sigma2": float(se_t[2] * theta.sigma2)}
    i = 3
    if fix_phi is None:
        out["phi"] = float(se_t[3] * theta.phi)
        i = 4
    if with_beta:
        out["beta"] = float(se_t[i])
    out["method"] = "approximate (numerical Hessian)"
    return out


def _default_init(data: PreferentialDataset) -> Params:
    y = data.y
    var = max(float(y.var()), 1e-6)
    diam = _region_diameter(data.locations)
    return Params(mu=float(y.mean()), tau2=0.2 * var, sigma2=0.8 * var,
                  phi=diam / 5.0, beta=None)


# ---------------------------------------------------------------------------
# NPG: non-preferential maximum likelihood

def fit_npg(data: PreferentialDataset, init: Params | None = None,
            maxfev: int = OPT_MAXFEV, compute_se: bool = True,
            fix_phi: float | None = None) -> FitReport:
    """Maximize the non-preferential marginal likelihood over (mu, tau2, sigma2, phi)."""
    if data.n < 2:
        raise DomainError("insufficient data: NPG needs at least 2 observations")
    t0 = time.perf_counter()
    if init is None:
        init = _default_init(data)
    if fix_phi is not None:
        init = init.replace(phi=fix_phi)
    bounds = _transform_bounds(data, with_beta=False, fix_phi=fix_phi)

    def unpack(x):
        return _unpack(x, False, fix_phi)

    def objective(x):
        try:
            return -nonpref_marginal_loglik(unpack(x), data)
        except (NumericalError, ParameterError):
            return 1e10

    report = _run_nelder_mead(objective, _pack(init, False, fix_phi), bounds,
                              unpack, "npg", None, maxfev, t0)
    if compute_se:
        report.se_approx = _se_from_transformed_hessian(
            lambda x: -objective(x), _pack(report.theta_hat, False, fix_phi),
            False, fix_phi=fix_phi, phi_value=report.theta_hat.phi)
    return report


# ---------------------------------------------------------------------------
# MCLA: Monte Carlo likelihood approximation

def conditional_draws(data: PreferentialDataset, grid: SpatialGrid,
                      theta: Params, seed: int, m: int) -> np.ndarray:
    """m conditional simulations of the field given y, as an (m, N) array.

    Row j equals the single-draw conditional simulation run with the j-th
    spawned seed, so the base normals are a fixed function of ``seed``
    (common random numbers across calls at different parameters).
    """
    N = grid.n_cells
    n = data.n
    cells = data.binning.cell_of
    Z_field = np.empty((m, N))
    Z_noise = np.empty((m, n))
    for j, child in enumerate(np.random.SeedSequence(seed).spawn(m)):
        rng = np.random.default_rng(child)
        Z_field[j] = rng.standard_normal(N)
        Z_noise[j] = rng.standard_normal(n)
    R = correlation_matrix(grid.centroids, theta.phi)
    chol, _ = cholesky_with_jitter(R)
    s0 = math.sqrt(theta.sigma2) * (Z_field @ chol.T)
    factor = _conditional_obs_factor(cells, theta.tau2, theta.sigma2, R)
    rhs = (data.y - theta.mu) + math.sqrt(theta.tau2) * Z_noise - s0[:, cells]
    alpha = cho_solve(factor, rhs.T)
    return s0 + theta.sigma2 * (R[:, cells] @ alpha).T


def mcla_loglik(theta: Params, data: PreferentialDataset, grid: SpatialGrid,
                draws: np.ndarray) -> float:
    """log f(y; theta) + log[(1/m) sum_j f(x | s_j; beta)] for given draws."""
    if theta.beta is None:
        raise ParameterError("the Monte Carlo objective requires beta")
    n = data.n
    counts = data.binning.counts.astype(float)
    lfx = (theta.beta * (draws @ counts)
           - n * (math.log(grid.cell_area)
                  + logsumexp(theta.beta * draws, axis=1)))
    return (nonpref_marginal_loglik(theta, data)
            + float(logsumexp(lfx)) - math.log(draws.shape[0]))


def fit_mcla(data: PreferentialDataset, grid: SpatialGrid, m: int = 100,
             init: Params | None = None, seed: int = 0,
             fix_phi: float | None = None,
             maxfev: int = OPT_MAXFEV) -> FitReport:
    """Monte Carlo likelihood approximation fit.

    The Gaussian-marginal parameters (mu, tau2, sigma2, phi) maximize the
    non-preferential marginal f(y) — the Monte Carlo average of
    f(x | s_j) is a rightly-distrusted factor for them, since a single
    conditional draw dominates it (effective sample size near 1) and joint
    maximization collapses onto a degenerate tau2 -> 0 ridge. beta then
    maximizes the full objective log f(y) + log[(1/m) sum f(x | s_j; beta)]
    with the m conditional draws taken at those estimates (the draws do not
    involve beta, so they stay fixed along this search). Base normals are
    a fixed function of ``seed`` (common random numbers).
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    t0 = time.perf_counter()
    if init is None:
        base = fit_npg(data, compute_se=False, fix_phi=fix_phi).theta_hat
    else:
        base = fit_npg(data, init=init, compute_se=False, fix_phi=fix_phi).theta_hat
    draws = conditional_draws(data, grid, base, seed, m)
    anchor = base.replace(beta=0.0)

    def neg_beta_obj(b):
        return -mcla_loglik(anchor.replace(beta=float(b)), data, grid, draws)

    res = minimize_scalar(neg_beta_obj, bounds=BETA_BOUNDS, method="bounded",
                          options={"xatol": 1e-6})
    theta_hat = anchor.replace(beta=float(res.x))
    trace = [TraceRow(iteration=1, theta=anchor, objective=-neg_beta_obj(0.0)),
             TraceRow(iteration=2, theta=theta_hat, objective=-float(res.fun))]
    return FitReport(estimator="mcla", theta_hat=theta_hat, trace=trace,
                     converged=True, reason="profile optimizer converged",
                     elapsed=time.perf_counter() - t0, seed=seed)


# ---------------------------------------------------------------------------
# Laplace approximation

def laplace_loglik(theta: Params, data: PreferentialDataset,
                   grid: SpatialGrid, s0: np.ndarray | None = None) -> float:
    """Laplace-approximated log-likelihood at theta.

    (N/2) log 2*pi - (1/2) log|-Hess f(s_hat)| + f(s_hat), where f is the
    joint log-density as a function of the field.
    """
    mode, neg_hess, f_val = laplace_mode_and_hessian(theta, data, grid, s0=s0)
    chol, _ = cholesky_with_jitter(neg_hess)
    logdet = 2.0 * float(np.log(np.diag(chol)).sum())
    N = grid.n_cells
    return 0.5 * N * LOG_2PI - 0.5 * logdet + f_val


LAPLACE_TRUST_LOG_VAR = 2.5   # half-width around the anchor for log tau2/sigma2
LAPLACE_TRUST_LOG_PHI = 1.25  # half-width around the anchor for log phi


def fit_laplace(data: PreferentialDataset, grid: SpatialGrid,
                init: Params | None = None, fix_phi: float | None = None,
                maxfev: int = 600, compute_se: bool = False) -> FitReport:
    """Maximize the Laplace-approximated log-likelihood over the full vector.

    The search is local around the non-preferential anchor fit: the
    variance and range coordinates are confined to a trust box around it
    (intersected with the global bounds). The surface has unbounded ridges
    at extreme (sigma2, phi) where the approximation error dominates and
    mu decouples from the data; an unconstrained search lands there
    rather than on the data-supported local maximum.

    Each objective evaluation runs a warm-started Newton ascent for the
    field mode, so the default evaluation budget is deliberately tighter
    than the cheap fitters'.
    """
    t0 = time.perf_counter()
    if init is None:
        base = fit_npg(data, compute_se=False, fix_phi=fix_phi).theta_hat
        init = base.replace(beta=0.0)
    if init.beta is None:
        init = init.replace(beta=0.0)
    if fix_phi is not None:
        init = init.replace(phi=fix_phi)
    warm: dict[str, np.ndarray | None] = {"s": None}

    def unpack(x):
        return _unpack(x, True, fix_phi)

    def objective(x):
        theta = unpack(x)
        try:
            # a warm-started Newton needing more than a few dozen steps
            # marks a pathological corner; treat it as an inner failure
            mode, neg_hess, f_val = laplace_mode_and_hessian(
                theta, data, grid, s0=warm["s"], max_iter=60)
        except NumericalError:
            warm["s"] = None
            return 1e10
        warm["s"] = mode.values
        try:
            chol, _ = cholesky_with_jitter(neg_hess)
        except NumericalError:
            return 1e10
        logdet = 2.0 * float(np.log(np.diag(chol)).sum())
        return -(0.5 * grid.n_cells * LOG_2PI - 0.5 * logdet + f_val)

    spec_bounds = _transform_bounds(data, with_beta=True, fix_phi=fix_phi)
    x0 = _pack(init, True, fix_phi)
    widths = [None, LAPLACE_TRUST_LOG_VAR, LAPLACE_TRUST_LOG_VAR]
    if fix_phi is None:
        widths.append(LAPLACE_TRUST_LOG_PHI)
    widths.append(None)
    bounds = []
    for (lo, hi), center, width in zip(spec_bounds, x0, widths):
        if width is None:
            bounds.append((lo, hi))
        else:
            bounds.append((max(lo, center - width), min(hi, center + width)))
    report = _run_nelder_mead(objective, x0, bounds, unpack, "laplace",
                              None, maxfev, t0, xatol=1e-3, fatol=1e-6)
    if compute_se:
        report.se_approx = _se_from_transformed_hessian(
            lambda x: -objective(x), _pack(report.theta_hat, True, fix_phi),
            True, fix_phi=fix_phi, phi_value=report.theta_hat.phi)
    return report


# ---------------------------------------------------------------------------
# MCEM / SAEM

def saem_weight(k: int, c: float, W: int) -> float:
    """Stochastic-approximation weight: 1 during the memory-free phase,
    then 1/(k - c*W), clamped into (0, 1]."""
    if not 1 <= k <= W:
        raise ValueError(f"iteration k={k} outside 1..{W}")
    if not 0.0 <= c <= 1.0:
        raise ValueError("c must lie in [0, 1]")
    threshold = c * W
    snapped = round(threshold)
    if abs(threshold - snapped) < 1e-9:
        threshold = snapped
    if k <= threshold:
        return 1.0
    return min(1.0, 1.0 / (k - threshold))


def _draws_matrix(draws) -> np.ndarray:
    if isinstance(draws, np.ndarray) and draws.ndim == 2:
        return draws
    return np.vstack([d.values if isinstance(d, LatentField) else np.asarray(d)
                      for d in draws])


def e_step_update(stats_prev: SufficientStats | None, draws, gamma_k: float,
                  theta_k: Params, data: PreferentialDataset,
                  grid: SpatialGrid, R: np.ndarray,
                  chol_R: np.ndarray | None = None) -> SufficientStats:
    """Blend the current draws' statistics into the running accumulators.

    Each accumulator moves by the convex combination
    gamma_k * (current Monte Carlo average) + (1 - gamma_k) * previous.
    """
    if not 0.0 < gamma_k <= 1.0:
        raise ValueError("gamma_k must lie in (0, 1]")
    if theta_k.beta is None:
        raise ParameterError("E-step requires a concrete beta")
    D = _draws_matrix(draws)
    if D.shape[1] != grid.n_cells:
        raise ValueError("draws do not match the grid size")
    if chol_R is None:
        chol_R, _ = cholesky_with_jitter(R)
    obs = data.binning.cell_of
    d_obs = D[:, obs]
    cur_mean = D.mean(axis=0)
    cur_s_obs = d_obs.mean(axis=0)
    cur_s2_obs = (d_obs ** 2).mean(axis=0)
    cur_log_norm = float(np.mean(
        math.log(grid.cell_area) + logsumexp(theta_k.beta * D, axis=1)))
    X = solve_triangular(chol_R, D.T, lower=True)
    cur_quad = float((X * X).sum(axis=0).mean())
    if stats_prev is None:
        return SufficientStats(s_mean_at_cells=cur_mean, s_obs=cur_s_obs,
                               s2_obs=cur_s2_obs, log_norm=cur_log_norm,
                               quad=cur_quad, draws=D)
    g = gamma_k
    return SufficientStats(
        s_mean_at_cells=g * cur_mean + (1 - g) * stats_prev.s_mean_at_cells,
        s_obs=g * cur_s_obs + (1 - g) * stats_prev.s_obs,
        s2_obs=g * cur_s2_obs + (1 - g) * stats_prev.s2_obs,
        log_norm=g * cur_log_norm + (1 - g) * stats_prev.log_norm,
        quad=g * cur_quad + (1 - g) * stats_prev.quad,
        draws=D)


def q_hat(theta: Params, stats: SufficientStats, data: PreferentialDataset,
          grid: SpatialGrid, R: np.ndarray | None = None,
          chol_R: np.ndarray | None = None) -> float:
    """Accumulated surrogate objective at theta.

    Exact in (mu, tau2, sigma2); the intensity-normalizer and quadratic
    accumulators are the stored scalars, so the beta/phi dependence is
    meaningful only at the parameters the statistics were accumulated at.
    """
    if theta.beta is None:
        raise ParameterError("surrogate objective requires a concrete beta")
    y = data.y
    n = data.n
    N = grid.n_cells
    r = y - theta.mu
    resid2 = float(np.sum(r * r - 2.0 * r * stats.s_obs + stats.s2_obs))
    out = -0.5 * n * (LOG_2PI + math.log(theta.tau2)) - 0.5 * resid2 / theta.tau2
    counts = data.binning.counts
    out += (theta.beta * float(counts @ stats.s_mean_at_cells)
            - n * stats.log_norm)
    if R is None:
        R = correlation_matrix(grid.centroids, theta.phi)
    if chol_R is None:
        chol_R, _ = cholesky_with_jitter(R)
    logdet = 2.0 * float(np.log(np.diag(chol_R)).sum())
    out += (-0.5 * N * (LOG_2PI + math.log(theta.sigma2)) - 0.5 * logdet
            - 0.5 * stats.quad / theta.sigma2)
    return float(out)


def m_step(stats: SufficientStats, data: PreferentialDataset,
           grid: SpatialGrid, theta_k: Params,
           fix_phi: float | None = None) -> Params:
    """Maximize the accumulated surrogate over the parameter vector.

    mu, tau2 and (at fixed range) sigma2 have closed forms; beta and, when
    free, (phi, sigma2) are maximized numerically from the current
    iteration's retained draws (history enters as an additive constant;
    see the module docstring).
    """
    y = data.y
    n = data.n
    N = grid.n_cells
    mu = float(np.mean(y - stats.s_obs))
    r = y - mu
    tau2 = float(np.mean(r * r - 2.0 * r * stats.s_obs + stats.s2_obs))
    if tau2 < 0:
        raise NumericalError(f"negative residual-variance accumulator: {tau2}")
    tau2 = max(tau2, 1e-12)

    D = stats.draws
    counts = data.binning.counts.astype(float)
    lin = D @ counts
    log_area_cell = math.log(grid.cell_area)

    def neg_beta_obj(b):
        return -float(np.mean(b * lin - n * (log_area_cell
                                             + logsumexp(b * D, axis=1))))

    res_b = minimize_scalar(neg_beta_obj, bounds=BETA_BOUNDS,
                            method="bounded", options={"xatol": 1e-6})
    beta = float(res_b.x)

    if fix_phi is not None:
        phi = fix_phi
        sigma2 = stats.quad / N
    else:
        diam = _region_diameter(grid.centroids)
        lo, hi = math.log(diam / 1000.0), math.log(diam)

        def mean_quad(phi_val):
            Rc = correlation_matrix(grid.centroids, phi_val)
            cholc, _ = cholesky_with_jitter(Rc)
            X = solve_triangular(cholc, D.T, lower=True)
            q = float((X * X).sum(axis=0).mean())
            logdet = 2.0 * float(np.log(np.diag(cholc)).sum())
            return q, logdet

        def neg_phi_profile(log_phi):
            q, logdet = mean_quad(math.exp(log_phi))
            # sigma2 profiled out: sigma2(phi) = q/N
            return 0.5 * N * math.log(max(q / N, 1e-300)) + 0.5 * logdet

        res_p = minimize_scalar(neg_phi_profile, bounds=(lo, hi),
                                method="bounded", options={"xatol": 1e-4})
        phi = math.exp(float(res_p.x))
        q, _ = mean_quad(phi)
        sigma2 = q / N
    if sigma2 <= 0:
        raise NumericalError(f"nonpositive field-variance accumulator: {sigma2}")
    return Params(mu=mu, tau2=tau2, sigma2=sigma2, phi=phi, beta=beta)


def fit_em(data: PreferentialDataset, grid: SpatialGrid,
           init: Params | None = None, cfg: EmConfig | None = None,
           seed: int = 0, variant: str = "mcem",
           compute_se: bool = False) -> FitReport:
    """MCEM/SAEM fit. MCEM forces the memory-free weight; SAEM uses cfg.c.

    Each E-step runs the blocked MH sampler at the current parameters,
    warm-started from the previous iteration's final state, and takes the
    last L states spaced by ceil(burn_in/10) sweeps. Stops when the max
    relative parameter change stays below cfg.tol for 3 consecutive
    iterations, or at W iterations.
    """
    if variant not in ("mcem", "saem"):
        raise ValueError(f"unknown variant {variant!r}")
    if cfg is None:
        cfg = EmConfig()
    t0 = time.perf_counter()
    c_eff = 1.0 if variant == "mcem" else cfg.c
    if init is None:
        init = fit_npg(data, compute_se=False).theta_hat
    theta = init.replace(beta=init.beta if init.beta is not None else 0.0)
    if cfg.fix_phi is not None:
        theta = theta.replace(phi=cfg.fix_phi)

    spacing = max(1, math.ceil(cfg.mh.burn_in / 10))
    chain_len = cfg.mh.burn_in + cfg.L * spacing
    draw_idx = np.array([chain_len - 1 - spacing * (cfg.L - 1 - l)
                         for l in range(cfg.L)])
    iter_seeds = np.random.SeedSequence(seed).generate_state(cfg.W, dtype=np.uint64)

    R = correlation_matrix(grid.centroids, theta.phi)
    chol_R, _ = cholesky_with_jitter(R)
    warnings: list[str] = []
    trace: list[TraceRow] = []
    state = None
    stats = None
    consec = 0
    converged = False
    reason = f"reached max iterations W={cfg.W}"
    for k in range(1, cfg.W + 1):
        mh_cfg = cfg.mh.replace(iterations=chain_len, seed=int(iter_seeds[k - 1]))
        chain = sample_predictive(data, grid, theta, mh_cfg, initial_state=state)
        state = chain.final_state
        mean_acc = float(chain.sweep_acceptance.mean())
        if mean_acc < 0.01:
            warnings.append(f"iteration {k}: MH acceptance {mean_acc:.2%} below 1%")
        draws = chain.samples[draw_idx]
        gamma = saem_weight(k, c_eff, cfg.W)
        stats = e_step_update(stats, draws, gamma, theta, data, grid, R,
                              chol_R=chol_R)
        theta_new = m_step(stats, data, grid, theta, fix_phi=cfg.fix_phi)
        if theta_new.phi != theta.phi:
            R = correlation_matrix(grid.centroids, theta_new.phi)
            chol_R, _ = cholesky_with_jitter(R)
        proxy = complete_loglik(theta_new, LatentField(stats.s_mean_at_cells),
                                data, grid, R, chol_R=chol_R)
        if not np.isfinite(proxy):
            raise NumericalError(
                f"non-finite surrogate objective at iteration {k}: "
                f"theta={theta_new.to_dict()}")
        trace.append(TraceRow(iteration=k, theta=theta_new, objective=proxy))
        old = np.array([theta.mu, theta.tau2, theta.sigma2, theta.phi, theta.beta])
        new = np.array([theta_new.mu, theta_new.tau2, theta_new.sigma2,
                        theta_new.phi, theta_new.beta])
        rel = float(np.max(np.abs(new - old) / (1.0 + np.abs(old))))
        consec = consec + 1 if rel < cfg.tol else 0
        theta = theta_new
        if consec >= 3:
            converged = True
            reason = (f"relative change < {cfg.tol} on 3 consecutive "
                      f"iterations (k={k})")
            break
    report = FitReport(estimator=variant, theta_hat=theta, trace=trace,
                       converged=converged, reason=reason,
                       elapsed=time.perf_counter() - t0, seed=seed,
                       warnings=warnings)
    if compute_se:
        warm: dict[str, np.ndarray | None] = {"s": None}

        def loglik_t(x):
            th = _unpack(x, True)
            try:
                val = laplace_loglik(th, data, grid, s0=warm["s"])
            except NumericalError:
                return -1e10
            return val

        report.se_approx = _se_from_transformed_hessian(
            loglik_t, _pack(theta, True), True)
    return report
