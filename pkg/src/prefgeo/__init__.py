"""Geostatistical inference and prediction under preferential sampling.

A numpy/scipy library for the Gaussian geostatistical model whose sampling
locations follow a log-Gaussian Cox process driven by the latent field:
data simulation, maximum-likelihood estimation (non-preferential baseline,
Monte Carlo likelihood approximation, Laplace approximation, MCEM/SAEM),
blocked Metropolis-Hastings prediction of the field, kriging, and
prediction-quality metrics.
"""

from .errors import (DataSchemaError, DegenerateMatrixError, DomainError,
                     InvalidRegionError, NumericalError, ParameterError,
                     PrefgeoError)
from .estimators import (EmConfig, FitReport, TraceRow, e_step_update,
                         fit_em, fit_laplace, fit_mcla, fit_npg,
                         laplace_loglik, m_step, q_hat, saem_weight)
from .grid import CellBinning, SpatialGrid, bin_locations, build_grid
from .laplace import laplace_mode_and_hessian
from .likelihood import (SufficientStats, complete_loglik, log_f_s,
                         log_f_y_given_xs, nonpref_marginal_loglik)
from .metrics import EvalResult, evaluate
from .point_process import (PreferentialDataset, SimulatedData,
                            cell_selection_probs, log_f_x_given_s,
                            sample_locations, simulate_preferential)
from .predictor import (Chain, MhConfig, block_log_acceptance,
                        block_partition, krige, predict_s, predict_s_mode,
                        predict_y, sample_predictive)
from .random_field import (LatentField, Params, cholesky_with_jitter,
                           conditional_gp_given_y, correlation_matrix,
                           exp_correlation, sample_gp)

__version__ = "0.1.0"

__all__ = [
    "CellBinning", "Chain", "DataSchemaError", "DegenerateMatrixError",
    "DomainError", "EmConfig", "EvalResult", "FitReport", "InvalidRegionError",
    "LatentField", "MhConfig", "NumericalError", "ParameterError", "Params",
    "PrefgeoError", "PreferentialDataset", "SimulatedData", "SpatialGrid",
    "SufficientStats", "TraceRow", "bin_locations", "block_log_acceptance",
    "block_partition", "build_grid", "cell_selection_probs",
    "cholesky_with_jitter", "complete_loglik", "conditional_gp_given_y",
    "correlation_matrix", "e_step_update", "evaluate", "exp_correlation",
    "fit_em", "fit_laplace", "fit_mcla", "fit_npg", "krige",
    "laplace_loglik", "laplace_mode_and_hessian", "log_f_s",
    "log_f_x_given_s", "log_f_y_given_xs", "m_step",
    "nonpref_marginal_loglik", "predict_s", "predict_s_mode", "predict_y",
    "q_hat", "saem_weight", "sample_gp", "sample_locations",
    "sample_predictive", "simulate_preferential",
]
