"""Prediction-quality measures."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .random_field import LatentField


@dataclass(frozen=True)
class EvalResult:
    mae: float
    rmse: float
    n_cells: int

    def to_dict(self) -> dict:
        return {"mae": self.mae, "rmse": self.rmse, "n_cells": self.n_cells}


def evaluate(s_hat: LatentField | np.ndarray,
             s_true: LatentField | np.ndarray) -> EvalResult:
    """Mean absolute error and root mean square error of a surface estimate."""
    a = s_hat.values if isinstance(s_hat, LatentField) else np.asarray(s_hat, dtype=float)
    b = s_true.values if isinstance(s_true, LatentField) else np.asarray(s_true, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    err = a - b
    mae = float(np.abs(err).mean())
    rmse = float(math.sqrt((err @ err) / err.size))
    return EvalResult(mae=mae, rmse=rmse, n_cells=err.size)
