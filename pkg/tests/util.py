"""Shared test helpers."""

import math

import numpy as np


def mcmc_se(kept: np.ndarray, max_lag: int = 3000) -> np.ndarray:
    """Monte Carlo standard error of the chain mean per coordinate.

    Uses the FFT autocovariance with Geyer's initial-positive-sequence
    truncation of the integrated autocorrelation time.
    """
    x = kept - kept.mean(axis=0)
    T, d = x.shape
    f = np.fft.rfft(np.vstack([x, np.zeros_like(x)]), axis=0)
    acov = np.fft.irfft(f * np.conj(f), axis=0)[:T].real / T
    se = np.empty(d)
    for k in range(d):
        tau, t = 1.0, 1
        while t + 1 < min(max_lag, T - 1):
            pair = (acov[t, k] + acov[t + 1, k]) / acov[0, k]
            if pair < 0:
                break
            tau += 2.0 * pair
            t += 2
        se[k] = math.sqrt(acov[0, k] * tau / T)
    return se
