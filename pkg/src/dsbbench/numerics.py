"""Log-domain scalar/array helpers used outside the autodiff graph."""

from __future__ import annotations

import numpy as np


class DegenerateDistributionError(ValueError):
    """All mass vanished where a normalizable distribution was required."""


def logsumexp(values, axis=None) -> np.ndarray | float:
    """max-shifted log of summed exponentials; -inf rows stay -inf.

    Empty input is an error. A result is exact under a constant shift of all
    inputs (the shift factors out of the max).
    """
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0 or (axis is not None and v.shape[axis] == 0):
        raise ValueError("logsumexp of empty input")
    m = np.max(v, axis=axis, keepdims=True)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = safe + np.log(np.sum(np.exp(v - safe), axis=axis, keepdims=True))
    out = np.where(np.isfinite(m), out, m)
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def log_normalize(logits: np.ndarray, axis=-1) -> np.ndarray:
    """Log-probabilities from unnormalized log-weights."""
    z = logsumexp(logits, axis=axis)
    z = np.expand_dims(np.asarray(z), axis) if logits.ndim > 0 else z
    if not np.all(np.isfinite(z)):
        raise DegenerateDistributionError("normalizer is zero (all weights -inf)")
    return logits - z


def discretized_gaussian_logpmf(mean: float, std: float, n_categories: int) -> np.ndarray:
    """Log-density of a Gaussian evaluated at integer categories, renormalized.

    Density evaluation (not CDF binning); this is the initializer used for CP
    cores and Gaussian source distributions.
    """
    s = np.arange(n_categories, dtype=np.float64)
    logits = -0.5 * ((s - mean) / std) ** 2
    return logits - logsumexp(logits)
