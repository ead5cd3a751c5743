"""Rank-1 mixture (CP) parameterization of the scalar potential.

The potential is v(x) = sum_k beta_k prod_d r_k^d[x^d], stored entirely in
log-domain (log-weights plus K x D x S log-cores). It determines the
endpoint conditional of the bridge construction:

    q(x1 | x0) = v(x1) * qref(x1 | x0) / c(x0),

and the factorization across dimensions makes the normalizer c(x0) and
ancestral sampling tractable (component first, then each dimension).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import DegenerateDistributionError, log_normalize, logsumexp
from .refproc import ReferenceProcess
from .rng import categorical_from_logits


@dataclass
class CPScalarField:
    log_beta: np.ndarray   # (K,)
    log_cores: np.ndarray  # (K, D, S)

    def __post_init__(self):
        self.log_beta = np.asarray(self.log_beta, dtype=np.float64)
        self.log_cores = np.asarray(self.log_cores, dtype=np.float64)
        if self.log_beta.ndim != 1 or self.log_cores.ndim != 3:
            raise ValueError("expected log_beta (K,), log_cores (K, D, S)")
        if self.log_cores.shape[0] != self.log_beta.shape[0]:
            raise ValueError("component count mismatch")
        if not (np.all(np.isfinite(self.log_beta)) and np.all(np.isfinite(self.log_cores))):
            raise ValueError("field parameters must be finite")

    @property
    def n_components(self) -> int:
        return self.log_beta.shape[0]

    @property
    def n_dims(self) -> int:
        return self.log_cores.shape[1]

    @property
    def n_categories(self) -> int:
        return self.log_cores.shape[2]


def _batched(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


def gather_cores(log_cores: np.ndarray, x: np.ndarray) -> np.ndarray:
    """log_cores (K,D,S) at points x (B,D) -> (B,K,D)."""
    K, D, _ = log_cores.shape
    return log_cores[np.arange(K)[None, :, None],
                     np.arange(D)[None, None, :],
                     x[:, None, :]]


def log_v(field: CPScalarField, x1) -> np.ndarray | float:
    """log v at x1; accepts (D,) or (B, D)."""
    x, single = _batched(x1)
    comp = gather_cores(field.log_cores, x).sum(axis=2) + field.log_beta[None, :]
    out = logsumexp(comp, axis=1)
    return float(out[0]) if single else out


def component_inner_table(field: CPScalarField, proc: ReferenceProcess) -> np.ndarray:
    """M[k,d,a] = log <r_k^d, Qbar_{N+1}[a, .]> for every start category a."""
    log_kernel = proc.log_kernel(proc.n_steps)          # (S_a, S)
    return logsumexp(field.log_cores[:, :, None, :] + log_kernel[None, None, :, :],
                     axis=3)


def component_log_weights(field: CPScalarField, proc: ReferenceProcess, x0,
                          inner: np.ndarray | None = None) -> np.ndarray:
    """Unnormalized mixture log-weights per component: (B, K)."""
    x, _ = _batched(x0)
    if inner is None:
        inner = component_inner_table(field, proc)
    K, D, _ = field.log_cores.shape
    w = inner[np.arange(K)[None, :, None],
              np.arange(D)[None, None, :],
              x[:, None, :]]
    return w.sum(axis=2) + field.log_beta[None, :]


def log_normalizer(field: CPScalarField, proc: ReferenceProcess, x0,
                   inner: np.ndarray | None = None) -> np.ndarray | float:
    """log c(x0); accepts (D,) or (B, D)."""
    _, single = _batched(x0)
    out = logsumexp(component_log_weights(field, proc, x0, inner), axis=1)
    return float(out[0]) if single else out


def conditional_log_prob(field: CPScalarField, proc: ReferenceProcess,
                         x0, x1) -> np.ndarray | float:
    """log q(x1 | x0) of the constructed endpoint conditional."""
    a, single = _batched(x0)
    b, _ = _batched(x1)
    log_kernel = proc.log_kernel(proc.n_steps)
    ref = log_kernel[a, b].sum(axis=1)                       # (B,)
    comp = gather_cores(field.log_cores, b).sum(axis=2) + field.log_beta[None, :]
    out = ref + logsumexp(comp, axis=1) - log_normalizer(field, proc, a)
    return float(out[0]) if single else out


def sample_conditional(rng: np.random.Generator, field: CPScalarField,
                       proc: ReferenceProcess, x0) -> np.ndarray:
    """Draw x1 ~ q(. | x0): component by posterior weight, then dimensions
    independently from r_k^d (.) * Qbar_{N+1}[x0^d, .]."""
    x, single = _batched(x0)
    B, D = x.shape
    w = component_log_weights(field, proc, x)
    try:
        k = categorical_from_logits(rng, log_normalize(w, axis=1))
    except (ValueError, DegenerateDistributionError):
        raise DegenerateDistributionError(
            "conditional has no admissible component at this x0") from None
    log_kernel = proc.log_kernel(proc.n_steps)
    logits = field.log_cores[k[:, None], np.arange(D)[None, :], :] + log_kernel[x, :]
    try:
        out = categorical_from_logits(rng, logits)
    except ValueError:
        raise DegenerateDistributionError(
            "a dimension of the conditional carries no mass") from None
    return out[0] if single else out
