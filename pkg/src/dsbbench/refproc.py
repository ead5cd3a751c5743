"""Reference Markov chains over categories: transition matrices, multi-step
kernels, and endpoint-conditioned (bridge) sampling.

A process is a single row-stochastic S x S matrix applied for N+1 steps on
the uniform grid t_n = n/(N+1). Dimensions are independent, so every bridge
computation here is per-dimension.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .numerics import DegenerateDistributionError, log_normalize
from .rng import categorical_from_logits

log = logging.getLogger(__name__)

ROW_SUM_TOL = 1e-12


class DegenerateBridgeError(DegenerateDistributionError):
    """Endpoint pair impossible under the reference process."""


def build_uniform(n_categories: int, gamma: float) -> np.ndarray:
    """Stay with probability 1-gamma, otherwise jump uniformly."""
    if n_categories < 2:
        raise ValueError("need at least 2 categories")
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"uniform stochasticity must be in [0,1], got {gamma}")
    S = n_categories
    q = np.full((S, S), gamma / (S - 1))
    np.fill_diagonal(q, 1.0 - gamma)
    return q


def build_gaussian(n_categories: int, gamma: float) -> np.ndarray:
    """Jump probability decays in squared category distance; the diagonal
    takes the probability left over in each row."""
    if n_categories < 2:
        raise ValueError("need at least 2 categories")
    if gamma <= 0.0:
        raise ValueError(f"gaussian stochasticity must be positive, got {gamma}")
    S = n_categories
    delta_max = S - 1
    deltas = np.arange(-delta_max, delta_max + 1, dtype=np.float64)
    weights = np.exp(-4.0 * deltas**2 / (gamma * delta_max) ** 2)
    z = weights.sum()
    i = np.arange(S)
    q = np.exp(-4.0 * (i[None, :] - i[:, None]) ** 2 / (gamma * delta_max) ** 2) / z
    np.fill_diagonal(q, 0.0)
    if not np.any(q > 0.0):
        log.warning("gaussian kernel off-diagonals underflowed to zero "
                    "(gamma=%g, S=%d); rows fall back to identity", gamma, S)
    np.fill_diagonal(q, 1.0 - q.sum(axis=1))
    return q


def matrix_power(q: np.ndarray, n: int) -> np.ndarray:
    """n-step kernel by exponentiation-by-squaring."""
    if n < 0:
        raise ValueError("negative power")
    result = np.eye(q.shape[0])
    base = q.copy()
    while n:
        if n & 1:
            result = result @ base
        n >>= 1
        if n:
            base = base @ base
    return result


def uniform_power_closed_form(n_categories: int, gamma: float, n: int) -> np.ndarray:
    """Exact n-step uniform kernel: a^n I + (1-a^n)/S 11^T, a = 1-gamma*S/(S-1)."""
    S = n_categories
    a = (1.0 - gamma * S / (S - 1)) ** n
    return a * np.eye(S) + (1.0 - a) / S * np.ones((S, S))


@dataclass
class ReferenceProcess:
    kind: str                # "uniform" | "gaussian"
    gamma: float
    n_categories: int        # S
    n_steps: int             # N+1 transitions, N interior times
    stride: int = 1          # base steps per transition (solver-grid coarsening)
    _base_q: np.ndarray = field(init=False, repr=False)
    _q: np.ndarray = field(init=False, repr=False)
    _log_q: np.ndarray = field(init=False, repr=False)
    _kernels: dict = field(init=False, repr=False, default_factory=dict)
    _log_kernels: dict = field(init=False, repr=False, default_factory=dict)

    def __post_init__(self):
        if self.kind == "uniform":
            self._base_q = build_uniform(self.n_categories, self.gamma)
        elif self.kind == "gaussian":
            self._base_q = build_gaussian(self.n_categories, self.gamma)
        else:
            raise ValueError(f"unknown reference kind {self.kind!r}")
        if self.n_steps < 1:
            raise ValueError("need at least one transition step")
        if self.stride < 1:
            raise ValueError("stride must be positive")
        if self.kind == "uniform":
            self._q = uniform_power_closed_form(self.n_categories, self.gamma,
                                                self.stride)
        else:
            self._q = matrix_power(self._base_q, self.stride)
        # bidirectional solvers mirror bridges in time, which needs symmetry
        assert np.allclose(self._q, self._q.T, atol=1e-15), "kernel must be symmetric"
        with np.errstate(divide="ignore"):
            self._log_q = np.log(self._q)

    @property
    def q(self) -> np.ndarray:
        return self._q

    @property
    def log_q(self) -> np.ndarray:
        return self._log_q

    @property
    def n_interior(self) -> int:
        return self.n_steps - 1

    def time_grid(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) / self.n_steps

    def kernel(self, n: int) -> np.ndarray:
        """n-step transition kernel Qbar_n (closed form for uniform kind)."""
        if n not in self._kernels:
            if self.kind == "uniform":
                k = uniform_power_closed_form(self.n_categories, self.gamma,
                                              n * self.stride)
            else:
                k = matrix_power(self._base_q, n * self.stride)
            self._kernels[n] = k
        return self._kernels[n]

    def log_kernel(self, n: int) -> np.ndarray:
        if n not in self._log_kernels:
            with np.errstate(divide="ignore"):
                self._log_kernels[n] = np.log(self.kernel(n))
        return self._log_kernels[n]

    def coarsened(self, n_steps: int) -> "ReferenceProcess":
        """Same chain on a coarser grid: one new step spans several base
        steps, so every multi-step kernel (and the static problem) is
        unchanged. The total base-step count must be divisible."""
        total = self.n_steps * self.stride
        if total % n_steps:
            raise ValueError(f"{n_steps} solver steps do not divide {total} base steps")
        return ReferenceProcess(self.kind, self.gamma, self.n_categories,
                                n_steps, stride=total // n_steps)

    def spec(self) -> dict:
        return {"kind": self.kind, "gamma": self.gamma,
                "categories": self.n_categories, "steps": self.n_steps,
                "stride": self.stride}

    @classmethod
    def from_spec(cls, d: dict) -> "ReferenceProcess":
        return cls(d["kind"], d["gamma"], d["categories"], d["steps"],
                   d.get("stride", 1))


# -- bridge posteriors ----------------------------------------------------

def bridge_step_logits(proc: ReferenceProcess, n: int, x_prev: np.ndarray,
                       x1: np.ndarray) -> np.ndarray:
    """Unnormalized log posterior of x at t_n given x at t_{n-1} and the
    endpoint at t_{N+1}, per dimension.

    x_prev, x1: integer arrays of equal shape (...,). Returns (..., S).
    """
    if not 1 <= n <= proc.n_steps:
        raise ValueError(f"step index {n} outside 1..{proc.n_steps}")
    remaining = proc.n_steps - n
    return proc.log_q[x_prev] + proc.log_kernel(remaining).T[x1]


def bridge_step_distribution(proc: ReferenceProcess, n: int, x_prev_d: int,
                             x1_d: int) -> np.ndarray:
    """Normalized bridge posterior for one dimension at interior step n."""
    logits = bridge_step_logits(proc, n, np.asarray(x_prev_d), np.asarray(x1_d))
    try:
        return np.exp(log_normalize(logits))
    except DegenerateDistributionError:
        raise DegenerateBridgeError(
            f"endpoint pair ({x_prev_d} -> {x1_d}) has zero probability "
            f"under the reference at step {n}") from None


def bridge_marginal_logits(proc: ReferenceProcess, m: int, x0: np.ndarray,
                           x1: np.ndarray) -> np.ndarray:
    """Unnormalized log law of x at t_m given both endpoints, per dimension."""
    if not 0 <= m <= proc.n_steps:
        raise ValueError(f"time index {m} outside 0..{proc.n_steps}")
    return proc.log_kernel(m)[x0] + proc.log_kernel(proc.n_steps - m).T[x1]


def _sample_posterior(rng, logits: np.ndarray) -> np.ndarray:
    try:
        return categorical_from_logits(rng, logits)
    except ValueError:
        raise DegenerateBridgeError(
            "endpoint pair impossible under the reference process") from None


def sample_bridge(rng: np.random.Generator, proc: ReferenceProcess,
                  x0: np.ndarray, x1: np.ndarray) -> np.ndarray:
    """Intermediate path given endpoints, sampled forward in time.

    x0, x1: (D,) or (B, D) integer arrays. Returns (N, D) or (B, N, D);
    N = 0 yields an empty path.
    """
    x0 = np.asarray(x0)
    squeeze = x0.ndim == 1
    x0 = np.atleast_2d(x0)
    x1 = np.atleast_2d(np.asarray(x1))
    B, D = x0.shape
    out = np.empty((B, proc.n_interior, D), dtype=np.int64)
    prev = x0
    for n in range(1, proc.n_steps):
        prev = _sample_posterior(rng, bridge_step_logits(proc, n, prev, x1))
        out[:, n - 1, :] = prev
    return out[0] if squeeze else out


def sample_bridge_marginal(rng: np.random.Generator, proc: ReferenceProcess,
                           m: np.ndarray | int, x0: np.ndarray,
                           x1: np.ndarray) -> np.ndarray:
    """Draw x at t_m given endpoints; m may vary per row."""
    m_arr = np.broadcast_to(np.asarray(m), x0.shape[:1])
    if x0.ndim != 2:
        raise ValueError("batched sampler expects (B, D) endpoints")
    logits = np.empty(x0.shape + (proc.n_categories,))
    for mv in np.unique(m_arr):
        rows = m_arr == mv
        logits[rows] = bridge_marginal_logits(proc, int(mv), x0[rows], x1[rows])
    return _sample_posterior(rng, logits)
