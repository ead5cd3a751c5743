"""Brute-force ground truth at tiny scale.

Everything in here is deliberately O(S^(2D)): exact enumeration of
conditionals and path marginals, a log-domain Sinkhorn solver over the full
joint state space, and exact projection operators for tabular sanity checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cpfield import CPScalarField
from .numerics import logsumexp
from .refproc import ReferenceProcess


class SinkhornError(RuntimeError):
    def __init__(self, msg, residual0=None, residual1=None):
        super().__init__(msg)
        self.residual0 = residual0
        self.residual1 = residual1


@dataclass
class SinkhornResult:
    coupling: np.ndarray
    residual0: float
    residual1: float
    iterations: int


def sinkhorn(p0: np.ndarray, p1: np.ndarray, cost: np.ndarray,
             max_iters: int = 200000, tol: float = 1e-10) -> SinkhornResult:
    """Log-domain scaling iterations on exp(-cost) until both L1 marginal
    residuals drop below tol. Zero-mass states are excluded up front and
    restored as zero rows/columns."""
    p0 = np.asarray(p0, dtype=np.float64)
    p1 = np.asarray(p1, dtype=np.float64)
    keep0 = p0 > 0
    keep1 = p1 > 0
    a, b = p0[keep0], p1[keep1]
    c = cost[np.ix_(keep0, keep1)]
    if np.any(np.isinf(c).all(axis=1)) or np.any(np.isinf(c).all(axis=0)):
        raise SinkhornError("a state has infinite cost to every partner")
    log_a, log_b = np.log(a), np.log(b)
    log_k = -c
    f = np.zeros(a.shape[0])
    g = np.zeros(b.shape[0])
    for it in range(1, max_iters + 1):
        f = log_a - logsumexp(log_k + g[None, :], axis=1)
        g = log_b - logsumexp(log_k + f[:, None], axis=0)
        plan = np.exp(f[:, None] + log_k + g[None, :])
        r0 = float(np.abs(plan.sum(axis=1) - a).sum())
        r1 = float(np.abs(plan.sum(axis=0) - b).sum())
        if r0 <= tol and r1 <= tol:
            full = np.zeros((p0.size, p1.size))
            full[np.ix_(keep0, keep1)] = plan
            return SinkhornResult(full, r0, r1, it)
    raise SinkhornError(f"no convergence in {max_iters} iterations "
                        f"(residuals {r0:.3e}, {r1:.3e})", r0, r1)


# -- exhaustive enumeration ------------------------------------------------

MAX_ENUM_STATES = 10**6


def enumerate_states(n_categories: int, n_dims: int) -> np.ndarray:
    """All points of the joint space in row-major order, (S^D, D)."""
    if n_categories**n_dims > MAX_ENUM_STATES:
        raise ValueError(f"state space {n_categories}^{n_dims} too large to enumerate")
    grids = np.meshgrid(*([np.arange(n_categories)] * n_dims), indexing="ij")
    return np.stack(grids, axis=-1).reshape(-1, n_dims)


def state_index(points: np.ndarray, n_categories: int) -> np.ndarray:
    """Row-major flat index of joint points (..., D)."""
    D = points.shape[-1]
    radix = n_categories ** np.arange(D - 1, -1, -1)
    return points @ radix


def log_ref_conditional(proc: ReferenceProcess, n_dims: int) -> np.ndarray:
    """log qref(x1|x0) over the full joint space, (S^D, S^D)."""
    states = enumerate_states(proc.n_categories, n_dims)
    lk = proc.log_kernel(proc.n_steps)
    out = np.zeros((states.shape[0], states.shape[0]))
    for d in range(n_dims):
        out += lk[np.ix_(states[:, d], states[:, d])]
    return out


def enumerate_log_v(field: CPScalarField, states: np.ndarray) -> np.ndarray:
    comp = field.log_beta[None, :] + sum(
        field.log_cores[:, d, states[:, d]].T for d in range(field.n_dims))
    return logsumexp(comp, axis=1)


def enumerate_conditional(field: CPScalarField, proc: ReferenceProcess,
                          x0: np.ndarray) -> np.ndarray:
    """q(. | x0) over all states by direct summation (no factorization)."""
    states = enumerate_states(proc.n_categories, field.n_dims)
    lk = proc.log_kernel(proc.n_steps)
    log_ref = sum(lk[x0[d], states[:, d]] for d in range(field.n_dims))
    weights = enumerate_log_v(field, states) + log_ref
    return np.exp(weights - logsumexp(weights))


def enumerate_log_normalizer(field: CPScalarField, proc: ReferenceProcess,
                             x0: np.ndarray) -> float:
    states = enumerate_states(proc.n_categories, field.n_dims)
    lk = proc.log_kernel(proc.n_steps)
    log_ref = sum(lk[x0[d], states[:, d]] for d in range(field.n_dims))
    return float(logsumexp(enumerate_log_v(field, states) + log_ref))


def enumerate_target_marginal(field: CPScalarField, proc: ReferenceProcess,
                              log_p0: np.ndarray) -> np.ndarray:
    """p1(x1) = sum_x0 p0(x0) q(x1|x0) over enumerated states.

    log_p0: per-dimension source log-pmf (D, S)."""
    states = enumerate_states(proc.n_categories, field.n_dims)
    p0 = np.exp(sum(log_p0[d, states[:, d]] for d in range(field.n_dims)))
    out = np.zeros(states.shape[0])
    for i, x0 in enumerate(states):
        out += p0[i] * enumerate_conditional(field, proc, x0)
    return out


def construction_coupling(field: CPScalarField, proc: ReferenceProcess,
                          log_p0: np.ndarray) -> np.ndarray:
    """The claimed bridge coupling p0(x0) q(x1|x0) as a dense matrix."""
    states = enumerate_states(proc.n_categories, field.n_dims)
    p0 = np.exp(sum(log_p0[d, states[:, d]] for d in range(field.n_dims)))
    rows = np.stack([enumerate_conditional(field, proc, x0) for x0 in states])
    return p0[:, None] * rows


def enumerate_path_marginal(proc: ReferenceProcess, transition_fn,
                            x0: np.ndarray, n_dims: int) -> np.ndarray:
    """Chain joint per-step transition matrices across all steps.

    transition_fn(n) must return the (S^D, S^D) row-stochastic transition
    from t_{n-1} to t_n; the result is the law of the endpoint given x0.
    """
    M = proc.n_categories**n_dims
    if (proc.n_steps + 1) * M > MAX_ENUM_STATES:
        raise ValueError("path enumeration infeasible at this size")
    dist = np.zeros(M)
    dist[state_index(np.asarray(x0), proc.n_categories)] = 1.0
    for n in range(1, proc.n_steps + 1):
        dist = dist @ transition_fn(n)
    return dist


# -- exact projections for tabular sanity checks ---------------------------

def bridge_time_marginals(proc: ReferenceProcess, n_dims: int) -> list[np.ndarray]:
    """P[x_{t_m} = s | x0, x1] for every m, joint states; list of (M, M, M)
    arrays indexed [x0, x1, s]. Only for tiny instances."""
    M = proc.n_categories**n_dims
    states = enumerate_states(proc.n_categories, n_dims)
    kernels = {}
    for m in range(proc.n_steps + 1):
        k = np.ones((M, M))
        for d in range(n_dims):
            k *= proc.kernel(m)[np.ix_(states[:, d], states[:, d])]
        kernels[m] = k
    out = []
    for m in range(proc.n_steps + 1):
        w = kernels[m][:, None, :] * kernels[proc.n_steps - m].T[None, :, :]
        total = w.sum(axis=2, keepdims=True)
        out.append(np.divide(w, total, out=np.zeros_like(w), where=total > 0))
    return out


def exact_markov_projection(proc: ReferenceProcess, coupling: np.ndarray,
                            n_dims: int) -> list[np.ndarray]:
    """Per-step transitions of the KL-closest Markov process to the
    reciprocal process built from `coupling`; exact, tabular scale only.

    Returns transitions[n-1][s, s'] = m(x_{t_n}=s' | x_{t_{n-1}}=s).
    """
    M = proc.n_categories**n_dims
    states = enumerate_states(proc.n_categories, n_dims)
    marg = bridge_time_marginals(proc, n_dims)
    joint_q = np.ones((M, M))
    for d in range(n_dims):
        joint_q *= proc.q[np.ix_(states[:, d], states[:, d])]
    transitions = []
    for n in range(1, proc.n_steps + 1):
        # occupancy(x0,x1,s) at t_{n-1}, posterior (s -> s') given x1
        occ = coupling[:, :, None] * marg[n - 1]
        num = np.zeros((M, M))
        den = np.zeros(M)
        rem = proc.n_steps - n
        kern_rem = np.ones((M, M))
        for d in range(n_dims):
            kern_rem *= proc.kernel(rem)[np.ix_(states[:, d], states[:, d])]
        for x1 in range(M):
            w = joint_q * kern_rem[:, x1][None, :]          # (s, s') weights
            tot = w.sum(axis=1, keepdims=True)
            post_x1 = np.divide(w, tot, out=np.zeros_like(w), where=tot > 0)
            mass = occ[:, x1, :].sum(axis=0)                 # occupancy of s
            num += mass[:, None] * post_x1
            den += mass
        t = np.divide(num, den[:, None], out=np.zeros_like(num),
                      where=den[:, None] > 0)
        transitions.append(t)
    return transitions


def endpoint_coupling_of_chain(transitions: list[np.ndarray],
                               p_start: np.ndarray) -> np.ndarray:
    """Joint (x0, x1) law of a Markov chain started from p_start."""
    M = p_start.size
    cond = np.eye(M)
    for t in transitions:
        cond = cond @ t
    return p_start[:, None] * cond


def alpha_imf_step(proc: ReferenceProcess, coupling: np.ndarray, alpha: float,
                   n_dims: int) -> np.ndarray:
    """One relaxed fitting update on endpoint couplings: mix the current
    coupling with its double projection (Markov fit, then reference bridges)."""
    p_start = coupling.sum(axis=1)
    projected = endpoint_coupling_of_chain(
        exact_markov_projection(proc, coupling, n_dims), p_start)
    return (1.0 - alpha) * coupling + alpha * projected
