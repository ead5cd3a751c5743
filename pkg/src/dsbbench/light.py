"""Light solvers: direct surrogate fitting of a CP potential (DLightSB) and
bridge-matching training of the same potential (DLightSB-M).

Both learn log mixture weights and log cores. DLightSB minimizes the
Monte-Carlo surrogate  mean log c(x0) - mean log v(x1)  over unpaired
batches; DLightSB-M fits the potential's own per-step transitions to
reference-bridge posteriors, differentiating through the u-table recursion

    u_{k,n}^d = Q u_{k,n+1}^d,   anchored at the cores for n = N+1,

which gives the transitions in closed form (components weighted at the
previous state, dimensions independent given the component).
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .benchmark import SOLVER_INIT_STD_FRACTION, PairSampler
from .cpfield import CPScalarField, sample_conditional
from .numerics import discretized_gaussian_logpmf, log_normalize, logsumexp
from .optim import AdamW
from .refproc import ReferenceProcess
from .rng import RngStream, categorical_from_logits


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or gradient."""


@dataclass
class UTable:
    """log u on the time grid t_0..t_{N+1}: (N+2, K, D, S), slot n holding
    Qbar_{N+1-n} applied to the cores (so the terminal slot is the cores)."""
    log_u: np.ndarray


def build_u_tables(field: CPScalarField, proc: ReferenceProcess) -> UTable:
    """Backward recursion from the cores; log-domain throughout."""
    K, D, S = field.log_cores.shape
    log_u = np.empty((proc.n_steps + 1, K, D, S))
    log_u[proc.n_steps] = field.log_cores
    for n in range(proc.n_steps - 1, -1, -1):
        log_u[n] = logsumexp(proc.log_q[None, None, :, :]
                             + log_u[n + 1][:, :, None, :], axis=3)
    return UTable(log_u)


def build_u_graph(log_cores: Var, proc: ReferenceProcess) -> Var:
    """Same recursion as build_u_tables but differentiable in the cores.

    The recursion is linear in the cores, so it runs in linear domain as a
    chain of matrix products after a constant per-(component, dimension)
    log-shift; entries more than ~700 nats below their (k, d) maximum
    underflow to exact zeros, i.e. log-domain -inf, which downstream ops
    treat as zero-mass states.
    """
    K, D, S = log_cores.shape
    shift = np.max(log_cores.value, axis=2)              # (K, D), constant
    lin = ad.exp(ad.add(log_cores, -shift[:, :, None]))
    rows = ad.reshape(lin, (K * D, S))
    slots: list = [None] * (proc.n_steps + 1)
    slots[proc.n_steps] = rows
    q_t = proc.q.T
    for n in range(proc.n_steps - 1, -1, -1):
        slots[n] = ad.matmul(slots[n + 1], q_t)
    stacked = ad.log(ad.stack(slots, axis=0))            # (N+2, K*D, S)
    shifted = ad.add(stacked, shift.reshape(1, K * D, 1))
    return ad.reshape(shifted, (proc.n_steps + 1, K, D, S))


# -- transition machinery (numpy; sampling and tests) ----------------------

def sb_component_logits(field: CPScalarField, utab: UTable,
                        x_prev: np.ndarray, n: int) -> np.ndarray:
    """Unnormalized component log-weights at the previous state, (B, K)."""
    B, D = x_prev.shape
    K = field.n_components
    u_prev = utab.log_u[n - 1][np.arange(K)[None, :, None],
                               np.arange(D)[None, None, :],
                               x_prev[:, None, :]]          # (B, K, D)
    return field.log_beta[None, :] + u_prev.sum(axis=2)


def sb_transition_sample(rng: np.random.Generator, field: CPScalarField,
                         utab: UTable, proc: ReferenceProcess,
                         x_prev: np.ndarray, n: int) -> np.ndarray:
    """Ancestral step of the bridge transition: draw the component from its
    posterior weight, then each dimension from Q-row times u."""
    if not 1 <= n <= proc.n_steps:
        raise ValueError(f"transition index {n} outside 1..{proc.n_steps}")
    x_prev = np.asarray(x_prev)
    squeeze = x_prev.ndim == 1
    x_prev = np.atleast_2d(x_prev)
    B, D = x_prev.shape
    comp = sb_component_logits(field, utab, x_prev, n)
    k = categorical_from_logits(rng, log_normalize(comp, axis=1))
    logits = proc.log_q[x_prev] + utab.log_u[n][k[:, None],
                                                np.arange(D)[None, :], :]
    out = categorical_from_logits(rng, logits)
    return out[0] if squeeze else out


def sb_transition_marginal(field: CPScalarField, utab: UTable,
                           proc: ReferenceProcess, x_prev: np.ndarray,
                           n: int) -> np.ndarray:
    """Exact per-dimension transition law at step n given x_prev: (B, D, S)."""
    x_prev = np.atleast_2d(np.asarray(x_prev))
    B, D = x_prev.shape
    K = field.n_components
    u_prev = utab.log_u[n - 1][np.arange(K)[None, :, None],
                               np.arange(D)[None, None, :],
                               x_prev[:, None, :]]          # (B, K, D)
    total = field.log_beta[None, :] + u_prev.sum(axis=2)    # (B, K)
    partial = total[:, :, None] - u_prev                    # drop own dim d
    mix = logsumexp(partial[:, :, :, None] + utab.log_u[n][None, :, :, :], axis=1)
    return np.exp(log_normalize(proc.log_q[x_prev] + mix, axis=2))


def sb_chain_sample(rng: np.random.Generator, field: CPScalarField,
                    utab: UTable, proc: ReferenceProcess,
                    x0: np.ndarray) -> np.ndarray:
    """Run all N+1 transitions from x0; returns the endpoint batch."""
    cur = np.atleast_2d(np.asarray(x0))
    for n in range(1, proc.n_steps + 1):
        cur = sb_transition_sample(rng, field, utab, proc, cur, n)
    return cur


def sb_joint_transition_matrix(field: CPScalarField, utab: UTable,
                               proc: ReferenceProcess, n: int,
                               states: np.ndarray) -> np.ndarray:
    """Full joint-state transition at step n (enumerable instances only)."""
    M, D = states.shape
    log_phi = logsumexp(
        field.log_beta[None, :]
        + sum(utab.log_u[n][:, d, states[:, d]].T for d in range(D)),
        axis=1)                                             # (M,) at target
    log_ref = sum(proc.log_q[np.ix_(states[:, d], states[:, d])]
                  for d in range(D))
    logits = log_ref + log_phi[None, :]
    return np.exp(log_normalize(logits, axis=1))


# -- the trainable model ----------------------------------------------------

@dataclass
class LightModel:
    proc: ReferenceProcess
    log_beta_v: Var
    log_cores_v: Var
    solver: str = "dlightsb"
    steps_trained: int = 0
    config: dict = dc_field(default_factory=dict)

    @classmethod
    def initialized_from_data(cls, proc: ReferenceProcess, n_components: int,
                              data: PairSampler, stream: RngStream,
                              solver: str = "dlightsb") -> "LightModel":
        """Cores centered at random training targets, fixed width, uniform
        mixture weights."""
        S = proc.n_categories
        anchors = data.x1_batch(n_components)
        D = anchors.shape[1]
        std = SOLVER_INIT_STD_FRACTION * (S - 1)
        log_cores = np.empty((n_components, D, S))
        for k in range(n_components):
            for d in range(D):
                log_cores[k, d] = discretized_gaussian_logpmf(anchors[k, d], std, S)
        return cls(proc,
                   Var(np.full(n_components, -np.log(n_components)),
                       requires_grad=True, name="log_beta"),
                   Var(log_cores, requires_grad=True, name="log_cores"),
                   solver=solver)

    def field(self) -> CPScalarField:
        return CPScalarField(self.log_beta_v.value.copy(),
                             self.log_cores_v.value.copy())

    def params(self) -> list[Var]:
        return [self.log_beta_v, self.log_cores_v]

    def sample(self, rng: np.random.Generator, x0: np.ndarray) -> np.ndarray:
        """One-shot endpoint sampling via the static conditional machinery."""
        return sample_conditional(rng, self.field(), self.proc, x0)

    def u_tables(self) -> UTable:
        return build_u_tables(self.field(), self.proc)


class LightTransitionModel:
    """Adapter exposing a LightModel's per-step transitions to the
    projection losses; builds the differentiable u-table graph once per
    batch of queries."""

    def __init__(self, model: LightModel):
        self.model = model
        self.proc = model.proc

    def params(self) -> list[Var]:
        return self.model.params()

    def log_transition_probs_multi(self, queries) -> list[Var]:
        proc = self.proc
        beta = self.model.log_beta_v
        u_all = build_u_graph(self.model.log_cores_v, proc)
        outs = []
        for states, t_idx in queries:
            t = np.broadcast_to(np.asarray(t_idx, dtype=np.int64),
                                states.shape[:1])
            slots = np.unique(t)
            if slots.size == 1:
                outs.append(self._single_slot(u_all, beta, states, int(slots[0])))
                continue
            # group rows by slot, then restore the original row order
            order = np.argsort(t, kind="stable")
            chunks = [self._single_slot(u_all, beta, states[order[t[order] == n]],
                                        int(n)) for n in slots]
            merged = ad.concat(chunks, axis=0)
            inv = np.argsort(order, kind="stable")
            B, D = states.shape
            S = proc.n_categories
            outs.append(ad.gather(merged, (inv[:, None, None],
                                           np.arange(D)[None, :, None],
                                           np.arange(S)[None, None, :])))
        return outs

    def _single_slot(self, u_all: Var, beta: Var, states: np.ndarray,
                     n: int) -> Var:
        """Transition log-probs for one slot: the component-mixture reduction
        is a matrix product in linear domain after constant log-shifts."""
        proc = self.proc
        B, D = states.shape
        S = proc.n_categories
        K = beta.shape[0]
        k = np.arange(K).reshape(1, K, 1)
        d = np.arange(D).reshape(1, 1, D)
        u_prev = ad.gather(u_all, (np.full((1, 1, 1), n - 1), k, d,
                                   states[:, None, :]))            # (B,K,D)
        per_dim = []
        for dim in range(D):
            # leave-one-out sum over dimensions; the mask keeps exact zeros
            # (-inf entries) from poisoning the excluded slot
            mask = np.ones((1, 1, D))
            mask[0, 0, dim] = 0.0
            a = ad.add(ad.vsum(ad.weighted(u_prev, mask), axis=2), beta)  # (B,K)
            c1 = np.max(a.value, axis=1, keepdims=True)
            c1 = np.where(np.isfinite(c1), c1, 0.0)
            u_slice = ad.gather(u_all, (np.full((K, 1), n),
                                        np.arange(K)[:, None],
                                        np.full((K, 1), dim),
                                        np.arange(S)[None, :]))    # (K,S)
            c2 = float(np.max(u_slice.value))
            c2 = c2 if np.isfinite(c2) else 0.0
            w = ad.exp(ad.add(a, -c1))
            v = ad.exp(ad.add(u_slice, -c2))
            mix = ad.add(ad.log(ad.matmul(w, v)), c1 + c2)         # (B,S)
            per_dim.append(mix)
        mix_all = ad.stack(per_dim, axis=1)                        # (B,D,S)
        return ad.log_softmax(ad.add(proc.log_q[states], mix_all), axis=2)

    def log_transition_probs_numpy(self, states: np.ndarray,
                                   t_idx: np.ndarray) -> np.ndarray:
        utab = self.model.u_tables()
        fieldv = self.model.field()
        out = np.empty((states.shape[0], states.shape[1], self.proc.n_categories))
        t_arr = np.broadcast_to(np.asarray(t_idx), states.shape[:1])
        for n in np.unique(t_arr):
            rows = t_arr == n
            out[rows] = sb_transition_marginal(fieldv, utab, self.proc,
                                               states[rows], int(n))
        with np.errstate(divide="ignore"):
            return np.log(out)


# -- DLightSB ----------------------------------------------------------------

def dlightsb_loss(model: LightModel, x0: np.ndarray, x1: np.ndarray) -> Var:
    """Monte-Carlo surrogate: mean log c over x0 minus mean log v over x1."""
    if x0.shape[0] == 0 or x1.shape[0] == 0:
        raise ValueError("empty batch")
    proc = model.proc
    cores, beta = model.log_cores_v, model.log_beta_v
    K, D, S = cores.shape
    k = np.arange(K).reshape(1, K, 1)
    d = np.arange(D).reshape(1, 1, D)

    g_v = ad.gather(cores, (k, d, x1[:, None, :]))
    comp_v = ad.add(ad.vsum(g_v, axis=2), beta)
    mean_v = ad.logsumexp(comp_v, axis=1).mean()

    log_kernel = proc.log_kernel(proc.n_steps)
    inner = ad.logsumexp(ad.add(ad.reshape(cores, (K, D, 1, S)),
                                log_kernel[None, None, :, :]), axis=3)
    g_c = ad.gather(inner, (k, d, x0[:, None, :]))
    comp_c = ad.add(ad.vsum(g_c, axis=2), beta)
    mean_c = ad.logsumexp(comp_c, axis=1).mean()
    return ad.add(mean_c, ad.mul(mean_v, -1.0))


def dlightsb_per_sample_grad_stats(model: LightModel, x0: np.ndarray,
                                   x1: np.ndarray, chunk: int = 8192,
                                   ) -> tuple[np.ndarray, np.ndarray]:
    """Monte-Carlo gradient of the surrogate and its standard error, per
    parameter component, from closed-form per-sample gradients.

    The surrogate is mean_b log c(x0_b) - mean_b log v(x1_b); with equal
    batch sizes the per-sample gradient is the difference of the two
    per-sample terms. Returns (mean, se) flattened as [beta..., cores...].
    """
    from .numerics import log_normalize as _ln

    proc = model.proc
    beta = model.log_beta_v.value
    cores = model.log_cores_v.value
    K, D, S = cores.shape
    B = x0.shape[0]
    if x1.shape[0] != B:
        raise ValueError("equal batch sizes required for paired statistics")
    log_kernel = proc.log_kernel(proc.n_steps)
    inner_logits = cores[:, :, None, :] + log_kernel[None, None, :, :]
    inner = logsumexp(inner_logits, axis=3)             # (K,D,S0) = M table
    inner_soft = np.exp(inner_logits - inner[..., None])  # dM/dcores softmax
    P = K + K * D * S
    total = np.zeros(P)
    total_sq = np.zeros(P)
    for lo in range(0, B, chunk):
        a = x0[lo:lo + chunk]
        b = x1[lo:lo + chunk]
        n = a.shape[0]
        k_idx = np.arange(K)[None, :, None]
        d_idx = np.arange(D)[None, None, :]
        w = beta[None, :] + inner[k_idx, d_idx, a[:, None, :]].sum(axis=2)
        pi = np.exp(np.asarray(_ln(w, axis=1)))          # (n,K) c-side weights
        rho_logits = beta[None, :] + cores[k_idx, d_idx, b[:, None, :]].sum(axis=2)
        rho = np.exp(np.asarray(_ln(rho_logits, axis=1)))
        g_beta = pi - rho                                # (n,K)
        sig = inner_soft[k_idx[..., None], d_idx[..., None],
                         a[:, None, :, None], np.arange(S)[None, None, None, :]]
        g_cores = pi[:, :, None, None] * sig             # (n,K,D,S)
        onehot = (b[:, None, :, None] == np.arange(S)[None, None, None, :])
        g_cores -= rho[:, :, None, None] * onehot
        g = np.concatenate([g_beta, g_cores.reshape(n, -1)], axis=1)
        total += g.sum(axis=0)
        total_sq += (g * g).sum(axis=0)
    mean = total / B
    var = np.maximum(total_sq / B - mean**2, 0.0)
    se = np.sqrt(var / B)
    return mean, se


def train_dlightsb(proc: ReferenceProcess, data: PairSampler, seed: int,
                   n_components: int = 1000, lr: float = 1e-2,
                   steps: int = 100000, batch_size: int = 512,
                   log_every: int = 100) -> tuple[LightModel, list]:
    stream = RngStream(seed, key=(101,))
    model = LightModel.initialized_from_data(proc, n_components, data, stream,
                                             solver="dlightsb")
    model.config = {"components": n_components, "lr": lr, "steps": steps,
                    "batch_size": batch_size, "seed": seed}
    opt = AdamW(model.params(), lr=lr)
    history = []
    for step in range(steps):
        x0 = data.x0_batch(batch_size)
        x1 = data.x1_batch(batch_size)
        ad.zero_grads(model.params())
        try:
            loss = dlightsb_loss(model, x0, x1)
            ad.backward(loss, model.params())
            opt.step()
        except (ad.NonFiniteError, FloatingPointError) as e:
            raise DivergenceError(f"dlightsb diverged at step {step}: {e}") from e
        if step % log_every == 0 or step == steps - 1:
            history.append((step, float(loss.value)))
    model.steps_trained = steps
    return model, history


# -- DLightSB-M --------------------------------------------------------------

def train_dlightsb_m(proc: ReferenceProcess, data: PairSampler, seed: int,
                     n_components: int = 1000, lr: float = 1e-2,
                     steps: int = 100000, batch_size: int = 512,
                     loss_variant: str = "kl",
                     log_every: int = 100) -> tuple[LightModel, list]:
    """Bridge matching on the independent coupling: one uniformly drawn
    interior slot per pair per step plus the terminal term."""
    from .matching import sampled_projection_loss   # shared loss machinery

    stream = RngStream(seed, key=(102,))
    model = LightModel.initialized_from_data(proc, n_components, data, stream,
                                             solver="dlightsb-m")
    model.config = {"components": n_components, "lr": lr, "steps": steps,
                    "batch_size": batch_size, "loss": loss_variant, "seed": seed}
    adapter = LightTransitionModel(model)
    opt = AdamW(model.params(), lr=lr)
    g_slots = stream.child(3).generator()
    history = []
    for step in range(steps):
        x0 = data.x0_batch(batch_size)
        x1 = data.x1_batch(batch_size)
        ad.zero_grads(model.params())
        try:
            loss = sampled_projection_loss(adapter, proc, x0, x1, g_slots,
                                           loss_variant)
            ad.backward(loss, model.params())
            opt.step()
        except (ad.NonFiniteError, FloatingPointError) as e:
            raise DivergenceError(f"dlightsb-m diverged at step {step}: {e}") from e
        if step % log_every == 0 or step == steps - 1:
            history.append((step, float(loss.value)))
    model.steps_trained = steps
    return model, history
