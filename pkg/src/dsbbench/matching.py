"""Matching solvers over neural per-dimension transition models.

CSBM alternates bidirectional Markovian-projection fits for five outer
iterations, starting from the independent coupling; alpha-CSBM trains both
directions jointly, each model fitting the other direction's reciprocal
projection with gradients blocked, while endpoint-pair buffers mix toward
fresh chain samples at rate alpha.

The transition model is an MLP over the one-hot state encoding concatenated
with a learned per-step time embedding; outputs are factorized per-dimension
categorical log-probabilities. A dense tabular variant swaps in for
enumerable instances so projection fixed points can be tested without
neural-fitting error.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .benchmark import PairSampler
from .numerics import log_normalize
from .optim import AdamW, Ema
from .refproc import ReferenceProcess, bridge_step_logits, sample_bridge_marginal
from .rng import RngStream, categorical_from_logits

HIDDEN_WIDTH = 128
N_HIDDEN = 3


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or gradient."""


def one_hot(states: np.ndarray, n_categories: int) -> np.ndarray:
    """(B, D) ints -> (B, D*S) flattened one-hot encoding."""
    B, D = states.shape
    out = np.zeros((B, D * n_categories))
    cols = states + np.arange(D)[None, :] * n_categories
    out[np.arange(B)[:, None], cols] = 1.0
    return out


class MLPTransitionModel:
    """Three ReLU hidden layers of width 128; input one-hot(state) ++
    time-embedding row; output D*S logits normalized per dimension."""

    def __init__(self, proc: ReferenceProcess, n_dims: int, stream: RngStream,
                 direction: str = "forward", hidden: int = HIDDEN_WIDTH,
                 ema_decay: float = 0.999):
        if direction not in ("forward", "backward"):
            raise ValueError(f"bad direction {direction!r}")
        self.proc = proc
        self.n_dims = n_dims
        self.direction = direction
        self.hidden = hidden
        S = proc.n_categories
        in_dim = n_dims * S + n_dims
        dims = [in_dim] + [hidden] * N_HIDDEN + [n_dims * S]
        rng = stream.generator()
        self.layers: list[tuple[Var, Var]] = []
        for i in range(len(dims) - 1):
            w = rng.normal(0.0, np.sqrt(2.0 / dims[i]), size=(dims[i], dims[i + 1]))
            self.layers.append((Var(w, requires_grad=True, name=f"W{i}"),
                                Var(np.zeros(dims[i + 1]), requires_grad=True,
                                    name=f"b{i}")))
        emb = rng.normal(0.0, 0.1, size=(proc.n_steps + 2, n_dims))
        self.time_embed = Var(emb, requires_grad=True, name="time_embed")
        self.ema = Ema(self.params(), decay=ema_decay)

    def params(self) -> list[Var]:
        out = []
        for w, b in self.layers:
            out += [w, b]
        return out + [self.time_embed]

    def _forward_var(self, states: np.ndarray, t_idx: np.ndarray) -> Var:
        B, D = states.shape
        S = self.proc.n_categories
        enc = one_hot(states, S)
        emb = ad.gather(self.time_embed,
                        (np.asarray(t_idx)[:, None], np.arange(D)[None, :]))
        h = ad.concat([enc, emb], axis=1)
        for i, (w, b) in enumerate(self.layers):
            h = ad.add(ad.matmul(h, w), b)
            if i < len(self.layers) - 1:
                h = ad.relu(h)
        return ad.log_softmax(ad.reshape(h, (B, D, S)), axis=2)

    def log_transition_probs_multi(self, queries) -> list[Var]:
        return [self._forward_var(s, t) for s, t in queries]

    def log_transition_probs_numpy(self, states: np.ndarray, t_idx,
                                   use_ema: bool = True) -> np.ndarray:
        B, D = states.shape
        S = self.proc.n_categories
        values = self.ema.shadow if use_ema else [p.value for p in self.params()]
        emb = values[-1]
        h = np.concatenate([one_hot(states, S),
                            emb[np.asarray(t_idx)[:, None], np.arange(D)[None, :]]],
                           axis=1)
        for i in range(len(self.layers)):
            h = h @ values[2 * i] + values[2 * i + 1]
            if i < len(self.layers) - 1:
                np.maximum(h, 0.0, out=h)
        return np.asarray(log_normalize(h.reshape(B, D, S), axis=2))

    def state_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for i, p in enumerate(self.params()):
            out[f"{prefix}param{i}"] = p.value
            out[f"{prefix}ema{i}"] = self.ema.shadow[i]
        return out

    def load_state_arrays(self, prefix: str, arrays: dict[str, np.ndarray]) -> None:
        for i, p in enumerate(self.params()):
            p.value = arrays[f"{prefix}param{i}"].copy()
            self.ema.shadow[i] = arrays[f"{prefix}ema{i}"].copy()


class TabularTransitionModel:
    """Dense per-(time, joint-state) logits; exact capacity at tiny scale."""

    def __init__(self, proc: ReferenceProcess, n_dims: int,
                 direction: str = "forward", ema_decay: float = 0.999):
        self.proc = proc
        self.n_dims = n_dims
        self.direction = direction
        S = proc.n_categories
        M = S**n_dims
        self.logits = Var(np.zeros((proc.n_steps + 2, M, n_dims, S)),
                          requires_grad=True, name="table")
        self.ema = Ema(self.params(), decay=ema_decay)
        self._radix = S ** np.arange(n_dims - 1, -1, -1)

    def params(self) -> list[Var]:
        return [self.logits]

    def _joint_index(self, states: np.ndarray) -> np.ndarray:
        return states @ self._radix

    def log_transition_probs_multi(self, queries) -> list[Var]:
        S = self.proc.n_categories
        D = self.n_dims
        outs = []
        for states, t_idx in queries:
            B = states.shape[0]
            idx = (np.asarray(t_idx).reshape(B, 1, 1),
                   self._joint_index(states).reshape(B, 1, 1),
                   np.arange(D).reshape(1, D, 1),
                   np.arange(S).reshape(1, 1, S))
            outs.append(ad.log_softmax(ad.gather(self.logits, idx), axis=2))
        return outs

    def log_transition_probs_numpy(self, states: np.ndarray, t_idx,
                                   use_ema: bool = True) -> np.ndarray:
        table = self.ema.shadow[0] if use_ema else self.logits.value
        rows = table[np.asarray(t_idx), self._joint_index(states)]
        return np.asarray(log_normalize(rows, axis=2))


# -- Markovian-projection losses --------------------------------------------

def bridge_posterior_probs(proc: ReferenceProcess, x_prev: np.ndarray,
                           x1: np.ndarray, n) -> np.ndarray:
    """Per-dimension bridge posterior targets, (B, D, S); n may vary by row."""
    n_arr = np.broadcast_to(np.asarray(n), x_prev.shape[:1])
    logits = np.empty(x_prev.shape + (proc.n_categories,))
    for nv in np.unique(n_arr):
        rows = n_arr == nv
        logits[rows] = bridge_step_logits(proc, int(nv), x_prev[rows], x1[rows])
    return np.exp(log_normalize(logits, axis=2))


def _kl_term(log_m: Var, post: np.ndarray) -> Var:
    """mean over batch of sum_d KL(post_d || m_d), as a Var.

    The model may put exactly zero mass (log -inf) where the posterior does
    too; the weighted product defines those contributions as zero.
    """
    plogp = np.where(post > 0.0, post * np.log(np.where(post > 0, post, 1.0)), 0.0)
    const = plogp.sum(axis=(1, 2)).mean()
    cross = ad.mul(ad.vsum(ad.weighted(log_m, post), axis=2).sum(axis=1).mean(), -1.0)
    return ad.add(cross, const)


def _mse_term(log_m: Var, post: np.ndarray) -> Var:
    """mean over batch of sum_{d,s} (m_d[s] - post_d[s])^2."""
    diff = ad.add(ad.exp(log_m), -post)
    return ad.vsum(ad.mul(diff, diff), axis=2).sum(axis=1).mean()


def _onehot_targets(x1: np.ndarray, S: int) -> np.ndarray:
    B, D = x1.shape
    out = np.zeros((B, D, S))
    out[np.arange(B)[:, None], np.arange(D)[None, :], x1] = 1.0
    return out


def markov_projection_loss(model, proc: ReferenceProcess, x0: np.ndarray,
                           x_in: np.ndarray, x1: np.ndarray,
                           variant: str = "kl") -> Var:
    """Full projection objective on given reciprocal paths: per interior
    step a per-dimension divergence between the bridge posterior and the
    model transition, plus the terminal log-likelihood term."""
    if variant not in ("kl", "mse"):
        raise ValueError(f"unknown loss variant {variant!r}")
    B = x0.shape[0]
    if B == 0:
        raise ValueError("empty batch")
    N = proc.n_interior
    path_prev = [x0 if n == 1 else x_in[:, n - 2] for n in range(1, N + 1)]
    last = x_in[:, N - 1] if N >= 1 else x0
    queries = [(p, np.full(B, n)) for n, p in enumerate(path_prev, start=1)]
    queries.append((last, np.full(B, proc.n_steps)))
    outs = model.log_transition_probs_multi(queries)
    total = None
    for n, (prev, log_m) in enumerate(zip(path_prev, outs[:-1]), start=1):
        post = bridge_posterior_probs(proc, prev, x1, n)
        term = _kl_term(log_m, post) if variant == "kl" else _mse_term(log_m, post)
        total = term if total is None else ad.add(total, term)
    log_m_last = outs[-1]
    if variant == "kl":
        B_, D = x1.shape
        picked = ad.gather(log_m_last, (np.arange(B_)[:, None],
                                        np.arange(D)[None, :], x1))
        term = ad.mul(picked.sum(axis=1).mean(), -1.0)
    else:
        term = _mse_term(log_m_last, _onehot_targets(x1, proc.n_categories))
    return term if total is None else ad.add(total, term)


def sampled_projection_loss(model, proc: ReferenceProcess, x0: np.ndarray,
                            x1: np.ndarray, rng: np.random.Generator,
                            variant: str = "kl") -> Var:
    """Single-slot estimator of the projection objective: one uniformly
    drawn interior slot per pair (scaled by N for unbiasedness) plus the
    terminal term."""
    if variant not in ("kl", "mse"):
        raise ValueError(f"unknown loss variant {variant!r}")
    B = x0.shape[0]
    if B == 0:
        raise ValueError("empty batch")
    N = proc.n_interior
    queries = []
    interior = None
    if N >= 1:
        slots = rng.integers(1, N + 1, size=B)
        x_prev = sample_bridge_marginal(rng, proc, slots - 1, x0, x1)
        queries.append((x_prev, slots))
    x_last = (sample_bridge_marginal(rng, proc, N, x0, x1) if N >= 1 else x0)
    queries.append((x_last, np.full(B, proc.n_steps)))
    outs = model.log_transition_probs_multi(queries)
    total = None
    if N >= 1:
        post = bridge_posterior_probs(proc, queries[0][0], x1, queries[0][1])
        term = _kl_term(outs[0], post) if variant == "kl" else _mse_term(outs[0], post)
        total = ad.mul(term, float(N))
    log_m_last = outs[-1]
    if variant == "kl":
        D = x1.shape[1]
        picked = ad.gather(log_m_last, (np.arange(B)[:, None],
                                        np.arange(D)[None, :], x1))
        term = ad.mul(picked.sum(axis=1).mean(), -1.0)
    else:
        term = _mse_term(log_m_last, _onehot_targets(x1, proc.n_categories))
    return term if total is None else ad.add(total, term)


# -- chain sampling ----------------------------------------------------------

def chain_sample(rng: np.random.Generator, model, start: np.ndarray,
                 use_ema: bool = True, chunk: int = 8192) -> np.ndarray:
    """Ancestral sampling through all N+1 transitions (no terminal argmax).

    `start` is x0 for forward models and x1 for backward models; the
    returned batch is the opposite endpoint.
    """
    proc = model.proc
    start = np.atleast_2d(np.asarray(start))
    out = np.empty_like(start)
    for lo in range(0, start.shape[0], chunk):
        cur = start[lo:lo + chunk]
        for n in range(1, proc.n_steps + 1):
            logp = model.log_transition_probs_numpy(
                cur, np.full(cur.shape[0], n), use_ema=use_ema)
            cur = categorical_from_logits(rng, logp)
        out[lo:lo + chunk] = cur
    return out


# -- trainers ----------------------------------------------------------------

@dataclass
class DImfState:
    forward: MLPTransitionModel
    backward: MLPTransitionModel
    iterations_done: int = 0
    gradient_updates: int = 0
    history: list = dc_field(default_factory=list)
    config: dict = dc_field(default_factory=dict)


def _independent_cache(data: PairSampler, size: int) -> tuple[np.ndarray, np.ndarray]:
    return data.x0_batch(size), data.x1_batch(size)


def _train_phase(model, proc, cache, batch_size, steps, lr, variant, rng,
                 mirrored, history, tag, log_every=200):
    opt = AdamW(model.params(), lr=lr)
    X0, X1 = cache
    for step in range(steps):
        rows = rng.integers(0, X0.shape[0], size=batch_size)
        a, b = X0[rows], X1[rows]
        if mirrored:
            a, b = b, a
        ad.zero_grads(model.params())
        try:
            loss = sampled_projection_loss(model, proc, a, b, rng, variant)
            ad.backward(loss, model.params())
            opt.step()
        except (ad.NonFiniteError, FloatingPointError) as e:
            raise DivergenceError(f"{tag} diverged at step {step}: {e}") from e
        model.ema.update()
        if step % log_every == 0 or step == steps - 1:
            history.append((tag, step, float(loss.value)))
    return steps


def csbm_train(proc: ReferenceProcess, data: PairSampler, seed: int,
               outer_iters: int = 5, first_steps: int = 120000,
               later_steps: int = 40000, lr: float = 1e-4,
               batch_size: int = 128, loss_variant: str = "kl",
               ema_decay: float = 0.999, cache_size: int = 16384,
               n_dims: int | None = None) -> DImfState:
    """Bidirectional discrete-time IMF: five outer projection fits starting
    from the independent coupling, alternating forward/backward, the later
    phases fitting against chains of the opposite direction's EMA model."""
    D = n_dims if n_dims is not None else data.pair.n_dims
    base = RngStream(seed, key=(201,))
    fwd = MLPTransitionModel(proc, D, base.child(0), "forward", ema_decay=ema_decay)
    bwd = MLPTransitionModel(proc, D, base.child(1), "backward", ema_decay=ema_decay)
    state = DImfState(fwd, bwd)
    state.config = {"outer_iters": outer_iters, "first_steps": first_steps,
                    "later_steps": later_steps, "lr": lr, "batch_size": batch_size,
                    "loss": loss_variant, "ema_decay": ema_decay,
                    "cache_size": cache_size, "seed": seed}
    rng = base.child(2).generator()
    chain_rng = base.child(3).generator()
    for it in range(outer_iters):
        direction = "forward" if it % 2 == 0 else "backward"
        model = fwd if direction == "forward" else bwd
        if it == 0:
            cache = _independent_cache(data, cache_size)
        elif direction == "backward":
            x0 = data.x0_batch(cache_size)
            cache = (x0, chain_sample(chain_rng, fwd, x0))
        else:
            x1 = data.x1_batch(cache_size)
            cache = (chain_sample(chain_rng, bwd, x1), x1)
        steps = first_steps if it == 0 else later_steps
        done = _train_phase(model, proc, cache, batch_size, steps, lr,
                            loss_variant, rng, direction == "backward",
                            state.history, f"iter{it}-{direction}")
        state.gradient_updates += done
        state.iterations_done += 1
    return state


def alpha_csbm_train(proc: ReferenceProcess, data: PairSampler, seed: int,
                     alpha: float = 0.25, outer_iters: int = 5,
                     first_steps: int = 120000, later_steps: int = 40000,
                     lr: float = 1e-3, batch_size: int = 128,
                     loss_variant: str = "kl", ema_decay: float = 0.999,
                     cache_size: int = 16384, refresh_every: int = 1000,
                     n_dims: int | None = None) -> DImfState:
    """Joint online variant: both directions update every step against the
    other direction's sampled reciprocal projection (stop-gradient); buffers
    mix toward fresh chain samples at rate alpha. Runs half of CSBM's step
    count at half batch per model."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must be in (0, 1]")
    D = n_dims if n_dims is not None else data.pair.n_dims
    base = RngStream(seed, key=(202,))
    fwd = MLPTransitionModel(proc, D, base.child(0), "forward", ema_decay=ema_decay)
    bwd = MLPTransitionModel(proc, D, base.child(1), "backward", ema_decay=ema_decay)
    state = DImfState(fwd, bwd)
    total_steps = (first_steps + (outer_iters - 1) * later_steps) // 2
    half_batch = max(1, batch_size // 2)
    state.config = {"alpha": alpha, "total_steps": total_steps,
                    "batch_size_per_model": half_batch, "lr": lr,
                    "loss": loss_variant, "ema_decay": ema_decay,
                    "cache_size": cache_size, "refresh_every": refresh_every,
                    "seed": seed}
    rng = base.child(2).generator()
    chain_rng = base.child(3).generator()
    from_fwd = _independent_cache(data, cache_size)   # targets for backward
    from_bwd = _independent_cache(data, cache_size)   # targets for forward
    params = fwd.params() + bwd.params()
    opt = AdamW(params, lr=lr)
    n_refresh = max(1, int(round(alpha * cache_size)))
    for step in range(total_steps):
        if step > 0 and step % refresh_every == 0:
            rows = rng.integers(0, cache_size, size=n_refresh)
            x0 = data.x0_batch(n_refresh)
            from_fwd[0][rows] = x0
            from_fwd[1][rows] = chain_sample(chain_rng, fwd, x0)
            x1 = data.x1_batch(n_refresh)
            from_bwd[1][rows] = x1
            from_bwd[0][rows] = chain_sample(chain_rng, bwd, x1)
        ad.zero_grads(params)
        rf = rng.integers(0, cache_size, size=half_batch)
        rb = rng.integers(0, cache_size, size=half_batch)
        try:
            loss_f = sampled_projection_loss(
                fwd, proc, from_bwd[0][rf], from_bwd[1][rf], rng, loss_variant)
            loss_b = sampled_projection_loss(
                bwd, proc, from_fwd[1][rb], from_fwd[0][rb], rng, loss_variant)
            loss = ad.mul(ad.add(loss_f, loss_b), 0.5)
            ad.backward(loss, params)
            opt.step()
        except (ad.NonFiniteError, FloatingPointError) as e:
            raise DivergenceError(f"alpha-csbm diverged at step {step}: {e}") from e
        fwd.ema.update()
        bwd.ema.update()
        if step % 200 == 0 or step == total_steps - 1:
            state.history.append(("joint", step, float(loss.value)))
        state.gradient_updates += 1
    state.iterations_done = outer_iters
    return state
