"""Deterministic random-stream contract shared by all modules.

A stream is (seed, key-path); identical pairs reproduce identical draw
sequences, distinct key-paths are statistically independent (SeedSequence
spawning). Children derive named substreams, so sample generation can be
sharded across workers without coordination.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RngStream:
    seed: int
    key: tuple[int, ...] = ()

    def child(self, *path: int) -> "RngStream":
        return RngStream(self.seed, self.key + tuple(int(p) for p in path))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.key)
        return np.random.Generator(np.random.PCG64(ss))


def categorical(rng: np.random.Generator, probs: np.ndarray) -> np.ndarray:
    """Vectorized categorical draw along the last axis of `probs`.

    probs: (..., S) rows summing to 1. Returns int64 array of shape (...).
    """
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape[:-1] + (1,))
    idx = (u > cdf).sum(axis=-1)
    return np.minimum(idx, probs.shape[-1] - 1)


def categorical_from_logits(rng: np.random.Generator, logits: np.ndarray) -> np.ndarray:
    """Categorical draw from unnormalized log-weights along the last axis."""
    m = np.max(logits, axis=-1, keepdims=True)
    if not np.all(np.isfinite(m)):
        raise ValueError("degenerate categorical: all log-weights are -inf")
    w = np.exp(logits - m)
    return categorical(rng, w / w.sum(axis=-1, keepdims=True))
