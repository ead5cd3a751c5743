"""Benchmark pair construction with analytically known bridge solutions.

A pair bundles a reference process, a source distribution p0 and a CP
potential; together they fix the target p1 and the ground-truth coupling
p0(x0) q(x1|x0), which any solver can then be scored against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import io
from .cpfield import CPScalarField, sample_conditional
from .numerics import discretized_gaussian_logpmf, logsumexp
from .refproc import ReferenceProcess
from .rng import RngStream, categorical_from_logits

PAIR_CORE_STD_FRACTION = 1.0 / 18.0   # pair-construction core sigma, category units
SOLVER_INIT_STD_FRACTION = 1.0 / 12.0  # width used when solvers init from samples
CORE_STD_FRACTION = SOLVER_INIT_STD_FRACTION
MEAN_LO, MEAN_HI = 0.15, 0.85    # component means stay inside [0.15, 0.85]*(S-1)
MEAN_JITTER = 0.06               # uniform jitter inside each mean stratum


@dataclass
class SourceSpec:
    kind: str                       # "uniform" | "gaussian"
    n_dims: int
    n_categories: int
    mean: np.ndarray | None = None  # (D,), gaussian only
    std: np.ndarray | None = None   # (D,)

    def __post_init__(self):
        if self.kind not in ("uniform", "gaussian"):
            raise ValueError(f"unknown source kind {self.kind!r}")
        if self.kind == "gaussian":
            top = self.n_categories - 1
            if self.mean is None:
                self.mean = np.full(self.n_dims, top / 2.0)
            if self.std is None:
                self.std = np.full(self.n_dims, top / 8.0)
            self.mean = np.asarray(self.mean, dtype=np.float64)
            self.std = np.asarray(self.std, dtype=np.float64)

    def log_pmf(self) -> np.ndarray:
        """Per-dimension log probabilities, (D, S)."""
        D, S = self.n_dims, self.n_categories
        if self.kind == "uniform":
            return np.full((D, S), -np.log(S))
        return np.stack([discretized_gaussian_logpmf(self.mean[d], self.std[d], S)
                         for d in range(D)])

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        logits = np.broadcast_to(self.log_pmf()[None], (count, self.n_dims,
                                                        self.n_categories))
        return categorical_from_logits(rng, logits)

    def spec(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "gaussian":
            d["mean"] = self.mean.tolist()
            d["std"] = self.std.tolist()
        return d

    @classmethod
    def from_spec(cls, d: dict, n_dims: int, n_categories: int) -> "SourceSpec":
        return cls(d["kind"], n_dims, n_categories,
                   np.asarray(d["mean"]) if "mean" in d else None,
                   np.asarray(d["std"]) if "std" in d else None)


@dataclass
class BenchmarkPair:
    proc: ReferenceProcess
    source: SourceSpec
    field: CPScalarField
    metadata: dict

    @property
    def n_categories(self) -> int:
        return self.proc.n_categories

    @property
    def n_dims(self) -> int:
        return self.field.n_dims

    def sample_source(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return self.source.sample(rng, count)

    def sample_target(self, rng: np.random.Generator, x0: np.ndarray) -> np.ndarray:
        return sample_conditional(rng, self.field, self.proc, x0)


def generate_pair(n_dims: int, kind: str, gamma: float, seed: int,
                  n_categories: int = 50, n_steps: int = 128,
                  n_components: int = 4, source_kind: str = "uniform",
                  source_mean=None, source_std=None) -> BenchmarkPair:
    """Deterministic pair from a seed: uniform mixture weights, cores set to
    discretized-Gaussian log densities with fixed width (S-1)/18 and means
    stratified across [0.15, 0.85]*(S-1): per dimension one mean per
    stratum, component-to-stratum assignment permuted, small jitter inside
    the stratum. Stratification keeps the target's modes pairwise separated
    for every seed."""
    proc = ReferenceProcess(kind, gamma, n_categories, n_steps)
    S, D, K = n_categories, n_dims, n_components
    rng = RngStream(seed).child(0).generator()
    top = S - 1
    lo, width = MEAN_LO * top, (MEAN_HI - MEAN_LO) * top / K
    std = PAIR_CORE_STD_FRACTION * top
    log_cores = np.empty((K, D, S))
    means = np.empty((K, D))
    for d in range(D):
        perm = rng.permutation(K)
        jitter = rng.uniform(-MEAN_JITTER, MEAN_JITTER, size=K)
        means[:, d] = lo + (perm + 0.5 + jitter) * width
    for k in range(K):
        for d in range(D):
            log_cores[k, d] = discretized_gaussian_logpmf(means[k, d], std, S)
    field = CPScalarField(np.full(K, -np.log(K)), log_cores)
    source = SourceSpec(source_kind, D, S, source_mean, source_std)
    metadata = {"seed": seed, "kind": kind, "gamma": gamma, "categories": S,
                "dimensions": D, "steps": n_steps, "components": K,
                "core_std": std, "mean_range": [MEAN_LO * top, MEAN_HI * top]}
    return BenchmarkPair(proc, source, field, metadata)


def save_pair(pair: BenchmarkPair, path) -> str:
    header = {"role": "pair", "reference": pair.proc.spec(),
              "source": pair.source.spec(), "metadata": pair.metadata}
    return io.write_container(path, io.PAIR_MAGIC, header,
                              {"log_beta": pair.field.log_beta,
                               "log_cores": pair.field.log_cores})


def load_pair(path) -> tuple[BenchmarkPair, str]:
    header, arrays, digest = io.read_container(path, io.PAIR_MAGIC)
    if header.get("role") != "pair":
        raise io.CorruptFileError(f"{path}: role {header.get('role')!r} is not a pair")
    proc = ReferenceProcess.from_spec(header["reference"])
    field = CPScalarField(arrays["log_beta"], arrays["log_cores"])
    source = SourceSpec.from_spec(header["source"], field.n_dims, field.n_categories)
    return BenchmarkPair(proc, source, field, header["metadata"]), digest


def generate_test_set(pair: BenchmarkPair, count: int, stream: RngStream) -> np.ndarray:
    """Paired rows [(x0, x1)]: x0 iid from the source, x1 from the exact
    conditional. Returns (count, 2, D)."""
    if count < 0:
        raise ValueError("negative count")
    g0 = stream.child(0).generator()
    g1 = stream.child(1).generator()
    x0 = pair.sample_source(g0, count) if count else np.zeros((0, pair.n_dims), np.int64)
    x1 = (pair.sample_target(g1, x0) if count
          else np.zeros((0, pair.n_dims), np.int64))
    return np.stack([x0, x1], axis=1)


def save_test_set(rows: np.ndarray, path, pair_hash: str, seed: int,
                  extra: dict | None = None) -> str:
    header = {"role": "testset", "pair_hash": pair_hash, "seed": seed,
              "count": int(rows.shape[0])}
    if extra:
        header.update(extra)
    return io.write_container(path, io.SET_MAGIC, header,
                              {"rows": rows.astype(np.uint16)})


def load_test_set(path) -> tuple[np.ndarray, dict]:
    header, arrays, _ = io.read_container(path, io.SET_MAGIC)
    if header.get("role") != "testset":
        raise io.CorruptFileError(f"{path}: role {header.get('role')!r} is not a test set")
    rows = arrays["rows"].astype(np.int64)
    if rows.shape[0] != header["count"]:
        raise io.CorruptFileError(f"{path}: row count mismatch")
    return rows, header


def target_marginal_entropy(pair: BenchmarkPair, samples: np.ndarray) -> np.ndarray:
    """Empirical per-dimension entropy (nats) of an x1 sample batch."""
    S = pair.n_categories
    ent = np.empty(pair.n_dims)
    for d in range(pair.n_dims):
        p = np.bincount(samples[:, d], minlength=S) / samples.shape[0]
        nz = p[p > 0]
        ent[d] = -(nz * np.log(nz)).sum()
    return ent


class PairSampler:
    """Fresh unpaired training batches from a pair's generator.

    x0 and x1 streams are independent; x1 draws use their own source draws
    internally, so batches are never paired. The fixed test set is a
    different artifact and is never touched here.
    """

    def __init__(self, pair: BenchmarkPair, stream: RngStream):
        self.pair = pair
        self._g_x0 = stream.child(0).generator()
        self._g_src = stream.child(1).generator()
        self._g_tgt = stream.child(2).generator()

    def x0_batch(self, count: int) -> np.ndarray:
        return self.pair.sample_source(self._g_x0, count)

    def x1_batch(self, count: int) -> np.ndarray:
        hidden = self.pair.sample_source(self._g_src, count)
        return self.pair.sample_target(self._g_tgt, hidden)
