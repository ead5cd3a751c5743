"""Distribution-fidelity scores between real and generated sample batches.

Shape: one minus the total-variation distance between per-dimension
empirical marginals, averaged over dimensions. Trend: same on pairwise
2-D joint histograms, averaged over all unordered dimension pairs.
Conditional variants fix source points and compare conditional laws,
averaging the per-x0 empirical histograms across repetitions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .benchmark import BenchmarkPair
from .rng import RngStream


def _marginal_hist(batch: np.ndarray, n_categories: int) -> np.ndarray:
    """(B, D) -> (D, S) empirical marginals, normalized by the batch size."""
    if batch.shape[0] == 0:
        raise ValueError("empty batch")
    B, D = batch.shape
    out = np.empty((D, n_categories))
    for d in range(D):
        out[d] = np.bincount(batch[:, d], minlength=n_categories)
    return out / B


def _pair_hist(batch: np.ndarray, di: int, dj: int, n_categories: int) -> np.ndarray:
    flat = batch[:, di] * n_categories + batch[:, dj]
    h = np.bincount(flat, minlength=n_categories * n_categories)
    return h / batch.shape[0]


def dimension_pairs(n_dims: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(n_dims) for j in range(i + 1, n_dims)]


def shape_score(real: np.ndarray, pred: np.ndarray,
                n_categories: int) -> tuple[np.ndarray, float]:
    """Per-dimension scores and their mean."""
    if real.shape[1] != pred.shape[1]:
        raise ValueError("dimension mismatch")
    hr = _marginal_hist(real, n_categories)
    hp = _marginal_hist(pred, n_categories)
    per_dim = 1.0 - 0.5 * np.abs(hr - hp).sum(axis=1)
    return per_dim, float(per_dim.mean())


def trend_score(real: np.ndarray, pred: np.ndarray,
                n_categories: int) -> tuple[np.ndarray, float]:
    """Per-pair scores (in dimension_pairs order) and their mean."""
    D = real.shape[1]
    if D < 2:
        raise ValueError("trend score needs at least two dimensions")
    if real.shape[0] == 0 or pred.shape[0] == 0:
        raise ValueError("empty batch")
    scores = []
    for di, dj in dimension_pairs(D):
        hr = _pair_hist(real, di, dj, n_categories)
        hp = _pair_hist(pred, di, dj, n_categories)
        scores.append(1.0 - 0.5 * np.abs(hr - hp).sum())
    scores = np.array(scores)
    return scores, float(scores.mean())


def conditional_scores(pair: BenchmarkPair, sampler, n_x0: int = 156,
                       n_per: int = 1000, stream: RngStream = RngStream(0),
                       ) -> dict:
    """Fix n_x0 source draws; for each, compare n_per ground-truth draws
    with n_per draws from `sampler(x0, count, rng)`, averaging the per-x0
    empirical histograms before scoring."""
    D, S = pair.n_dims, pair.n_categories
    x0s = pair.sample_source(stream.child(0).generator(), n_x0)
    pairs = dimension_pairs(D)
    acc_r = np.zeros((D, S))
    acc_p = np.zeros((D, S))
    acc_jr = np.zeros((len(pairs), S * S))
    acc_jp = np.zeros((len(pairs), S * S))
    for i in range(n_x0):
        x0 = x0s[i]
        gt = pair.sample_target(stream.child(1, i).generator(),
                                np.tile(x0, (n_per, 1)))
        pr = np.asarray(sampler(x0, n_per, stream.child(2, i).generator()))
        if pr.shape != (n_per, D):
            raise ValueError(f"sampler returned shape {pr.shape} for x0 #{i}")
        acc_r += _marginal_hist(gt, S)
        acc_p += _marginal_hist(pr, S)
        for pi, (di, dj) in enumerate(pairs):
            acc_jr[pi] += _pair_hist(gt, di, dj, S)
            acc_jp[pi] += _pair_hist(pr, di, dj, S)
    acc_r /= n_x0
    acc_p /= n_x0
    acc_jr /= n_x0
    acc_jp /= n_x0
    ssm_d = 1.0 - 0.5 * np.abs(acc_r - acc_p).sum(axis=1)
    out = {"cond_ssm_per_dim": ssm_d.tolist(), "cond_ssm": float(ssm_d.mean()),
           "n_x0": n_x0, "n_per": n_per}
    if pairs:
        tsm = 1.0 - 0.5 * np.abs(acc_jr - acc_jp).sum(axis=1)
        out["cond_tsm_per_pair"] = tsm.tolist()
        out["cond_tsm"] = float(tsm.mean())
    else:
        out["cond_tsm_per_pair"] = []
        out["cond_tsm"] = None
    return out


@dataclass
class MetricsReport:
    ssm_per_dim: list
    ssm: float
    tsm_per_pair: list
    tsm: float | None
    cond_ssm: float | None = None
    cond_tsm: float | None = None
    cond_ssm_per_dim: list = field(default_factory=list)
    cond_tsm_per_pair: list = field(default_factory=list)
    counts: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"ssm_per_dim": self.ssm_per_dim, "ssm": self.ssm,
                "tsm_per_pair": self.tsm_per_pair, "tsm": self.tsm,
                "cond_ssm": self.cond_ssm, "cond_tsm": self.cond_tsm,
                "cond_ssm_per_dim": self.cond_ssm_per_dim,
                "cond_tsm_per_pair": self.cond_tsm_per_pair,
                "counts": self.counts, "config": self.config}

    def csv_row(self) -> dict:
        cfg = self.config
        return {"method": cfg.get("method", ""), "loss": cfg.get("loss", "-"),
                "steps": cfg.get("solver_steps", ""),
                "dimensions": cfg.get("dimensions", ""),
                "kind": cfg.get("kind", ""), "gamma": cfg.get("gamma", ""),
                "ssm": self.ssm, "tsm": "" if self.tsm is None else self.tsm,
                "cond_ssm": "" if self.cond_ssm is None else self.cond_ssm,
                "cond_tsm": "" if self.cond_tsm is None else self.cond_tsm}


CSV_COLUMNS = ["method", "loss", "steps", "dimensions", "kind", "gamma",
               "ssm", "tsm", "cond_ssm", "cond_tsm"]
