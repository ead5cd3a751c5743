"""Command-line front end: generate | train | eval | verify | report.

Exit codes: 0 success, 1 usage, 2 validation/verification failure,
3 runtime divergence. The default output directory comes from the
DSBBENCH_OUTDIR environment variable when not set in the config.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import benchmark, checkpoint, io, light, matching, metrics, oracle
from .config import ConfigError, load_config
from .cpfield import conditional_log_prob
from .numerics import logsumexp
from .refproc import ReferenceProcess, matrix_power, uniform_power_closed_form
from .rng import RngStream

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_DIVERGENCE = 3


class HashMismatchError(ValueError):
    """Artifacts refer to different benchmark pairs."""


class VerificationFailure(RuntimeError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _outpath(cfg: dict, suffix: str) -> Path:
    outdir = Path(cfg["run"]["outdir"])
    outdir.mkdir(parents=True, exist_ok=True)
    return outdir / f"{cfg['run']['name']}{suffix}"


def count_modes(samples: np.ndarray, n_categories: int) -> list[int]:
    """Peak count of the smoothed per-dimension histograms."""
    from scipy.signal import find_peaks
    counts = []
    for d in range(samples.shape[1]):
        h = np.bincount(samples[:, d], minlength=n_categories).astype(float)
        h /= max(1, samples.shape[0])
        smooth = np.convolve(h, np.ones(3) / 3.0, mode="same")
        peaks, _ = find_peaks(smooth, prominence=0.15 * smooth.max())
        counts.append(int(len(peaks)))
    return counts


# -- generate ----------------------------------------------------------------

def cmd_generate(cfg: dict) -> int:
    run, space, ref, bench = cfg["run"], cfg["space"], cfg["reference"], cfg["benchmark"]
    pair = benchmark.generate_pair(
        n_dims=space["dimensions"], kind=ref["kind"], gamma=ref["gamma"],
        seed=run["seed"], n_categories=space["categories"], n_steps=ref["steps"],
        n_components=bench["components"], source_kind=bench["source"],
        source_mean=(None if bench["source_mean"] is None
                     else np.full(space["dimensions"], bench["source_mean"])),
        source_std=(None if bench["source_std"] is None
                    else np.full(space["dimensions"], bench["source_std"])))
    pair_path = _outpath(cfg, ".dsbpair")
    pair_hash = benchmark.save_pair(pair, pair_path)
    rows = benchmark.generate_test_set(pair, bench["test_count"],
                                       RngStream(run["seed"], key=(7,)))
    set_path = _outpath(cfg, ".dsbset")
    benchmark.save_test_set(rows, set_path, pair_hash, run["seed"],
                            extra={"config": cfg})
    reloaded, reloaded_hash = benchmark.load_pair(pair_path)
    if reloaded_hash != pair_hash:
        raise VerificationFailure("pair file failed reload integrity check")
    benchmark.load_test_set(set_path)
    print(f"pair    {pair_path}  sha256 {pair_hash[:16]}")
    print(f"testset {set_path}  rows {rows.shape[0]}")
    if rows.shape[0]:
        modes = count_modes(rows[:, 1], space["categories"])
        ent = benchmark.target_marginal_entropy(pair, rows[:, 1])
        print(f"target modes per dimension: {modes}")
        print("target marginal entropy (nats): "
              + " ".join(f"{e:.3f}" for e in ent))
    return EXIT_OK


# -- train -------------------------------------------------------------------

def _solver_proc(pair: benchmark.BenchmarkPair, cfg: dict) -> ReferenceProcess:
    return pair.proc.coarsened(cfg["solver"]["steps"])


def cmd_train(cfg: dict, pair_path: str) -> int:
    run, sol = cfg["run"], cfg["solver"]
    pair, pair_hash = benchmark.load_pair(pair_path)
    data = benchmark.PairSampler(pair, RngStream(run["seed"], key=(11,)))
    name = sol["name"]
    print(f"training {name} on {pair_path} (seed {run['seed']})")
    if name == "dlightsb":
        model, history = light.train_dlightsb(
            pair.proc, data, run["seed"], n_components=sol["components"],
            lr=sol["lr"], steps=sol["train_steps"], batch_size=sol["batch_size"])
        model.config.update({"solver": name, "run_config": cfg})
        ckpt = _outpath(cfg, f"_{name}.dsbckpt")
        checkpoint.save_light(model, ckpt, pair_hash)
        rows = [("train", s, v) for s, v in history]
    elif name == "dlightsb-m":
        proc = _solver_proc(pair, cfg)
        model, history = light.train_dlightsb_m(
            proc, data, run["seed"], n_components=sol["components"],
            lr=sol["lr"], steps=sol["train_steps"], batch_size=sol["batch_size"],
            loss_variant=sol["loss"])
        model.config.update({"solver": name, "run_config": cfg})
        ckpt = _outpath(cfg, f"_{name}.dsbckpt")
        checkpoint.save_light(model, ckpt, pair_hash)
        rows = [("train", s, v) for s, v in history]
    elif name == "csbm":
        proc = _solver_proc(pair, cfg)
        state = matching.csbm_train(
            proc, data, run["seed"], outer_iters=sol["outer_iters"],
            first_steps=sol["first_steps"], later_steps=sol["later_steps"],
            lr=sol["lr"], batch_size=sol["batch_size"], loss_variant=sol["loss"],
            ema_decay=sol["ema_decay"], cache_size=sol["cache_size"])
        state.config["run_config"] = cfg
        ckpt = _outpath(cfg, f"_{name}.dsbckpt")
        checkpoint.save_matching(state, name, ckpt, pair_hash)
        rows = state.history
    elif name == "alpha-csbm":
        proc = _solver_proc(pair, cfg)
        state = matching.alpha_csbm_train(
            proc, data, run["seed"], alpha=sol["alpha"],
            outer_iters=sol["outer_iters"], first_steps=sol["first_steps"],
            later_steps=sol["later_steps"], lr=sol["lr"],
            batch_size=sol["batch_size"], loss_variant=sol["loss"],
            ema_decay=sol["ema_decay"], cache_size=sol["cache_size"],
            refresh_every=sol["refresh_every"])
        state.config["run_config"] = cfg
        ckpt = _outpath(cfg, f"_{name}.dsbckpt")
        checkpoint.save_matching(state, name, ckpt, pair_hash)
        rows = state.history
    else:  # unreachable: config validation rejects unknown solvers
        raise ConfigError(f"unknown solver {name!r}")
    log_path = _outpath(cfg, f"_{name}_loss.csv")
    with open(log_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["phase", "step", "loss"])
        w.writerows(rows)
    print(f"checkpoint {ckpt}")
    print(f"loss log   {log_path}")
    return EXIT_OK


# -- eval --------------------------------------------------------------------

def _solver_sampler(solver: str, model_or_state, chunk: int = 8192):
    """Returns (batch_sampler(x0_batch, rng), cond_sampler(x0, n, rng))."""
    if solver in ("dlightsb", "dlightsb-m"):
        model = model_or_state

        def batch(x0s, rng):
            return model.sample(rng, x0s)

        def cond(x0, n, rng):
            return model.sample(rng, np.tile(x0, (n, 1)))
    else:
        fwd = model_or_state.forward

        def batch(x0s, rng):
            return matching.chain_sample(rng, fwd, x0s, chunk=chunk)

        def cond(x0, n, rng):
            return matching.chain_sample(rng, fwd, np.tile(x0, (n, 1)), chunk=chunk)
    return batch, cond


def cmd_eval(cfg: dict, ckpt_path: str, pair_path: str, set_path: str) -> int:
    run, met = cfg["run"], cfg["metrics"]
    pair, pair_hash = benchmark.load_pair(pair_path)
    rows, set_header = benchmark.load_test_set(set_path)
    solver, model_or_state, ck_header = checkpoint.load(ckpt_path)
    if set_header["pair_hash"] != pair_hash:
        raise HashMismatchError(f"test set was built from pair "
                                f"{set_header['pair_hash'][:12]}, "
                                f"got {pair_hash[:12]}")
    if ck_header["pair_hash"] != pair_hash:
        raise HashMismatchError(f"checkpoint was trained on pair "
                                f"{ck_header['pair_hash'][:12]}, "
                                f"got {pair_hash[:12]}")
    S = pair.n_categories
    batch_sampler, cond_sampler = _solver_sampler(solver, model_or_state)
    stream = RngStream(run["seed"], key=(13,))
    x0s, x1_real = rows[:, 0], rows[:, 1]
    x1_pred = batch_sampler(x0s, stream.child(0).generator())
    ssm_d, ssm = metrics.shape_score(x1_real, x1_pred, S)
    if pair.n_dims >= 2:
        tsm_p, tsm = metrics.trend_score(x1_real, x1_pred, S)
        tsm_p = tsm_p.tolist()
    else:
        tsm_p, tsm = [], None
    cond = metrics.conditional_scores(pair, cond_sampler, met["n_x0"],
                                      met["n_per"], stream.child(1))
    meta = pair.metadata
    report = metrics.MetricsReport(
        ssm_per_dim=ssm_d.tolist(), ssm=ssm, tsm_per_pair=tsm_p, tsm=tsm,
        cond_ssm=cond["cond_ssm"], cond_tsm=cond["cond_tsm"],
        cond_ssm_per_dim=cond["cond_ssm_per_dim"],
        cond_tsm_per_pair=cond["cond_tsm_per_pair"],
        counts={"test_rows": int(rows.shape[0]), "n_x0": met["n_x0"],
                "n_per": met["n_per"]},
        config={"method": solver, "loss": ck_header.get("config", {}).get("loss", "-"),
                "solver_steps": ck_header.get("reference", {}).get("steps", ""),
                "dimensions": meta["dimensions"], "kind": meta["kind"],
                "gamma": meta["gamma"], "seed": run["seed"],
                "pair_hash": pair_hash, "run_config": cfg})
    base = _outpath(cfg, f"_{solver}_metrics")
    json_path = base.with_suffix(".json")
    json_path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    row_path = Path(str(base) + "_row.csv")
    with open(row_path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=metrics.CSV_COLUMNS + ["schema_version",
                                                                 "plotdata"])
        w.writeheader()
        row = report.csv_row()
        row["schema_version"] = io.SCHEMA_VERSION
        row["plotdata"] = str(base) + "_plotdata.json"
        w.writerow(row)
    plot_path = Path(str(base) + "_plotdata.json")
    plot = {"dims": [0, min(1, pair.n_dims - 1)], "categories": S,
            "pair_hash": pair_hash,
            "x0_hist": np.bincount(x0s[:, 0], minlength=S).tolist(),
            "real_hist2d": _hist2d(x1_real, S).tolist(),
            "pred_hist2d": _hist2d(x1_pred, S).tolist()}
    plot_path.write_text(json.dumps(plot))
    ctsm = cond["cond_tsm"]
    print(f"ssm {ssm:.4f}  tsm {'-' if tsm is None else format(tsm, '.4f')}  "
          f"cond_ssm {cond['cond_ssm']:.4f}  "
          f"cond_tsm {'-' if ctsm is None else format(ctsm, '.4f')}")
    print(f"metrics {json_path}")
    return EXIT_OK


def _hist2d(batch: np.ndarray, n_categories: int) -> np.ndarray:
    d1 = min(1, batch.shape[1] - 1)
    flat = batch[:, 0] * n_categories + batch[:, d1]
    return np.bincount(flat, minlength=n_categories**2).reshape(n_categories,
                                                                n_categories)


# -- verify ------------------------------------------------------------------

def _verify_checks(cfg: dict, pair_path: str | None):
    """Yields (name, residual, tolerance, passed)."""
    v = cfg["verify"]
    # closed-form uniform kernel vs exponentiation-by-squaring
    worst = 0.0
    for gamma in (0.005, 0.01):
        q = np.asarray(uniform_power_closed_form(50, gamma, 1))
        for n in range(0, 129):
            a = uniform_power_closed_form(50, gamma, n)
            b = matrix_power(q, n)
            worst = max(worst, float(np.abs(a - b).max()))
    yield ("uniform closed-form kernel vs matrix power", worst, 1e-12)

    rng = np.random.default_rng(v["cases"])
    worst_tv = 0.0
    for case in range(v["cases"]):
        D = int(rng.integers(1, 3))
        S = int(rng.integers(3, 9)) if D == 1 else int(rng.integers(3, 6))
        kind = ["uniform", "gaussian"][case % 2]
        # draw stochasticity where the kernel stays well-conditioned, so the
        # scaling iteration contracts fast enough for the 1e-10 residual
        gamma = float(rng.uniform(0.2, 0.8)) if kind == "uniform" \
            else float(rng.uniform(0.6, 1.5))
        steps = int(rng.integers(1, 9))
        K = int(rng.integers(1, 4))
        p = benchmark.generate_pair(D, kind, gamma, seed=int(rng.integers(1 << 30)),
                                    n_categories=S, n_steps=steps, n_components=K)
        logp0 = p.source.log_pmf()
        C = oracle.construction_coupling(p.field, p.proc, logp0)
        cost = -oracle.log_ref_conditional(p.proc, D)
        res = oracle.sinkhorn(C.sum(axis=1), C.sum(axis=0), cost, tol=1e-10)
        worst_tv = max(worst_tv, 0.5 * float(np.abs(res.coupling - C).sum()))
    yield ("benchmark construction vs Sinkhorn coupling", worst_tv, 1e-6)

    pair = benchmark.generate_pair(v["dimensions"], "uniform", 0.2, seed=12,
                                   n_categories=v["categories"], n_steps=v["steps"],
                                   n_components=v["components"])
    states = oracle.enumerate_states(pair.n_categories, pair.n_dims)
    worst = 0.0
    for x0 in states[:: max(1, len(states) // 16)]:
        brute = oracle.enumerate_conditional(pair.field, pair.proc, x0)
        fact = np.exp(conditional_log_prob(pair.field, pair.proc,
                                           np.tile(x0, (len(states), 1)), states))
        worst = max(worst, float(np.abs(brute - fact).max()))
        zb = oracle.enumerate_log_normalizer(pair.field, pair.proc, x0)
        from .cpfield import log_normalizer
        worst = max(worst, abs(zb - log_normalizer(pair.field, pair.proc, x0)))
    yield ("factorized conditional vs brute enumeration", worst, 1e-10)

    utab = light.build_u_tables(pair.field, pair.proc)
    worst = 0.0
    for x0 in states[:: max(1, len(states) // 8)]:
        chained = oracle.enumerate_path_marginal(
            pair.proc,
            lambda n: light.sb_joint_transition_matrix(pair.field, utab,
                                                       pair.proc, n, states),
            x0, pair.n_dims)
        direct = np.exp(conditional_log_prob(pair.field, pair.proc,
                                             np.tile(x0, (len(states), 1)), states))
        worst = max(worst, float(np.abs(chained - direct).max()))
    yield ("transition chaining vs endpoint conditional", worst, 1e-8)

    if pair_path is not None:
        loaded, digest = benchmark.load_pair(pair_path)
        probe = loaded.sample_source(RngStream(0).generator(), 4)
        a = conditional_log_prob(loaded.field, loaded.proc, probe, probe)
        b = conditional_log_prob(loaded.field, loaded.proc, probe, probe)
        yield (f"pair file integrity ({Path(pair_path).name})",
               float(np.abs(np.asarray(a) - np.asarray(b)).max()), 0.0)


def cmd_verify(cfg: dict, pair_path: str | None) -> int:
    failures = 0
    for name, residual, tol in _verify_checks(cfg, pair_path):
        ok = residual <= tol
        failures += 0 if ok else 1
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: residual {residual:.3e} "
              f"(tolerance {tol:.0e})")
    if failures:
        print(f"{failures} verification check(s) failed")
        return EXIT_VALIDATION
    print("all verification checks passed")
    return EXIT_OK


# -- report ------------------------------------------------------------------

def cmd_report(row_paths: list[str], out_path: str) -> int:
    rows = []
    version = None
    for path in row_paths:
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                if version is None:
                    version = row.get("schema_version")
                elif row.get("schema_version") != version:
                    raise io.CorruptFileError(
                        f"{path}: schema version {row.get('schema_version')} "
                        f"!= {version}")
                rows.append(row)
    if not rows:
        raise ConfigError("no result rows found")
    score_cols = ["ssm", "tsm", "cond_ssm", "cond_tsm"]
    best = {c: max((float(r[c]) for r in rows if r.get(c) not in ("", None)),
                   default=None) for c in score_cols}
    axes = ["method", "loss", "steps", "dimensions", "kind", "gamma"]
    rows.sort(key=lambda r: tuple(str(r.get(a, "")) for a in axes))
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    plot_index = []
    with open(out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=axes + score_cols + ["best"])
        w.writeheader()
        for r in rows:
            marks = [c for c in score_cols
                     if r.get(c) not in ("", None) and best[c] is not None
                     and float(r[c]) >= best[c] - 1e-12]
            w.writerow({**{a: r.get(a, "") for a in axes},
                        **{c: r.get(c, "") for c in score_cols},
                        "best": "+".join(marks)})
            if r.get("plotdata"):
                plot_index.append({"method": r["method"], "path": r["plotdata"]})
    index_path = out.with_suffix(".plotdata.json")
    index_path.write_text(json.dumps(plot_index, indent=2))
    print(f"report {out} ({len(rows)} rows); plot-data index {index_path}")
    return EXIT_OK


# -- entry point --------------------------------------------------------------

def build_parser() -> _Parser:
    p = _Parser(prog="dsbbench",
                description="Discrete bridge benchmark toolkit")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (("generate", "write a benchmark pair and test set"),
                        ("train", "train a solver on a pair"),
                        ("eval", "score a checkpoint against a pair/test set"),
                        ("verify", "run the brute-force oracle suites"),
                        ("report", "aggregate result rows into a table")):
        sp = sub.add_parser(name, help=help_)
        if name != "report":
            sp.add_argument("-c", "--config", default=None,
                            help="INI config file (defaults used if omitted)")
        if name == "train":
            sp.add_argument("--pair", required=True, help="pair file to train on")
        if name == "eval":
            sp.add_argument("--checkpoint", required=True)
            sp.add_argument("--pair", required=True)
            sp.add_argument("--testset", required=True)
        if name == "verify":
            sp.add_argument("--pair", default=None,
                            help="optionally check a pair file's integrity")
        if name == "report":
            sp.add_argument("rows", nargs="+", help="result row CSV files")
            sp.add_argument("-o", "--out", default="report.csv")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            return cmd_report(args.rows, args.out)
        cfg = load_config(args.config)
        if args.command == "generate":
            return cmd_generate(cfg)
        if args.command == "train":
            return cmd_train(cfg, args.pair)
        if args.command == "eval":
            return cmd_eval(cfg, args.checkpoint, args.pair, args.testset)
        if args.command == "verify":
            return cmd_verify(cfg, args.pair)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, io.CorruptFileError, HashMismatchError,
            VerificationFailure, oracle.SinkhornError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (light.DivergenceError, matching.DivergenceError) as e:
        print(f"divergence: {e}", file=sys.stderr)
        return EXIT_DIVERGENCE


if __name__ == "__main__":
    sys.exit(main())
