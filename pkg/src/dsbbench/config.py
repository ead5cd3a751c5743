"""Run configuration: a flat, sectioned INI file with strict validation.

Every key is typed and has a default; unknown sections or keys are
rejected before any compute. The fully resolved mapping (defaults filled
in) is echoed into every output artifact.
"""

from __future__ import annotations

import configparser
import os
from pathlib import Path

CONFIG_SCHEMA_VERSION = 1

ENV_OUTDIR = "DSBBENCH_OUTDIR"

SOLVERS = ("dlightsb", "dlightsb-m", "csbm", "alpha-csbm")

_MISSING = object()


def _bool(s: str) -> bool:
    if s.lower() in ("1", "true", "yes", "on"):
        return True
    if s.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


# section -> key -> (converter, default); default None means "derived later",
# _MISSING means required.
SCHEMA: dict = {
    "run": {
        "schema_version": (int, CONFIG_SCHEMA_VERSION),
        "seed": (int, 0),
        "name": (str, ""),
        "outdir": (str, ""),
        "jobs": (int, 1),
    },
    "space": {
        "categories": (int, 50),
        "dimensions": (int, 2),
    },
    "reference": {
        "kind": (str, "gaussian"),
        "gamma": (float, 0.02),
        "steps": (int, 128),
    },
    "benchmark": {
        "components": (int, 4),
        "source": (str, "uniform"),
        "source_mean": (float, None),
        "source_std": (float, None),
        "test_count": (int, 20000),
    },
    "solver": {
        "name": (str, "dlightsb"),
        "steps": (int, 16),
        "loss": (str, "kl"),
        "components": (int, 1000),
        "lr": (float, None),
        "batch_size": (int, None),
        "train_steps": (int, 100000),
        "first_steps": (int, 120000),
        "later_steps": (int, 40000),
        "outer_iters": (int, 5),
        "alpha": (float, 0.25),
        "ema_decay": (float, 0.999),
        "cache_size": (int, 16384),
        "refresh_every": (int, 1000),
    },
    "metrics": {
        "n_x0": (int, 156),
        "n_per": (int, 1000),
    },
    "verify": {
        "dimensions": (int, 1),
        "categories": (int, 8),
        "steps": (int, 4),
        "components": (int, 2),
        "cases": (int, 20),
    },
}

_SOLVER_LR = {"dlightsb": 1e-2, "dlightsb-m": 1e-2, "csbm": 1e-4,
              "alpha-csbm": 1e-3}
_SOLVER_BATCH = {"dlightsb": 512, "dlightsb-m": 512, "csbm": 128,
                 "alpha-csbm": 128}


class ConfigError(ValueError):
    pass


def load_config(path: str | None = None) -> dict:
    """Parse, validate and resolve a config file (all defaults if None)."""
    raw = configparser.ConfigParser()
    raw.optionxform = str
    if path is not None:
        if not Path(path).exists():
            raise ConfigError(f"config file not found: {path}")
        raw.read(path)
    cfg: dict = {}
    for section in raw.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, value in raw[section].items():
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            conv, _ = SCHEMA[section][key]
            try:
                cfg.setdefault(section, {})[key] = conv(value)
            except ValueError as e:
                raise ConfigError(f"[{section}] {key}: {e}") from None
    for section, keys in SCHEMA.items():
        for key, (_, default) in keys.items():
            cfg.setdefault(section, {}).setdefault(key, default)
    return _validate(cfg)


def _validate(cfg: dict) -> dict:
    if cfg["run"]["schema_version"] != CONFIG_SCHEMA_VERSION:
        raise ConfigError(f"config schema version "
                          f"{cfg['run']['schema_version']} != {CONFIG_SCHEMA_VERSION}")
    if not cfg["run"]["outdir"]:
        cfg["run"]["outdir"] = os.environ.get(ENV_OUTDIR, ".")
    space, ref, sol = cfg["space"], cfg["reference"], cfg["solver"]
    if space["categories"] < 2:
        raise ConfigError("need at least 2 categories")
    if space["dimensions"] < 1:
        raise ConfigError("need at least 1 dimension")
    if ref["kind"] not in ("uniform", "gaussian"):
        raise ConfigError(f"unknown reference kind {ref['kind']!r}")
    if ref["kind"] == "uniform" and not 0.0 <= ref["gamma"] <= 1.0:
        raise ConfigError("uniform gamma must be in [0,1]")
    if ref["kind"] == "gaussian" and ref["gamma"] <= 0.0:
        raise ConfigError("gaussian gamma must be positive")
    if ref["steps"] < 1:
        raise ConfigError("reference steps must be >= 1")
    if cfg["benchmark"]["source"] not in ("uniform", "gaussian"):
        raise ConfigError(f"unknown source kind {cfg['benchmark']['source']!r}")
    if cfg["benchmark"]["test_count"] < 0:
        raise ConfigError("test_count must be >= 0")
    if sol["name"] not in SOLVERS:
        raise ConfigError(f"unknown solver {sol['name']!r}; "
                          f"choose from {', '.join(SOLVERS)}")
    if sol["loss"] not in ("kl", "mse"):
        raise ConfigError(f"unknown loss variant {sol['loss']!r}")
    if sol["lr"] is None:
        sol["lr"] = _SOLVER_LR[sol["name"]]
    if sol["batch_size"] is None:
        sol["batch_size"] = _SOLVER_BATCH[sol["name"]]
    if sol["lr"] <= 0:
        raise ConfigError("lr must be positive")
    if not 0.0 < sol["alpha"] <= 1.0:
        raise ConfigError("alpha must be in (0,1]")
    if sol["name"] != "dlightsb" and ref["steps"] % sol["steps"]:
        raise ConfigError(f"solver steps {sol['steps']} must divide "
                          f"reference steps {ref['steps']}")
    if not cfg["run"]["name"]:
        cfg["run"]["name"] = (f"{ref['kind'][0]}{space['dimensions']}d_"
                              f"g{ref['gamma']:g}_s{cfg['run']['seed']}")
    return cfg


def default_pair_name(cfg: dict) -> str:
    return cfg["run"]["name"]
