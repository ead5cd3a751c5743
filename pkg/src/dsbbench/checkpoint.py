"""Solver checkpoints in the shared container format.

A checkpoint records the solver name, its resolved config, the content hash
of the pair it was trained on, and every parameter array (plus EMA shadows
and direction tags for the neural models).
"""

from __future__ import annotations

import numpy as np

from . import io
from .autodiff import Var
from .light import LightModel
from .matching import DImfState, MLPTransitionModel
from .refproc import ReferenceProcess


def save_light(model: LightModel, path, pair_hash: str) -> str:
    header = {"role": "checkpoint", "solver": model.solver,
              "pair_hash": pair_hash, "reference": model.proc.spec(),
              "steps_trained": model.steps_trained, "config": model.config}
    return io.write_container(path, io.CKPT_MAGIC, header,
                              {"log_beta": model.log_beta_v.value,
                               "log_cores": model.log_cores_v.value})


def save_matching(state: DImfState, solver: str, path, pair_hash: str) -> str:
    fwd, bwd = state.forward, state.backward
    header = {"role": "checkpoint", "solver": solver, "pair_hash": pair_hash,
              "reference": fwd.proc.spec(), "dimensions": fwd.n_dims,
              "hidden": fwd.hidden, "directions": ["forward", "backward"],
              "gradient_updates": state.gradient_updates,
              "iterations_done": state.iterations_done, "config": state.config}
    arrays = {}
    arrays.update(fwd.state_arrays("fwd_"))
    arrays.update(bwd.state_arrays("bwd_"))
    return io.write_container(path, io.CKPT_MAGIC, header, arrays)


def load(path):
    """Returns (solver_name, model_or_state, header)."""
    header, arrays, _ = io.read_container(path, io.CKPT_MAGIC)
    if header.get("role") != "checkpoint":
        raise io.CorruptFileError(f"{path}: not a checkpoint")
    solver = header["solver"]
    proc = ReferenceProcess.from_spec(header["reference"])
    if solver in ("dlightsb", "dlightsb-m"):
        model = LightModel(proc,
                           Var(arrays["log_beta"].copy(), requires_grad=True),
                           Var(arrays["log_cores"].copy(), requires_grad=True),
                           solver=solver,
                           steps_trained=header.get("steps_trained", 0),
                           config=header.get("config", {}))
        return solver, model, header
    if solver in ("csbm", "alpha-csbm"):
        from .rng import RngStream
        D = header["dimensions"]
        fwd = MLPTransitionModel(proc, D, RngStream(0), "forward",
                                 hidden=header["hidden"])
        bwd = MLPTransitionModel(proc, D, RngStream(0), "backward",
                                 hidden=header["hidden"])
        fwd.load_state_arrays("fwd_", arrays)
        bwd.load_state_arrays("bwd_", arrays)
        state = DImfState(fwd, bwd,
                          iterations_done=header.get("iterations_done", 0),
                          gradient_updates=header.get("gradient_updates", 0),
                          config=header.get("config", {}))
        return solver, state, header
    raise io.CorruptFileError(f"{path}: unknown solver {solver!r}")
