#!/usr/bin/env python3
"""Walk through the reference chains: kernels, multi-step powers, and
endpoint-conditioned (bridge) sampling."""

import numpy as np

from dsbbench import (ReferenceProcess, RngStream, build_gaussian,
                      build_uniform, matrix_power, sample_bridge,
                      uniform_power_closed_form)

np.set_printoptions(precision=4, suppress=True)

S = 6
print("== single-step kernels ==")
print("uniform, gamma=0.2 (stay w.p. 0.8, jump anywhere else uniformly):")
print(build_uniform(S, 0.2))
print("\ngaussian-like, gamma=0.8 (jumps decay in squared distance):")
print(build_gaussian(S, 0.8))

print("\n== multi-step kernels ==")
q = build_uniform(S, 0.2)
n = 32
closed = uniform_power_closed_form(S, 0.2, n)
powered = matrix_power(q, n)
print(f"closed form vs squaring at n={n}: max |diff| ="
      f" {np.abs(closed - powered).max():.2e}")
print(f"as n grows every entry approaches 1/S = {1 / S:.4f}:")
print(uniform_power_closed_form(S, 0.2, 4096)[0])

print("\n== bridge sampling ==")
# condition the chain on both endpoints and sample the interior forward
proc = ReferenceProcess("gaussian", 0.8, S, n_steps=8)
rng = RngStream(0).generator()
x0 = np.array([0, 5])
x1 = np.array([5, 0])
path = sample_bridge(rng, proc, x0, x1)
print(f"one bridge from {x0} to {x1} over {proc.n_steps} steps:")
print(np.vstack([x0, path, x1]).T)

print("\ncoarsening: the same chain on a 4-step grid (each step spans 2):")
coarse = proc.coarsened(4)
print(f"coarse per-step kernel equals Q^2: "
      f"{np.allclose(coarse.q, matrix_power(proc.q, 2))}")
