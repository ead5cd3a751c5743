#!/usr/bin/env python3
"""Train the neural matching solvers at toy scale: bidirectional alternation
(csbm) and the joint online variant (alpha-csbm), then compare endpoint
samples against ground truth."""

import numpy as np

from dsbbench import PairSampler, RngStream, conditional_scores, generate_pair
from dsbbench import matching

pair = generate_pair(n_dims=2, kind="uniform", gamma=0.01, seed=0,
                     n_categories=12, n_steps=16)
proc = pair.proc.coarsened(8)


def score(state, label):
    def sampler(x0, n, rng):
        return matching.chain_sample(rng, state.forward, np.tile(x0, (n, 1)))

    out = conditional_scores(pair, sampler, n_x0=24, n_per=300,
                             stream=RngStream(5))
    print(f"{label}: conditional shape {out['cond_ssm']:.3f}, "
          f"conditional trend {out['cond_tsm']:.3f}, "
          f"{state.gradient_updates} gradient updates")


print("bidirectional alternation, 3 outer fits (toy budgets)...")
data = PairSampler(pair, RngStream(0, key=(11,)))
state = matching.csbm_train(proc, data, seed=0, outer_iters=3,
                            first_steps=1500, later_steps=500, lr=1e-3,
                            batch_size=64, cache_size=4096)
score(state, "csbm")

print("joint online variant at half the optimizer steps...")
data = PairSampler(pair, RngStream(1, key=(11,)))
state_a = matching.alpha_csbm_train(proc, data, seed=1, alpha=0.25,
                                    outer_iters=3, first_steps=1500,
                                    later_steps=500, lr=2e-3, batch_size=64,
                                    cache_size=4096, refresh_every=200)
score(state_a, "alpha-csbm")

print("\nchains run all grid steps with EMA weights and no terminal argmax;")
print("a forward rollout from one source point:")
x = data.x0_batch(1)
print(f"  t_0:  {x[0]}")
end = matching.chain_sample(RngStream(2).generator(), state.forward, x)
print(f"  t_{proc.n_steps}: {end[0]}")
