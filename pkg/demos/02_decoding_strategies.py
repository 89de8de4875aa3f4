"""The four decoding strategies over one probability vector.

restrict() reshapes the distribution (top-k keeps the k most probable tokens,
nucleus keeps the smallest high-probability set with mass >= p); select()
draws a token. Greedy ignores the rng entirely.
"""

import numpy as np

import loopscope as ls
from loopscope.seeding import make_rng

probs = np.array([0.40, 0.25, 0.15, 0.10, 0.06, 0.04])
print("base distribution:", probs)

for cfg in (
    ls.DecodeConfig(strategy="greedy"),
    ls.DecodeConfig(strategy="sample"),
    ls.DecodeConfig(strategy="top_k", k=3),
    ls.DecodeConfig(strategy="nucleus", p=0.8),
):
    restricted = ls.restrict(probs, cfg)
    rng = make_rng(0)
    picks = [ls.select(probs, cfg, rng) for _ in range(12)]
    print(f"{cfg.label:11s} restricted={np.round(restricted, 4)} picks={picks}")

# ratios among surviving tokens are untouched by the restriction
cfg = ls.DecodeConfig(strategy="top_k", k=3)
restricted = ls.restrict(probs, cfg)
print("\np0/p1 before:", probs[0] / probs[1], " after:", restricted[0] / restricted[1])

# nucleus with p=1 and top-k with k=vocab are pure sampling, exactly
assert np.array_equal(ls.restrict(probs, ls.DecodeConfig(strategy="nucleus", p=1.0)), probs)
assert np.array_equal(ls.restrict(probs, ls.DecodeConfig(strategy="top_k", k=6)), probs)
print("identity restrictions are exact")
