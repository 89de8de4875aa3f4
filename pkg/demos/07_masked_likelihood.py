"""The masked-likelihood curve protocol with pluggable scorers.

Each repetition masks 15% of a passage's positions (fresh uniform draw) and
a scorer reports the log-likelihood of recovering each masked token; samples
are averaged per time step. The uniform scorer gives the sanity baseline
-log|V|. Real masked-LM scores arrive as JSONL score files produced by an
external exporter that follows the same mask-selection RNG, demonstrated here
by writing one by hand.
"""

import json
import math

import loopscope as ls
from loopscope import textmetrics as tm

lm = ls.SelfReinforcingLM(seed=11)
passages = ls.sample_real_passages(lm, 6, 128, seed=700)

curve = ls.masked_likelihood_curve(passages, tm.UniformScorer(lm.vocab_size),
                                   mask_fraction=0.15, repetitions=10, seed=13)
print(f"uniform scorer: {len(curve.steps)} steps, "
      f"mean(range)=[{min(curve.mean):.4f}, {max(curve.mean):.4f}], "
      f"expected={-math.log(lm.vocab_size):.4f}")

# an external producer writes scores for the exact positions the protocol
# will request, because it derives them from the same seeded generator
with open("scores.jsonl", "w") as f:
    for p in passages:
        rng = tm.passage_mask_rng(13, p.passage_id)
        m = math.ceil(0.15 * len(p.tokens))
        for rep in range(10):
            pos = tm.mask_positions(len(p.tokens), m, rng)
            loglik = [-2.0 - 0.01 * t for t in pos]  # fake, slowly decaying
            f.write(json.dumps({"passage_id": p.passage_id, "repetition": rep,
                                "positions": pos, "loglik": loglik}) + "\n")

file_curve = ls.masked_likelihood_curve(passages, ls.FileScorer("scores.jsonl"),
                                        mask_fraction=0.15, repetitions=10, seed=13)
print("file scorer   : first steps", [round(m, 3) for m in file_curve.mean[:6]])
print("wrote scores.jsonl")
