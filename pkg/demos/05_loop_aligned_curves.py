"""Neighbor counts aligned to the moment repetition becomes verbatim.

For each greedy continuation that loops, evaluate neighbor counts at fixed
offsets from its repetition onset, do the same for the real continuation of
the same condition, and look at the difference. The generated curve falls
below the real one well before offset zero: the states have already left the
real region before the text starts visibly repeating.
"""

import loopscope as ls
from loopscope.toylm import TOY_RADIUS

lm = ls.SelfReinforcingLM(seed=11)
support = ls.sample_real_passages(lm, 40, 256, seed=200, split="train")
evals = ls.sample_real_passages(lm, 20, 256, seed=300, split="valid", id_prefix="ev")
index = ls.build_support(
    [lm.hidden_states(p.tokens, p.passage_id) for p in support], layer=0
)

cfg = ls.DecodeConfig(strategy="greedy", max_new_tokens=206)
gen_traces, real_traces, specs = [], [], []
for i, p in enumerate(evals):
    gen = ls.generate(lm, p.tokens[:50], cfg, passage_ordinal=i)
    spec = ls.detect_loop(gen.continuation)
    if spec is None:
        continue
    # re-anchor the loop at its absolute position in the passage
    specs.append(ls.LoopSpec(start=gen.condition_len + spec.start, period=spec.period,
                             loop_tokens=spec.loop_tokens))
    gen_traces.append(lm.hidden_states(gen.tokens, gen.passage_id))
    real_traces.append(lm.hidden_states(p.tokens, p.passage_id))

print(f"{len(specs)} of {len(evals)} greedy continuations loop")

kw = dict(layer=0, radius=TOY_RADIUS, time_window=5,
          axis="relative_to_loop_start", loop_specs=specs)
gen_curve = ls.deviation_curve(index, gen_traces, **kw)
real_curve = ls.deviation_curve(index, real_traces, **kw)
diff = gen_curve.difference(real_curve)

print(f"{'offset':>7} {'generated':>10} {'real':>8} {'difference':>11}")
g = dict(zip(gen_curve.steps, gen_curve.mean))
r = dict(zip(real_curve.steps, real_curve.mean))
for step, mean, _, n in diff.points:
    print(f"{step:7d} {g[step]:10.1f} {r[step]:8.1f} {mean:11.1f}   (n={n})")
