"""How strongly different conditioning sequences get echoed back.

Conditions come in three classes: extracted looping sequences, and the first
and last segments of real passages. For each condition x we generate a
continuation and score ROUGE-L between x and the continuation's first len(x)
tokens. Looping sequences are echoed far more; repeating any condition makes
echoing escalate.
"""

import loopscope as ls

lm = ls.SelfReinforcingLM(seed=11)
reals = ls.sample_real_passages(lm, 80, 120, seed=400)

harvest = ls.DecodeConfig(strategy="greedy", max_new_tokens=206)
loops = []
for p in reals:
    if len(loops) >= 50:
        break
    gen = ls.generate(lm, p.tokens[:50], harvest)
    spec = ls.detect_loop(gen.continuation)
    if spec is not None and spec.period >= 2:
        loops.append(spec.loop_tokens)

conditions = {
    "looping_sequence": loops,
    "first_sentence": [p.tokens[:10] for p in reals[:50]],
    "last_sentence": [p.tokens[-10:] for p in reals[:50]],
}
cfg = ls.DecodeConfig(strategy="greedy", max_new_tokens=64, seed=1)

print("condition class      echo score (mean / std)")
for rep in ls.inducingness_simple(conditions, lm, cfg):
    print(f"{rep.condition_class:20s} {rep.mean:.4f} / {rep.std:.4f}   n={rep.n}")

print("\nwith a neutral context prefix and the condition repeated 1-3 times:")
context = reals[3].tokens[:50]
rows = ls.inducingness_repeated(context, conditions, lm, cfg)
print(f"{'class':20s} {'x1':>8} {'x2':>8} {'x3':>8}")
cells = {(r.condition_class, r.repeats): r.mean for r in rows}
for cls in conditions:
    print(f"{cls:20s} " + " ".join(f"{cells[(cls, k)]:8.4f}" for k in (1, 2, 3)))
