"""Hidden-state deviation: neighbor counts against a real-state support set.

Builds a support index from real toy passages, then counts, for evaluation
states of each flavor, how many real states sit within the radius at a nearby
time step. Real held-out passages stay neighbor-rich, token-shuffled passages
drop to zero, greedy continuations decay as they loop, sampled continuations
track the real curve.

Writes deviation.csv and (if matplotlib is importable) deviation.png.
"""

import csv

import loopscope as ls
from loopscope.toylm import TOY_RADIUS

lm = ls.SelfReinforcingLM(seed=11)
support = ls.sample_real_passages(lm, 40, 256, seed=200, split="train")
evals = ls.sample_real_passages(lm, 12, 256, seed=300, split="valid", id_prefix="ev")
shuffled = ls.shuffle_control(evals, seed=9)

groups = {"real": [p.tokens for p in evals],
          "shuffled": [p.tokens for p in shuffled]}
for strategy in ("greedy", "sample"):
    cfg = ls.DecodeConfig(strategy=strategy, max_new_tokens=206, seed=5)
    groups[strategy] = [
        ls.generate(lm, p.tokens[:50], cfg, passage_ordinal=i).tokens
        for i, p in enumerate(evals)
    ]

index = ls.build_support(
    [lm.hidden_states(p.tokens, p.passage_id) for p in support], layer=0
)
print(f"support: {index.n_entries} states, radius {TOY_RADIUS}, time window 5")

curves = {}
for name, token_sets in groups.items():
    traces = [lm.hidden_states(toks, f"{name}{i}") for i, toks in enumerate(token_sets)]
    curves[name] = ls.deviation_curve(index, traces, layer=0, radius=TOY_RADIUS,
                                      time_window=5)
    print(f"{name:9s}", " ".join(f"{m:6.0f}" for m in curves[name].mean))

with open("deviation.csv", "w", newline="") as f:
    w = csv.writer(f)
    w.writerow(["step", "mean", "std", "n", "strategy", "mode"])
    for name, curve in curves.items():
        for s, m, sd, n in curve.points:
            w.writerow([s, m, sd, n, name, "demo"])
print("wrote deviation.csv")

try:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    for name, curve in curves.items():
        plt.plot(curve.steps, curve.mean, marker="o", label=name)
    plt.xlabel("time step")
    plt.ylabel("real neighbors within radius")
    plt.legend()
    plt.tight_layout()
    plt.savefig("deviation.png", dpi=120)
    print("wrote deviation.png")
except ImportError:
    pass
