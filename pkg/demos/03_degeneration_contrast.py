"""Greedy decoding degenerates; sampling does not.

The toy LM reinforces continuations it has recently produced, so likelihood-
maximizing decoding locks into verbatim loops while sampling keeps enough
entropy to escape. Loop rates per strategy, 100 conditions each:
"""

import loopscope as ls

lm = ls.SelfReinforcingLM(seed=11)
conditions = ls.sample_real_passages(lm, 100, 60, seed=100)

for cfg in (
    ls.DecodeConfig(strategy="greedy", max_new_tokens=512),
    ls.DecodeConfig(strategy="sample", max_new_tokens=512, seed=5),
    ls.DecodeConfig(strategy="top_k", k=8, max_new_tokens=512, seed=5),
    ls.DecodeConfig(strategy="nucleus", p=0.9, max_new_tokens=512, seed=5),
):
    gens = [
        ls.generate(lm, p.tokens[:50], cfg, passage_ordinal=i)
        for i, p in enumerate(conditions)
    ]
    rate = ls.loop_rate(gens)
    periods = [
        ls.detect_loop(g.continuation).period
        for g in gens
        if ls.detect_loop(g.continuation) is not None
    ]
    med = sorted(periods)[len(periods) // 2] if periods else float("nan")
    print(f"{cfg.label:11s} loop_rate={rate:5.2f}  median period={med}")
