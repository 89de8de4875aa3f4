"""Spotting verbatim loops in token sequences.

A loop is reported as (start, period): the first full period begins at
``start`` and repetition becomes verbatim at ``start + period``.
"""

import loopscope as ls

print("= hand-crafted sequences =")
for toks in (
    [1, 2, 3, 1, 2, 3, 1, 2, 3],
    [9, 9, 4, 7, 4, 7, 4, 7],
    [1, 2, 3, 4, 5, 6, 7, 8],
    [5, 5],
):
    spec = ls.detect_loop(toks)
    if spec is None:
        print(f"{toks} -> no loop")
    else:
        print(f"{toks} -> start={spec.start} period={spec.period} block={spec.loop_tokens}")

print()
print("= greedy continuations of the toy LM collapse into loops =")
lm = ls.SelfReinforcingLM(seed=11)
conditions = ls.sample_real_passages(lm, 5, 60, seed=100)
cfg = ls.DecodeConfig(strategy="greedy", max_new_tokens=200)
for i, p in enumerate(conditions):
    gen = ls.generate(lm, p.tokens[:50], cfg, passage_ordinal=i)
    spec = ls.detect_loop(gen.continuation)
    assert spec is not None
    onset = gen.condition_len + spec.repeat_onset
    print(f"condition {p.passage_id}: repeats verbatim from step {onset}, "
          f"period {spec.period}")

print()
print("= punctuation-aligned rotation =")
text = {0: " an", 1: " apple", 2: ".", 3: " It", 4: " is"}
spec = ls.LoopSpec(start=0, period=5, loop_tokens=(0, 1, 2, 3, 4))
rotated = ls.rotate_to_sentence_start(spec, text)
print("loop  :", "".join(text[t] for t in spec.loop_tokens).strip())
print("usable:", "".join(text[t] for t in rotated).strip())
