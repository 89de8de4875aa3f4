"""End-to-end batch run through the command-line front door.

Writes a toy corpus, then drives generate -> detect -> neighborhood ->
likelihood from JSON run configs, the way a real experiment would be scripted.
Everything lands under ./cli_demo/.
"""

import json
from pathlib import Path

import loopscope as ls
from loopscope.cli import main

root = Path("cli_demo")
root.mkdir(exist_ok=True)

lm = ls.SelfReinforcingLM(vocab_size=64, window=32, state_dim=16, seed=3)
passages = (ls.sample_real_passages(lm, 8, 64, seed=1, split="train")
            + ls.sample_real_passages(lm, 8, 64, seed=2, split="valid", id_prefix="ev"))
entries = [ls.CorpusEntry(p, lm.hidden_states(p.tokens, p.passage_id)) for p in passages]
manifest = ls.write_corpus(entries, root / "corpus", vocab_size=lm.vocab_size)
print("corpus at", manifest)

gen_cfg = {
    "subcommand": "generate",
    "out_dir": str(root / "generated"),
    "manifest": str(manifest),
    "model": {"kind": "toylm", "spec": lm.to_spec()},
    "decode": [{"strategy": "greedy", "max_new_tokens": 40},
               {"strategy": "nucleus", "p": 0.9, "max_new_tokens": 40, "seed": 1}],
    "analysis": {"condition_len": 16},
    "seed": 7,
}
(root / "generate.json").write_text(json.dumps(gen_cfg, indent=2))
assert main(["generate", "--config", str(root / "generate.json")]) == 0

for label in ("greedy", "nucleus0.9"):
    out = root / f"detect_{label}"
    assert main(["detect",
                 "--manifest", str(root / "generated" / f"gen_{label}" / "manifest.json"),
                 "--out-dir", str(out)]) == 0
    print(label, "->", json.loads((out / "summary.json").read_text()))

nbh_cfg = {
    "subcommand": "neighborhood",
    "out_dir": str(root / "neighborhood"),
    "manifest": str(manifest),
    "analysis": {
        "layer": 0, "radius": 120.0, "time_window": 3, "mode": "compare_seen",
        "extra_manifests": [str(root / "generated" / "gen_greedy" / "manifest.json")],
    },
    "seed": 7,
}
(root / "neighborhood.json").write_text(json.dumps(nbh_cfg, indent=2))
assert main(["neighborhood", "--config", str(root / "neighborhood.json")]) == 0
print("neighborhood CSVs:", sorted(p.name for p in (root / "neighborhood").glob("*.csv")))

assert main(["likelihood", "--manifest", str(manifest),
             "--out-dir", str(root / "likelihood")]) == 0
print("likelihood outputs:", sorted(p.name for p in (root / "likelihood").iterdir()))
