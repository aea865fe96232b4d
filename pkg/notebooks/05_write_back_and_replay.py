"""
Learning from escalations across epochs
=======================================

During an epoch the summary tier is frozen and verified findings queue up.
Between epochs they are merged in, either blind (ADD or SKIP only) or after
looking at similar summaries (which also allows UPDATE). Replaying the same
questions shows more of them being answered straight from summaries.
"""

import tempfile
from pathlib import Path

from tiered_memory import Engine, EngineConfig, Gateway, MockBackend, demo
from tiered_memory.evaluation import replay

out = Path(tempfile.mkdtemp())
for variant in ("retrieve-edit", "no-recall"):
    engine = Engine(EngineConfig(), Gateway(MockBackend(demo.script())))
    engine.ingest(demo.SESSION, demo.transcript())
    rows = replay(engine, demo.questions(), epochs=3, variant=variant, out_dir=out / variant)
    print(variant)
    print("  epoch  s_traffic  s_correct  adds  updates  writes_in_epoch")
    for r in rows:
        print(f"  {r.epoch:>5}  {r.s_traffic:>9}  {r.s_correct:>9}  {str(r.adds):>4}  {str(r.updates):>7}"
              f"  {r.tier1_writes_during_epoch:>15}")
    for unit in engine.index.units():
        if unit.source_type == "linked_fact":
            print("  learned:", unit.text, sorted(unit.provenance))

print("artifacts in", out)
