"""
Deciding between summaries and the raw log
==========================================

The router reads the retrieved summaries and answers S (summaries suffice)
or R (escalate). Anything it says that does not parse is treated as R.
Offline, each query is labelled by running both paths, and a cost-aware
reward scores each routing decision.
"""

import itertools

from tiered_memory import Engine, EngineConfig, Gateway, MockBackend, RouteDecision, demo, hindsight_label, reward
from tiered_memory.router import build_training_records

engine = Engine(EngineConfig(), Gateway(MockBackend(demo.script())))
engine.ingest(demo.SESSION, demo.transcript())

for q in demo.questions()[:8]:
    answer, rec = engine.answer(q)
    print(f"{rec.route}  {q.question:<65} -> {answer}")

# label table over (summaries sufficient, raw path correct)
for c_s, c_r in itertools.product((True, False), repeat=2):
    print(c_s, c_r, hindsight_label(c_s, c_r).label)

# rewards under the default coefficients
cases = [("S", True, True, True), ("R", True, True, True), ("R", False, True, True),
         ("S", False, False, True), ("R", False, True, False)]
for action, summaries_ok, correct, fmt in cases:
    value = reward(RouteDecision(action, format_ok=fmt), hindsight_label(summaries_ok, True), correct)
    print(f"action={action} label={'S' if summaries_ok else 'R'} correct={correct} format_ok={fmt}: {value:+.1f}")

# Drop-labelled queries are filtered out, R examples are oversampled
log = [{"query": "a", "summaries": [], "c_s": True, "c_r": True},
       {"query": "b", "summaries": [], "c_s": False, "c_r": True},
       {"query": "c", "summaries": [], "c_s": False, "c_r": False}]
print([(r.query, r.label) for r in build_training_records(log, oversample=2)])
