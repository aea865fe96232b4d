"""
Escalating into the raw log
===========================

An escalated query starts from the pages behind its best summaries, then
alternates planning and reading for at most ``t_max`` rounds. Every fact it
keeps is tied to the pages whose text supports it.
"""

import json

from tiered_memory import Gateway, MockBackend, PageStore, Researcher, SummaryIndex, Turn

texts = [
    "Ana mentioned she bought a red canoe at the lake shop.",
    "The lake shop closed for winter in November.",
    "Ana named the canoe Bluebell despite the color.",
    "Jo fixed the porch light on Tuesday.",
]
store = PageStore()
for i, text in enumerate(texts):
    store.append_turn("s", Turn(f"day {i + 1}", "Ana" if i != 3 else "Jo", text))
    store.flush("s")
index = SummaryIndex(store)
index.add_unit("Ana bought a canoe", {"s/p00000"})

script = [
    {"kind": "Integration", "match": "Bluebell", "sticky": True, "response": json.dumps({
        "linked_facts": [{"fact": "Ana named her canoe Bluebell", "evidence_quote": "named the canoe Bluebell"}],
        "coverage_assessment": "the name is stated"})},
    {"kind": "Integration", "sticky": True, "response": json.dumps({
        "linked_facts": [{"fact": "Ana bought a red canoe", "evidence_quote": "bought a red canoe"}],
        "coverage_assessment": "purchase found, name missing"})},
    {"kind": "Plan", "response": json.dumps({"decision": "SEARCH", "reasoning": "look for the name",
                                             "search_commands": [{"type": "KEYWORD_SEARCH", "keywords": ["named"]}]})},
    {"kind": "Plan", "sticky": True, "response": json.dumps({"decision": "DONE", "reasoning": "answered"})},
]
gateway = Gateway(MockBackend(script))
researcher = Researcher(gateway, store, index, t_max=3)

question = "What did Ana name her canoe?"
pack = researcher.escalate(question, index.search(question, 3))
print("rounds:", pack.iterations_used, "pages read:", pack.pages_read)
print("commands:", [c.to_json() for c in pack.searched_queries])
for fact in pack.facts:
    print(f"{fact.fact!r} <- {sorted(fact.source_pages)} via {fact.match_stage}")
print("model calls:", gateway.call_count)
