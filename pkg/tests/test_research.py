import json

import pytest
from hypothesis import given, settings, strategies as st

from conftest import fill_store, make_gateway, sticky
from tiered_memory import PromptKind, Researcher, SearchCommand, SummaryIndex, link_provenance
from tiered_memory.research import (
    KEYWORD_SEARCH,
    SEMANTIC_SEARCH,
    EvidencePack,
    evidence_block,
    normalize_quote,
    supports,
)

TEXTS = [
    "Alice adopted a greyhound named Pixel in March.",
    "Bob moved to Lisbon and started rowing.",
    "Carol plays the cello in a jazz trio.",
    "Dave repaired the old lighthouse lamp.",
    "Erin planted tomatoes and basil on the balcony.",
    "Frank collects vintage typewriters from flea markets.",
]

DONE = {"decision": "DONE", "reasoning": "enough"}
NO_FACTS = {"linked_facts": [], "coverage_assessment": "nothing yet"}


@pytest.fixture
def world():
    store, ids = fill_store(TEXTS)
    index = SummaryIndex(store)
    for pid, text in zip(ids, TEXTS):
        index.add_unit(text.split(" and ")[0], {pid})
    return store, index, ids


def researcher(world, entries, **kw):
    store, index, _ = world
    gw = make_gateway(entries)
    return Researcher(gw, store, index, **kw), gw


def test_done_immediately_reads_warm_pages_only(world):
    store, index, ids = world
    r, gw = researcher(world, [
        sticky("Integration", {"linked_facts": [{"fact": "Alice has a greyhound", "evidence_quote": "adopted a greyhound"}],
                               "coverage_assessment": "complete"}),
        sticky("Plan", DONE),
    ])
    hits = index.search("Alice greyhound", 1)
    pack = r.escalate("What dog does Alice have?", hits)
    assert pack.iterations_used == 0
    assert pack.pages_read == [ids[0]]
    assert [f.fact for f in pack.facts] == ["Alice has a greyhound"]
    assert pack.facts[0].source_pages == {ids[0]}
    assert pack.coverage_assessment == "complete"
    assert gw.stats.calls[PromptKind.INTEGRATION] == 1 and gw.stats.calls[PromptKind.PLAN] == 1


def test_repeated_command_is_skipped_and_loop_ends(world):
    store, index, ids = world
    search = {"decision": "SEARCH", "search_commands": [{"type": "KEYWORD_SEARCH", "keywords": ["cello"]}]}
    r, gw = researcher(world, [sticky("Integration", NO_FACTS), sticky("Plan", search)])
    pack = r.escalate("Who plays cello?", [])
    assert pack.pages_read == [ids[2]]
    assert pack.iterations_used == 1
    assert [c.key for c in pack.searched_queries] == [(KEYWORD_SEARCH, "cello")]
    # round two repeated the command: nothing executed, no new pages, stop
    assert gw.stats.calls[PromptKind.PLAN] == 2 and gw.stats.calls[PromptKind.INTEGRATION] == 1


def test_search_three_times_stops_at_t_max(world):
    store, index, ids = world
    entries = [sticky("Integration", NO_FACTS)]
    for kw in ("cello", "lighthouse", "tomatoes", "typewriters"):
        entries.append({"kind": "Plan", "response": json.dumps(
            {"decision": "SEARCH", "search_commands": [{"type": "KEYWORD_SEARCH", "keywords": [kw]}]})})
    r, gw = researcher(world, entries, t_max=3)
    pack = r.escalate("q", [])
    assert pack.iterations_used == 3
    assert pack.pages_read == [ids[2], ids[3], ids[4]]
    assert gw.call_count <= 1 + 3 * 2 + 1
    assert pack.gateway_calls == gw.call_count


def test_semantic_and_keyword_commands_both_run(world):
    store, index, ids = world
    plan = {"decision": "SEARCH", "search_commands": [
        {"type": "MEM0_SEARCH", "query": "Frank vintage typewriters"},
        {"type": "KEYWORD_SEARCH", "keywords": ["basil"]},
    ]}
    r, _ = researcher(world, [sticky("Integration", NO_FACTS), {"kind": "Plan", "response": json.dumps(plan)},
                              sticky("Plan", DONE)])
    pack = r.escalate("Who grows basil or collects typewriters?", [])
    assert [c.kind for c in pack.searched_queries] == [SEMANTIC_SEARCH, KEYWORD_SEARCH]
    assert ids[5] in pack.pages_read and ids[4] in pack.pages_read


def test_plan_coercions(world):
    unknown = {"decision": "SEARCH", "search_commands": [{"type": "WEB_SEARCH", "query": "x"}]}
    r, _ = researcher(world, [{"kind": "Plan", "response": json.dumps(unknown)},
                              {"kind": "Plan", "response": "let me think"},
                              {"kind": "Plan", "response": json.dumps(DONE)}])
    assert r.plan("q", EvidencePack(), []).done
    bad = r.plan("q", EvidencePack(), [])
    assert bad.done and not bad.format_ok
    assert r.plan("q", EvidencePack(), []).done


def test_plan_prompt_lists_history_and_searched(world):
    r, gw = researcher(world, [sticky("Plan", DONE)])
    pack = EvidencePack()
    pack.searched_queries.append(SearchCommand(KEYWORD_SEARCH, ("cello",)))
    r.plan("q", pack, ["round 1: KEYWORD_SEARCH: cello -> 1 new page(s), 0 fact(s)"])
    prompt = gw.backend.calls[-1][1]
    assert "KEYWORD_SEARCH: cello" in prompt and "round 1" in prompt


def test_integrate_two_facts_and_empty(world):
    store, index, ids = world
    two = {"linked_facts": [{"fact": "Bob lives in Lisbon", "evidence_quote": "moved to Lisbon"},
                            {"fact": "Bob rows", "evidence_quote": "started rowing"},
                            {"fact": "  ", "evidence_quote": ""}],
           "coverage_assessment": "partial"}
    r, _ = researcher(world, [{"kind": "Integration", "response": json.dumps(two)},
                              {"kind": "Integration", "response": json.dumps(NO_FACTS)}])
    evidence = r._with_summaries([ids[1]])
    pack = EvidencePack()
    facts = r.integrate("Where is Bob?", evidence, pack)
    assert [f.fact for f in facts] == ["Bob lives in Lisbon", "Bob rows"]
    assert all(f.source_pages == {ids[1]} for f in facts)
    assert r.integrate("q", evidence, pack) == [] and pack.coverage_assessment == "nothing yet"


def test_evidence_block_has_summaries_and_verbatim_lines(world):
    store, index, ids = world
    page = store.get_page(ids[0])
    block = evidence_block([(page, ["Alice adopted a greyhound named Pixel in March."])])
    assert "Alice adopted a greyhound named Pixel in March." in block
    assert page.turns[0].render() in block
    assert "[2024-01-01] A: " in block


def test_backend_failure_returns_partial_pack(world):
    store, index, ids = world
    r, _ = researcher(world, [
        sticky("Integration", {"linked_facts": [{"fact": "Carol plays cello", "evidence_quote": "plays the cello"}]}),
        sticky("Plan", "", error="timeout"),
    ])
    pack = r.escalate("q", index.search("Carol cello", 1))
    assert pack.error and "timeout" in pack.error
    assert [f.fact for f in pack.facts] == ["Carol plays cello"]


def test_warm_start_precedes_searched_pages_and_trace(world):
    store, index, ids = world
    events = []
    plan = {"decision": "SEARCH", "search_commands": [{"type": "KEYWORD_SEARCH", "keywords": ["typewriters"]}]}
    r, _ = researcher(world, [sticky("Integration", NO_FACTS), {"kind": "Plan", "response": json.dumps(plan)},
                              sticky("Plan", DONE)])
    r.trace = events.append
    pack = r.escalate("q", index.search("Alice greyhound", 1), query_id="q7")
    assert pack.pages_read[0] == ids[0] and pack.pages_read[1] == ids[5]
    assert events[0]["query_id"] == "q7" and events[0]["pages_read"] == pack.pages_read
    assert events[0]["commands"] == [{"type": "KEYWORD_SEARCH", "keywords": ["typewriters"]}]


def test_repeated_fact_upgrades_unresolved_copy(world):
    store, index, ids = world
    fact = {"fact": "Dave fixed a lamp", "evidence_quote": "repaired the old lighthouse lamp"}
    plan = {"decision": "SEARCH", "search_commands": [{"type": "KEYWORD_SEARCH", "keywords": ["lighthouse"]}]}
    r, _ = researcher(world, [sticky("Integration", {"linked_facts": [fact]}),
                              {"kind": "Plan", "response": json.dumps(plan)}, sticky("Plan", DONE)])
    # warm page (Alice) cannot support the fact; the searched page can
    pack = r.escalate("q", index.search("Alice greyhound", 1))
    assert len(pack.facts) == 1 and pack.facts[0].source_pages == {ids[3]}


# -- link_provenance -----------------------------------------------------------


def test_quote_verbatim_case_and_spacing(world):
    store, index, ids = world
    cands = [(store.get_page(pid), []) for pid in ids]
    f = link_provenance("Dave fixed the lamp", "repaired the old lighthouse lamp", cands)
    assert f.source_pages == {ids[3]} and f.match_stage == "quote"
    g = link_provenance("Dave fixed the lamp", "REPAIRED  the Old   lighthouse lamp!", cands)
    assert g.source_pages == {ids[3]}
    assert normalize_quote("REPAIRED  the (Old)   lighthouse lamp!") == "repaired the old lighthouse lamp"


def test_quote_found_only_in_summaries(world):
    store, index, ids = world
    cands = [(store.get_page(ids[0]), ["Alice's pet is called Pixel"])]
    f = link_provenance("Alice has a pet", "pet is called pixel", cands)
    assert f.source_pages == {ids[0]} and f.match_stage == "summary"


def test_overlap_threshold(world):
    store, index, ids = world
    cands = [(store.get_page(pid), []) for pid in ids]
    # content words: frank, collects, vintage, zebras, quantum, origami -> 3/6 on page 5
    half = link_provenance("Frank collects vintage zebras quantum origami", "not in any page", cands)
    assert half.source_pages == {ids[5]} and half.match_stage == "overlap"
    # one of six content words everywhere -> rejected
    low = link_provenance("Frank zebras quantum origami nebula walrus", "", cands)
    assert low.source_pages == frozenset() and not low.resolved


def test_linker_never_invents_ids(world):
    store, index, ids = world
    f = link_provenance("anything", "Alice adopted", [(store.get_page(ids[0]), [])])
    assert f.source_pages <= {ids[0]}


@settings(max_examples=100, deadline=None)
@given(st.text(alphabet="abcde fghij.,!", max_size=40), st.text(alphabet="abcde fghij.,!", max_size=40),
       st.floats(min_value=0.1, max_value=1.0))
def test_provenance_soundness_property(fact, quote, threshold):
    store, ids = fill_store(["abc de fgh ij", "a b c d e f", "hij gfe dcba"])
    cands = [(store.get_page(pid), ["abc summary"]) for pid in ids]
    linked = link_provenance(fact, quote, cands, overlap_threshold=threshold)
    assert linked.source_pages <= set(ids)
    for pid in linked.source_pages:
        assert supports(linked, store.get_page(pid), ["abc summary"], threshold)


def test_command_dedup_key_normalizes():
    a = SearchCommand.from_wire({"type": "keyword_search", "keywords": ["Cello", " jazz "]})
    b = SearchCommand.from_wire({"type": "KEYWORD_SEARCH", "keywords": ["jazz", "cello"]})
    assert a.key == b.key
    assert SearchCommand.from_wire({"type": "MEM0_SEARCH", "query": "  "}) is None
    assert SearchCommand.from_wire({"type": "MEM0_SEARCH", "query": "x"}).to_json() == {"type": "MEM0_SEARCH", "query": "x"}
