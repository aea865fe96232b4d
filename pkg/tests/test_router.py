import itertools
import json
from fractions import Fraction

import pytest

from conftest import make_gateway, sticky
from tiered_memory import RewardConfig, RouteDecision, ValidationError, hindsight_label, reward, route
from tiered_memory.router import NO_SUMMARIES, build_training_records, summaries_block, write_training_records
from tiered_memory.summary_index import RetrievalHit, SummaryUnit

import numpy as np


def hit(text, uid="u000000"):
    return RetrievalHit(SummaryUnit(uid, text, np.ones(1), frozenset({"s/p00000"}), "original", 0), 0.5)


def test_route_parses_action():
    gw = make_gateway([sticky("Router", {"thinking": "enough", "action": "S"})])
    d = route(gw, "q?", [hit("a fact")])
    assert (d.action, d.format_ok, d.thinking) == ("S", True, "enough")
    assert d.usage.input_tokens > 0


def test_route_prose_falls_back_to_r():
    gw = make_gateway([sticky("Router", "Probably the summaries are fine.")])
    d = route(gw, "q?", [hit("x")])
    assert (d.action, d.format_ok) == ("R", False)


def test_route_with_no_hits_sends_explicit_block():
    # strict script: only answers when the empty-summaries marker is present
    gw = make_gateway([sticky("Router", {"action": "R"}, NO_SUMMARIES)])
    assert route(gw, "q?", []).action == "R"
    assert NO_SUMMARIES in gw.backend.calls[0][1]


def test_summaries_block_numbering():
    assert summaries_block(["a", "b"]) == "1. a\n2. b"


def test_label_table_all_four_cases():
    table = {
        (True, True): "S",
        (True, False): "S",
        (False, True): "R",
        (False, False): "Drop",
    }
    for (cs, cr), want in table.items():
        lab = hindsight_label(cs, cr)
        assert lab.label == want and (lab.c_s, lab.c_r) == (cs, cr)


def oracle_reward(action, label, correct, format_ok):
    # exact rational arithmetic over the coefficient table
    c = {k: Fraction(v) for k, v in dict(correct=1, wrong=Fraction(-3, 2), cost_s=0, cost_r=Fraction(1, 10),
                                         waste=Fraction(2, 5), fmt=-1).items()}
    taken = action if format_ok else "R"
    acc = (c["correct"] if correct else c["wrong"]) if format_ok else c["fmt"]
    cost = c["cost_r"] if taken == "R" else c["cost_s"]
    waste = c["waste"] if taken == "R" and label == "S" else 0
    return acc - cost - waste


@pytest.mark.parametrize("action,label,correct,format_ok,expected", [
    ("R", "R", True, True, 0.9),
    ("R", "S", True, True, 0.5),
    ("S", "S", True, True, 1.0),
    ("S", "R", False, True, -1.5),
    ("R", "R", True, False, -1.1),
])
def test_canonical_rewards_exact(action, label, correct, format_ok, expected):
    d = RouteDecision(action, format_ok=format_ok)
    lab = hindsight_label(label == "S", True)
    assert reward(d, lab, correct) == expected


def test_reward_sweep_matches_rational_oracle():
    for action, label, correct, fmt in itertools.product("SR", "SR", (True, False), (True, False)):
        lab = hindsight_label(label == "S", True)
        got = reward(RouteDecision(action, format_ok=fmt), lab, correct)
        assert got == pytest.approx(float(oracle_reward(action, label, correct, fmt)), abs=1e-12)


def test_drop_label_is_rejected():
    with pytest.raises(ValidationError):
        reward(RouteDecision("S"), hindsight_label(False, False), True)


def test_reward_gap_when_summaries_suffice():
    cfg = RewardConfig()
    lab = hindsight_label(True, True)
    for correct in (True, False):
        gap = reward(RouteDecision("S"), lab, correct, cfg) - reward(RouteDecision("R"), lab, correct, cfg)
        assert gap == pytest.approx(cfg.cost_r + cfg.waste_r)
    assert reward(RouteDecision("S"), lab, True, cfg) == cfg.correct_reward


def test_default_coefficients():
    assert RewardConfig() == RewardConfig(1.0, -1.5, 0.0, 0.1, 0.4, -1.0)


def _log(labels):
    outcome = {"S": (True, True), "R": (False, True), "Drop": (False, False)}
    return [{"query": f"q{i}", "summaries": [f"s{i}"], "c_s": outcome[l][0], "c_r": outcome[l][1]} for i, l in enumerate(labels)]


def test_training_records_filter_and_oversample():
    log = _log(["S"] * 4 + ["R"] * 3 + ["Drop"] * 3)
    assert len(build_training_records(log, oversample=1)) == 7
    recs = build_training_records(log, oversample=2)
    assert len(recs) == 4 + 3 * 2
    for q in ("q4", "q5", "q6"):
        assert sum(1 for r in recs if r.query == q) == 2
    assert build_training_records(_log(["Drop"] * 5)) == []


def test_training_records_drop_failed_raw_path_even_if_summaries_sufficed():
    log = [{"query": "q", "summaries": [], "c_s": True, "c_r": False}]
    assert build_training_records(log) == []


def test_paraphrase_hook_and_file(tmp_path):
    recs = build_training_records(_log(["R"]), oversample=1, paraphraser=lambda q: [q + "?", q])
    assert [r.query for r in recs] == ["q0", "q0?"]
    path = write_training_records(recs, tmp_path / "router_train.jsonl")
    rows = [json.loads(l) for l in path.read_text().splitlines()]
    assert rows[0] == {"query": "q0", "summaries": ["s0"], "label": "R", "c_s": False, "c_r": True}
