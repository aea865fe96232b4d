"""A small scripted world for demos and end-to-end tests.

Two speakers chat for about 3k tokens (three pages). Six facts are planted in
the chat. Fact extraction is scripted to miss three of them, so questions about
those can only be answered by escalating to the raw pages; the findings from
those escalations are what write-back later moves into Tier-1.
"""

from __future__ import annotations

import json
import os
import random
from pathlib import Path

from .engine import Question
from .page_store import Turn
from .tokens import estimate_tokens

SESSION = "demo"

# turn index -> (speaker, text); positions chosen so two land on each page
PLANTED = {
    3: ("Robin", "I finally started a pottery class on Thursdays."),
    6: ("Sam", "Melanie's dog is a greyhound named Pixel, and he loves the beach."),
    45: ("Robin", "Caroline is training for the Lisbon half marathon this spring."),
    50: ("Sam", "Caroline's sister works as a marine biologist at the aquarium."),
    82: ("Robin", "Caroline finished the Lisbon half marathon in 1 hour 52 minutes."),
    88: ("Sam", "I am planning a trip to Kyoto in October."),
}

_NOUNS = (
    "garden kettle bus umbrella notebook bakery window bridge river lamp sweater "
    "painting recipe podcast laptop bench market tram balcony library"
).split()
_VERBS = "fixed noticed borrowed painted cleaned moved found repaired sketched".split()
_ADJ = "old blue quiet small wooden noisy bright narrow".split()
_WHEN = ("yesterday", "last night", "this morning", "on sunday", "after lunch")

# (page marker, facts the scripted extractor returns for that page)
_EXTRACTED = (
    ("greyhound", ["Robin started a pottery class on Thursdays",
                   "Sam and Robin chatted about the garden and the bakery"]),
    ("marine biologist", ["Caroline is training for the Lisbon half marathon",
                          "Robin repaired an old wooden bench"]),
    ("1 hour 52 minutes", ["Sam is planning a trip to Kyoto in October",
                           "Sam borrowed a blue umbrella from the library"]),
)

# query_id, question, gold, category, evidence phrase that makes Tier-1 sufficient
_ANSWERABLE = (
    ("v1", "What class did Robin start?", "pottery", "single-hop", "pottery class"),
    ("v2", "Where is Sam planning a trip?", "Kyoto", "single-hop", "trip to Kyoto"),
    ("v3", "What race is Caroline training for?", "Lisbon half marathon", "single-hop",
     "training for the Lisbon half marathon"),
)
# questions whose answer Tier-1 misses until write-back
_HIDDEN = (
    ("h1", "What is the name of Melanie's dog?", "Pixel", "single-hop",
     "Melanie's dog is a greyhound named Pixel", "greyhound named Pixel"),
    ("h2", "What does Caroline's sister do for work?", "marine biologist", "single-hop",
     "Caroline's sister works as a marine biologist", "marine biologist"),
    ("h3", "How long did Caroline take to finish the Lisbon half marathon?", "1 hour 52 minutes",
     "multi-hop", "Caroline finished the Lisbon half marathon in 1 hour 52 minutes", "1 hour 52 minutes"),
)
_UNKNOWN = (
    "What is Robin's favorite color?",
    "Where did Sam grow up?",
    "What car does Robin drive?",
    "How many siblings does Sam have?",
    "What instrument does Robin play?",
    "Which team does Sam support?",
    "What is Robin's job?",
    "When is Sam's birthday?",
    "What language is Robin learning?",
    "Which city does Sam live in?",
    "What did Robin cook for dinner on Friday?",
    "What is the name of Sam's cat?",
    "Which book is Robin reading?",
    "What did Sam buy at the hardware store?",
)
ABSTAIN = "I don't know"
UPDATED_MARATHON = "Caroline was training for the Lisbon half marathon and finished it in 1 hour 52 minutes"

# synthetic per-call latency so reports show non-zero, reproducible timings
_LATENCY = {
    "Router": 0.2,
    "AnswerSummary": 0.5,
    "AnswerResearch": 0.6,
    "Integration": 0.9,
    "Plan": 0.3,
}


def transcript(seed: int = 7, target_tokens: int = 3000) -> list[Turn]:
    rng = random.Random(seed)
    turns: list[Turn] = []
    total = 0
    i = 0
    while total < target_tokens or i <= max(PLANTED):
        if i in PLANTED:
            speaker, text = PLANTED[i]
        else:
            speaker = ("Sam", "Robin")[i % 2]
            text = " ".join(
                f"I {rng.choice(_VERBS)} the {rng.choice(_ADJ)} {rng.choice(_NOUNS)} "
                f"near the {rng.choice(_NOUNS)} {rng.choice(_WHEN)}."
                for _ in range(2)
            )
        turn = Turn(f"2023-05-{1 + i // 10:02d}T{10 + i % 10:02d}:00", speaker, text)
        turns.append(turn)
        total += estimate_tokens(turn.render())
        i += 1
    return turns


def questions() -> list[Question]:
    out = [Question(q, text, gold, cat) for q, text, gold, cat, _ in _ANSWERABLE]
    out += [Question(q, text, gold, cat) for q, text, gold, cat, _, _ in _HIDDEN]
    out += [Question(f"u{i + 1:02d}", text, ABSTAIN, "adversarial") for i, text in enumerate(_UNKNOWN)]
    return out


def script() -> list[dict]:
    """Mock script entries: a sticky rule table where earlier entries win."""
    s: list[dict] = []

    def add(kind, response, match=""):
        entry = {"kind": kind, "match": match, "response": response, "sticky": True}
        if kind in _LATENCY:
            entry["latency_seconds"] = _LATENCY[kind]
        s.append(entry)

    for marker, facts in _EXTRACTED:
        add("FactExtraction", {"facts": facts}, marker)

    # routing: S whenever the retrieved summaries carry the answer
    for _, text, _, _, *rest in _HIDDEN:
        add("Router", {"thinking": "summaries state the answer", "action": "S"}, [text, rest[-1]])
    for _, text, _, _, phrase in _ANSWERABLE:
        add("Router", {"thinking": "summaries state the answer", "action": "S"}, [text, phrase])
    add("Router", {"thinking": "summaries lack the detail", "action": "R"})

    for _, text, gold, _, phrase in _ANSWERABLE:
        add("AnswerSummary", gold, [text, phrase])
    for _, text, gold, _, _, phrase in _HIDDEN:
        add("AnswerSummary", gold, [text, phrase])
        add("Integration", {
            "linked_facts": [{"fact": _fact_for(text), "evidence_quote": _fact_for(text)}],
            "coverage_assessment": "the raw log answers the question directly",
        }, text)
        add("AnswerResearch", gold, [text, phrase])
        add("WriteBackVerify", [0], text)
    add("AnswerSummary", ABSTAIN)
    add("AnswerResearch", ABSTAIN)
    add("Integration", {"linked_facts": [], "coverage_assessment": "no relevant evidence"})
    add("Plan", {"decision": "DONE", "reasoning": "evidence gathered or nothing more to find"})
    add("WriteBackVerify", [])

    add("WriteBackEdit", {
        "operation": "UPDATE", "target": 0, "merged_text": UPDATED_MARATHON,
    }, "New fact: Caroline finished")
    add("WriteBackEdit", {"operation": "ADD"})

    golds = [g for _, _, g, _, _ in _ANSWERABLE] + [g for _, _, g, _, _, _ in _HIDDEN] + [ABSTAIN]
    for gold in golds:
        add("JudgeCorrectness", {"label": "CORRECT", "reason": "matches the gold answer"},
            f"Gold answer: {gold}\nGenerated answer: {gold}")
    add("JudgeCorrectness", {"label": "WRONG", "reason": "does not match the gold answer"})
    for _, text, _, _, phrase in _ANSWERABLE:
        add("JudgeSufficiency", {"has_sufficient_info": True}, [text, phrase])
    for _, text, _, _, _, phrase in _HIDDEN:
        add("JudgeSufficiency", {"has_sufficient_info": True}, [text, phrase])
    add("JudgeSufficiency", {"has_sufficient_info": False})
    return s


def _fact_for(question: str) -> str:
    return next(fact for _, text, _, _, fact, _ in _HIDDEN if text == question)


def write_files(directory: str | os.PathLike) -> dict[str, Path]:
    """Write transcript.jsonl, questions.jsonl and mock_script.jsonl."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = {
        "transcript": d / "transcript.jsonl",
        "questions": d / "questions.jsonl",
        "mock_script": d / "mock_script.jsonl",
    }
    _jsonl(paths["transcript"], (t.to_json() for t in transcript()))
    _jsonl(
        paths["questions"],
        ({"query_id": q.query_id, "question": q.question, "gold_answer": q.gold_answer,
          "category": q.category} for q in questions()),
    )
    _jsonl(paths["mock_script"], script())
    return paths


def _jsonl(path: Path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")
