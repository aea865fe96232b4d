"""Sufficiency router: S (answer from summaries) vs R (escalate to raw pages).

Besides the runtime decision this module holds the supervision machinery:
hindsight labels from two-path outcomes, the cost-aware reward, and the
training-record builder.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .errors import ValidationError
from .gateway import Gateway, PromptKind, TokenUsage
from .summary_index import RetrievalHit

NO_SUMMARIES = "(no summaries retrieved)"


@dataclass(frozen=True)
class RouteDecision:
    action: str  # "S" | "R"
    thinking: str | None = None
    format_ok: bool = True
    usage: TokenUsage = TokenUsage()


@dataclass(frozen=True)
class SufficiencyLabel:
    c_s: bool
    c_r: bool
    label: str  # "S" | "R" | "Drop"


@dataclass(frozen=True)
class RewardConfig:
    correct_reward: float = 1.0
    wrong_penalty: float = -1.5
    cost_s: float = 0.0
    cost_r: float = 0.1
    waste_r: float = 0.4
    format_error_penalty: float = -1.0


def summaries_block(texts: Sequence[str]) -> str:
    if not texts:
        return NO_SUMMARIES
    return "\n".join(f"{i}. {t}" for i, t in enumerate(texts, start=1))


def route(gateway: Gateway, query: str, hits: Sequence[RetrievalHit]) -> RouteDecision:
    """Ask the router model; unparseable output falls back to R.

    BackendError propagates so the query fails instead of silently answering.
    """
    block = summaries_block([h.unit.text for h in hits])
    resp = gateway.complete(PromptKind.ROUTER, {"q": query, "summaries_block": block})
    if not resp.ok:
        return RouteDecision("R", None, False, resp.usage)
    return RouteDecision(resp.parsed.action, resp.parsed.thinking, True, resp.usage)


def hindsight_label(c_s: bool, c_r: bool) -> SufficiencyLabel:
    if c_s:
        label = "S"
    elif c_r:
        label = "R"
    else:
        label = "Drop"
    return SufficiencyLabel(bool(c_s), bool(c_r), label)


def reward(
    decision: RouteDecision,
    label: SufficiencyLabel,
    answer_correct: bool,
    cfg: RewardConfig = RewardConfig(),
) -> float:
    """Decision-level reward: accuracy term minus escalation cost and waste.

    A malformed decision swaps the accuracy term for the format penalty but
    still pays the cost and waste of the R fallback it triggers.
    """
    if label.label == "Drop":
        raise ValidationError("reward is undefined for Drop-labelled instances")
    action = decision.action if decision.format_ok else "R"
    if decision.format_ok:
        acc = cfg.correct_reward if answer_correct else cfg.wrong_penalty
    else:
        acc = cfg.format_error_penalty
    cost = cfg.cost_r if action == "R" else cfg.cost_s
    waste = cfg.waste_r if (action == "R" and label.label == "S") else 0.0
    return acc - cost - waste


@dataclass(frozen=True)
class TrainingRecord:
    query: str
    summaries: tuple[str, ...]
    label: str
    c_s: bool
    c_r: bool

    def to_json(self) -> dict:
        return {
            "query": self.query,
            "summaries": list(self.summaries),
            "label": self.label,
            "c_s": self.c_s,
            "c_r": self.c_r,
        }


def build_training_records(
    offline_log: Iterable[dict],
    oversample: int = 2,
    paraphraser: Callable[[str], list[str]] | None = None,
) -> list[TrainingRecord]:
    """Turn two-path outcomes into router training data.

    Each log entry needs ``query``, ``summaries``, ``c_s`` and ``c_r``. Entries
    whose R path failed (which includes every Drop) are removed; R-labelled
    entries are repeated ``oversample`` times. ``paraphraser`` optionally adds
    rewordings of each kept query with the same summaries and label.
    """
    if oversample < 1:
        raise ValidationError("oversample must be >= 1")
    out: list[TrainingRecord] = []
    for entry in offline_log:
        lab = hindsight_label(bool(entry["c_s"]), bool(entry["c_r"]))
        if lab.label == "Drop" or not lab.c_r:
            continue
        queries = [entry["query"]]
        if paraphraser is not None:
            queries += [p for p in paraphraser(entry["query"]) if p and p != entry["query"]]
        for q in queries:
            rec = TrainingRecord(q, tuple(entry["summaries"]), lab.label, lab.c_s, lab.c_r)
            out.extend([rec] * (oversample if lab.label == "R" else 1))
    return out


def write_training_records(records: Iterable[TrainingRecord], path: str | os.PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), ensure_ascii=False, sort_keys=True) + "\n")
    return path
