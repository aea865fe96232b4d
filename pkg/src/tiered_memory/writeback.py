"""Verified write-back from escalations into Tier-1.

Findings are collected while an epoch runs (Tier-1 frozen) and consolidated
between epochs, one at a time, so later findings see the effect of earlier
ones. Two strategies exist: ``no-recall`` only ever adds or skips, while
``retrieve-edit`` first recalls related units and may merge into one of them.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import BackendError, BatchApplyError, CorruptRecordError, ValidationError
from .gateway import Gateway, PromptKind, TokenUsage
from .research import LinkedFact
from .summary_index import SummaryIndex

ADD, UPDATE, SKIP = "ADD", "UPDATE", "SKIP"
VARIANTS = ("no-recall", "retrieve-edit")


@dataclass(frozen=True)
class VerifiedFinding:
    fact: LinkedFact
    triggering_query: str
    epoch: int = 0

    def __post_init__(self) -> None:
        if not self.fact.source_pages:
            raise ValidationError("a verified finding must cite at least one raw page")

    def to_json(self) -> dict:
        return {"fact": self.fact.to_json(), "triggering_query": self.triggering_query, "epoch": self.epoch}

    @classmethod
    def from_json(cls, obj: dict) -> VerifiedFinding:
        return cls(LinkedFact.from_json(obj["fact"]), obj["triggering_query"], int(obj.get("epoch", 0)))


@dataclass(frozen=True)
class WriteOp:
    kind: str
    finding: VerifiedFinding
    target_unit: str | None = None
    merged_text: str | None = None
    error: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in (ADD, UPDATE, SKIP):
            raise ValidationError(f"unknown write op {self.kind!r}")
        if self.kind == UPDATE and (not self.target_unit or not self.merged_text):
            raise ValidationError("UPDATE needs a target unit and merged text")
        if self.kind != UPDATE and self.target_unit is not None:
            raise ValidationError(f"{self.kind} takes no target unit")

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "target_unit": self.target_unit,
            "merged_text": self.merged_text,
            "finding": self.finding.to_json(),
            "error": self.error,
        }

    @classmethod
    def from_json(cls, obj: dict) -> WriteOp:
        return cls(
            kind=obj["kind"],
            finding=VerifiedFinding.from_json(obj["finding"]),
            target_unit=obj.get("target_unit"),
            merged_text=obj.get("merged_text"),
            error=obj.get("error"),
        )


class FindingLog:
    """Append-only, thread-safe sink for findings gathered during an epoch."""

    def __init__(self) -> None:
        self._items: list[VerifiedFinding] = []
        self._lock = threading.Lock()

    def extend(self, findings: Iterable[VerifiedFinding]) -> None:
        with self._lock:
            self._items.extend(findings)

    def drain(self) -> list[VerifiedFinding]:
        with self._lock:
            items, self._items = self._items, []
        return items

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self):
        return iter(list(self._items))


@dataclass
class EpochLog:
    ops: list[WriteOp] = field(default_factory=list)

    def save(self, path: str | os.PathLike) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            for op in self.ops:
                fh.write(json.dumps(op.to_json(), ensure_ascii=False, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, path: str | os.PathLike) -> EpochLog:
        ops = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    ops.append(WriteOp.from_json(json.loads(line)))
                except (ValueError, KeyError, TypeError) as exc:
                    raise CorruptRecordError(str(path), lineno, str(exc)) from exc
        return cls(ops)


@dataclass
class BatchSummary:
    adds: int = 0
    updates: int = 0
    skips: int = 0
    errors: int = 0

    def to_json(self) -> dict:
        return {"adds": self.adds, "updates": self.updates, "skips": self.skips, "errors": self.errors}


def facts_list(facts: Sequence[LinkedFact]) -> str:
    lines = []
    for i, f in enumerate(facts):
        line = f"[{i}] {f.fact}"
        if f.evidence_quote:
            line += f' (evidence: "{f.evidence_quote}")'
        lines.append(line)
    return "\n".join(lines) if lines else "(none)"


def verify_findings(
    gateway: Gateway, query: str, facts: Sequence[LinkedFact], epoch: int = 0
) -> list[VerifiedFinding]:
    """Keep facts the judge selects AND that resolved to at least one page.

    Any failure selects nothing, which is always safe.
    """
    return verify_findings_metered(gateway, query, facts, epoch)[0]


def verify_findings_metered(
    gateway: Gateway, query: str, facts: Sequence[LinkedFact], epoch: int = 0
) -> tuple[list[VerifiedFinding], TokenUsage]:
    if not facts:
        return [], TokenUsage()
    try:
        resp = gateway.complete(
            PromptKind.WRITEBACK_VERIFY, {"question": query, "facts_list": facts_list(facts)}
        )
    except BackendError:
        return [], TokenUsage()
    if not resp.ok:
        return [], resp.usage
    selected = [
        VerifiedFinding(facts[i], query, epoch)
        for i in resp.parsed
        if 0 <= i < len(facts) and facts[i].source_pages
    ]
    return selected, resp.usage


def _edit_call(gateway: Gateway, finding: VerifiedFinding, candidates: str, allowed: str):
    return gateway.complete(
        PromptKind.WRITEBACK_EDIT,
        {
            "question": finding.triggering_query,
            "new_fact": finding.fact.fact,
            "candidates": candidates,
            "allowed_operations": allowed,
        },
    )


def consolidate_no_recall(gateway: Gateway, finding: VerifiedFinding) -> WriteOp:
    """Decide ADD or SKIP from the finding alone; never touches existing units."""
    try:
        resp = _edit_call(gateway, finding, "(not consulted)", "ADD or SKIP")
    except BackendError as exc:
        return WriteOp(SKIP, finding, error=f"backend: {exc}")
    if not resp.ok:
        return WriteOp(SKIP, finding, error=f"format: {resp.error}")
    op = resp.parsed.operation
    if op == UPDATE:
        return WriteOp(SKIP, finding, error="UPDATE is not available without recall")
    return WriteOp(op, finding)


def consolidate_retrieve_edit(
    gateway: Gateway, index: SummaryIndex, finding: VerifiedFinding, k: int = 3
) -> WriteOp:
    """Recall the top-k related units, then let the model pick ADD/UPDATE/SKIP."""
    hits = index.search(finding.fact.fact, k)
    if not hits:
        return WriteOp(ADD, finding)
    candidates = "\n".join(f"[{i}] ({h.unit.unit_id}) {h.unit.text}" for i, h in enumerate(hits))
    try:
        resp = _edit_call(gateway, finding, candidates, "ADD, UPDATE or SKIP")
    except BackendError as exc:
        return WriteOp(SKIP, finding, error=f"backend: {exc}")
    if not resp.ok:
        return WriteOp(SKIP, finding, error=f"format: {resp.error}")
    payload = resp.parsed
    if payload.operation != UPDATE:
        return WriteOp(payload.operation, finding)
    ids = [h.unit.unit_id for h in hits]
    target = payload.target
    if isinstance(target, int):
        target = ids[target] if 0 <= target < len(ids) else None
    elif isinstance(target, str) and target.strip().isdigit() and target.strip() not in ids:
        idx = int(target.strip())
        target = ids[idx] if idx < len(ids) else None
    if target not in ids:
        return WriteOp(SKIP, finding, error=f"UPDATE target {payload.target!r} is not a candidate")
    return WriteOp(UPDATE, finding, target_unit=target, merged_text=payload.merged_text)


def apply_op(index: SummaryIndex, op: WriteOp, epoch: int) -> None:
    pages = op.finding.fact.source_pages
    if op.kind == ADD:
        index.add_unit(op.finding.fact.fact, pages, "linked_fact", epoch)
    elif op.kind == UPDATE:
        index.update_unit(op.target_unit, op.merged_text, pages, epoch=epoch)


def apply_epoch_batch(
    index: SummaryIndex, log: EpochLog, epoch: int, start: int = 0
) -> BatchSummary:
    """Apply logged ops in order; new and updated units get ``epoch``.

    On failure raises BatchApplyError carrying the last committed index so the
    batch can be resumed with ``start=last_applied + 1``.
    """
    summary = BatchSummary()
    for i in range(start, len(log.ops)):
        op = log.ops[i]
        try:
            apply_op(index, op, epoch)
        except Exception as exc:
            raise BatchApplyError(i - 1, exc) from exc
        _count(summary, op)
    return summary


def _count(summary: BatchSummary, op: WriteOp) -> None:
    if op.kind == ADD:
        summary.adds += 1
    elif op.kind == UPDATE:
        summary.updates += 1
    else:
        summary.skips += 1
    if op.error:
        summary.errors += 1


class Consolidator:
    """Between-epoch consolidation: decide and apply each finding in turn."""

    def __init__(self, gateway: Gateway, index: SummaryIndex, variant: str = "retrieve-edit", k: int = 3) -> None:
        if variant not in VARIANTS:
            raise ValidationError(f"variant must be one of {VARIANTS}")
        self.gateway = gateway
        self.index = index
        self.variant = variant
        self.k = k

    def decide(self, finding: VerifiedFinding) -> WriteOp:
        if self.variant == "no-recall":
            return consolidate_no_recall(self.gateway, finding)
        return consolidate_retrieve_edit(self.gateway, self.index, finding, self.k)

    def run(self, findings: Iterable[VerifiedFinding], epoch: int) -> tuple[EpochLog, BatchSummary]:
        log = EpochLog()
        summary = BatchSummary()
        for finding in findings:
            op = self.decide(finding)
            try:
                apply_op(self.index, op, epoch)
            except Exception as exc:
                raise BatchApplyError(len(log.ops) - 1, exc) from exc
            log.ops.append(op)
            _count(summary, op)
        return log, summary
