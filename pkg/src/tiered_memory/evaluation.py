"""Judges, metrics, S/R counterfactuals, hindsight labelling and epoch replay."""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .engine import Engine, Question, RoutingRecord, write_records
from .errors import BackendError, MemoryEngineError
from .gateway import Gateway, PromptKind
from .router import SufficiencyLabel, hindsight_label, summaries_block


@dataclass(frozen=True)
class JudgeVerdict:
    label: str  # "CORRECT" | "WRONG"
    reason: str = ""
    flagged: bool = False

    @property
    def correct(self) -> bool:
        return self.label == "CORRECT"


def judge_correctness(gateway: Gateway, question: str, gold: str, generated: str) -> JudgeVerdict:
    try:
        resp = gateway.complete(
            PromptKind.JUDGE_CORRECTNESS,
            {"question": question, "gold_answer": gold, "generated_answer": generated},
        )
    except BackendError as exc:
        return JudgeVerdict("WRONG", f"judge backend error: {exc}", True)
    if not resp.ok:
        return JudgeVerdict("WRONG", f"unparseable verdict: {resp.error}", True)
    return JudgeVerdict(resp.parsed.label, resp.parsed.reason)


def judge_sufficiency(gateway: Gateway, question: str, gold: str, summaries: Sequence[str]) -> bool:
    """Conservative: anything but an explicit ``true`` counts as insufficient."""
    try:
        resp = gateway.complete(
            PromptKind.JUDGE_SUFFICIENCY,
            {"question": question, "gold_answer": gold, "summaries_text": summaries_block(summaries)},
        )
    except BackendError:
        return False
    return bool(resp.ok and resp.parsed.has_sufficient_info)


# -- metrics ------------------------------------------------------------


def _rate(num: float, den: float) -> float | None:
    return num / den if den else None


def overhead_shares(
    tok_qa_in: float, tok_router_in: float, tok_gen_out: float, tok_router_out: float
) -> tuple[float | None, float | None]:
    """Router share of input tokens, and of all tokens."""
    total_in = tok_qa_in + tok_router_in
    total = total_in + tok_gen_out + tok_router_out
    return _rate(tok_router_in, total_in), _rate(tok_router_in + tok_router_out, total)


@dataclass
class CounterfactualMatrix:
    s_correct_r_correct: int = 0
    s_correct_r_wrong: int = 0
    s_wrong_r_correct: int = 0
    s_wrong_r_wrong: int = 0
    # cell -> {"correct": n, "wrong": n} against the record's own judged outcome
    decomposition: dict = field(default_factory=dict)

    @property
    def total(self) -> int:
        return (
            self.s_correct_r_correct
            + self.s_correct_r_wrong
            + self.s_wrong_r_correct
            + self.s_wrong_r_wrong
        )

    @property
    def repair_rate(self) -> float | None:
        return _rate(self.s_wrong_r_correct, self.s_wrong_r_correct + self.s_wrong_r_wrong)

    @property
    def regress_rate(self) -> float | None:
        return _rate(self.s_correct_r_wrong, self.s_correct_r_wrong + self.s_correct_r_correct)

    def to_json(self) -> dict:
        out = asdict(self)
        out.update(
            total=self.total,
            repair_rate=self.repair_rate,
            repair_denominator=self.s_wrong_r_correct + self.s_wrong_r_wrong,
            regress_rate=self.regress_rate,
            regress_denominator=self.s_correct_r_wrong + self.s_correct_r_correct,
        )
        return out


def counterfactual_matrix(records: Iterable[RoutingRecord]) -> CounterfactualMatrix:
    """Tabulate paired S/R outcomes over R-routed records that carry both."""
    m = CounterfactualMatrix()
    for rec in records:
        if rec.route != "R" or rec.s_correct is None or rec.r_correct is None:
            continue
        cell = f"s_{'correct' if rec.s_correct else 'wrong'}_r_{'correct' if rec.r_correct else 'wrong'}"
        setattr(m, cell, getattr(m, cell) + 1)
        if rec.correct is not None:
            bucket = m.decomposition.setdefault(cell, {"correct": 0, "wrong": 0})
            bucket["correct" if rec.correct else "wrong"] += 1
    return m


@dataclass
class MetricsReport:
    total: int
    correct: int
    accuracy: float | None
    r_routed: int
    r_rate: float | None
    uor: float | None = None
    uor_numerator: int | None = None
    uor_denominator: int | None = None
    hard_recall: float | None = None
    hard_recalled: int | None = None
    hard_total: int | None = None
    router_overhead_share_in: float | None = None
    router_overhead_share_total: float | None = None
    mean_tok_qa_in: float = 0.0
    mean_tok_router_in: float = 0.0
    mean_tok_gen_out: float = 0.0
    mean_tok_router_out: float = 0.0
    mean_tok_in_total: float = 0.0
    mean_tok_out_total: float = 0.0
    mean_latency_seconds: float = 0.0
    errors: int = 0
    judge_flagged: int = 0
    repair_rate: float | None = None
    regress_rate: float | None = None
    counterfactual: dict | None = None
    per_category: dict = field(default_factory=dict)
    config: dict | None = None

    def to_json(self) -> dict:
        return asdict(self)


def compute_metrics(
    records: Sequence[RoutingRecord],
    oracle_labels: Mapping[str, str] | None = None,
    config: dict | None = None,
) -> MetricsReport:
    """Aggregate judged records.

    Unjudged or errored records count as wrong. UOR needs paired two-path
    outcomes; hard recall needs oracle labels (query_id -> "S"/"R"/"Drop").
    Either is left as ``None`` when its inputs are absent.
    """
    n = len(records)
    correct = sum(1 for r in records if r.correct)
    r_routed = sum(1 for r in records if r.route == "R")
    sums = {k: 0 for k in ("tok_qa_in", "tok_router_in", "tok_gen_out", "tok_router_out")}
    latency = 0.0
    for r in records:
        for k in sums:
            sums[k] += getattr(r, k)
        latency += r.latency_seconds
    share_in, share_total = overhead_shares(
        sums["tok_qa_in"], sums["tok_router_in"], sums["tok_gen_out"], sums["tok_router_out"]
    )

    report = MetricsReport(
        total=n,
        correct=correct,
        accuracy=_rate(correct, n),
        r_routed=r_routed,
        r_rate=_rate(r_routed, n),
        router_overhead_share_in=share_in,
        router_overhead_share_total=share_total,
        mean_tok_qa_in=_rate(sums["tok_qa_in"], n) or 0.0,
        mean_tok_router_in=_rate(sums["tok_router_in"], n) or 0.0,
        mean_tok_gen_out=_rate(sums["tok_gen_out"], n) or 0.0,
        mean_tok_router_out=_rate(sums["tok_router_out"], n) or 0.0,
        mean_tok_in_total=_rate(sums["tok_qa_in"] + sums["tok_router_in"], n) or 0.0,
        mean_tok_out_total=_rate(sums["tok_gen_out"] + sums["tok_router_out"], n) or 0.0,
        mean_latency_seconds=_rate(latency, n) or 0.0,
        errors=sum(1 for r in records if r.error),
        judge_flagged=sum(1 for r in records if r.judge_flagged),
        config=config,
    )

    paired = [r for r in records if r.s_correct is not None and r.r_correct is not None]
    if paired:
        lost = sum(1 for r in paired if not r.s_correct and r.r_correct)
        report.uor, report.uor_numerator, report.uor_denominator = lost / len(paired), lost, len(paired)
        matrix = counterfactual_matrix(records)
        if matrix.total:
            report.counterfactual = matrix.to_json()
            report.repair_rate = matrix.repair_rate
            report.regress_rate = matrix.regress_rate

    if oracle_labels is not None:
        hard = [r for r in records if oracle_labels.get(r.query_id) == "R"]
        report.hard_total = len(hard)
        report.hard_recalled = sum(1 for r in hard if r.route == "R")
        report.hard_recall = _rate(report.hard_recalled, report.hard_total)

    cats: dict[str, list[int]] = {}
    for r in records:
        if r.category is not None:
            c = cats.setdefault(r.category, [0, 0])
            c[0] += 1 if r.correct else 0
            c[1] += 1
    report.per_category = {
        k: {"correct": v[0], "total": v[1], "accuracy": v[0] / v[1]} for k, v in sorted(cats.items())
    }
    return report


# -- judging & two-path runs -------------------------------------------


def judge_records(gateway: Gateway, records: Sequence[RoutingRecord], workers: int = 1) -> None:
    """Fill ``correct`` on every record with a gold answer, in place."""

    def one(rec: RoutingRecord) -> None:
        if rec.gold_answer is None:
            return
        if rec.error:
            rec.correct, rec.judge_reason = False, "query failed"
            return
        v = judge_correctness(gateway, rec.question, rec.gold_answer, rec.answer)
        rec.correct, rec.judge_reason, rec.judge_flagged = v.correct, v.reason, v.flagged

    if workers <= 1:
        for rec in records:
            one(rec)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(one, records))


def two_path_run(engine: Engine, questions: Sequence[Question]) -> list[RoutingRecord]:
    """Route every query normally, and also produce both S and R answers.

    Each record carries the routed outcome plus ``s_correct``, ``r_correct``
    and the summary-sufficiency verdict ``c_s``; Tier-1 is not modified.
    """
    out = []
    for q in questions:
        try:
            _, rec = engine.answer(q)
        except MemoryEngineError as exc:
            out.append(RoutingRecord(q.query_id, q.question, "", "", error=str(exc),
                                     gold_answer=q.gold_answer, category=q.category, epoch=engine.epoch))
            continue
        hits = engine.retrieve(q.question)
        try:
            s_resp = engine.generate_from_summaries(q.question, hits)
            rec.s_answer = s_resp.parsed if s_resp.ok else s_resp.raw_text.strip()
        except BackendError:
            rec.s_answer = ""
        if rec.route == "R" and rec.escalation is not None and not rec.error:
            rec.r_answer = rec.answer
        else:
            try:
                pack = engine.researcher.escalate(q.question, hits, q.query_id)
                r_resp = engine.generate_from_evidence(q.question, pack)
                rec.r_answer = r_resp.parsed if r_resp.ok else r_resp.raw_text.strip()
            except BackendError:
                rec.r_answer = ""
        if q.gold_answer is not None:
            g = engine.gateway
            rec.s_correct = judge_correctness(g, q.question, q.gold_answer, rec.s_answer).correct
            rec.r_correct = judge_correctness(g, q.question, q.gold_answer, rec.r_answer).correct
            rec.c_s = judge_sufficiency(g, q.question, q.gold_answer, [h.unit.text for h in hits])
            if rec.error:
                rec.correct = False
            else:
                rec.correct = rec.s_correct if rec.route == "S" else rec.r_correct
        out.append(rec)
    return out


def hindsight_labels(records: Iterable[RoutingRecord]) -> dict[str, SufficiencyLabel]:
    """Per-query S/R/Drop labels from sufficiency (c_S) and R-path correctness (c_R)."""
    return {
        r.query_id: hindsight_label(bool(r.c_s), bool(r.r_correct))
        for r in records
        if r.c_s is not None and r.r_correct is not None
    }


def offline_log(engine: Engine, records: Iterable[RoutingRecord]) -> list[dict]:
    """Router-training rows ({query, summaries, c_s, c_r}) from two-path records."""
    rows = []
    for r in records:
        if r.c_s is None or r.r_correct is None:
            continue
        hits = engine.retrieve(r.question)
        rows.append(
            {"query": r.question, "summaries": [h.unit.text for h in hits], "c_s": r.c_s, "c_r": r.r_correct}
        )
    return rows


# -- replay -------------------------------------------------------------


@dataclass
class EpochRow:
    epoch: int
    accuracy: float | None
    s_traffic: int
    s_acc: float | None
    s_correct: int
    tok_avg: float
    latency: float
    adds: int | None
    updates: int | None
    skips: int | None
    tier1_writes_during_epoch: int
    tier1_units: int
    total: int

    def to_json(self) -> dict:
        return asdict(self)


def epoch_row(records: Sequence[RoutingRecord], epoch: int, writes: int, units: int) -> EpochRow:
    n = len(records)
    s_routed = [r for r in records if r.route == "S"]
    s_correct = sum(1 for r in s_routed if r.correct)
    return EpochRow(
        epoch=epoch,
        accuracy=_rate(sum(1 for r in records if r.correct), n),
        s_traffic=len(s_routed),
        s_acc=_rate(s_correct, len(s_routed)),
        s_correct=s_correct,
        tok_avg=_rate(sum(r.tok_in_total for r in records), n) or 0.0,
        latency=_rate(sum(r.latency_seconds for r in records), n) or 0.0,
        adds=None,
        updates=None,
        skips=None,
        tier1_writes_during_epoch=writes,
        tier1_units=units,
        total=n,
    )


def replay(
    engine: Engine,
    questions: Sequence[Question],
    epochs: int,
    variant: str = "retrieve-edit",
    consolidate_last: bool = False,
    out_dir: str | os.PathLike | None = None,
    judge: bool = True,
) -> list[EpochRow]:
    """Replay the same questions ``epochs`` times with Tier-1 frozen inside each.

    Findings gathered in epoch e are consolidated before epoch e+1; the row
    for epoch e reports the ADD/UPDATE counts that consolidation produced.
    """
    out = Path(out_dir) if out_dir is not None else None
    rows: list[EpochRow] = []
    for e in range(1, epochs + 1):
        engine.epoch = e
        writes_before = engine.index.write_count
        records = engine.run_batch(questions, epoch=e)
        writes = engine.index.write_count - writes_before
        if judge:
            judge_records(engine.gateway, records, engine.config.workers)
        row = epoch_row(records, e, writes, len(engine.index))
        if out is not None:
            write_records(records, out / f"epoch_{e}" / "records.jsonl")
        if e < epochs or consolidate_last:
            log, summary = engine.consolidate(variant, epoch=e + 1)
            row.adds, row.updates, row.skips = summary.adds, summary.updates, summary.skips
            if out is not None:
                log.save(out / f"epoch_{e}" / "epoch_log.jsonl")
        else:
            engine.findings.drain()
        if out is not None:
            _write_json(out / f"epoch_{e}" / "epoch_report.json", _table_row(row))
        rows.append(row)
    if out is not None:
        _write_json(
            out / "evolution.json",
            {"variant": variant, "epochs": [r.to_json() for r in rows], "config": engine.config.to_json()},
        )
    return rows


def _table_row(row: EpochRow) -> dict:
    return {
        "epoch": row.epoch,
        "s_traffic": row.s_traffic,
        "s_acc": row.s_acc,
        "s_correct": row.s_correct,
        "tok_avg": row.tok_avg,
        "latency": row.latency,
        "adds": row.adds,
        "updates": row.updates,
    }


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_metrics(report: MetricsReport, path: str | os.PathLike) -> None:
    _write_json(Path(path), report.to_json())
