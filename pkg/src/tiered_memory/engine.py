"""End-to-end pipeline: ingest, route, answer or escalate, collect findings."""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .embedding import HashedEmbedder
from .errors import BackendError, CorruptRecordError, MemoryEngineError, ValidationError
from .gateway import AnswerStyle, Gateway, HTTPBackend, MockBackend, PromptKind, TokenUsage
from .page_store import Page, PageStore, Turn
from .research import EvidencePack, Researcher
from .router import RewardConfig, RouteDecision, route, summaries_block
from .summary_index import RetrievalHit, SummaryIndex
from .tokens import estimate_tokens
from .writeback import Consolidator, FindingLog, VerifiedFinding, verify_findings_metered

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

log = logging.getLogger(__name__)


@dataclass
class EngineConfig:
    max_page_tokens: int = 1000
    t_max: int = 3
    k_summaries: int = 5
    rerank_k: int = 4
    protection_threshold: float = 0.85
    overlap_threshold: float = 0.5
    writeback_k: int = 3
    embedding_dim: int = 256
    reward: RewardConfig = field(default_factory=RewardConfig)
    backend: str = "mock"  # "mock" | "http"
    mock_script: str | None = None
    model: str = "gpt-4.1-mini"
    base_url: str = "https://api.openai.com/v1"
    api_key_env: str = "TIERED_MEMORY_API_KEY"
    timeout_seconds: float = 60.0
    max_attempts: int = 3
    answer_style: str = AnswerStyle.SHORT_PHRASE.value
    generator_temperature: float = 0.0
    collect_findings: bool = True
    online_writeback: bool = False
    writeback_variant: str = "retrieve-edit"
    workers: int = 1
    oversample: int = 2

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> EngineConfig:
        data = dict(data)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValidationError(f"unknown config key(s): {', '.join(unknown)}")
        if isinstance(data.get("reward"), dict):
            reward_keys = {f.name for f in dataclasses.fields(RewardConfig)}
            bad = sorted(set(data["reward"]) - reward_keys)
            if bad:
                raise ValidationError(f"unknown reward key(s): {', '.join(bad)}")
            data["reward"] = RewardConfig(**data["reward"])
        cfg = cls(**data)
        AnswerStyle(cfg.answer_style)
        return cfg

    @classmethod
    def load(cls, path: str | os.PathLike) -> EngineConfig:
        path = Path(path)
        raw = path.read_bytes()
        if path.suffix == ".json":
            data = json.loads(raw)
        else:
            data = tomllib.loads(raw.decode("utf-8"))
        return cls.from_dict(data)


@dataclass(frozen=True)
class Question:
    query_id: str
    question: str
    gold_answer: str | None = None
    category: str | None = None

    @classmethod
    def from_json(cls, obj: dict) -> Question:
        return cls(
            str(obj["query_id"]),
            obj["question"],
            obj.get("gold_answer"),
            None if obj.get("category") is None else str(obj["category"]),
        )


def load_questions(path: str | os.PathLike) -> list[Question]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(Question.from_json(json.loads(line)))
            except (ValueError, KeyError, TypeError) as exc:
                raise CorruptRecordError(str(path), lineno, str(exc)) from exc
    return out


@dataclass
class RoutingRecord:
    query_id: str
    question: str
    route: str
    answer: str
    tok_qa_in: int = 0
    tok_router_in: int = 0
    tok_gen_out: int = 0
    tok_router_out: int = 0
    latency_seconds: float = 0.0
    escalation: dict | None = None
    epoch: int = 0
    error: str | None = None
    router_format_ok: bool = True
    hit_sources: dict = field(default_factory=dict)
    findings: int = 0
    tok_writeback_in: int = 0
    tok_writeback_out: int = 0
    gold_answer: str | None = None
    category: str | None = None
    # filled in by the evaluation harness
    correct: bool | None = None
    judge_reason: str | None = None
    judge_flagged: bool = False
    # paired two-path outcomes, when the harness runs both paths
    s_answer: str | None = None
    r_answer: str | None = None
    s_correct: bool | None = None
    r_correct: bool | None = None
    c_s: bool | None = None

    @property
    def tok_in_total(self) -> int:
        return self.tok_qa_in + self.tok_router_in

    @property
    def tok_out_total(self) -> int:
        return self.tok_gen_out + self.tok_router_out

    def to_json(self) -> dict:
        out = dataclasses.asdict(self)
        out["tok_in_total"] = self.tok_in_total
        out["tok_out_total"] = self.tok_out_total
        return out

    @classmethod
    def from_json(cls, obj: dict) -> RoutingRecord:
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in obj.items() if k in names})


def write_records(records: Iterable[RoutingRecord], path: str | os.PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), ensure_ascii=False, sort_keys=True) + "\n")
    return path


def read_records(path: str | os.PathLike) -> list[RoutingRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(RoutingRecord.from_json(json.loads(line)))
            except (ValueError, TypeError) as exc:
                raise CorruptRecordError(str(path), lineno, str(exc)) from exc
    return out


def research_context(pack: EvidencePack) -> str:
    """Evidence handed to the generator on the R path."""
    if not pack.facts:
        return "(no evidence found)"
    lines = []
    for f in pack.facts:
        line = f"- {f.fact}"
        if f.evidence_quote:
            line += f' (quote: "{f.evidence_quote}")'
        lines.append(line)
    if pack.coverage_assessment:
        lines.append(f"Coverage: {pack.coverage_assessment}")
    return "\n".join(lines)


def build_gateway(config: EngineConfig) -> Gateway:
    if config.backend == "mock":
        backend = MockBackend.from_file(config.mock_script) if config.mock_script else MockBackend()
    elif config.backend == "http":
        backend = HTTPBackend(config.base_url, config.model, config.api_key_env, config.timeout_seconds)
    else:
        raise ValidationError(f"unknown backend {config.backend!r}")
    return Gateway(
        backend,
        max_attempts=config.max_attempts,
        retry_backoff=0.5 if config.backend == "http" else 0.0,
        answer_style=config.answer_style,
        generator_temperature=config.generator_temperature,
    )


class Engine:
    """Both memory tiers plus the query pipeline over them.

    Within an epoch Tier-1 is read-only; findings from escalations pile up in
    ``findings`` and are consolidated by :meth:`consolidate` between epochs.
    """

    def __init__(
        self,
        config: EngineConfig | None = None,
        gateway: Gateway | None = None,
        root: str | os.PathLike | None = None,
    ) -> None:
        self.config = config or EngineConfig()
        self.gateway = gateway or build_gateway(self.config)
        self.root = Path(root) if root is not None else None
        self.pages = PageStore(self.config.max_page_tokens, estimate_tokens)
        self.index = SummaryIndex(self.pages, HashedEmbedder(self.config.embedding_dim))
        self.events: list[dict] = []
        self.researcher = Researcher(
            self.gateway,
            self.pages,
            self.index,
            t_max=self.config.t_max,
            rerank_k=self.config.rerank_k,
            k_summaries=self.config.k_summaries,
            protection_threshold=self.config.protection_threshold,
            overlap_threshold=self.config.overlap_threshold,
            trace=self.events.append,
        )
        self.findings = FindingLog()
        self.epoch = 0
        self.summary_errors: dict[str, str] = {}
        self.ingest_usage = TokenUsage()
        self.pages.on_seal(self._on_seal)
        self._summarize_on_seal = True

    # -- ingestion ------------------------------------------------------

    def _on_seal(self, page: Page) -> None:
        if not self._summarize_on_seal:
            return
        try:
            before = self.gateway.stats.usage
            self.index.summarize_page(self.gateway, page.page_id, self.epoch)
            self.ingest_usage = self.ingest_usage + _diff(self.gateway.stats.usage, before)
        except (BackendError, ValidationError) as exc:
            # left unindexed; auto_summary retries it
            self.summary_errors[page.page_id] = str(exc)

    def ingest(
        self,
        session_id: str,
        transcript: Iterable[tuple[str, str, str] | Turn | dict],
        defer_summaries: bool = False,
    ) -> dict:
        """Page a transcript into Tier-2 and summarize sealed pages into Tier-1."""
        pages_before = len(self.pages.page_ids(session_id))
        units_before = len(self.index)
        start = time.perf_counter()
        self._summarize_on_seal = not defer_summaries
        try:
            for item in transcript:
                self.pages.append_turn(session_id, _as_turn(item))
            self.pages.flush(session_id)
        finally:
            self._summarize_on_seal = True
        result = self.index.auto_summary(self.gateway, session_id, self.epoch)
        self.summary_errors.update(result.errors)
        for page_id in self.pages.page_ids(session_id):
            if self.pages.get_page(page_id).indexed:
                self.summary_errors.pop(page_id, None)
        return {
            "session_id": session_id,
            "pages": len(self.pages.page_ids(session_id)) - pages_before,
            "units": len(self.index) - units_before,
            "unindexed_pages": sorted(
                p for p in self.summary_errors if p.startswith(f"{session_id}/")
            ),
            # reported apart from per-query latency
            "latency_seconds": time.perf_counter() - start if not self.gateway.deterministic else 0.0,
        }

    # -- answering ------------------------------------------------------

    def retrieve(self, question: str) -> list[RetrievalHit]:
        return self.index.search(question, self.config.k_summaries)

    def generate_from_summaries(self, question: str, hits: Sequence[RetrievalHit]):
        block = summaries_block([h.unit.text for h in hits])
        return self.gateway.complete(PromptKind.ANSWER_SUMMARY, {"question": question, "summary": block})

    def generate_from_evidence(self, question: str, pack: EvidencePack):
        return self.gateway.complete(
            PromptKind.ANSWER_RESEARCH, {"question": question, "summary": research_context(pack)}
        )

    def answer(
        self, question: str | Question, query_id: str | None = None
    ) -> tuple[str, RoutingRecord]:
        if isinstance(question, Question):
            q = question
        else:
            q = Question(query_id or f"q{len(self.events):05d}", question)
        start = time.perf_counter()
        rec = RoutingRecord(q.query_id, q.question, route="", answer="", epoch=self.epoch,
                            gold_answer=q.gold_answer, category=q.category)
        call_latency = 0.0
        hits = self.retrieve(q.question)
        rec.hit_sources = _hit_sources(hits)
        try:
            decision: RouteDecision = route(self.gateway, q.question, hits)
        except BackendError as exc:
            rec.error = f"router: {exc}"
            rec.latency_seconds = self._latency(start, call_latency)
            return "", rec
        rec.route = decision.action
        rec.router_format_ok = decision.format_ok
        rec.tok_router_in = decision.usage.input_tokens
        rec.tok_router_out = decision.usage.output_tokens
        call_latency += decision.usage.latency_seconds

        qa = TokenUsage()
        pack = None
        try:
            if decision.action == "S":
                resp = self.generate_from_summaries(q.question, hits)
            else:
                pack = self.researcher.escalate(q.question, hits, q.query_id)
                qa = qa + pack.usage
                rec.escalation = pack.to_json()
                resp = self.generate_from_evidence(q.question, pack)
            qa = qa + resp.usage
            rec.answer = resp.parsed if resp.ok else resp.raw_text.strip()
        except BackendError as exc:
            rec.error = f"generation: {exc}"
        rec.tok_qa_in = qa.input_tokens
        rec.tok_gen_out = qa.output_tokens
        call_latency += qa.latency_seconds

        if pack is not None and pack.facts and self.config.collect_findings:
            wb = self._collect_findings(q.question, pack)
            rec.findings = len(wb[0])
            rec.tok_writeback_in = wb[1].input_tokens
            rec.tok_writeback_out = wb[1].output_tokens
        rec.latency_seconds = self._latency(start, call_latency)
        return rec.answer, rec

    def _collect_findings(self, question: str, pack: EvidencePack) -> tuple[list[VerifiedFinding], TokenUsage]:
        found, usage = verify_findings_metered(self.gateway, question, pack.facts, self.epoch)
        if self.config.online_writeback and found:
            Consolidator(self.gateway, self.index, self.config.writeback_variant, self.config.writeback_k).run(
                found, self.epoch
            )
        else:
            self.findings.extend(found)
        return found, usage

    def _latency(self, start: float, call_latency: float) -> float:
        if self.gateway.deterministic:
            return round(call_latency, 9)
        return time.perf_counter() - start

    def run_batch(
        self, questions: Sequence[Question], epoch: int | None = None, workers: int | None = None
    ) -> list[RoutingRecord]:
        """Answer every question against a frozen Tier-1; records keep input order."""
        if epoch is not None:
            self.epoch = epoch
        workers = workers or self.config.workers
        if workers <= 1:
            return [self._safe_answer(q) for q in questions]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(self._safe_answer, questions))

    def _safe_answer(self, q: Question) -> RoutingRecord:
        try:
            return self.answer(q)[1]
        except MemoryEngineError as exc:
            return RoutingRecord(q.query_id, q.question, route="", answer="", epoch=self.epoch,
                                 error=str(exc), gold_answer=q.gold_answer, category=q.category)

    # -- consolidation --------------------------------------------------

    def consolidate(self, variant: str | None = None, epoch: int | None = None):
        """Apply pending findings to Tier-1; returns (EpochLog, BatchSummary)."""
        target_epoch = self.epoch + 1 if epoch is None else epoch
        consolidator = Consolidator(
            self.gateway, self.index, variant or self.config.writeback_variant, self.config.writeback_k
        )
        return consolidator.run(self.findings.drain(), target_epoch)

    # -- persistence ----------------------------------------------------

    def save(self, root: str | os.PathLike | None = None) -> Path:
        root = Path(root) if root is not None else self.root
        if root is None:
            raise ValidationError("no data directory given")
        root.mkdir(parents=True, exist_ok=True)
        for session in self.pages.sessions():
            self.pages.snapshot(session, root / "pages")
        self.index.save(root / "summaries.jsonl")
        with open(root / "findings.jsonl", "w", encoding="utf-8") as fh:
            for f in self.findings:
                fh.write(json.dumps(f.to_json(), ensure_ascii=False, sort_keys=True) + "\n")
        state = {"epoch": self.epoch, "sessions": self.pages.sessions()}
        (root / "state.json").write_text(json.dumps(state, indent=2, sort_keys=True) + "\n")
        return root

    @classmethod
    def load(
        cls,
        root: str | os.PathLike,
        config: EngineConfig | None = None,
        gateway: Gateway | None = None,
    ) -> Engine:
        root = Path(root)
        engine = cls(config, gateway, root)
        state_path = root / "state.json"
        if not state_path.exists():
            return engine
        state = json.loads(state_path.read_text())
        engine.epoch = int(state.get("epoch", 0))
        for session in state.get("sessions", []):
            engine.pages.restore(session, root / "pages")
        if (root / "summaries.jsonl").exists():
            engine.index.load(root / "summaries.jsonl")
        findings_path = root / "findings.jsonl"
        if findings_path.exists():
            with open(findings_path, encoding="utf-8") as fh:
                engine.findings.extend(
                    VerifiedFinding.from_json(json.loads(line)) for line in fh if line.strip()
                )
        return engine


def _as_turn(item) -> Turn:
    if isinstance(item, Turn):
        return item
    if isinstance(item, dict):
        return Turn(str(item.get("ts", item.get("timestamp", ""))), item["speaker"], item["text"])
    ts, speaker, text = item
    return Turn(str(ts), speaker, text)


def _hit_sources(hits: Sequence[RetrievalHit]) -> dict:
    counts = {"original": 0, "linked_fact": 0}
    for h in hits:
        counts[h.unit.source_type] = counts.get(h.unit.source_type, 0) + 1
    return counts


def _diff(after: TokenUsage, before: TokenUsage) -> TokenUsage:
    return TokenUsage(
        after.input_tokens - before.input_tokens,
        after.output_tokens - before.output_tokens,
        after.latency_seconds - before.latency_seconds,
    )


def load_transcript(path: str | os.PathLike) -> list[Turn]:
    """Read a transcript JSONL of {ts, speaker, text} objects."""
    turns = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                turns.append(_as_turn(json.loads(line)))
            except (ValueError, KeyError, TypeError) as exc:
                raise CorruptRecordError(str(path), lineno, str(exc)) from exc
    return turns
