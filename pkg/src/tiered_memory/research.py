"""Escalation: the bounded retrieve-integrate-plan loop over raw pages.

The loop starts from the pages that the router's summary hits point at, then
lets a planner issue at most ``t_max`` rounds of deduplicated semantic or
keyword searches. Facts come back from the model with a verbatim quote; which
pages support them is decided here, deterministically, never by the model.
"""

from __future__ import annotations

import logging
import re
import unicodedata
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .errors import BackendError
from .gateway import Gateway, PromptKind, TokenUsage
from .page_store import Page, PageStore
from .summary_index import RetrievalHit, Reranker, SummaryIndex, lexical_overlap
from .tokens import content_words, words

log = logging.getLogger(__name__)

SEMANTIC_SEARCH = "SEMANTIC_SEARCH"
KEYWORD_SEARCH = "KEYWORD_SEARCH"

# wire names used in the planner's JSON
_WIRE_KINDS = {
    "MEM0_SEARCH": SEMANTIC_SEARCH,
    "SEMANTIC_SEARCH": SEMANTIC_SEARCH,
    "KEYWORD_SEARCH": KEYWORD_SEARCH,
}

_STRIP_RE = re.compile(r"[.,!?;:\"'()\[\]]")
_SPACE_RE = re.compile(r"\s+")


def normalize_quote(text: str) -> str:
    text = unicodedata.normalize("NFC", text).lower()
    text = _STRIP_RE.sub("", text)
    return _SPACE_RE.sub(" ", text).strip()


@dataclass(frozen=True)
class SearchCommand:
    kind: str
    payload: str | tuple[str, ...]

    @property
    def key(self) -> tuple[str, str]:
        if self.kind == KEYWORD_SEARCH:
            norm = " ".join(sorted({" ".join(k.lower().split()) for k in self.payload}))
        else:
            norm = " ".join(str(self.payload).lower().split())
        return (self.kind, norm)

    def describe(self) -> str:
        if self.kind == KEYWORD_SEARCH:
            return f"KEYWORD_SEARCH: {', '.join(self.payload)}"
        return f"MEM0_SEARCH: {self.payload}"

    def to_json(self) -> dict:
        if self.kind == KEYWORD_SEARCH:
            return {"type": "KEYWORD_SEARCH", "keywords": list(self.payload)}
        return {"type": "MEM0_SEARCH", "query": self.payload}

    @classmethod
    def from_wire(cls, obj: dict) -> SearchCommand | None:
        kind = _WIRE_KINDS.get(str(obj.get("type", "")).upper())
        if kind == SEMANTIC_SEARCH:
            query = obj.get("query")
            if isinstance(query, str) and query.strip():
                return cls(kind, query.strip())
        elif kind == KEYWORD_SEARCH:
            kws = obj.get("keywords")
            if isinstance(kws, str):
                kws = [kws]
            if isinstance(kws, list):
                kws = tuple(k.strip() for k in kws if isinstance(k, str) and k.strip())
                if kws:
                    return cls(kind, kws)
        return None


@dataclass
class LinkedFact:
    fact: str
    evidence_quote: str
    source_pages: frozenset[str] = frozenset()
    evidence_snippets: list[str] = field(default_factory=list)
    match_stage: str | None = None  # "quote" | "summary" | "overlap" | None

    @property
    def resolved(self) -> bool:
        return bool(self.source_pages)

    def to_json(self) -> dict:
        return {
            "fact": self.fact,
            "evidence_quote": self.evidence_quote,
            "source_pages": sorted(self.source_pages),
            "evidence_snippets": list(self.evidence_snippets),
            "match_stage": self.match_stage,
        }

    @classmethod
    def from_json(cls, obj: dict) -> LinkedFact:
        return cls(
            fact=obj["fact"],
            evidence_quote=obj.get("evidence_quote", ""),
            source_pages=frozenset(obj.get("source_pages", ())),
            evidence_snippets=list(obj.get("evidence_snippets", ())),
            match_stage=obj.get("match_stage"),
        )


@dataclass
class EvidencePack:
    facts: list[LinkedFact] = field(default_factory=list)
    coverage_assessment: str = ""
    iterations_used: int = 0
    searched_queries: list[SearchCommand] = field(default_factory=list)
    pages_read: list[str] = field(default_factory=list)
    usage: TokenUsage = TokenUsage()
    gateway_calls: int = 0
    error: str | None = None

    def to_json(self) -> dict:
        return {
            "facts": [f.to_json() for f in self.facts],
            "coverage_assessment": self.coverage_assessment,
            "iterations_used": self.iterations_used,
            "searched_queries": [c.to_json() for c in self.searched_queries],
            "pages_read": list(self.pages_read),
            "gateway_calls": self.gateway_calls,
            "error": self.error,
        }


@dataclass(frozen=True)
class PlanDecision:
    done: bool
    commands: tuple[SearchCommand, ...] = ()
    reasoning: str = ""
    format_ok: bool = True


def link_provenance(
    fact: str,
    evidence_quote: str,
    candidates: Sequence[tuple[Page, Sequence[str]]],
    overlap_threshold: float = 0.5,
) -> LinkedFact:
    """Resolve supporting pages for one extracted fact.

    Stage 1 looks for the normalized quote in each candidate's raw text, then
    in its summaries. Stage 2, used only if stage 1 found nothing, accepts
    pages containing at least ``overlap_threshold`` of the fact's content
    words. Only candidate ids can ever be returned.
    """
    quote = normalize_quote(evidence_quote)
    if quote:
        raw_hits, snippets = [], []
        for page, _ in candidates:
            if quote in normalize_quote(page.text):
                raw_hits.append(page.page_id)
                snippets.append(_quote_snippet(page, quote, evidence_quote))
        if raw_hits:
            return LinkedFact(fact, evidence_quote, frozenset(raw_hits), snippets, "quote")
        sum_hits, snippets = [], []
        for page, summaries in candidates:
            for s in summaries:
                if quote in normalize_quote(s):
                    sum_hits.append(page.page_id)
                    snippets.append(s)
                    break
        if sum_hits:
            return LinkedFact(fact, evidence_quote, frozenset(sum_hits), snippets, "summary")

    fact_words = content_words(fact)
    if fact_words:
        hits, snippets = [], []
        for page, _ in candidates:
            vocab = set(words(page.text))
            ratio = sum(1 for w in fact_words if w in vocab) / len(fact_words)
            if ratio >= overlap_threshold:
                hits.append(page.page_id)
                snippets.append(_overlap_snippet(page, fact_words))
        if hits:
            return LinkedFact(fact, evidence_quote, frozenset(hits), snippets, "overlap")
    return LinkedFact(fact, evidence_quote)


def _quote_snippet(page: Page, norm_quote: str, original: str) -> str:
    for turn in page.turns:
        line = turn.render()
        if norm_quote in normalize_quote(line):
            return line
    return original


def _overlap_snippet(page: Page, fact_words: list[str]) -> str:
    target = set(fact_words)
    best, best_n = "", -1
    for turn in page.turns:
        line = turn.render()
        n = len(target & set(words(line)))
        if n > best_n:
            best, best_n = line, n
    return best


def supports(fact: LinkedFact, page: Page, summaries: Sequence[str], overlap_threshold: float = 0.5) -> bool:
    """Independent acceptance predicate for one (fact, page) link."""
    quote = normalize_quote(fact.evidence_quote)
    if quote and (
        quote in normalize_quote(page.text) or any(quote in normalize_quote(s) for s in summaries)
    ):
        return True
    fw = content_words(fact.fact)
    if not fw:
        return False
    vocab = set(words(page.text))
    return sum(1 for w in fw if w in vocab) / len(fw) >= overlap_threshold


def evidence_block(pages: Sequence[tuple[Page, Sequence[str]]]) -> str:
    parts = []
    for page, summaries in pages:
        lines = [f"=== Page {page.page_id} ==="]
        if summaries:
            lines.append("Summaries:")
            lines.extend(f"- {s}" for s in summaries)
        lines.append("Raw content:")
        lines.append(page.text)
        parts.append("\n".join(lines))
    return "\n\n".join(parts)


def render_facts(facts: Sequence[LinkedFact]) -> str:
    if not facts:
        return "(none)"
    return "\n".join(f"{i}. {f.fact}" for i, f in enumerate(facts, start=1))


TraceSink = Callable[[dict], None]


class Researcher:
    def __init__(
        self,
        gateway: Gateway,
        pages: PageStore,
        index: SummaryIndex,
        t_max: int = 3,
        rerank_k: int = 4,
        k_summaries: int = 5,
        protection_threshold: float | None = 0.85,
        overlap_threshold: float = 0.5,
        reranker: Reranker = lexical_overlap,
        trace: TraceSink | None = None,
    ) -> None:
        if t_max < 1:
            raise ValueError("t_max must be >= 1")
        self.gateway = gateway
        self.pages = pages
        self.index = index
        self.t_max = t_max
        self.rerank_k = rerank_k
        self.k_summaries = k_summaries
        self.protection_threshold = protection_threshold
        self.overlap_threshold = overlap_threshold
        self.reranker = reranker
        self.trace = trace

    def _with_summaries(self, page_ids: Sequence[str]) -> list[tuple[Page, list[str]]]:
        return [
            (self.pages.get_page(pid), [u.text for u in self.index.units_for_page(pid)])
            for pid in page_ids
        ]

    def integrate(
        self, query: str, evidence: Sequence[tuple[Page, Sequence[str]]], pack: EvidencePack
    ) -> list[LinkedFact]:
        """One integration call over ``evidence``; returns newly linked facts."""
        resp = self.gateway.complete(
            PromptKind.INTEGRATION, {"question": query, "evidence": evidence_block(evidence)}
        )
        pack.usage = pack.usage + resp.usage
        pack.gateway_calls += 1
        if not resp.ok:
            return []
        if resp.parsed.coverage_assessment:
            pack.coverage_assessment = resp.parsed.coverage_assessment
        out = []
        for item in resp.parsed.linked_facts:
            if not item["fact"].strip():
                continue
            out.append(
                link_provenance(
                    item["fact"].strip(), item["evidence_quote"], evidence, self.overlap_threshold
                )
            )
        return out

    def plan(self, query: str, pack: EvidencePack, history: Sequence[str]) -> PlanDecision:
        resp = self.gateway.complete(
            PromptKind.PLAN,
            {
                "question": query,
                "current_facts": render_facts(pack.facts),
                "coverage_assessment": pack.coverage_assessment or "(none)",
                "research_history": "\n".join(history) if history else "(none)",
                "searched_queries": ", ".join(c.describe() for c in pack.searched_queries)
                or "(none)",
            },
        )
        pack.usage = pack.usage + resp.usage
        pack.gateway_calls += 1
        if not resp.ok:
            return PlanDecision(True, format_ok=False)
        payload = resp.parsed
        if payload.decision == "DONE":
            return PlanDecision(True, reasoning=payload.reasoning)
        commands = tuple(
            c for c in (SearchCommand.from_wire(raw) for raw in payload.search_commands) if c
        )
        return PlanDecision(not commands, commands, payload.reasoning)

    def _execute(self, cmd: SearchCommand) -> tuple[list[RetrievalHit], list[str]]:
        if cmd.kind == SEMANTIC_SEARCH:
            return self.index.search(str(cmd.payload), self.k_summaries), []
        return [], [pid for pid, _ in self.pages.keyword_search(list(cmd.payload), self.rerank_k)]

    def _add_facts(self, pack: EvidencePack, facts: Sequence[LinkedFact]) -> None:
        seen = {normalize_quote(f.fact): i for i, f in enumerate(pack.facts)}
        for f in facts:
            key = normalize_quote(f.fact)
            if key not in seen:
                seen[key] = len(pack.facts)
                pack.facts.append(f)
                continue
            # a repeat that links where the first copy could not replaces it;
            # same quote on other pages widens provenance
            old = pack.facts[seen[key]]
            if not old.resolved and f.resolved:
                pack.facts[seen[key]] = f
            elif (
                f.resolved
                and old.match_stage == f.match_stage
                and normalize_quote(old.evidence_quote) == normalize_quote(f.evidence_quote)
                and not f.source_pages <= old.source_pages
            ):
                pack.facts[seen[key]] = LinkedFact(
                    old.fact,
                    old.evidence_quote,
                    old.source_pages | f.source_pages,
                    old.evidence_snippets + [s for s in f.evidence_snippets if s not in old.evidence_snippets],
                    old.match_stage,
                )

    def escalate(
        self, query: str, initial_hits: Sequence[RetrievalHit], query_id: str | None = None
    ) -> EvidencePack:
        pack = EvidencePack()
        history: list[str] = []
        try:
            warm = list(
                dict.fromkeys(
                    pid
                    for hit in initial_hits
                    for pid in sorted(hit.unit.provenance)
                    if pid in self.pages
                )
            )
            if warm:
                pack.pages_read.extend(warm)
                self._add_facts(pack, self.integrate(query, self._with_summaries(warm), pack))

            executed: set[tuple[str, str]] = set()
            while pack.iterations_used < self.t_max:
                decision = self.plan(query, pack, history)
                if decision.done:
                    break
                hits: list[RetrievalHit] = []
                keyword_pages: list[str] = []
                issued = []
                for cmd in decision.commands:
                    if cmd.key in executed:
                        continue
                    executed.add(cmd.key)
                    pack.searched_queries.append(cmd)
                    issued.append(cmd.describe())
                    h, kp = self._execute(cmd)
                    hits.extend(h)
                    keyword_pages.extend(kp)
                read = set(pack.pages_read)
                ranked = self.index.rerank_pages(
                    hits,
                    query,
                    self.rerank_k,
                    self.reranker,
                    self.protection_threshold,
                    extra_pages=keyword_pages,
                    exclude=read,
                )
                new_pages = [p for p in ranked if p in self.pages]
                if not new_pages:
                    history.append(f"round {pack.iterations_used + 1}: {'; '.join(issued) or 'no new commands'} -> no new pages")
                    break
                pack.pages_read.extend(new_pages)
                facts = self.integrate(query, self._with_summaries(new_pages), pack)
                self._add_facts(pack, facts)
                pack.iterations_used += 1
                history.append(
                    f"round {pack.iterations_used}: {'; '.join(issued)} -> "
                    f"{len(new_pages)} new page(s), {len(facts)} fact(s)"
                )
        except BackendError as exc:
            pack.error = str(exc)
            log.warning("escalation stopped early: %s", exc)
        if self.trace is not None:
            self.trace(
                {
                    "query_id": query_id,
                    "iterations": pack.iterations_used,
                    "commands": [c.to_json() for c in pack.searched_queries],
                    "pages_read": list(pack.pages_read),
                    "facts": [f.to_json() for f in pack.facts],
                    "error": pack.error,
                }
            )
        return pack
