"""Tier-1 provenance index.

Every unit carries a non-empty set of raw page ids (its provenance). Units are
retrieved by exhaustive cosine similarity; retrieved hits can be collapsed to
unique pages and reranked against the query.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .embedding import Embedder, HashedEmbedder
from .errors import (
    BackendError,
    CorruptRecordError,
    DanglingLinkError,
    NotFoundError,
    ProvenanceError,
    StorageError,
    ValidationError,
)
from .gateway import Gateway, PromptKind
from .page_store import PageStore
from .tokens import content_words, words

log = logging.getLogger(__name__)

SOURCE_TYPES = ("original", "linked_fact")

Reranker = Callable[[str, str], float]


@dataclass
class SummaryUnit:
    unit_id: str
    text: str
    embedding: np.ndarray
    provenance: frozenset[str]
    source_type: str = "original"
    created_epoch: int = 0

    def to_json(self) -> dict:
        return {
            "unit_id": self.unit_id,
            "text": self.text,
            "provenance": sorted(self.provenance),
            "source_type": self.source_type,
            "created_epoch": self.created_epoch,
            "embedding": [float(x) for x in self.embedding],
        }

    @classmethod
    def from_json(cls, obj: dict) -> SummaryUnit:
        return cls(
            unit_id=obj["unit_id"],
            text=obj["text"],
            embedding=np.asarray(obj["embedding"], dtype=np.float64),
            provenance=frozenset(obj["provenance"]),
            source_type=obj["source_type"],
            created_epoch=int(obj["created_epoch"]),
        )


@dataclass(frozen=True)
class RetrievalHit:
    unit: SummaryUnit
    score: float


def lexical_overlap(query: str, text: str) -> float:
    """Fraction of the query's content words present in ``text``."""
    q = content_words(query)
    if not q:
        return 0.0
    vocab = set(words(text))
    return sum(1 for w in q if w in vocab) / len(q)


@dataclass
class AutoSummaryResult:
    pages_indexed: int = 0
    units_added: int = 0
    errors: dict[str, str] = field(default_factory=dict)


class SummaryIndex:
    def __init__(self, pages: PageStore, embedder: Embedder | None = None) -> None:
        self.pages = pages
        self.embedder = embedder or HashedEmbedder()
        self._units: dict[str, SummaryUnit] = {}
        self._next_id = 0
        self._matrix: np.ndarray | None = None
        self._order: list[str] = []
        self._lock = threading.RLock()
        self.write_count = 0

    def __len__(self) -> int:
        return len(self._units)

    def __contains__(self, unit_id: object) -> bool:
        return unit_id in self._units

    def get(self, unit_id: str) -> SummaryUnit:
        try:
            return self._units[unit_id]
        except KeyError:
            raise NotFoundError(f"unknown unit_id {unit_id!r}") from None

    def units(self) -> list[SummaryUnit]:
        with self._lock:
            return [self._units[u] for u in sorted(self._units)]

    def units_for_page(self, page_id: str) -> list[SummaryUnit]:
        return [u for u in self.units() if page_id in u.provenance]

    # -- writes ---------------------------------------------------------

    def _check_provenance(self, provenance: Iterable[str]) -> frozenset[str]:
        prov = frozenset(provenance)
        if not prov:
            raise ProvenanceError("summary unit needs at least one source page")
        missing = sorted(p for p in prov if p not in self.pages)
        if missing:
            raise DanglingLinkError(f"unknown page id(s): {', '.join(missing)}")
        return prov

    def _embed(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise ValidationError("summary text must be non-empty")
        vec = np.asarray(self.embedder.embed(text), dtype=np.float64)
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            raise ValidationError(f"text has no indexable tokens: {text!r}")
        return vec / norm

    def add_unit(
        self,
        text: str,
        provenance: Iterable[str],
        source_type: str = "original",
        epoch: int = 0,
    ) -> str:
        if source_type not in SOURCE_TYPES:
            raise ValidationError(f"source_type must be one of {SOURCE_TYPES}")
        prov = self._check_provenance(provenance)
        embedding = self._embed(text)
        with self._lock:
            unit_id = f"u{self._next_id:06d}"
            self._next_id += 1
            self._units[unit_id] = SummaryUnit(unit_id, text, embedding, prov, source_type, epoch)
            self._matrix = None
            self.write_count += 1
            for page_id in prov:
                self.pages.mark_indexed(page_id)
        return unit_id

    def update_unit(
        self,
        unit_id: str,
        new_text: str,
        extra_provenance: Iterable[str] = (),
        epoch: int | None = None,
    ) -> SummaryUnit:
        """Replace the text and widen provenance; the unit id is stable."""
        with self._lock:
            old = self.get(unit_id)
            extra = frozenset(extra_provenance)
            if extra:
                self._check_provenance(extra)
            embedding = self._embed(new_text)
            updated = SummaryUnit(
                unit_id=unit_id,
                text=new_text,
                embedding=embedding,
                provenance=old.provenance | extra,
                source_type=old.source_type,
                created_epoch=old.created_epoch if epoch is None else epoch,
            )
            self._units[unit_id] = updated
            self._matrix = None
            self.write_count += 1
            for page_id in extra:
                self.pages.mark_indexed(page_id)
        return updated

    # -- reads ----------------------------------------------------------

    def _ensure_matrix(self) -> None:
        if self._matrix is None:
            self._order = sorted(self._units)
            if self._order:
                self._matrix = np.vstack([self._units[u].embedding for u in self._order])
            else:
                self._matrix = np.zeros((0, self.embedder.dimension))

    def search(self, query: str, k: int = 5) -> list[RetrievalHit]:
        if k < 1:
            raise ValidationError("k must be >= 1")
        with self._lock:
            if not self._units:
                return []
            self._ensure_matrix()
            q = np.asarray(self.embedder.embed(query), dtype=np.float64)
            norm = float(np.linalg.norm(q))
            if norm > 0:
                q = q / norm
            scores = self._matrix @ q
            order = self._order
            ranked = sorted(range(len(order)), key=lambda i: (-scores[i], order[i]))[:k]
            return [RetrievalHit(self._units[order[i]], float(scores[i])) for i in ranked]

    def rerank_pages(
        self,
        hits: list[RetrievalHit],
        query: str,
        k: int,
        reranker: Reranker = lexical_overlap,
        protection_threshold: float | None = 0.85,
        extra_pages: Iterable[str] = (),
        exclude: Iterable[str] = (),
    ) -> list[str]:
        """Collapse hits to unique pages, keep the top ``k`` by rerank score.

        A page whose best Tier-1 similarity reaches ``protection_threshold`` is
        always kept, so the result can exceed ``k``. ``extra_pages`` (e.g. from
        keyword search) compete in the rerank but are never protected; pages in
        ``exclude`` are ignored entirely.
        """
        skip = set(exclude)
        best: dict[str, float] = {}
        summaries: dict[str, list[str]] = {}
        for hit in hits:
            for page_id in sorted(hit.unit.provenance):
                if page_id in skip:
                    continue
                if hit.score > best.get(page_id, float("-inf")):
                    best[page_id] = hit.score
                summaries.setdefault(page_id, []).append(hit.unit.text)
        for page_id in extra_pages:
            if page_id not in skip:
                summaries.setdefault(page_id, [])
        if not summaries:
            return []

        scores = {}
        for page_id, texts in summaries.items():
            if page_id in self.pages:
                text = self.pages.get_page(page_id).text
            else:
                text = "\n".join(texts)
            scores[page_id] = float(reranker(query, text))

        def key(pid: str):
            return (-scores[pid], -best.get(pid, float("-inf")), pid)

        ranked = sorted(scores, key=key)
        keep = set(ranked[:k])
        if protection_threshold is not None:
            keep |= {pid for pid, s in best.items() if s >= protection_threshold}
        return [pid for pid in ranked if pid in keep]

    # -- summarization --------------------------------------------------

    def summarize_page(self, gateway: Gateway, page_id: str, epoch: int = 0) -> int:
        """Run fact extraction on one page and store each fact as a unit.

        Raises BackendError, or ValueError when the model reply is unusable.
        Returns the number of units added; zero leaves the page unindexed.
        """
        page = self.pages.get_page(page_id)
        resp = gateway.complete(PromptKind.FACT_EXTRACTION, {"input": page.text})
        if not resp.ok:
            raise ValidationError(f"fact extraction format error: {resp.error}")
        added = 0
        for fact in resp.parsed:
            try:
                self.add_unit(fact, {page_id}, "original", epoch)
            except ValidationError as exc:
                log.warning("dropping fact for %s: %s", page_id, exc)
                continue
            added += 1
        return added

    def auto_summary(
        self, gateway: Gateway, session_id: str | None = None, epoch: int = 0
    ) -> AutoSummaryResult:
        """Summarize every sealed page that no unit references yet."""
        result = AutoSummaryResult()
        for page in self.pages.pages(session_id):
            if not page.sealed or page.indexed:
                continue
            try:
                added = self.summarize_page(gateway, page.page_id, epoch)
            except (BackendError, ValidationError) as exc:
                result.errors[page.page_id] = str(exc)
                continue
            if added:
                result.pages_indexed += 1
                result.units_added += added
            else:
                result.errors[page.page_id] = "no facts extracted"
        return result

    # -- persistence ----------------------------------------------------

    def save(self, path: str | os.PathLike) -> Path:
        path = Path(path)
        lines = [
            json.dumps(u.to_json(), ensure_ascii=False, sort_keys=True, separators=(",", ":"))
            for u in self.units()
        ]
        tmp = path.with_suffix(path.suffix + ".tmp")
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(tmp, "w", encoding="utf-8") as fh:
                fh.write("".join(line + "\n" for line in lines))
            os.replace(tmp, path)
        except OSError as exc:
            raise StorageError(f"failed to persist {path}: {exc}") from exc
        return path

    def load(self, path: str | os.PathLike) -> None:
        """Replace the index with units from ``summaries.jsonl``.

        Stored embeddings are used verbatim, so no embedder call is needed.
        """
        path = Path(path)
        units: dict[str, SummaryUnit] = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    unit = SummaryUnit.from_json(json.loads(line))
                    self._check_provenance(unit.provenance)
                except (ValueError, KeyError, TypeError) as exc:
                    raise CorruptRecordError(str(path), lineno, str(exc)) from exc
                units[unit.unit_id] = unit
        with self._lock:
            self._units = units
            self._matrix = None
            seqs = [int(u[1:]) for u in units if u[1:].isdigit()]
            self._next_id = max(seqs, default=-1) + 1
