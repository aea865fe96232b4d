"""Tier-2 raw log: immutable, append-only pages of timestamped dialogue.

Turns are appended to the session's open page; once the page's token estimate
reaches ``max_page_tokens`` it is sealed and a seal event is handed to every
registered listener (the summarizer hooks in here). Sealed pages never change.
"""

from __future__ import annotations

import json
import math
import os
import threading
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable

from .errors import CorruptRecordError, NotFoundError, StorageError, ValidationError
from .tokens import TokenEstimator, estimate_tokens, words

BM25_K1 = 1.2
BM25_B = 0.75

SealListener = Callable[["Page"], None]


@dataclass(frozen=True)
class Turn:
    timestamp: str
    speaker: str
    text: str

    def __post_init__(self) -> None:
        if not self.speaker or not self.speaker.strip():
            raise ValidationError("turn speaker must be non-empty")
        if not self.text or not self.text.strip():
            raise ValidationError("turn text must be non-empty")

    def render(self) -> str:
        return f"[{self.timestamp}] {self.speaker}: {self.text}"

    def to_json(self) -> dict:
        return {"ts": self.timestamp, "speaker": self.speaker, "text": self.text}

    @classmethod
    def from_json(cls, obj: dict) -> Turn:
        return cls(obj["ts"], obj["speaker"], obj["text"])


@dataclass(frozen=True)
class Page:
    """One page of raw dialogue; a frozen value, so callers cannot alter it.

    The only flag that changes after sealing is ``indexed``, and the store does
    that by swapping in a replaced copy.
    """

    page_id: str
    session_id: str
    turns: tuple[Turn, ...] = ()
    token_count: int = 0
    sealed: bool = False
    indexed: bool = False

    @property
    def text(self) -> str:
        return "\n".join(t.render() for t in self.turns)

    def to_json(self) -> dict:
        return {
            "page_id": self.page_id,
            "session_id": self.session_id,
            "turns": [t.to_json() for t in self.turns],
            "token_count": self.token_count,
            "sealed": self.sealed,
            "indexed": self.indexed,
        }

    @classmethod
    def from_json(cls, obj: dict) -> Page:
        return cls(
            page_id=obj["page_id"],
            session_id=obj["session_id"],
            turns=tuple(Turn.from_json(t) for t in obj["turns"]),
            token_count=int(obj["token_count"]),
            sealed=bool(obj["sealed"]),
            indexed=bool(obj["indexed"]),
        )


def bm25_rank(
    docs: dict[str, Counter],
    terms: Iterable[str],
    k: int,
    k1: float = BM25_K1,
    b: float = BM25_B,
) -> list[tuple[str, float]]:
    """Rank documents (id -> term counts) by BM25; ties by ascending id.

    IDF is ``ln(1 + (N - df + 0.5) / (df + 0.5))`` so it stays positive and a
    document scores zero exactly when it contains no query term.
    """
    query = list(dict.fromkeys(terms))
    n = len(docs)
    if not query or n == 0:
        return []
    lengths = {doc_id: sum(c.values()) for doc_id, c in docs.items()}
    avgdl = sum(lengths.values()) / n
    idf = {}
    for term in query:
        df = sum(1 for c in docs.values() if term in c)
        idf[term] = math.log(1.0 + (n - df + 0.5) / (df + 0.5))
    scored = []
    for doc_id, counts in docs.items():
        norm = k1 * (1.0 - b + b * lengths[doc_id] / avgdl) if avgdl else k1
        score = 0.0
        for term in query:
            tf = counts.get(term, 0)
            if tf:
                score += idf[term] * tf * (k1 + 1.0) / (tf + norm)
        if score > 0.0:
            scored.append((doc_id, score))
    scored.sort(key=lambda item: (-item[1], item[0]))
    return scored[:k]


@dataclass
class _OpenPage:
    page_id: str
    session_id: str
    turns: list[Turn] = field(default_factory=list)
    token_count: int = 0


class PageStore:
    """Paged raw log for any number of sessions.

    ``root`` enables durability: every seal rewrites the session's
    ``pages.jsonl`` atomically, and :meth:`restore` reloads it.
    """

    def __init__(
        self,
        max_page_tokens: int = 1000,
        estimator: TokenEstimator = estimate_tokens,
        root: str | os.PathLike | None = None,
    ) -> None:
        if max_page_tokens < 1:
            raise ValidationError("max_page_tokens must be positive")
        self.max_page_tokens = max_page_tokens
        self.estimator = estimator
        self.root = Path(root) if root is not None else None
        self._pages: dict[str, Page] = {}
        self._open: dict[str, _OpenPage] = {}
        self._next_seq: dict[str, int] = {}
        self._term_cache: dict[str, Counter] = {}
        self._listeners: list[SealListener] = []
        self._lock = threading.RLock()

    # -- events ---------------------------------------------------------

    def on_seal(self, listener: SealListener) -> None:
        self._listeners.append(listener)

    # -- writes ---------------------------------------------------------

    def append_turn(self, session_id: str, turn: Turn) -> str:
        """Append ``turn`` to the session's open page and return its page_id."""
        if not session_id:
            raise ValidationError("session_id must be non-empty")
        if not isinstance(turn, Turn):
            raise ValidationError("expected a Turn")
        with self._lock:
            open_page = self._open.get(session_id)
            if open_page is None:
                open_page = self._new_open_page(session_id)
            open_page.turns.append(turn)
            prev_count = open_page.token_count
            open_page.token_count = self.estimator(_render(open_page.turns))
            page_id = open_page.page_id
            if open_page.token_count >= self.max_page_tokens:
                try:
                    self._seal(session_id)
                except StorageError:
                    open_page.turns.pop()
                    open_page.token_count = prev_count
                    raise
            elif self.root is not None:
                try:
                    self.snapshot(session_id)
                except StorageError:
                    open_page.turns.pop()
                    open_page.token_count = prev_count
                    raise
        return page_id

    def flush(self, session_id: str) -> str | None:
        """Seal the open page regardless of size; returns its id if one existed."""
        with self._lock:
            open_page = self._open.get(session_id)
            if open_page is None or not open_page.turns:
                return None
            return self._seal(session_id).page_id

    def mark_indexed(self, page_id: str) -> None:
        with self._lock:
            page = self._pages.get(page_id)
            if page is not None:
                if not page.indexed:
                    self._pages[page_id] = replace(page, indexed=True)
                return
            for open_page in self._open.values():
                if open_page.page_id == page_id:
                    # open pages become indexed only once sealed
                    return
            raise NotFoundError(page_id)

    def _new_open_page(self, session_id: str) -> _OpenPage:
        seq = self._next_seq.get(session_id, 0)
        self._next_seq[session_id] = seq + 1
        page = _OpenPage(page_id=f"{session_id}/p{seq:05d}", session_id=session_id)
        self._open[session_id] = page
        return page

    def _seal(self, session_id: str) -> Page:
        open_page = self._open.pop(session_id)
        page = Page(
            page_id=open_page.page_id,
            session_id=session_id,
            turns=tuple(open_page.turns),
            token_count=open_page.token_count,
            sealed=True,
        )
        self._pages[page.page_id] = page
        if self.root is not None:
            try:
                self.snapshot(session_id)
            except StorageError:
                del self._pages[page.page_id]
                self._open[session_id] = open_page
                raise
        for listener in list(self._listeners):
            listener(page)
        return page

    # -- reads ----------------------------------------------------------

    def get_page(self, page_id: str) -> Page:
        with self._lock:
            page = self._pages.get(page_id)
            if page is not None:
                return page
            for open_page in self._open.values():
                if open_page.page_id == page_id:
                    return Page(
                        page_id=open_page.page_id,
                        session_id=open_page.session_id,
                        turns=tuple(open_page.turns),
                        token_count=open_page.token_count,
                    )
        raise NotFoundError(f"unknown page_id {page_id!r}")

    def __contains__(self, page_id: object) -> bool:
        with self._lock:
            if page_id in self._pages:
                return True
            return any(p.page_id == page_id for p in self._open.values())

    def page_ids(self, session_id: str | None = None) -> list[str]:
        with self._lock:
            ids = [pid for pid, p in self._pages.items() if session_id in (None, p.session_id)]
            ids += [
                p.page_id
                for sid, p in self._open.items()
                if session_id in (None, sid) and p.turns
            ]
        return sorted(ids)

    def pages(self, session_id: str | None = None) -> list[Page]:
        return [self.get_page(pid) for pid in self.page_ids(session_id)]

    def open_page_id(self, session_id: str) -> str | None:
        open_page = self._open.get(session_id)
        return open_page.page_id if open_page and open_page.turns else None

    def sessions(self) -> list[str]:
        with self._lock:
            ids = {p.session_id for p in self._pages.values()} | set(self._open)
        return sorted(ids)

    def _terms(self, page: Page) -> Counter:
        if not page.sealed:
            return Counter(words(page.text))
        cached = self._term_cache.get(page.page_id)
        if cached is None:
            cached = self._term_cache[page.page_id] = Counter(words(page.text))
        return cached

    def keyword_search(
        self, keywords: list[str], k: int = 5, session_id: str | None = None
    ) -> list[tuple[str, float]]:
        """BM25 over page text; ``keywords`` are tokenized like page text."""
        if k < 1:
            raise ValidationError("k must be >= 1")
        terms = [t for kw in keywords for t in words(kw)]
        if not terms:
            return []
        docs = {p.page_id: self._terms(p) for p in self.pages(session_id)}
        return bm25_rank(docs, terms, k)

    # -- persistence ----------------------------------------------------

    def _session_file(self, session_id: str, root: Path | None = None) -> Path:
        base = root if root is not None else self.root
        if base is None:
            raise StorageError("no storage root configured")
        return base / session_id / "pages.jsonl"

    def snapshot(self, session_id: str, root: str | os.PathLike | None = None) -> Path:
        """Write the session's pages (sealed, then the open page) to pages.jsonl."""
        path = self._session_file(session_id, Path(root) if root is not None else None)
        with self._lock:
            sealed = sorted(
                (p for p in self._pages.values() if p.session_id == session_id),
                key=lambda p: p.page_id,
            )
            lines = [_dumps(p.to_json()) for p in sealed]
            open_id = self.open_page_id(session_id)
            if open_id is not None:
                lines.append(_dumps(self.get_page(open_id).to_json()))
        tmp = path.with_suffix(".jsonl.tmp")
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(tmp, "w", encoding="utf-8") as fh:
                fh.write("".join(line + "\n" for line in lines))
            os.replace(tmp, path)
        except OSError as exc:
            raise StorageError(f"failed to persist {path}: {exc}") from exc
        return path

    def restore(self, session_id: str, root: str | os.PathLike | None = None) -> list[Page]:
        """Load a session from pages.jsonl, replacing any in-memory state for it."""
        path = self._session_file(session_id, Path(root) if root is not None else None)
        loaded: list[Page] = []
        try:
            with open(path, encoding="utf-8") as fh:
                raw_lines = fh.read().split("\n")
        except OSError as exc:
            raise StorageError(f"failed to read {path}: {exc}") from exc
        if raw_lines and raw_lines[-1] == "":
            raw_lines.pop()
        for lineno, line in enumerate(raw_lines, start=1):
            try:
                page = Page.from_json(json.loads(line))
            except (ValueError, KeyError, TypeError) as exc:
                raise CorruptRecordError(str(path), lineno, str(exc)) from exc
            if page.session_id != session_id:
                raise CorruptRecordError(str(path), lineno, "session_id mismatch")
            loaded.append(page)
        open_pages = [p for p in loaded if not p.sealed]
        if len(open_pages) > 1 or (open_pages and loaded[-1].sealed):
            raise CorruptRecordError(str(path), len(loaded), "open page must be the last record")

        with self._lock:
            for pid in [pid for pid, p in self._pages.items() if p.session_id == session_id]:
                del self._pages[pid]
                self._term_cache.pop(pid, None)
            self._open.pop(session_id, None)
            max_seq = -1
            for page in loaded:
                max_seq = max(max_seq, _page_seq(page.page_id))
                if page.sealed:
                    self._pages[page.page_id] = page
                else:
                    self._open[session_id] = _OpenPage(
                        page_id=page.page_id,
                        session_id=session_id,
                        turns=list(page.turns),
                        token_count=page.token_count,
                    )
            self._next_seq[session_id] = max_seq + 1
        return loaded


def _render(turns: Iterable[Turn]) -> str:
    return "\n".join(t.render() for t in turns)


def _dumps(obj: dict) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, separators=(",", ":"))


def _page_seq(page_id: str) -> int:
    try:
        return int(page_id.rsplit("/p", 1)[1])
    except (IndexError, ValueError):
        return -1
