"""Model backends: a scripted deterministic mock and an HTTP chat-completions client."""

from __future__ import annotations

import json
import os
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

from ..errors import BackendError, CorruptRecordError
from .prompts import PromptKind


@dataclass(frozen=True)
class BackendReply:
    text: str
    input_tokens: int | None = None
    output_tokens: int | None = None
    latency_seconds: float | None = None


class Backend(Protocol):
    # True when latencies are synthetic and the caller should not add wall-clock time
    deterministic: bool

    def generate(self, kind: PromptKind, prompt: str, temperature: float) -> BackendReply: ...


@dataclass
class ScriptEntry:
    """One scripted response.

    ``kind`` may be ``"*"`` to match any prompt kind; ``match`` is a substring
    the rendered prompt must contain (empty matches everything), or a list of
    substrings that must all be present. ``error``
    makes the entry raise a retryable BackendError instead of replying.
    A ``sticky`` entry is never consumed, so it behaves as a standing rule.
    """

    kind: str
    response: str = ""
    match: str | tuple[str, ...] = ""
    input_tokens: int | None = None
    output_tokens: int | None = None
    latency_seconds: float = 0.0
    error: str | None = None
    sticky: bool = False

    def matches(self, kind: PromptKind, prompt: str) -> bool:
        if self.kind not in ("*", kind.value):
            return False
        if isinstance(self.match, str):
            return self.match in prompt
        return all(m in prompt for m in self.match)

    @classmethod
    def from_json(cls, obj: dict) -> ScriptEntry:
        kind = obj.get("kind")
        if not isinstance(kind, str):
            raise ValueError("script entry needs a 'kind'")
        if kind != "*":
            PromptKind(kind)
        response = obj.get("response", "")
        if not isinstance(response, str):
            response = json.dumps(response)
        match = obj.get("match", "") or ""
        if isinstance(match, list):
            if not all(isinstance(m, str) for m in match):
                raise ValueError("'match' list must hold strings")
            match = tuple(match)
        elif not isinstance(match, str):
            raise ValueError("'match' must be a string or a list of strings")
        return cls(
            kind=kind,
            response=response,
            match=match,
            input_tokens=obj.get("input_tokens"),
            output_tokens=obj.get("output_tokens"),
            latency_seconds=float(obj.get("latency_seconds", 0.0)),
            error=obj.get("error"),
            sticky=bool(obj.get("sticky", False)),
        )

    def to_json(self) -> dict:
        match = self.match if isinstance(self.match, str) else list(self.match)
        out = {"kind": self.kind, "match": match, "response": self.response}
        if self.input_tokens is not None:
            out["input_tokens"] = self.input_tokens
        if self.output_tokens is not None:
            out["output_tokens"] = self.output_tokens
        if self.latency_seconds:
            out["latency_seconds"] = self.latency_seconds
        if self.error is not None:
            out["error"] = self.error
        if self.sticky:
            out["sticky"] = True
        return out


class MockBackend:
    """Scripted backend.

    Entries are consumed in order: a call takes the first unconsumed entry
    matching (kind, substring). When every matching entry has been consumed
    the first matching entry is reused. No match at all is a non-retryable
    BackendError.
    """

    deterministic = True

    def __init__(self, entries: list[ScriptEntry | dict] | None = None) -> None:
        self.entries: list[ScriptEntry] = [
            e if isinstance(e, ScriptEntry) else ScriptEntry.from_json(e) for e in entries or []
        ]
        self._consumed = [False] * len(self.entries)
        self._lock = threading.Lock()
        self.calls: list[tuple[PromptKind, str]] = []

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> MockBackend:
        entries = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    entries.append(ScriptEntry.from_json(json.loads(line)))
                except (ValueError, TypeError) as exc:
                    raise CorruptRecordError(str(path), lineno, str(exc)) from exc
        return cls(entries)

    def add(
        self, kind: PromptKind | str, response: str | dict | list, match: str | tuple[str, ...] | list[str] = "", **kw
    ) -> None:
        kind_value = kind.value if isinstance(kind, PromptKind) else kind
        if isinstance(match, list):
            match = tuple(match)
        if not isinstance(response, str):
            response = json.dumps(response)
        with self._lock:
            self.entries.append(ScriptEntry(kind=kind_value, response=response, match=match, **kw))
            self._consumed.append(False)

    def reset(self) -> None:
        with self._lock:
            self._consumed = [False] * len(self.entries)
            self.calls.clear()

    def generate(self, kind: PromptKind, prompt: str, temperature: float = 0.0) -> BackendReply:
        with self._lock:
            self.calls.append((kind, prompt))
            chosen = None
            for i, entry in enumerate(self.entries):
                if not self._consumed[i] and entry.matches(kind, prompt):
                    self._consumed[i] = not entry.sticky
                    chosen = entry
                    break
            if chosen is None:
                chosen = next((e for e in self.entries if e.matches(kind, prompt)), None)
        if chosen is None:
            raise BackendError(f"mock script has no entry for {kind.value}", retryable=False)
        if chosen.error is not None:
            raise BackendError(chosen.error)
        return BackendReply(
            text=chosen.response,
            input_tokens=chosen.input_tokens,
            output_tokens=chosen.output_tokens,
            latency_seconds=chosen.latency_seconds,
        )


class HTTPBackend:
    """JSON-over-HTTP chat-completions client (OpenAI-compatible wire format)."""

    deterministic = False

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key_env: str = "TIERED_MEMORY_API_KEY",
        timeout: float = 60.0,
    ) -> None:
        self.url = base_url.rstrip("/") + "/chat/completions"
        self.model = model
        self.api_key_env = api_key_env
        self.timeout = timeout

    def generate(self, kind: PromptKind, prompt: str, temperature: float = 0.0) -> BackendReply:
        body = json.dumps(
            {
                "model": self.model,
                "messages": [{"role": "user", "content": prompt}],
                "temperature": temperature,
            }
        ).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        req = urllib.request.Request(self.url, data=body, headers=headers, method="POST")
        start = time.perf_counter()
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                payload = json.loads(resp.read().decode("utf-8"))
        except urllib.error.HTTPError as exc:
            # client errors other than rate limiting will not succeed on retry
            retryable = exc.code == 429 or exc.code >= 500
            raise BackendError(f"HTTP {exc.code} from {self.url}", retryable=retryable) from exc
        except (urllib.error.URLError, TimeoutError, OSError) as exc:
            raise BackendError(f"transport failure: {exc}") from exc
        except ValueError as exc:
            raise BackendError(f"malformed response body: {exc}") from exc
        latency = time.perf_counter() - start
        try:
            text = payload["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"unexpected response shape: {exc}") from exc
        usage = payload.get("usage") or {}
        return BackendReply(
            text=text,
            input_tokens=usage.get("prompt_tokens"),
            output_tokens=usage.get("completion_tokens"),
            latency_seconds=latency,
        )


def load_script(path: str | Path) -> MockBackend:
    return MockBackend.from_file(path)
