from __future__ import annotations

import threading
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Mapping

from ..errors import BackendError, FormatError
from ..tokens import TokenEstimator, estimate_tokens
from .backends import Backend
from .parsing import parse_payload
from .prompts import AnswerStyle, PromptKind, render_prompt

JUDGE_KINDS = frozenset({PromptKind.JUDGE_CORRECTNESS, PromptKind.JUDGE_SUFFICIENCY})
GENERATION_KINDS = frozenset({PromptKind.ANSWER_SUMMARY, PromptKind.ANSWER_RESEARCH})


@dataclass(frozen=True)
class TokenUsage:
    input_tokens: int = 0
    output_tokens: int = 0
    latency_seconds: float = 0.0

    def __add__(self, other: TokenUsage) -> TokenUsage:
        return TokenUsage(
            self.input_tokens + other.input_tokens,
            self.output_tokens + other.output_tokens,
            self.latency_seconds + other.latency_seconds,
        )

    @classmethod
    def total(cls, usages) -> TokenUsage:
        out = cls()
        for u in usages:
            out = out + u
        return out


@dataclass(frozen=True)
class ModelResponse:
    kind: PromptKind
    raw_text: str
    usage: TokenUsage
    parse_status: str  # "ok" | "format_error"
    parsed: Any = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.parse_status == "ok"


@dataclass
class GatewayStats:
    calls: Counter = field(default_factory=Counter)
    usage: TokenUsage = TokenUsage()
    format_errors: int = 0
    backend_errors: int = 0


class Gateway:
    """Renders prompts, calls the backend with retries, parses, and meters usage.

    Token counts come from the backend when it reports them, otherwise from
    ``estimator`` applied to the prompt and the response text.
    """

    def __init__(
        self,
        backend: Backend,
        estimator: TokenEstimator = estimate_tokens,
        max_attempts: int = 3,
        answer_style: AnswerStyle | str = AnswerStyle.SHORT_PHRASE,
        generator_temperature: float = 0.0,
        retry_backoff: float = 0.0,
    ) -> None:
        self.backend = backend
        self.estimator = estimator
        self.max_attempts = max(1, max_attempts)
        self.answer_style = AnswerStyle(answer_style)
        self.generator_temperature = generator_temperature
        self.retry_backoff = retry_backoff
        self.stats = GatewayStats()
        self._lock = threading.Lock()

    @property
    def deterministic(self) -> bool:
        return bool(getattr(self.backend, "deterministic", False))

    def render(self, kind: PromptKind | str, variables: Mapping[str, str]) -> str:
        return render_prompt(kind, variables, style=self.answer_style)

    def temperature_for(self, kind: PromptKind) -> float:
        if kind in GENERATION_KINDS:
            return self.generator_temperature
        return 0.0

    def complete(self, kind: PromptKind | str, variables: Mapping[str, str]) -> ModelResponse:
        """One logical model call; raises BackendError once retries are exhausted."""
        kind = PromptKind(kind)
        prompt = self.render(kind, variables)
        temperature = self.temperature_for(kind)
        latency = 0.0
        last_exc: BackendError | None = None
        reply = None
        for attempt in range(self.max_attempts):
            start = time.perf_counter()
            try:
                reply = self.backend.generate(kind, prompt, temperature)
            except BackendError as exc:
                latency += time.perf_counter() - start if not self.deterministic else 0.0
                last_exc = exc
                if not exc.retryable:
                    break
                if self.retry_backoff and attempt + 1 < self.max_attempts:
                    time.sleep(self.retry_backoff * (2**attempt))
                continue
            if reply.latency_seconds is not None:
                latency += reply.latency_seconds
            elif not self.deterministic:
                latency += time.perf_counter() - start
            break
        if reply is None:
            with self._lock:
                self.stats.backend_errors += 1
            raise BackendError(
                f"{kind.value}: backend failed after {attempt + 1} attempt(s): {last_exc}",
                retryable=False,
            ) from last_exc

        usage = TokenUsage(
            input_tokens=_count(reply.input_tokens, self.estimator, prompt),
            output_tokens=_count(reply.output_tokens, self.estimator, reply.text),
            latency_seconds=latency,
        )
        try:
            parsed = parse_payload(kind, reply.text)
            status, error = "ok", None
        except FormatError as exc:
            parsed, status, error = None, "format_error", str(exc)
        with self._lock:
            self.stats.calls[kind] += 1
            self.stats.usage = self.stats.usage + usage
            if status != "ok":
                self.stats.format_errors += 1
        return ModelResponse(kind, reply.text, usage, status, parsed, error)

    @property
    def call_count(self) -> int:
        return sum(self.stats.calls.values())


def _count(reported: int | None, estimator: TokenEstimator, text: str) -> int:
    if reported is not None:
        return int(reported)
    return estimator(text)
