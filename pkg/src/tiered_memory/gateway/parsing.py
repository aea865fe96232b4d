"""Lenient JSON extraction with strict per-kind schema validation.

Models wrap JSON in prose and code fences; we scan for every decodable
object/array in the text and keep the first one that validates (the last one
for judges, whose verdict comes after a sentence of reasoning).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Callable

from ..errors import FormatError
from .prompts import PromptKind

_DECODER = json.JSONDecoder()


def iter_json_values(text: str):
    """Yield ``(value, start, end)`` for each JSON object/array embedded in text."""
    pos = 0
    n = len(text)
    while pos < n:
        starts = [i for i in (text.find("{", pos), text.find("[", pos)) if i != -1]
        if not starts:
            return
        start = min(starts)
        try:
            value, end = _DECODER.raw_decode(text, start)
        except ValueError:
            pos = start + 1
            continue
        yield value, start, end
        pos = end


@dataclass(frozen=True)
class IntegrationPayload:
    linked_facts: list[dict]
    coverage_assessment: str


@dataclass(frozen=True)
class PlanPayload:
    decision: str
    reasoning: str = ""
    search_commands: list[dict] = field(default_factory=list)


@dataclass(frozen=True)
class RouterPayload:
    action: str
    thinking: str | None = None


@dataclass(frozen=True)
class EditPayload:
    operation: str
    target: int | str | None = None
    merged_text: str | None = None


@dataclass(frozen=True)
class JudgePayload:
    label: str
    reason: str = ""


@dataclass(frozen=True)
class SufficiencyPayload:
    has_sufficient_info: bool
    reason: str = ""


def _require_dict(value: Any) -> dict:
    if not isinstance(value, dict):
        raise FormatError("expected a JSON object")
    return value


def _opt_str(obj: dict, key: str) -> str:
    value = obj.get(key, "")
    if value is None:
        return ""
    if not isinstance(value, str):
        raise FormatError(f"{key!r} must be a string")
    return value


def _enum(value: Any, allowed: tuple[str, ...], key: str) -> str:
    if not isinstance(value, str) or value.strip().upper() not in allowed:
        raise FormatError(f"{key!r} must be one of {allowed}, got {value!r}")
    return value.strip().upper()


def _facts(value: Any, _: str) -> list[str]:
    obj = _require_dict(value)
    facts = obj.get("facts")
    if not isinstance(facts, list) or not all(isinstance(f, str) for f in facts):
        raise FormatError("'facts' must be a list of strings")
    return [f.strip() for f in facts if f.strip()]


def _integration(value: Any, _: str) -> IntegrationPayload:
    obj = _require_dict(value)
    items = obj.get("linked_facts")
    if not isinstance(items, list):
        raise FormatError("'linked_facts' must be a list")
    facts = []
    for item in items:
        if not isinstance(item, dict):
            raise FormatError("linked_facts entries must be objects")
        fact = item.get("fact")
        quote = item.get("evidence_quote", "")
        if not isinstance(fact, str) or not isinstance(quote, (str, type(None))):
            raise FormatError("'fact' and 'evidence_quote' must be strings")
        facts.append({"fact": fact, "evidence_quote": quote or ""})
    return IntegrationPayload(facts, _opt_str(obj, "coverage_assessment"))


def _plan(value: Any, _: str) -> PlanPayload:
    obj = _require_dict(value)
    decision = _enum(obj.get("decision"), ("DONE", "SEARCH"), "decision")
    commands = obj.get("search_commands") or []
    if not isinstance(commands, list):
        raise FormatError("'search_commands' must be a list")
    return PlanPayload(decision, _opt_str(obj, "reasoning"), [c for c in commands if isinstance(c, dict)])


def _router(value: Any, _: str) -> RouterPayload:
    obj = _require_dict(value)
    action = _enum(obj.get("action"), ("S", "R"), "action")
    thinking = obj.get("thinking")
    return RouterPayload(action, thinking if isinstance(thinking, str) else None)


def _answer(_: Any, raw: str) -> str:
    text = raw.strip()
    if not text:
        raise FormatError("empty answer")
    return text


def _indices(value: Any, _: str) -> list[int]:
    if not isinstance(value, list) or not all(
        isinstance(i, int) and not isinstance(i, bool) for i in value
    ):
        raise FormatError("expected a JSON array of integers")
    return list(dict.fromkeys(value))


def _edit(value: Any, _: str) -> EditPayload:
    obj = _require_dict(value)
    op = _enum(obj.get("operation"), ("ADD", "UPDATE", "SKIP"), "operation")
    if op != "UPDATE":
        return EditPayload(op)
    target = obj.get("target")
    merged = obj.get("merged_text")
    if isinstance(target, bool) or not isinstance(target, (int, str)):
        raise FormatError("UPDATE requires a 'target'")
    if not isinstance(merged, str) or not merged.strip():
        raise FormatError("UPDATE requires non-empty 'merged_text'")
    return EditPayload(op, target, merged.strip())


def _judge(value: Any, raw: str) -> JudgePayload:
    obj = _require_dict(value)
    label = _enum(obj.get("label"), ("CORRECT", "WRONG"), "label")
    reason = obj.get("reason") if isinstance(obj.get("reason"), str) else ""
    return JudgePayload(label, reason)


def _sufficiency(value: Any, _: str) -> SufficiencyPayload:
    obj = _require_dict(value)
    flag = obj.get("has_sufficient_info")
    if not isinstance(flag, bool):
        raise FormatError("'has_sufficient_info' must be a boolean")
    return SufficiencyPayload(flag, _opt_str(obj, "reason"))


_Validator = Callable[[Any, str], Any]

_SCHEMAS: dict[PromptKind, _Validator] = {
    PromptKind.FACT_EXTRACTION: _facts,
    PromptKind.INTEGRATION: _integration,
    PromptKind.PLAN: _plan,
    PromptKind.ROUTER: _router,
    PromptKind.WRITEBACK_VERIFY: _indices,
    PromptKind.WRITEBACK_EDIT: _edit,
    PromptKind.JUDGE_CORRECTNESS: _judge,
    PromptKind.JUDGE_SUFFICIENCY: _sufficiency,
}

_PREFER_LAST = {PromptKind.JUDGE_CORRECTNESS, PromptKind.JUDGE_SUFFICIENCY}


def parse_payload(kind: PromptKind | str, raw_text: str) -> Any:
    """Extract and validate the payload for ``kind``; raises FormatError."""
    kind = PromptKind(kind)
    if not isinstance(raw_text, str):
        raise FormatError("response is not text")
    if kind in (PromptKind.ANSWER_SUMMARY, PromptKind.ANSWER_RESEARCH):
        return _answer(None, raw_text)
    validate = _SCHEMAS[kind]
    candidates = list(iter_json_values(raw_text))
    if kind in _PREFER_LAST:
        candidates.reverse()
    last_error: FormatError | None = None
    for value, start, end in candidates:
        try:
            parsed = validate(value, raw_text)
        except FormatError as exc:
            last_error = exc
            continue
        if kind is PromptKind.JUDGE_CORRECTNESS and not parsed.reason:
            parsed = JudgePayload(parsed.label, raw_text[:start].strip())
        return parsed
    if last_error is not None:
        raise last_error
    raise FormatError("no JSON payload found")
