"""Single choke-point for model calls: templating, parsing, metering, backends."""

from .backends import Backend, BackendReply, HTTPBackend, MockBackend, ScriptEntry
from .client import Gateway, GatewayStats, ModelResponse, TokenUsage
from .parsing import (
    EditPayload,
    IntegrationPayload,
    JudgePayload,
    PlanPayload,
    RouterPayload,
    SufficiencyPayload,
    iter_json_values,
    parse_payload,
)
from .prompts import PLACEHOLDERS, AnswerStyle, PromptKind, render_prompt

__all__ = [
    "AnswerStyle",
    "Backend",
    "BackendReply",
    "EditPayload",
    "Gateway",
    "GatewayStats",
    "HTTPBackend",
    "IntegrationPayload",
    "JudgePayload",
    "MockBackend",
    "ModelResponse",
    "PLACEHOLDERS",
    "PlanPayload",
    "PromptKind",
    "RouterPayload",
    "ScriptEntry",
    "SufficiencyPayload",
    "TokenUsage",
    "iter_json_values",
    "parse_payload",
    "render_prompt",
]
