"""Two-tier agent memory.

A cheap Tier-1 index of provenance-linked summaries answers most queries; a
router escalates to the immutable Tier-2 page log when the summaries lack the
evidence, and verified findings from escalations are consolidated back into
Tier-1 between epochs.
"""

from .engine import Engine, EngineConfig, Question, RoutingRecord
from .errors import (
    BackendError,
    BatchApplyError,
    CorruptRecordError,
    DanglingLinkError,
    FormatError,
    MemoryEngineError,
    NotFoundError,
    ProvenanceError,
    StorageError,
    TemplateError,
    ValidationError,
)
from .gateway import Gateway, MockBackend, PromptKind, TokenUsage
from .page_store import Page, PageStore, Turn
from .research import EvidencePack, LinkedFact, Researcher, SearchCommand, link_provenance
from .router import RewardConfig, RouteDecision, SufficiencyLabel, hindsight_label, reward, route
from .summary_index import RetrievalHit, SummaryIndex, SummaryUnit
from .writeback import Consolidator, EpochLog, VerifiedFinding, WriteOp, apply_epoch_batch

__version__ = "0.1.0"

__all__ = [
    "BackendError",
    "BatchApplyError",
    "Consolidator",
    "CorruptRecordError",
    "DanglingLinkError",
    "Engine",
    "EngineConfig",
    "EpochLog",
    "EvidencePack",
    "FormatError",
    "Gateway",
    "LinkedFact",
    "MemoryEngineError",
    "MockBackend",
    "NotFoundError",
    "Page",
    "PageStore",
    "PromptKind",
    "ProvenanceError",
    "Question",
    "Researcher",
    "RetrievalHit",
    "RewardConfig",
    "RouteDecision",
    "RoutingRecord",
    "SearchCommand",
    "StorageError",
    "SufficiencyLabel",
    "SummaryIndex",
    "SummaryUnit",
    "TemplateError",
    "TokenUsage",
    "Turn",
    "ValidationError",
    "VerifiedFinding",
    "WriteOp",
    "apply_epoch_batch",
    "hindsight_label",
    "link_provenance",
    "reward",
    "route",
]
