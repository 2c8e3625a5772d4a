"""Shared domain types: tasks, utterances, annotations, leases.

Everything here is an immutable value object; state changes go through
``transition_state`` and are persisted by the store layer.
"""

from __future__ import annotations

import math
import secrets
from dataclasses import dataclass, replace
from datetime import datetime, timedelta, timezone
from enum import Enum
from typing import TYPE_CHECKING, Union

if TYPE_CHECKING:
    from santlr.ranking import RankingConfig

DEFAULT_LEASE_TTL_S = 900.0


class TaskMode(str, Enum):
    TRANSCRIBE = "transcribe"
    RECORD = "record"


class UtteranceState(str, Enum):
    PENDING = "pending"
    LEASED = "leased"
    ANNOTATED = "annotated"
    SKIPPED = "skipped"


class UtteranceEvent(str, Enum):
    LEASE_GRANTED = "lease_granted"
    LEASE_EXPIRED = "lease_expired"
    ANNOTATION_FINALIZED = "annotation_finalized"
    SKIP_REQUESTED = "skip_requested"


class IllegalTransition(Exception):
    def __init__(self, state: UtteranceState, event: UtteranceEvent) -> None:
        super().__init__(f"event {event.value} is illegal in state {state.value}")
        self.state = state
        self.event = event


# (state, event) -> next state; anything absent is illegal
_TRANSITIONS = {
    (UtteranceState.PENDING, UtteranceEvent.LEASE_GRANTED): UtteranceState.LEASED,
    (UtteranceState.LEASED, UtteranceEvent.LEASE_EXPIRED): UtteranceState.PENDING,
    (UtteranceState.LEASED, UtteranceEvent.ANNOTATION_FINALIZED): UtteranceState.ANNOTATED,
    (UtteranceState.LEASED, UtteranceEvent.SKIP_REQUESTED): UtteranceState.SKIPPED,
}


def utcnow() -> datetime:
    return datetime.now(timezone.utc)


def new_share_token() -> str:
    # 16 random bytes = 128 bits of entropy, URL-safe
    return secrets.token_urlsafe(16)


def new_id(prefix: str) -> str:
    return f"{prefix}_{secrets.token_hex(8)}"


@dataclass(frozen=True)
class TaskDescriptor:
    task_id: str
    mode: TaskMode
    share_token: str
    created_at: datetime
    language_tag: str
    config: "RankingConfig"


def new_task(
    mode: TaskMode, config: "RankingConfig", language_tag: str = ""
) -> TaskDescriptor:
    """Fresh descriptor with unique task id and an unguessable share token."""
    config.validate()
    return TaskDescriptor(
        task_id=new_id("t"),
        mode=mode,
        share_token=new_share_token(),
        created_at=utcnow(),
        language_tag=language_tag,
        config=config,
    )


@dataclass(frozen=True)
class AudioClipRef:
    clip_id: str
    source_file: str
    start_s: float
    end_s: float
    duration_s: float
    sample_rate_hz: int
    snr_db: float | None = None
    phonemes: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if not (0.0 <= self.start_s < self.end_s):
            raise ValueError(f"bad clip bounds [{self.start_s}, {self.end_s}]")
        if abs(self.duration_s - (self.end_s - self.start_s)) > 1e-6:
            raise ValueError("duration_s does not match end_s - start_s")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")


@dataclass(frozen=True)
class TextItem:
    text_id: str
    sentence: str
    tokens: tuple[str, ...]
    perplexity_per_token: float | None = None

    def __post_init__(self) -> None:
        if not self.sentence.strip():
            raise ValueError("sentence must be non-empty after cleaning")
        if self.perplexity_per_token is not None and not (
            self.perplexity_per_token > 0
        ):
            raise ValueError("perplexity_per_token must be > 0")


Payload = Union[AudioClipRef, TextItem]


@dataclass(frozen=True)
class ScoreBreakdown:
    """Per-step score record; final_score orders the queue ascending.

    base_score is the raw duration (audio) or per-token perplexity (text);
    the normalized base plus weighted penalties is re-derivable from the
    batch, which the ranking tests exploit.
    """

    base_score: float
    snr_penalty: float
    overlap_penalty: float
    final_score: float

    def __post_init__(self) -> None:
        for name in ("base_score", "snr_penalty", "overlap_penalty", "final_score"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if not (0.0 <= self.snr_penalty <= 1.0):
            raise ValueError("snr_penalty out of [0, 1]")
        if not (0.0 <= self.overlap_penalty <= 1.0):
            raise ValueError("overlap_penalty out of [0, 1]")


@dataclass(frozen=True)
class Utterance:
    utterance_id: str
    task_id: str
    payload: Payload
    priority_rank: int = 0
    score: ScoreBreakdown | None = None
    state: UtteranceState = UtteranceState.PENDING

    def __post_init__(self) -> None:
        if self.priority_rank < 0:
            raise ValueError("priority_rank must be >= 0")

    @property
    def kind(self) -> str:
        return "audio" if isinstance(self.payload, AudioClipRef) else "text"


def payload_matches_mode(payload: Payload, mode: TaskMode) -> bool:
    if mode is TaskMode.TRANSCRIBE:
        return isinstance(payload, AudioClipRef)
    return isinstance(payload, TextItem)


def transition_state(utterance: Utterance, event: UtteranceEvent) -> Utterance:
    """Apply one lifecycle event; raises IllegalTransition otherwise."""
    key = (utterance.state, event)
    if key not in _TRANSITIONS:
        raise IllegalTransition(utterance.state, event)
    return replace(utterance, state=_TRANSITIONS[key])


@dataclass(frozen=True)
class TranscriptText:
    text: str


@dataclass(frozen=True)
class RecordingRef:
    path: str
    duration_s: float


@dataclass(frozen=True)
class AnnotationRecord:
    utterance_id: str
    annotator_id: str
    content: Union[TranscriptText, RecordingRef]
    revision: int
    saved_at: datetime
    final: bool

    def __post_init__(self) -> None:
        if self.revision < 1:
            raise ValueError("revision numbering starts at 1")


@dataclass(frozen=True)
class Lease:
    utterance_id: str
    annotator_id: str
    issued_at: datetime
    ttl_s: float = DEFAULT_LEASE_TTL_S

    def expires_at(self) -> datetime:
        return self.issued_at + timedelta(seconds=self.ttl_s)

    def expired(self, now: datetime | None = None) -> bool:
        return (now or utcnow()) >= self.expires_at()
