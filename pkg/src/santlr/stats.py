"""Progress and throughput metrics over the annotation log."""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime

from santlr.model import RecordingRef, TaskMode, TranscriptText
from santlr.store import TaskState
from santlr.textproc import tokenize


class EmptyWindow(ValueError):
    pass


@dataclass(frozen=True)
class SessionStats:
    words_per_hour: float
    audio_minutes_per_hour: float
    words: int
    audio_minutes: float
    window_hours: float


def collected_totals(state: TaskState) -> tuple[int, float]:
    """(words, audio seconds) over the latest finalized record per utterance."""
    words = 0
    audio_s = 0.0
    utterances = state.utterance_map()
    for u in state.utterances:
        record = state.latest_final_record(u.utterance_id)
        if record is None:
            continue
        if state.descriptor.mode is TaskMode.TRANSCRIBE:
            assert isinstance(record.content, TranscriptText)
            words += len(tokenize(record.content.text))
            audio_s += utterances[u.utterance_id].payload.duration_s
        else:
            assert isinstance(record.content, RecordingRef)
            words += len(u.payload.tokens)
            audio_s += record.content.duration_s
    return words, audio_s


def compute_session_stats(
    state: TaskState, window_start: datetime, window_end: datetime
) -> SessionStats:
    """Words/hour and audio-minutes/hour finalized inside the window."""
    window_s = (window_end - window_start).total_seconds()
    if window_s <= 0:
        raise EmptyWindow("window length must be > 0")
    hours = window_s / 3600.0
    words = 0
    audio_s = 0.0
    utterances = state.utterance_map()
    for u in state.utterances:
        record = state.latest_final_record(u.utterance_id)
        if record is None:
            continue
        if not (window_start <= record.saved_at < window_end):
            continue
        if state.descriptor.mode is TaskMode.TRANSCRIBE:
            assert isinstance(record.content, TranscriptText)
            words += len(tokenize(record.content.text))
            audio_s += utterances[u.utterance_id].payload.duration_s
        else:
            assert isinstance(record.content, RecordingRef)
            words += len(u.payload.tokens)
            audio_s += record.content.duration_s
    return SessionStats(
        words_per_hour=words / hours,
        audio_minutes_per_hour=(audio_s / 60.0) / hours,
        words=words,
        audio_minutes=audio_s / 60.0,
        window_hours=hours,
    )
