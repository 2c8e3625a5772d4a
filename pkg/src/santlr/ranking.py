"""Multi-step utterance ranking.

Audio: ascending duration, then an SNR penalty, then a greedy
phoneme-overlap penalty against already-accepted clips. Text: ascending
LM perplexity, then the same greedy pass with token edit distance.
Length is never penalized for text. Scores are additive over a min-max
normalized base so a zero-weight config degenerates to the plain
base-order sort.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from santlr.editdist import (
    EmptySequenceError,
    normalized_similarity,
    similarity_upper_bound,
)
from santlr.lm import train_ngram_lm
from santlr.model import AudioClipRef, ScoreBreakdown, TextItem
from santlr.phonemes import PhonemeSequence

# above this batch size the greedy pass consults length buckets only
PREFILTER_BATCH_SIZE = 20_000


class EmptyBatch(ValueError):
    pass


class MissingPhonemes(ValueError):
    def __init__(self, clip_id: str) -> None:
        super().__init__(f"no phoneme sequence for clip {clip_id}")
        self.clip_id = clip_id


@dataclass(frozen=True)
class RankingConfig:
    w_snr: float = 0.5
    w_overlap: float = 1.0
    snr_target_db: float = 20.0
    overlap_threshold: float = 0.8
    lm_order: int = 3
    lm_add_k: float = 0.1
    text_dup_threshold: float = 0.8

    def validate(self) -> None:
        for name in ("w_snr", "w_overlap", "snr_target_db", "overlap_threshold",
                     "lm_add_k", "text_dup_threshold"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.w_snr < 0 or self.w_overlap < 0:
            raise ValueError("penalty weights must be >= 0")
        if self.snr_target_db <= 0:
            raise ValueError("snr_target_db must be > 0")
        # thresholds above 1 are legal: similarity never reaches them,
        # which switches the dedup pass off
        if self.overlap_threshold < 0 or self.text_dup_threshold < 0:
            raise ValueError("similarity thresholds must be >= 0")
        if self.lm_order < 1:
            raise ValueError("lm_order must be >= 1")
        if self.lm_add_k <= 0:
            raise ValueError("lm_add_k must be > 0")

    def to_dict(self) -> dict:
        return {
            "w_snr": self.w_snr,
            "w_overlap": self.w_overlap,
            "snr_target_db": self.snr_target_db,
            "overlap_threshold": self.overlap_threshold,
            "lm_order": self.lm_order,
            "lm_add_k": self.lm_add_k,
            "text_dup_threshold": self.text_dup_threshold,
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> "RankingConfig":
        cfg = cls(**{k: raw[k] for k in cls().to_dict() if k in raw})
        cfg.validate()
        return cfg


@dataclass(frozen=True)
class QueueEntry:
    utterance_id: str
    rank: int
    score: ScoreBreakdown


@dataclass(frozen=True)
class RankedQueue:
    entries: tuple[QueueEntry, ...]

    def ordered_ids(self) -> list[str]:
        return [e.utterance_id for e in self.entries]


def phoneme_similarity(a: PhonemeSequence, b: PhonemeSequence) -> float:
    """1 - edit distance / max length over symbol ids."""
    return normalized_similarity(a.symbols, b.symbols)


def text_similarity(a: Sequence[str], b: Sequence[str]) -> float:
    """Token-level normalized edit-distance similarity."""
    return normalized_similarity(a, b)


def _minmax(values: list[float]) -> list[float]:
    lo, hi = min(values), max(values)
    if hi == lo:
        return [0.0] * len(values)
    return [(v - lo) / (hi - lo) for v in values]


def snr_penalty(snr_db: float, target_db: float) -> float:
    return min(1.0, max(0.0, (target_db - snr_db) / target_db))


def _greedy_overlap_penalties(
    sequences: list[Sequence],
    provisional_order: list[int],
    threshold: float,
    use_prefilter: bool,
) -> list[float]:
    """One pass in provisional order; each item is penalized by its max
    similarity to already-accepted items when that reaches the threshold.

    The length-bucket prefilter skips pairs whose similarity upper bound
    (from length difference alone) cannot reach the threshold; results
    are identical with it on or off.
    """
    penalties = [0.0] * len(sequences)
    accepted: list[int] = []
    buckets: dict[int, list[int]] = {}
    for idx in provisional_order:
        seq = sequences[idx]
        overlap = 0.0
        if use_prefilter and threshold > 0.0:
            length = len(seq)
            lo = math.ceil(threshold * length)
            hi = math.floor(length / threshold) if threshold > 0 else length
            for other_len in range(lo, hi + 1):
                for j in buckets.get(other_len, ()):
                    if similarity_upper_bound(length, other_len) < threshold:
                        continue
                    overlap = max(overlap, normalized_similarity(seq, sequences[j]))
        else:
            for j in accepted:
                overlap = max(overlap, normalized_similarity(seq, sequences[j]))
        if overlap >= threshold:
            penalties[idx] = overlap
        accepted.append(idx)
        buckets.setdefault(len(seq), []).append(idx)
    return penalties


def rank_audio(
    clips: Sequence[AudioClipRef],
    phonemes: Mapping[str, PhonemeSequence],
    cfg: RankingConfig,
    _force_prefilter: bool | None = None,
) -> RankedQueue:
    """Three-step audio ranking; ties keep ingestion order."""
    cfg.validate()
    if not clips:
        raise EmptyBatch("no clips to rank")
    for clip in clips:
        if clip.clip_id not in phonemes:
            raise MissingPhonemes(clip.clip_id)
        if clip.snr_db is None:
            raise ValueError(f"clip {clip.clip_id} has no snr_db")
        if not phonemes[clip.clip_id].symbols:
            raise EmptySequenceError(f"clip {clip.clip_id} has an empty sequence")

    base_raw = [c.duration_s for c in clips]
    base = _minmax(base_raw)
    penalties_snr = [snr_penalty(c.snr_db, cfg.snr_target_db) for c in clips]
    provisional = [b + cfg.w_snr * p for b, p in zip(base, penalties_snr)]
    order = sorted(range(len(clips)), key=lambda i: provisional[i])

    if cfg.w_overlap > 0.0:
        use_prefilter = (
            len(clips) > PREFILTER_BATCH_SIZE
            if _force_prefilter is None
            else _force_prefilter
        )
        sequences = [phonemes[c.clip_id].symbols for c in clips]
        overlap = _greedy_overlap_penalties(
            sequences, order, cfg.overlap_threshold, use_prefilter
        )
    else:
        overlap = [0.0] * len(clips)

    final = [
        provisional[i] + cfg.w_overlap * overlap[i] for i in range(len(clips))
    ]
    return _build_queue(
        [c.clip_id for c in clips], base_raw, penalties_snr, overlap, final
    )


def rank_text(
    sentences: Sequence[TextItem],
    cfg: RankingConfig,
    _force_prefilter: bool | None = None,
) -> RankedQueue:
    """Two-step text ranking: ascending perplexity, then greedy dedup.

    Trains the task LM on the batch itself; sentence length is never
    penalized.
    """
    cfg.validate()
    if not sentences:
        raise EmptyBatch("no sentences to rank")
    token_lists = [list(s.tokens) for s in sentences]
    if any(not toks for toks in token_lists):
        raise EmptySequenceError("cannot rank a sentence with no tokens")

    lm = train_ngram_lm(token_lists, order=cfg.lm_order, add_k=cfg.lm_add_k)
    base_raw = [lm.perplexity(toks) for toks in token_lists]
    base = _minmax(base_raw)
    order = sorted(range(len(sentences)), key=lambda i: base[i])

    if cfg.w_overlap > 0.0:
        use_prefilter = (
            len(sentences) > PREFILTER_BATCH_SIZE
            if _force_prefilter is None
            else _force_prefilter
        )
        overlap = _greedy_overlap_penalties(
            token_lists, order, cfg.text_dup_threshold, use_prefilter
        )
    else:
        overlap = [0.0] * len(sentences)

    final = [base[i] + cfg.w_overlap * overlap[i] for i in range(len(sentences))]
    zeros = [0.0] * len(sentences)
    return _build_queue(
        [s.text_id for s in sentences], base_raw, zeros, overlap, final
    )


def _build_queue(
    ids: list[str],
    base_raw: list[float],
    snr_penalties: list[float],
    overlap_penalties: list[float],
    final: list[float],
) -> RankedQueue:
    # stable sort over ingestion order: equal scores keep upload order
    final_order = sorted(range(len(ids)), key=lambda i: final[i])
    entries = []
    for rank, i in enumerate(final_order):
        entries.append(
            QueueEntry(
                utterance_id=ids[i],
                rank=rank,
                score=ScoreBreakdown(
                    base_score=base_raw[i],
                    snr_penalty=snr_penalties[i],
                    overlap_penalty=overlap_penalties[i],
                    final_score=final[i],
                ),
            )
        )
    return RankedQueue(entries=tuple(entries))
