"""Phoneme-like symbol sequences for audio clips.

No pretrained recognizer ships with the toolkit. The builtin estimator
quantizes log mel-filterbank frames against a per-task k-means codebook,
which is enough for the overlap-dedup ranking step and keeps everything
deterministic. A real recognizer can be plugged in as an external
command that prints one line of symbols per clip.
"""

from __future__ import annotations

import math
import shlex
import subprocess
import tempfile
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from santlr.audio import (
    AudioSegment,
    EmptyBuffer,
    PcmBuffer,
    encode_wav,
    frame_layout,
    frame_matrix,
    resample_linear,
)

NUM_BANDS = 13
ANALYSIS_RATE_HZ = 16000
DEFAULT_ALPHABET_SIZE = 32
KMEANS_SEED = 42
KMEANS_MAX_ITER = 100
KMEANS_REL_TOL = 1e-4
_LOG_FLOOR = 1e-10


class BufferTooShort(ValueError):
    pass


class InsufficientData(ValueError):
    pass


class NotFitted(RuntimeError):
    pass


class ExternalCommandFailed(RuntimeError):
    pass


class EstimatorKind(str, Enum):
    BUILTIN_SPECTRAL = "builtin_spectral"
    EXTERNAL_COMMAND = "external_command"


@dataclass(frozen=True)
class PhonemeSequence:
    symbols: tuple[int, ...]
    clip_id: str

    def __post_init__(self) -> None:
        for a, b in zip(self.symbols, self.symbols[1:]):
            if a == b:
                raise ValueError("phoneme sequence must be run-length collapsed")


@dataclass
class EstimatorSpec:
    kind: EstimatorKind = EstimatorKind.BUILTIN_SPECTRAL
    alphabet_size: int = DEFAULT_ALPHABET_SIZE
    codebook: np.ndarray | None = None
    external_cmd: str | None = None
    symbol_table: dict[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.alphabet_size < 2:
            raise ValueError("alphabet_size must be >= 2")


def mel_filterbank(sample_rate_hz: int, n_fft: int, n_bands: int = NUM_BANDS) -> np.ndarray:
    """(n_bands, n_fft//2 + 1) triangular weights, mel-spaced to Nyquist."""

    def hz_to_mel(f: float) -> float:
        return 2595.0 * math.log10(1.0 + f / 700.0)

    def mel_to_hz(m: np.ndarray) -> np.ndarray:
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    points_hz = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate_hz / 2.0), n_bands + 2))
    bin_hz = np.fft.rfftfreq(n_fft, d=1.0 / sample_rate_hz)
    weights = np.zeros((n_bands, len(bin_hz)))
    for b in range(n_bands):
        left, center, right = points_hz[b], points_hz[b + 1], points_hz[b + 2]
        rising = (bin_hz - left) / (center - left)
        falling = (right - bin_hz) / (right - center)
        weights[b] = np.maximum(0.0, np.minimum(rising, falling))
    return weights


def band_centers_hz(sample_rate_hz: int, n_bands: int = NUM_BANDS) -> np.ndarray:
    def hz_to_mel(f: float) -> float:
        return 2595.0 * math.log10(1.0 + f / 700.0)

    mels = np.linspace(0.0, hz_to_mel(sample_rate_hz / 2.0), n_bands + 2)
    return 700.0 * (10.0 ** (mels[1:-1] / 2595.0) - 1.0)


def extract_features(pcm: PcmBuffer) -> np.ndarray:
    """Log mel-filterbank energies per 25 ms / 10 ms frame.

    Hann-windowed power spectrum, 13 triangular bands, log-clamped at
    1e-10. Raw (un-normalized): doubling the amplitude shifts every band
    by log 4.
    """
    if pcm.sample_rate_hz < 8000:
        raise ValueError("phoneme features need a sample rate >= 8 kHz")
    frame_len, _, _ = frame_layout(len(pcm.samples), pcm.sample_rate_hz)
    if len(pcm.samples) < frame_len:
        raise BufferTooShort(
            f"{len(pcm.samples)} samples is less than one {frame_len}-sample frame"
        )
    frames = frame_matrix(pcm)
    window = np.hanning(frame_len)
    n_fft = 1 << (frame_len - 1).bit_length()
    spectrum = np.abs(np.fft.rfft(frames * window, n=n_fft)) ** 2
    bank = mel_filterbank(pcm.sample_rate_hz, n_fft)
    energies = spectrum @ bank.T
    return np.log(np.maximum(energies, _LOG_FLOOR))


def mean_normalize(features: np.ndarray) -> np.ndarray:
    """Subtract each frame's own band mean; cancels global gain."""
    return features - features.mean(axis=1, keepdims=True)


def fit_codebook(
    feature_frames: np.ndarray,
    k: int,
    seed: int = KMEANS_SEED,
    max_iter: int = KMEANS_MAX_ITER,
    rel_tol: float = KMEANS_REL_TOL,
) -> np.ndarray:
    """Plain k-means with k-means++ seeding; byte-identical given a seed."""
    frames = np.asarray(feature_frames, dtype=np.float64)
    if frames.ndim != 2:
        raise ValueError("feature_frames must be a 2-d array")
    if len(np.unique(frames, axis=0)) < k:
        raise InsufficientData(f"need at least {k} distinct frames")

    rng = np.random.default_rng(seed)
    n = len(frames)
    centroids = np.empty((k, frames.shape[1]))
    centroids[0] = frames[rng.integers(n)]
    closest_sq = np.sum((frames - centroids[0]) ** 2, axis=1)
    for j in range(1, k):
        probs = closest_sq / closest_sq.sum()
        centroids[j] = frames[rng.choice(n, p=probs)]
        closest_sq = np.minimum(
            closest_sq, np.sum((frames - centroids[j]) ** 2, axis=1)
        )

    prev_inertia = math.inf
    for _ in range(max_iter):
        dists = np.sum(
            (frames[:, None, :] - centroids[None, :, :]) ** 2, axis=2
        )
        assignment = np.argmin(dists, axis=1)
        inertia = float(dists[np.arange(n), assignment].sum())
        for j in range(k):
            members = frames[assignment == j]
            if len(members):
                centroids[j] = members.mean(axis=0)
        if prev_inertia - inertia < rel_tol * max(prev_inertia, 1e-300):
            break
        prev_inertia = inertia
    return centroids


def codebook_inertia(frames: np.ndarray, centroids: np.ndarray) -> float:
    dists = np.sum((frames[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
    return float(np.min(dists, axis=1).sum())


def _collapse(symbols: Iterable[int]) -> tuple[int, ...]:
    out: list[int] = []
    for s in symbols:
        if not out or out[-1] != s:
            out.append(int(s))
    return tuple(out)


def _clip_features(clip: AudioSegment) -> np.ndarray:
    pcm = PcmBuffer(clip.samples(), clip.parent.sample_rate_hz)
    pcm = resample_linear(pcm, ANALYSIS_RATE_HZ)
    return mean_normalize(extract_features(pcm))


def fit_builtin_estimator(
    clips: Sequence[AudioSegment],
    alphabet_size: int = DEFAULT_ALPHABET_SIZE,
    seed: int = KMEANS_SEED,
) -> EstimatorSpec:
    """Fit the per-task codebook over all of the task's clips."""
    if not clips:
        raise InsufficientData("no clips to fit on")
    features = np.vstack([_clip_features(c) for c in clips])
    distinct = len(np.unique(features, axis=0))
    if distinct < 2:
        # degenerate task (all frames identical): one-symbol codebook, padded
        codebook = np.vstack([features[0], features[0]])
        return EstimatorSpec(
            kind=EstimatorKind.BUILTIN_SPECTRAL, alphabet_size=2, codebook=codebook
        )
    k = min(alphabet_size, distinct)
    codebook = fit_codebook(features, k, seed=seed)
    return EstimatorSpec(
        kind=EstimatorKind.BUILTIN_SPECTRAL,
        alphabet_size=max(2, k),
        codebook=codebook,
    )


def estimate_phonemes(clip: AudioSegment, spec: EstimatorSpec, clip_id: str = "") -> PhonemeSequence:
    """Symbol sequence for one clip, consecutive duplicates collapsed."""
    if spec.kind is EstimatorKind.BUILTIN_SPECTRAL:
        if spec.codebook is None:
            raise NotFitted("builtin estimator has no codebook yet")
        features = _clip_features(clip)
        dists = np.sum(
            (features[:, None, :] - spec.codebook[None, :, :]) ** 2, axis=2
        )
        return PhonemeSequence(_collapse(np.argmin(dists, axis=1)), clip_id)
    return _run_external(clip, spec, clip_id)


def _run_external(clip: AudioSegment, spec: EstimatorSpec, clip_id: str) -> PhonemeSequence:
    if not spec.external_cmd:
        raise NotFitted("external estimator has no command configured")
    pcm = PcmBuffer(clip.samples(), clip.parent.sample_rate_hz)
    try:
        wav = encode_wav(pcm)
    except EmptyBuffer as exc:
        raise ExternalCommandFailed(f"clip {clip_id or '?'} is empty") from exc
    with tempfile.TemporaryDirectory(prefix="santlr_ph_") as tmp:
        wav_path = Path(tmp) / "clip.wav"
        wav_path.write_bytes(wav)
        argv = [arg.replace("{wav}", str(wav_path)) for arg in shlex.split(spec.external_cmd)]
        try:
            proc = subprocess.run(argv, capture_output=True, text=True, timeout=300)
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise ExternalCommandFailed(str(exc)) from exc
    if proc.returncode != 0:
        raise ExternalCommandFailed(
            f"exit code {proc.returncode}: {proc.stderr.strip()[:200]}"
        )
    line = proc.stdout.strip().splitlines()
    if len(line) != 1 or not line[0].split():
        raise ExternalCommandFailed("expected exactly one line of symbols")
    ids = []
    for sym in line[0].split():
        if sym not in spec.symbol_table:
            spec.symbol_table[sym] = len(spec.symbol_table)
        ids.append(spec.symbol_table[sym])
    return PhonemeSequence(_collapse(ids), clip_id)
