"""Audio decoding, energy-based voice activity detection and splitting.

Input is WAV PCM16 only; anything else must be transcoded before upload.
The VAD is a percentile-noise-floor energy detector: dependency-free,
deterministic, and language-agnostic, which keeps every downstream test
exact.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

FRAME_MS = 25
HOP_MS = 10
ENERGY_FLOOR_DB = 20.0 * math.log10(1e-10)  # -200 dBFS clamp for silence
MINUS_INF_DB = -999.0  # sentinel: no speech frames at all
SNR_MIN_DB = -40.0
SNR_MAX_DB = 60.0


class MalformedHeader(ValueError):
    pass


class UnsupportedEncoding(ValueError):
    pass


class TruncatedPayload(ValueError):
    pass


class EmptyBuffer(ValueError):
    pass


@dataclass(frozen=True)
class PcmBuffer:
    """Mono float samples in [-1, 1]."""

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self) -> None:
        if self.samples.ndim != 1:
            raise ValueError("PcmBuffer is mono: expected a 1-d sample array")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz

    def slice_seconds(self, start_s: float, end_s: float) -> "PcmBuffer":
        lo = max(0, int(round(start_s * self.sample_rate_hz)))
        hi = min(len(self.samples), int(round(end_s * self.sample_rate_hz)))
        return PcmBuffer(self.samples[lo:hi], self.sample_rate_hz)


@dataclass(frozen=True)
class VadMask:
    frame_ms: int
    hop_ms: int
    decisions: np.ndarray  # bool per frame, True = speech


@dataclass(frozen=True)
class AudioSegment:
    start_s: float
    end_s: float
    parent: PcmBuffer

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s

    def samples(self) -> np.ndarray:
        return self.parent.slice_seconds(self.start_s, self.end_s).samples


@dataclass(frozen=True)
class VadConfig:
    noise_floor_percentile: float = 10.0
    threshold_db_over_floor: float = 6.0
    min_silence_s: float = 0.5
    hangover_frames: int = 5
    min_segment_s: float = 0.3
    max_segment_s: float = 15.0
    context_pad_s: float = 0.02

    def __post_init__(self) -> None:
        if not (0.0 < self.noise_floor_percentile <= 50.0):
            raise ValueError("noise_floor_percentile must be in (0, 50]")
        if not (0.0 < self.min_segment_s < self.max_segment_s):
            raise ValueError("need 0 < min_segment_s < max_segment_s")
        if self.hangover_frames < 0 or self.min_silence_s < 0 or self.context_pad_s < 0:
            raise ValueError("negative VAD parameter")


def decode_audio(data: bytes, declared_format: str = "wav_pcm16") -> PcmBuffer:
    """Parse a RIFF/WAVE PCM16 byte stream into a mono buffer.

    Stereo is downmixed by averaging; samples are scaled by 1/32768.
    """
    if declared_format != "wav_pcm16":
        raise UnsupportedEncoding(f"unknown declared format {declared_format!r}")
    if len(data) < 12 or data[0:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MalformedHeader("not a RIFF/WAVE stream")
    riff_size = struct.unpack_from("<I", data, 4)[0]
    if riff_size + 8 > len(data):
        raise TruncatedPayload(
            f"RIFF header declares {riff_size + 8} bytes, got {len(data)}"
        )

    fmt = None
    payload = None
    offset = 12
    while offset + 8 <= len(data):
        chunk_id = data[offset : offset + 4]
        chunk_size = struct.unpack_from("<I", data, offset + 4)[0]
        body_start = offset + 8
        if chunk_id == b"fmt ":
            if chunk_size < 16 or body_start + 16 > len(data):
                raise MalformedHeader("fmt chunk too short")
            fmt = struct.unpack_from("<HHIIHH", data, body_start)
        elif chunk_id == b"data":
            if body_start + chunk_size > len(data):
                raise TruncatedPayload(
                    f"data chunk declares {chunk_size} bytes, "
                    f"only {len(data) - body_start} present"
                )
            payload = data[body_start : body_start + chunk_size]
        offset = body_start + chunk_size + (chunk_size & 1)

    if fmt is None or payload is None:
        raise MalformedHeader("missing fmt or data chunk")
    audio_format, channels, sample_rate, _byte_rate, _block_align, bits = fmt
    if audio_format != 1:
        raise UnsupportedEncoding(f"audio format {audio_format} is not PCM")
    if bits != 16:
        raise UnsupportedEncoding(f"{bits}-bit samples unsupported, expected 16")
    if channels not in (1, 2):
        raise UnsupportedEncoding(f"{channels} channels unsupported")
    if sample_rate <= 0:
        raise MalformedHeader("non-positive sample rate")
    if len(payload) % (2 * channels) != 0:
        raise TruncatedPayload("data chunk is not a whole number of sample frames")
    if len(payload) == 0:
        raise MalformedHeader("empty data chunk")

    raw = np.frombuffer(payload, dtype="<i2").astype(np.float64) / 32768.0
    if channels == 2:
        raw = raw.reshape(-1, 2).mean(axis=1)
    return PcmBuffer(samples=raw, sample_rate_hz=sample_rate)


def encode_wav(pcm: PcmBuffer) -> bytes:
    """Serialize a buffer back to mono WAV PCM16."""
    if len(pcm.samples) == 0:
        raise EmptyBuffer("cannot encode an empty buffer")
    ints = np.clip(np.rint(pcm.samples * 32768.0), -32768, 32767).astype("<i2")
    payload = ints.tobytes()
    header = b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE"
    header += b"fmt " + struct.pack(
        "<IHHIIHH", 16, 1, 1, pcm.sample_rate_hz, pcm.sample_rate_hz * 2, 2, 16
    )
    header += b"data" + struct.pack("<I", len(payload))
    return header + payload


def frame_layout(
    num_samples: int,
    sample_rate_hz: int,
    frame_ms: int = FRAME_MS,
    hop_ms: int = HOP_MS,
) -> tuple[int, int, int]:
    """(frame_len, hop_len, num_frames) for a ms-defined frame grid."""
    if frame_ms < hop_ms or hop_ms <= 0:
        raise ValueError("need frame_ms >= hop_ms > 0")
    frame_len = int(round(sample_rate_hz * frame_ms / 1000))
    hop_len = int(round(sample_rate_hz * hop_ms / 1000))
    if num_samples >= frame_len:
        num_frames = (num_samples - frame_len) // hop_len + 1
    else:
        num_frames = 1
    return frame_len, hop_len, num_frames


def frame_matrix(
    pcm: PcmBuffer, frame_ms: int = FRAME_MS, hop_ms: int = HOP_MS
) -> np.ndarray:
    """(num_frames, frame_len) sample matrix; short buffers zero-padded."""
    if len(pcm.samples) == 0:
        raise EmptyBuffer("no samples")
    frame_len, hop_len, num_frames = frame_layout(
        len(pcm.samples), pcm.sample_rate_hz, frame_ms, hop_ms
    )
    samples = pcm.samples
    if len(samples) < frame_len:
        samples = np.concatenate([samples, np.zeros(frame_len - len(samples))])
    idx = np.arange(num_frames)[:, None] * hop_len + np.arange(frame_len)[None, :]
    return samples[idx]


def frame_rms(pcm: PcmBuffer, frame_ms: int = FRAME_MS, hop_ms: int = HOP_MS) -> np.ndarray:
    frames = frame_matrix(pcm, frame_ms, hop_ms)
    return np.sqrt(np.mean(frames * frames, axis=1))


def frame_energies(pcm: PcmBuffer, frame_ms: int = FRAME_MS, hop_ms: int = HOP_MS) -> np.ndarray:
    """Per-frame RMS level in dBFS, clamped at -200 dB for silence."""
    rms = frame_rms(pcm, frame_ms, hop_ms)
    return 20.0 * np.log10(np.maximum(rms, 1e-10))


def detect_voice_activity(energies: np.ndarray, cfg: VadConfig) -> VadMask:
    """Threshold at noise floor + margin, then extend each hit forward.

    The noise floor is a low percentile of the frame energies, so a flat
    recording yields no speech at all.
    """
    energies = np.asarray(energies, dtype=np.float64)
    if energies.size == 0:
        raise EmptyBuffer("no frames")
    floor = float(np.percentile(energies, cfg.noise_floor_percentile))
    raw = energies > floor + cfg.threshold_db_over_floor
    decisions = raw.copy()
    run_out = 0
    for i, hit in enumerate(raw):
        if hit:
            run_out = cfg.hangover_frames
        elif run_out > 0:
            decisions[i] = True
            run_out -= 1
    return VadMask(frame_ms=FRAME_MS, hop_ms=HOP_MS, decisions=decisions)


def _speech_runs(decisions: np.ndarray) -> list[tuple[int, int]]:
    """Inclusive (first, last) frame index per contiguous speech run."""
    runs = []
    start = None
    for i, hit in enumerate(decisions):
        if hit and start is None:
            start = i
        elif not hit and start is not None:
            runs.append((start, i - 1))
            start = None
    if start is not None:
        runs.append((start, len(decisions) - 1))
    return runs


# energy differences below this are numeric noise, not quieter frames
ENERGY_TIE_DB = 0.01


def _force_split(
    start_s: float,
    end_s: float,
    energies_db: np.ndarray,
    hop_s: float,
    max_segment_s: float,
) -> list[tuple[float, float]]:
    """Cut an overlong span at the quietest frame inside its middle third.

    Energy ties (within ENERGY_TIE_DB) resolve toward the cut that
    balances the recursion, so a constant-energy span of duration d ends
    up in ceil(d / max) pieces.
    """
    duration = end_s - start_s
    if duration <= max_segment_s:
        return [(start_s, end_s)]
    pieces = math.ceil(duration / max_segment_s)
    target = start_s + duration * (math.ceil(pieces / 2) / pieces)
    lo = start_s + duration / 3.0
    hi = start_s + 2.0 * duration / 3.0
    first = max(0, int(math.ceil(lo / hop_s)))
    last = min(len(energies_db) - 1, int(math.floor(hi / hop_s)))
    if first > last:
        cut = (start_s + end_s) / 2.0
    else:
        candidates = range(first, last + 1)
        best = min(
            candidates,
            key=lambda i: (
                round(energies_db[i] / ENERGY_TIE_DB),
                abs(i * hop_s - target),
            ),
        )
        cut = best * hop_s
    return _force_split(start_s, cut, energies_db, hop_s, max_segment_s) + _force_split(
        cut, end_s, energies_db, hop_s, max_segment_s
    )


def split_on_silence(pcm: PcmBuffer, mask: VadMask, cfg: VadConfig) -> list[AudioSegment]:
    """Cut the buffer into speech segments separated by real silence.

    Speech runs closer than min_silence_s merge; each merged run loses
    its trailing hangover tail, gains a little context padding, then gets
    force-split if still longer than max_segment_s.
    """
    decisions = np.asarray(mask.decisions, dtype=bool)
    frame_len, hop_len, _ = frame_layout(len(pcm.samples), pcm.sample_rate_hz)
    sr = pcm.sample_rate_hz
    hop_s = hop_len / sr
    frame_s = frame_len / sr
    duration = pcm.duration_s

    runs = _speech_runs(decisions)
    if not runs:
        return []

    merged: list[list[int]] = [list(runs[0])]
    for start, end in runs[1:]:
        gap_frames = start - merged[-1][1] - 1
        if gap_frames * hop_s < cfg.min_silence_s:
            merged[-1][1] = end
        else:
            merged.append([start, end])

    spans: list[tuple[float, float]] = []
    for start, end in merged:
        # the last hangover_frames of a run are detector tail, not speech
        end = max(start, end - cfg.hangover_frames)
        span_start = max(0.0, start * hop_s - cfg.context_pad_s)
        span_end = min(duration, end * hop_s + frame_s + cfg.context_pad_s)
        spans.append((span_start, span_end))

    # clip overlapping padding at the midpoint of the shared silence
    for i in range(1, len(spans)):
        prev_start, prev_end = spans[i - 1]
        cur_start, cur_end = spans[i]
        if cur_start < prev_end:
            mid = (prev_end + cur_start) / 2.0
            spans[i - 1] = (prev_start, mid)
            spans[i] = (mid, cur_end)

    spans = [s for s in spans if s[1] - s[0] >= cfg.min_segment_s]

    energies_db = frame_energies(pcm)
    out: list[AudioSegment] = []
    for span_start, span_end in spans:
        for piece_start, piece_end in _force_split(
            span_start, span_end, energies_db, hop_s, cfg.max_segment_s
        ):
            out.append(AudioSegment(start_s=piece_start, end_s=piece_end, parent=pcm))
    return out


def estimate_snr(pcm: PcmBuffer, mask: VadMask) -> float:
    """Speech-to-silence energy ratio in dB, clamped to [-40, 60].

    No speech frames at all returns the -999 sentinel; a mask with no
    silence falls back to the 10th-percentile frame as the noise estimate.
    """
    decisions = np.asarray(mask.decisions, dtype=bool)
    rms = frame_rms(pcm)
    if len(rms) != len(decisions):
        raise ValueError("mask does not match the buffer's frame grid")
    return snr_from_frames(rms, decisions)


def snr_from_frames(frame_rms_values: np.ndarray, speech: np.ndarray) -> float:
    """SNR from a precomputed frame partition (shared with the pipeline)."""
    speech = np.asarray(speech, dtype=bool)
    if not speech.any():
        return MINUS_INF_DB
    speech_rms = float(np.sqrt(np.mean(frame_rms_values[speech] ** 2)))
    if speech.all():
        noise_rms = float(np.percentile(frame_rms_values, 10.0))
    else:
        noise_rms = float(np.sqrt(np.mean(frame_rms_values[~speech] ** 2)))
    if noise_rms <= 0.0:
        return SNR_MAX_DB
    if speech_rms <= 0.0:
        return SNR_MIN_DB
    snr = 20.0 * math.log10(speech_rms / noise_rms)
    return float(min(SNR_MAX_DB, max(SNR_MIN_DB, snr)))


def resample_linear(pcm: PcmBuffer, target_rate_hz: int) -> PcmBuffer:
    """Cheap linear-interpolation resampler for the phoneme estimator."""
    if target_rate_hz == pcm.sample_rate_hz:
        return pcm
    if len(pcm.samples) == 0:
        raise EmptyBuffer("no samples")
    n_out = max(1, int(round(len(pcm.samples) * target_rate_hz / pcm.sample_rate_hz)))
    src_t = np.arange(len(pcm.samples)) / pcm.sample_rate_hz
    dst_t = np.arange(n_out) / target_rate_hz
    return PcmBuffer(np.interp(dst_t, src_t, pcm.samples), target_rate_hz)
