"""Upload-to-task ingestion: preprocessing, ranking, persistence.

The CLI ingest command and the POST /api/tasks endpoint both run through
here so their behavior cannot drift apart. Preprocessing (decode, VAD
split, text cleanup) is separate from assembly (phoneme fit, ranking,
persist) because the service runs assembly in the background for large
uploads.
"""

from __future__ import annotations

import secrets
import shlex
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from santlr import audio as audiolib
from santlr import phonemes as phlib
from santlr import textproc
from santlr.model import (
    AudioClipRef,
    TaskDescriptor,
    TaskMode,
    TextItem,
    Utterance,
    new_id,
    new_task,
)
from santlr.ranking import QueueEntry, RankedQueue, RankingConfig, rank_audio, rank_text
from santlr.store import TaskStore


class BadUpload(ValueError):
    pass


class NoUtterances(ValueError):
    pass


@dataclass
class PreparedUpload:
    mode: TaskMode
    clips: list[AudioClipRef] = field(default_factory=list)
    media: dict[str, bytes] = field(default_factory=dict)
    items: list[TextItem] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.clips) if self.mode is TaskMode.TRANSCRIBE else len(self.items)


@dataclass
class IngestResult:
    descriptor: TaskDescriptor
    admin_token: str
    utterance_count: int


def new_admin_token() -> str:
    return secrets.token_urlsafe(16)


def _clip_scoped_snr(
    rms: np.ndarray,
    decisions: np.ndarray,
    segment: audiolib.AudioSegment,
    hop_s: float,
    frame_s: float,
) -> float:
    """SNR of one clip's speech frames against the whole file's silence."""
    n = len(rms)
    first = max(0, int(np.ceil(segment.start_s / hop_s)))
    last = min(n - 1, int(np.floor((segment.end_s - frame_s) / hop_s)))
    speech = np.zeros(n, dtype=bool)
    if first <= last:
        speech[first : last + 1] = decisions[first : last + 1]
    if not speech.any() and first <= last:
        # padding rounded the clip off the detector grid; use the span
        speech[first : last + 1] = True
    if not speech.any():
        return audiolib.MINUS_INF_DB
    noise = ~np.asarray(decisions, dtype=bool)
    if not noise.any():
        return audiolib.snr_from_frames(rms, speech)
    speech_rms = float(np.sqrt(np.mean(rms[speech] ** 2)))
    noise_rms = float(np.sqrt(np.mean(rms[noise] ** 2)))
    if noise_rms <= 0.0:
        return audiolib.SNR_MAX_DB
    if speech_rms <= 0.0:
        return audiolib.SNR_MIN_DB
    snr = 20.0 * float(np.log10(speech_rms / noise_rms))
    return float(min(audiolib.SNR_MAX_DB, max(audiolib.SNR_MIN_DB, snr)))


def preprocess_wav(
    name: str, data: bytes, vad_cfg: audiolib.VadConfig
) -> list[tuple[AudioClipRef, bytes]]:
    """Decode, VAD-split and SNR-score one uploaded file.

    Returns (clip metadata, clip WAV bytes) pairs ready for media storage.
    """
    pcm = audiolib.decode_audio(data)
    energies = audiolib.frame_energies(pcm)
    mask = audiolib.detect_voice_activity(energies, vad_cfg)
    segments = audiolib.split_on_silence(pcm, mask, vad_cfg)
    if not segments:
        return []
    rms = audiolib.frame_rms(pcm)
    frame_len, hop_len, _ = audiolib.frame_layout(len(pcm.samples), pcm.sample_rate_hz)
    hop_s = hop_len / pcm.sample_rate_hz
    frame_s = frame_len / pcm.sample_rate_hz
    out = []
    for segment in segments:
        snr = _clip_scoped_snr(rms, mask.decisions, segment, hop_s, frame_s)
        clip_id = new_id("c")
        clip_pcm = audiolib.PcmBuffer(segment.samples(), pcm.sample_rate_hz)
        ref = AudioClipRef(
            clip_id=clip_id,
            source_file=name,
            start_s=segment.start_s,
            end_s=segment.end_s,
            duration_s=segment.end_s - segment.start_s,
            sample_rate_hz=pcm.sample_rate_hz,
            snr_db=snr,
        )
        out.append((ref, audiolib.encode_wav(clip_pcm)))
    return out


def preprocess_text(name: str, data: bytes) -> list[TextItem]:
    """Clean one uploaded .txt into tokenized sentence items."""
    doc = textproc.ingest_text(data, name)
    cleaned = textproc.remove_emoji(textproc.strip_markup(doc.text))
    items = []
    for sentence in textproc.segment_sentences(cleaned):
        tokens = tuple(textproc.tokenize(sentence))
        if not tokens:
            continue
        items.append(TextItem(text_id=new_id("s"), sentence=sentence, tokens=tokens))
    return items


def _require_suffix(name: str, suffix: str) -> None:
    if not name.lower().endswith(suffix):
        raise BadUpload(f"{name}: expected a {suffix} file")


def prepare_upload(
    mode: TaskMode,
    files: list[tuple[str, bytes]],
    vad_cfg: audiolib.VadConfig | None = None,
) -> PreparedUpload:
    """Run per-file preprocessing; rejects wrong file kinds."""
    if not files:
        raise BadUpload("no files uploaded")
    vad_cfg = vad_cfg or audiolib.VadConfig()
    prepared = PreparedUpload(mode=mode)
    for name, data in files:
        if mode is TaskMode.TRANSCRIBE:
            _require_suffix(name, ".wav")
            try:
                for ref, wav_bytes in preprocess_wav(name, data, vad_cfg):
                    prepared.clips.append(ref)
                    prepared.media[f"{ref.clip_id}.wav"] = wav_bytes
            except (
                audiolib.MalformedHeader,
                audiolib.UnsupportedEncoding,
                audiolib.TruncatedPayload,
            ) as exc:
                raise BadUpload(f"{name}: {exc}") from exc
        else:
            _require_suffix(name, ".txt")
            prepared.items.extend(preprocess_text(name, data))
    return prepared


def _run_transcode_hook(cmd: str, wav_path: Path, out_path: Path) -> bool:
    argv = [
        arg.replace("{wav}", str(wav_path)).replace("{out}", str(out_path))
        for arg in shlex.split(cmd)
    ]
    try:
        proc = subprocess.run(argv, capture_output=True, timeout=300)
    except (OSError, subprocess.TimeoutExpired):
        return False
    return proc.returncode == 0 and out_path.is_file()


def _rekey_queue(queue: RankedQueue, mapping: dict[str, str]) -> RankedQueue:
    entries = tuple(
        QueueEntry(utterance_id=mapping[e.utterance_id], rank=e.rank, score=e.score)
        for e in queue.entries
    )
    return RankedQueue(entries=entries)


def assemble_task(
    data_dir: Path,
    descriptor: TaskDescriptor,
    admin_token: str,
    prepared: PreparedUpload,
    estimator: phlib.EstimatorSpec | None = None,
    transcode_cmd: str | None = None,
) -> IngestResult:
    """Phoneme estimation, ranking and persistence for prepared uploads."""
    if prepared.count == 0:
        raise NoUtterances("preprocessing produced zero utterances")

    if prepared.mode is TaskMode.TRANSCRIBE:
        utterances, queue = _assemble_audio(descriptor, prepared, estimator)
        media = prepared.media
    else:
        utterances, queue = _assemble_text(descriptor, prepared)
        media = {}

    store = TaskStore.create(data_dir, descriptor, admin_token, utterances, queue, media)
    try:
        if prepared.mode is TaskMode.TRANSCRIBE and transcode_cmd:
            for u in utterances:
                wav_path = store.media_path(f"{u.payload.clip_id}.wav")
                out_path = store.media_path(f"{u.payload.clip_id}.mp3")
                _run_transcode_hook(transcode_cmd, wav_path, out_path)
    finally:
        store.close()
    return IngestResult(
        descriptor=descriptor,
        admin_token=admin_token,
        utterance_count=len(utterances),
    )


def _assemble_audio(
    descriptor: TaskDescriptor,
    prepared: PreparedUpload,
    estimator: phlib.EstimatorSpec | None,
) -> tuple[list[Utterance], RankedQueue]:
    # phonemes are estimated over the stored clip audio so the sequence
    # always matches what annotators will hear
    segments = []
    for ref in prepared.clips:
        pcm = audiolib.decode_audio(prepared.media[f"{ref.clip_id}.wav"])
        segments.append(audiolib.AudioSegment(0.0, pcm.duration_s, parent=pcm))

    if estimator is None or (
        estimator.kind is phlib.EstimatorKind.BUILTIN_SPECTRAL
        and estimator.codebook is None
    ):
        alphabet = estimator.alphabet_size if estimator else phlib.DEFAULT_ALPHABET_SIZE
        estimator = phlib.fit_builtin_estimator(segments, alphabet_size=alphabet)

    phoneme_map = {}
    annotated_clips = []
    for ref, segment in zip(prepared.clips, segments):
        seq = phlib.estimate_phonemes(segment, estimator, clip_id=ref.clip_id)
        if not seq.symbols:
            seq = phlib.PhonemeSequence(symbols=(0,), clip_id=ref.clip_id)
        phoneme_map[ref.clip_id] = seq
        annotated_clips.append(
            AudioClipRef(
                clip_id=ref.clip_id,
                source_file=ref.source_file,
                start_s=ref.start_s,
                end_s=ref.end_s,
                duration_s=ref.duration_s,
                sample_rate_hz=ref.sample_rate_hz,
                snr_db=ref.snr_db,
                phonemes=seq.symbols,
            )
        )

    queue = rank_audio(annotated_clips, phoneme_map, descriptor.config)
    utterances = [
        Utterance(utterance_id=new_id("u"), task_id=descriptor.task_id, payload=clip)
        for clip in annotated_clips
    ]
    by_clip = {u.payload.clip_id: u.utterance_id for u in utterances}
    return utterances, _rekey_queue(queue, by_clip)


def _assemble_text(
    descriptor: TaskDescriptor, prepared: PreparedUpload
) -> tuple[list[Utterance], RankedQueue]:
    queue = rank_text(prepared.items, descriptor.config)
    ppl = {e.utterance_id: e.score.base_score for e in queue.entries}
    scored = [
        TextItem(
            text_id=item.text_id,
            sentence=item.sentence,
            tokens=item.tokens,
            perplexity_per_token=ppl[item.text_id],
        )
        for item in prepared.items
    ]
    utterances = [
        Utterance(utterance_id=new_id("u"), task_id=descriptor.task_id, payload=item)
        for item in scored
    ]
    by_text = {u.payload.text_id: u.utterance_id for u in utterances}
    return utterances, _rekey_queue(queue, by_text)


def ingest_task(
    data_dir: Path,
    mode: TaskMode,
    files: list[tuple[str, bytes]],
    config: RankingConfig | None = None,
    vad_cfg: audiolib.VadConfig | None = None,
    language_tag: str = "",
    estimator: phlib.EstimatorSpec | None = None,
    transcode_cmd: str | None = None,
) -> IngestResult:
    """One-shot ingestion: preprocess, rank, persist."""
    config = config or RankingConfig()
    config.validate()
    descriptor = new_task(mode, config, language_tag)
    prepared = prepare_upload(mode, files, vad_cfg)
    return assemble_task(
        data_dir,
        descriptor,
        new_admin_token(),
        prepared,
        estimator=estimator,
        transcode_cmd=transcode_cmd,
    )


def rerank_task(data_dir: Path, task_id: str, config: RankingConfig) -> RankedQueue:
    """Recompute the queue for an existing task with new weights.

    Updates queue.json (the store's current queue) and writes
    ranking.json, a flat array of per-utterance score rows for external
    consumers.
    """
    store = TaskStore.open(data_dir, task_id)
    try:
        state = store.load_state()
        if state.descriptor.mode is TaskMode.TRANSCRIBE:
            clips = [u.payload for u in state.utterances]
            phoneme_map = {
                c.clip_id: phlib.PhonemeSequence(
                    symbols=c.phonemes or (0,), clip_id=c.clip_id
                )
                for c in clips
            }
            queue = rank_audio(clips, phoneme_map, config)
            mapping = {u.payload.clip_id: u.utterance_id for u in state.utterances}
        else:
            items = [u.payload for u in state.utterances]
            queue = rank_text(items, config)
            mapping = {u.payload.text_id: u.utterance_id for u in state.utterances}
        queue = _rekey_queue(queue, mapping)
        store.replace_queue(queue)
        store.write_ranking_export(queue)
        return queue
    finally:
        store.close()
