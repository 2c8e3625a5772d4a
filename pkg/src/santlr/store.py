"""File-backed task storage.

One directory per task: an immutable manifest, the current ranked queue,
an append-only annotation log, and a media directory. JSON files are
replaced via write-to-temp-then-rename so readers never observe a torn
file; the log is fsync'd line-JSON whose valid prefix survives any kill.
No database server: a task is backed up by copying its directory.
"""

from __future__ import annotations

import io
import json
import os
import threading
import zipfile
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Iterable

from santlr.model import (
    AnnotationRecord,
    AudioClipRef,
    RecordingRef,
    ScoreBreakdown,
    TaskDescriptor,
    TaskMode,
    TextItem,
    TranscriptText,
    Utterance,
    UtteranceState,
    utcnow,
)
from santlr.ranking import QueueEntry, RankedQueue, RankingConfig

SCHEMA_VERSION = 1

try:
    import fcntl

    def _flock(handle, exclusive: bool) -> None:
        fcntl.flock(handle, fcntl.LOCK_EX if exclusive else fcntl.LOCK_SH)

    def _funlock(handle) -> None:
        fcntl.flock(handle, fcntl.LOCK_UN)

except ImportError:  # non-POSIX fallback: in-process lock only

    def _flock(handle, exclusive: bool) -> None:
        pass

    def _funlock(handle) -> None:
        pass


class TaskNotFound(KeyError):
    pass


class CorruptManifest(ValueError):
    pass


class StaleRevision(ValueError):
    def __init__(self, expected: int, got: int) -> None:
        super().__init__(f"expected revision {expected}, got {got}")
        self.expected = expected
        self.got = got


def _check_media_name(filename: str) -> None:
    if "/" in filename or "\\" in filename or filename.startswith("."):
        raise ValueError(f"bad media filename {filename!r}")


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(f".{path.name}.tmp")
    with open(tmp, "wb") as f:
        f.write(data)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)


def _dump_json(obj) -> bytes:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, indent=1).encode()


def escape_tsv(text: str) -> str:
    return (
        text.replace("\\", "\\\\")
        .replace("\t", "\\t")
        .replace("\n", "\\n")
        .replace("\r", "\\r")
    )


def unescape_tsv(text: str) -> str:
    out = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == "\\" and i + 1 < len(text):
            nxt = text[i + 1]
            mapped = {"\\": "\\", "t": "\t", "n": "\n", "r": "\r"}.get(nxt)
            if mapped is not None:
                out.append(mapped)
                i += 2
                continue
        out.append(ch)
        i += 1
    return "".join(out)


def descriptor_to_dict(d: TaskDescriptor) -> dict:
    return {
        "task_id": d.task_id,
        "mode": d.mode.value,
        "share_token": d.share_token,
        "created_at": d.created_at.isoformat(),
        "language_tag": d.language_tag,
        "config": d.config.to_dict(),
    }


def descriptor_from_dict(raw: dict) -> TaskDescriptor:
    return TaskDescriptor(
        task_id=raw["task_id"],
        mode=TaskMode(raw["mode"]),
        share_token=raw["share_token"],
        created_at=datetime.fromisoformat(raw["created_at"]),
        language_tag=raw.get("language_tag", ""),
        config=RankingConfig.from_dict(raw["config"]),
    )


def _payload_to_dict(u: Utterance) -> dict:
    if isinstance(u.payload, AudioClipRef):
        p = u.payload
        return {
            "kind": "audio",
            "clip_id": p.clip_id,
            "source_file": p.source_file,
            "start_s": p.start_s,
            "end_s": p.end_s,
            "duration_s": p.duration_s,
            "sample_rate_hz": p.sample_rate_hz,
            "snr_db": p.snr_db,
            "phonemes": list(p.phonemes) if p.phonemes is not None else None,
        }
    p = u.payload
    return {
        "kind": "text",
        "text_id": p.text_id,
        "sentence": p.sentence,
        "tokens": list(p.tokens),
        "perplexity_per_token": p.perplexity_per_token,
    }


def _utterance_from_dict(task_id: str, raw: dict) -> Utterance:
    if raw["kind"] == "audio":
        payload = AudioClipRef(
            clip_id=raw["clip_id"],
            source_file=raw["source_file"],
            start_s=raw["start_s"],
            end_s=raw["end_s"],
            duration_s=raw["duration_s"],
            sample_rate_hz=raw["sample_rate_hz"],
            snr_db=raw["snr_db"],
            phonemes=tuple(raw["phonemes"]) if raw.get("phonemes") is not None else None,
        )
    else:
        payload = TextItem(
            text_id=raw["text_id"],
            sentence=raw["sentence"],
            tokens=tuple(raw["tokens"]),
            perplexity_per_token=raw.get("perplexity_per_token"),
        )
    return Utterance(utterance_id=raw["utterance_id"], task_id=task_id, payload=payload)


def record_to_dict(r: AnnotationRecord) -> dict:
    if isinstance(r.content, TranscriptText):
        content = {"kind": "transcript", "text": r.content.text}
    else:
        content = {
            "kind": "recording",
            "path": r.content.path,
            "duration_s": r.content.duration_s,
        }
    return {
        "type": "annotation",
        "utterance_id": r.utterance_id,
        "annotator_id": r.annotator_id,
        "revision": r.revision,
        "final": r.final,
        "saved_at": r.saved_at.isoformat(),
        "content": content,
    }


def record_from_dict(raw: dict) -> AnnotationRecord:
    c = raw["content"]
    if c["kind"] == "transcript":
        content = TranscriptText(text=c["text"])
    else:
        content = RecordingRef(path=c["path"], duration_s=c["duration_s"])
    return AnnotationRecord(
        utterance_id=raw["utterance_id"],
        annotator_id=raw["annotator_id"],
        content=content,
        revision=raw["revision"],
        saved_at=datetime.fromisoformat(raw["saved_at"]),
        final=raw["final"],
    )


def queue_to_dict(q: RankedQueue) -> dict:
    return {
        "schema": SCHEMA_VERSION,
        "entries": [
            {
                "utterance_id": e.utterance_id,
                "rank": e.rank,
                "base_score": e.score.base_score,
                "snr_penalty": e.score.snr_penalty,
                "overlap_penalty": e.score.overlap_penalty,
                "final_score": e.score.final_score,
            }
            for e in q.entries
        ],
    }


def queue_from_dict(raw: dict) -> RankedQueue:
    entries = tuple(
        QueueEntry(
            utterance_id=e["utterance_id"],
            rank=e["rank"],
            score=ScoreBreakdown(
                base_score=e["base_score"],
                snr_penalty=e["snr_penalty"],
                overlap_penalty=e["overlap_penalty"],
                final_score=e["final_score"],
            ),
        )
        for e in raw["entries"]
    )
    return RankedQueue(entries=entries)


@dataclass
class TaskState:
    """Materialized view: manifest + queue + log replay."""

    descriptor: TaskDescriptor
    admin_token: str
    utterances: list[Utterance]
    queue: RankedQueue
    records: dict[tuple[str, str], AnnotationRecord]
    skips: dict[str, str]  # utterance_id -> annotator_id

    def utterance_map(self) -> dict[str, Utterance]:
        return {u.utterance_id: u for u in self.utterances}

    def annotated_ids(self) -> set[str]:
        return {r.utterance_id for r in self.records.values() if r.final}

    def base_states(self) -> dict[str, UtteranceState]:
        """Durable states only; leases are the service's runtime concern."""
        annotated = self.annotated_ids()
        states = {}
        for u in self.utterances:
            if u.utterance_id in annotated:
                states[u.utterance_id] = UtteranceState.ANNOTATED
            elif u.utterance_id in self.skips:
                states[u.utterance_id] = UtteranceState.SKIPPED
            else:
                states[u.utterance_id] = UtteranceState.PENDING
        return states

    def latest_final_record(self, utterance_id: str) -> AnnotationRecord | None:
        best = None
        for record in self.records.values():
            if record.utterance_id != utterance_id or not record.final:
                continue
            key = (record.saved_at, record.revision, record.annotator_id)
            if best is None or key > (best.saved_at, best.revision, best.annotator_id):
                best = record
        return best


class TaskStore:
    """Single-writer handle on one task directory."""

    def __init__(self, task_dir: Path):
        self.task_dir = Path(task_dir)
        self.media_dir = self.task_dir / "media"
        self._lock = threading.RLock()
        self._log_handle = None
        self._lock_handle = None
        self._revisions: dict[tuple[str, str], int] = {}
        self._records: dict[tuple[str, str], AnnotationRecord] = {}
        self._skips: dict[str, str] = {}
        self._manifest: dict = {}

    # -- creation / loading -------------------------------------------------

    @classmethod
    def create(
        cls,
        data_dir: Path,
        descriptor: TaskDescriptor,
        admin_token: str,
        utterances: Iterable[Utterance],
        queue: RankedQueue,
        media: dict[str, bytes] | None = None,
    ) -> "TaskStore":
        """Materialize a new task atomically: build aside, then rename in."""
        data_dir = Path(data_dir)
        data_dir.mkdir(parents=True, exist_ok=True)
        final_dir = data_dir / descriptor.task_id
        if final_dir.exists():
            raise FileExistsError(f"task {descriptor.task_id} already exists")
        tmp_dir = data_dir / f".tmp_{descriptor.task_id}"
        manifest = {
            "schema": SCHEMA_VERSION,
            "task": descriptor_to_dict(descriptor),
            "admin_token": admin_token,
            "utterances": [
                {"utterance_id": u.utterance_id, **_payload_to_dict(u)}
                for u in utterances
            ],
        }
        try:
            (tmp_dir / "media").mkdir(parents=True)
            _atomic_write(tmp_dir / "manifest.json", _dump_json(manifest))
            _atomic_write(tmp_dir / "queue.json", _dump_json(queue_to_dict(queue)))
            (tmp_dir / "annotations.log").touch()
            (tmp_dir / "lock").touch()
            for name, blob in (media or {}).items():
                _check_media_name(name)
                _atomic_write(tmp_dir / "media" / name, blob)
            os.replace(tmp_dir, final_dir)
        except Exception:
            # leave no partial task behind
            import shutil

            shutil.rmtree(tmp_dir, ignore_errors=True)
            raise
        return cls.open_dir(final_dir)

    @classmethod
    def open(cls, data_dir: Path, task_id: str) -> "TaskStore":
        return cls.open_dir(Path(data_dir) / task_id)

    @classmethod
    def open_dir(cls, task_dir: Path) -> "TaskStore":
        task_dir = Path(task_dir)
        if not (task_dir / "manifest.json").is_file():
            raise TaskNotFound(str(task_dir.name))
        store = cls(task_dir)
        store._load()
        return store

    def _load(self) -> None:
        try:
            raw = json.loads((self.task_dir / "manifest.json").read_text("utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise CorruptManifest(str(exc)) from exc
        if raw.get("schema") != SCHEMA_VERSION:
            raise CorruptManifest(f"unsupported schema {raw.get('schema')!r}")
        if "task" not in raw or "utterances" not in raw:
            raise CorruptManifest("manifest missing task or utterances")
        self._manifest = raw
        self._replay_log()

    def _replay_log(self) -> None:
        """Rebuild indexes from the log's valid prefix; drop a torn tail."""
        log_path = self.task_dir / "annotations.log"
        self._revisions.clear()
        self._records.clear()
        self._skips.clear()
        valid_bytes = 0
        if log_path.exists():
            data = log_path.read_bytes()
            offset = 0
            while True:
                newline = data.find(b"\n", offset)
                if newline < 0:
                    break
                line = data[offset : newline + 1]
                try:
                    entry = json.loads(line.decode("utf-8"))
                    self._apply_entry(entry)
                except (ValueError, KeyError):
                    break
                offset = newline + 1
                valid_bytes = offset
            if valid_bytes != len(data):
                with open(log_path, "r+b") as f:
                    f.truncate(valid_bytes)
                    f.flush()
                    os.fsync(f.fileno())
        if self._log_handle is not None:
            self._log_handle.close()
        self._log_handle = open(log_path, "ab")

    def _apply_entry(self, entry: dict) -> None:
        if entry["type"] == "annotation":
            record = record_from_dict(entry)
            key = (record.utterance_id, record.annotator_id)
            self._revisions[key] = record.revision
            self._records[key] = record
        elif entry["type"] == "skip":
            self._skips[entry["utterance_id"]] = entry["annotator_id"]
        else:
            raise ValueError(f"unknown log entry type {entry['type']!r}")

    def close(self) -> None:
        if self._log_handle is not None:
            self._log_handle.close()
            self._log_handle = None

    # -- accessors ----------------------------------------------------------

    @property
    def descriptor(self) -> TaskDescriptor:
        return descriptor_from_dict(self._manifest["task"])

    @property
    def admin_token(self) -> str:
        return self._manifest["admin_token"]

    def load_state(self) -> TaskState:
        descriptor = self.descriptor
        utterances = [
            _utterance_from_dict(descriptor.task_id, raw)
            for raw in self._manifest["utterances"]
        ]
        queue = self.load_queue()
        ranks = {e.utterance_id: e.rank for e in queue.entries}
        scores = {e.utterance_id: e.score for e in queue.entries}
        with self._lock:
            records = dict(self._records)
            skips = dict(self._skips)
        placed = []
        for u in utterances:
            placed.append(
                Utterance(
                    utterance_id=u.utterance_id,
                    task_id=u.task_id,
                    payload=u.payload,
                    priority_rank=ranks.get(u.utterance_id, 0),
                    score=scores.get(u.utterance_id),
                )
            )
        return TaskState(
            descriptor=descriptor,
            admin_token=self.admin_token,
            utterances=placed,
            queue=queue,
            records=records,
            skips=skips,
        )

    def load_queue(self) -> RankedQueue:
        try:
            raw = json.loads((self.task_dir / "queue.json").read_text("utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise CorruptManifest(f"bad queue.json: {exc}") from exc
        return queue_from_dict(raw)

    def latest_revision(self, utterance_id: str, annotator_id: str) -> int:
        with self._lock:
            return self._revisions.get((utterance_id, annotator_id), 0)

    def record_for(self, utterance_id: str, annotator_id: str) -> AnnotationRecord | None:
        with self._lock:
            return self._records.get((utterance_id, annotator_id))

    # -- mutations ----------------------------------------------------------

    def _locked_write(self, payload: bytes) -> None:
        lock_path = self.task_dir / "lock"
        with open(lock_path, "a+b") as lock_handle:
            _flock(lock_handle, exclusive=True)
            try:
                self._log_handle.write(payload)
                self._log_handle.flush()
                os.fsync(self._log_handle.fileno())
            finally:
                _funlock(lock_handle)

    def append_annotation(self, record: AnnotationRecord) -> int:
        """Durably append one record; the revision must be latest + 1."""
        key = (record.utterance_id, record.annotator_id)
        with self._lock:
            expected = self._revisions.get(key, 0) + 1
            if record.revision != expected:
                raise StaleRevision(expected, record.revision)
            line = json.dumps(record_to_dict(record), ensure_ascii=False) + "\n"
            self._locked_write(line.encode("utf-8"))
            self._revisions[key] = record.revision
            self._records[key] = record
        return record.revision

    def append_skip(self, utterance_id: str, annotator_id: str) -> None:
        with self._lock:
            entry = {
                "type": "skip",
                "utterance_id": utterance_id,
                "annotator_id": annotator_id,
                "at": utcnow().isoformat(),
            }
            line = json.dumps(entry, ensure_ascii=False) + "\n"
            self._locked_write(line.encode("utf-8"))
            self._skips[utterance_id] = annotator_id

    def replace_queue(self, queue: RankedQueue) -> None:
        with self._lock:
            _atomic_write(
                self.task_dir / "queue.json", _dump_json(queue_to_dict(queue))
            )

    def write_ranking_export(self, queue: RankedQueue) -> None:
        """ranking.json: the queue as a flat array for external tools."""
        rows = queue_to_dict(queue)["entries"]
        with self._lock:
            _atomic_write(self.task_dir / "ranking.json", _dump_json(rows))

    def store_media(self, filename: str, data: bytes) -> Path:
        """Immutable media blob; rewriting the same name is a no-op."""
        _check_media_name(filename)
        path = self.media_dir / filename
        if path.exists():
            return path
        _atomic_write(path, data)
        return path

    def media_path(self, filename: str) -> Path:
        return self.media_dir / filename

    # -- export -------------------------------------------------------------

    def export_archive(self, exclude_skipped: bool = False) -> bytes:
        """ZIP of audio plus transcripts.tsv plus meta.json."""
        state = self.load_state()
        mode = state.descriptor.mode
        finals: list[tuple[Utterance, AnnotationRecord]] = []
        for u in state.utterances:
            record = state.latest_final_record(u.utterance_id)
            if record is not None:
                finals.append((u, record))

        total = len(state.utterances)
        skipped = len(state.skips)
        meta = {
            "schema": SCHEMA_VERSION,
            "task": descriptor_to_dict(state.descriptor),
            "exported_at": utcnow().isoformat(),
            "counts": {
                "total": total,
                "annotated": len(finals),
                "skipped": skipped,
                "denominator": total - skipped if exclude_skipped else total,
            },
            "exclude_skipped": exclude_skipped,
        }

        buf = io.BytesIO()
        with zipfile.ZipFile(buf, "w", zipfile.ZIP_DEFLATED) as archive:
            archive.writestr("meta.json", _dump_json(meta))
            if finals:
                lines = ["utterance_id\ttext\tduration_s\tannotator_id"]
                for u, record in finals:
                    if mode is TaskMode.TRANSCRIBE:
                        assert isinstance(record.content, TranscriptText)
                        text = record.content.text
                        duration = u.payload.duration_s
                        audio_name = f"{u.payload.clip_id}.wav"
                    else:
                        assert isinstance(record.content, RecordingRef)
                        text = u.payload.sentence
                        duration = record.content.duration_s
                        audio_name = record.content.path
                    lines.append(
                        "\t".join(
                            [
                                u.utterance_id,
                                escape_tsv(text),
                                repr(float(duration)),
                                record.annotator_id,
                            ]
                        )
                    )
                    source = self.media_path(audio_name)
                    if source.is_file():
                        archive.write(source, f"audio/{u.utterance_id}.wav")
                archive.writestr(
                    "transcripts.tsv", ("\n".join(lines) + "\n").encode("utf-8")
                )
        return buf.getvalue()


def load_task(data_dir: Path, task_id: str) -> TaskState:
    """Manifest + queue + log replay as one immutable snapshot."""
    store = TaskStore.open(data_dir, task_id)
    try:
        return store.load_state()
    finally:
        store.close()


def parse_transcripts_tsv(data: bytes) -> list[dict]:
    """Inverse of the export TSV for round-trip ingestion."""
    lines = data.decode("utf-8").split("\n")
    if not lines or lines[0] != "utterance_id\ttext\tduration_s\tannotator_id":
        raise ValueError("missing or unexpected TSV header")
    rows = []
    for line in lines[1:]:
        if not line:
            continue
        fields = line.split("\t")
        if len(fields) != 4:
            raise ValueError(f"expected 4 TSV fields, got {len(fields)}")
        rows.append(
            {
                "utterance_id": fields[0],
                "text": unescape_tsv(fields[1]),
                "duration_s": float(fields[2]),
                "annotator_id": fields[3],
            }
        )
    return rows
