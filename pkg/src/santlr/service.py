"""HTTP annotation service.

Plain stdlib HTTP: field deployments should need nothing but Python and
this package. One capability URL per task; every mutation for a task is
serialized through that task's runtime lock, different tasks proceed in
parallel. Leases make simultaneous annotators safe: an utterance is
handed to exactly one active lease at a time and returns to the queue
when the lease expires.
"""

from __future__ import annotations

import json
import mimetypes
import re
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from santlr import __version__
from santlr.audio import (
    MalformedHeader,
    TruncatedPayload,
    UnsupportedEncoding,
    VadConfig,
    decode_audio,
)
from santlr.model import (
    AnnotationRecord,
    Lease,
    RecordingRef,
    TaskMode,
    TranscriptText,
    Utterance,
    UtteranceEvent,
    UtteranceState,
    new_task,
    transition_state,
    utcnow,
)
from santlr.pipeline import (
    BadUpload,
    NoUtterances,
    assemble_task,
    new_admin_token,
    prepare_upload,
)
from santlr.ranking import RankingConfig
from santlr.stats import collected_totals
from santlr.store import StaleRevision, TaskNotFound, TaskStore

ACTIVE_WINDOW_S = 600.0


class LeaseLimit(Exception):
    pass


class NotLeased(Exception):
    pass


class LeaseExpiredError(Exception):
    pass


class WrongMode(Exception):
    pass


@dataclass(frozen=True)
class ProgressReport:
    total: int
    annotated: int
    leased: int
    skipped: int
    words_collected: int
    audio_minutes_collected: float
    active_annotators_last_10min: int

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "annotated": self.annotated,
            "leased": self.leased,
            "skipped": self.skipped,
            "words_collected": self.words_collected,
            "audio_minutes_collected": self.audio_minutes_collected,
            "active_annotators_last_10min": self.active_annotators_last_10min,
        }


@dataclass
class ServiceConfig:
    data_dir: Path
    port: int = 8080
    host: str = "127.0.0.1"
    lease_ttl_s: float = 900.0
    max_upload_mb: int = 512
    allow_origin: str = "*"
    transcode_cmd: str | None = None
    async_threshold: int = 500
    max_leases_per_annotator: int = 3
    base_url: str | None = None
    frontend_dir: Path | None = None
    vad: VadConfig = field(default_factory=VadConfig)


class TaskRuntime:
    """In-memory lease and state tracking over one task's store."""

    def __init__(self, store: TaskStore, cfg: ServiceConfig):
        self.store = store
        self.cfg = cfg
        self.lock = threading.RLock()
        state = store.load_state()
        self.descriptor = state.descriptor
        self.admin_token = state.admin_token
        base = state.base_states()
        self.utterances: dict[str, Utterance] = {}
        for u in state.utterances:
            self.utterances[u.utterance_id] = Utterance(
                utterance_id=u.utterance_id,
                task_id=u.task_id,
                payload=u.payload,
                priority_rank=u.priority_rank,
                score=u.score,
                state=base[u.utterance_id],
            )
        self.queue_ids = state.queue.ordered_ids()
        self.leases: dict[str, Lease] = {}
        self.activity: dict[str, datetime] = {}
        for record in state.records.values():
            prev = self.activity.get(record.annotator_id)
            if prev is None or record.saved_at > prev:
                self.activity[record.annotator_id] = record.saved_at

    # -- internals (caller holds self.lock) ---------------------------------

    def _apply(self, utterance_id: str, event: UtteranceEvent) -> None:
        self.utterances[utterance_id] = transition_state(
            self.utterances[utterance_id], event
        )

    def _sweep(self, now: datetime) -> None:
        for uid, lease in list(self.leases.items()):
            if lease.expired(now):
                del self.leases[uid]
                self._apply(uid, UtteranceEvent.LEASE_EXPIRED)

    def _active_lease(self, utterance_id: str, now: datetime) -> Lease | None:
        lease = self.leases.get(utterance_id)
        if lease is None:
            return None
        if lease.expired(now):
            del self.leases[utterance_id]
            self._apply(utterance_id, UtteranceEvent.LEASE_EXPIRED)
            return None
        return lease

    # -- operations ----------------------------------------------------------

    def sweep(self) -> None:
        with self.lock:
            self._sweep(utcnow())

    def grant_next(self, annotator_id: str) -> tuple[Utterance, Lease] | None:
        now = utcnow()
        with self.lock:
            self._sweep(now)
            held = sum(
                1 for l in self.leases.values() if l.annotator_id == annotator_id
            )
            if held >= self.cfg.max_leases_per_annotator:
                raise LeaseLimit(
                    f"annotator already holds {held} active leases"
                )
            for uid in self.queue_ids:
                if self.utterances[uid].state is UtteranceState.PENDING:
                    self._apply(uid, UtteranceEvent.LEASE_GRANTED)
                    lease = Lease(
                        utterance_id=uid,
                        annotator_id=annotator_id,
                        issued_at=now,
                        ttl_s=self.cfg.lease_ttl_s,
                    )
                    self.leases[uid] = lease
                    self.activity[annotator_id] = now
                    return self.utterances[uid], lease
            return None

    def _check_write_access(
        self, utterance_id: str, annotator_id: str, final: bool, now: datetime
    ) -> None:
        lease = self._active_lease(utterance_id, now)
        if final:
            if lease is None or lease.annotator_id != annotator_id:
                raise LeaseExpiredError("no active lease held for finalization")
            return
        if lease is not None:
            if lease.annotator_id != annotator_id:
                raise NotLeased("utterance is leased to another annotator")
            return
        # grace drafts: the lease lapsed but nobody else picked it up yet
        if self.utterances[utterance_id].state is not UtteranceState.PENDING:
            raise NotLeased("utterance is no longer draftable")

    def _finish_write(
        self, utterance_id: str, annotator_id: str, final: bool, now: datetime
    ) -> None:
        self.activity[annotator_id] = now
        if final:
            self._apply(utterance_id, UtteranceEvent.ANNOTATION_FINALIZED)
            self.leases.pop(utterance_id, None)

    def save_transcript(
        self, utterance_id: str, annotator_id: str, revision: int, text: str, final: bool
    ) -> int:
        now = utcnow()
        with self.lock:
            if utterance_id not in self.utterances:
                raise KeyError(utterance_id)
            if self.descriptor.mode is not TaskMode.TRANSCRIBE:
                raise WrongMode("transcripts belong to transcribe tasks")
            self._check_write_access(utterance_id, annotator_id, final, now)
            previous = self.store.record_for(utterance_id, annotator_id)
            if (
                previous is not None
                and previous.revision == revision
                and previous.final == final
                and isinstance(previous.content, TranscriptText)
                and previous.content.text == text
            ):
                return revision  # idempotent retry of an acknowledged save
            record = AnnotationRecord(
                utterance_id=utterance_id,
                annotator_id=annotator_id,
                content=TranscriptText(text=text),
                revision=revision,
                saved_at=now,
                final=final,
            )
            accepted = self.store.append_annotation(record)
            self._finish_write(utterance_id, annotator_id, final, now)
            return accepted

    def save_recording(
        self,
        utterance_id: str,
        annotator_id: str,
        revision: int,
        wav_bytes: bytes,
        final: bool,
    ) -> int:
        now = utcnow()
        with self.lock:
            if utterance_id not in self.utterances:
                raise KeyError(utterance_id)
            if self.descriptor.mode is not TaskMode.RECORD:
                raise WrongMode("recordings belong to record tasks")
            pcm = decode_audio(wav_bytes)  # raises on undecodable payloads
            self._check_write_access(utterance_id, annotator_id, final, now)
            previous = self.store.record_for(utterance_id, annotator_id)
            name = f"rec_{utterance_id}_{annotator_id}_{revision}.wav"
            if (
                previous is not None
                and previous.revision == revision
                and previous.final == final
                and isinstance(previous.content, RecordingRef)
                and previous.content.path == name
            ):
                return revision
            self.store.store_media(name, wav_bytes)
            record = AnnotationRecord(
                utterance_id=utterance_id,
                annotator_id=annotator_id,
                content=RecordingRef(path=name, duration_s=pcm.duration_s),
                revision=revision,
                saved_at=now,
                final=final,
            )
            accepted = self.store.append_annotation(record)
            self._finish_write(utterance_id, annotator_id, final, now)
            return accepted

    def skip(self, utterance_id: str, annotator_id: str) -> None:
        now = utcnow()
        with self.lock:
            if utterance_id not in self.utterances:
                raise KeyError(utterance_id)
            lease = self._active_lease(utterance_id, now)
            if lease is None or lease.annotator_id != annotator_id:
                raise NotLeased("skipping requires an active lease")
            self.store.append_skip(utterance_id, annotator_id)
            self._apply(utterance_id, UtteranceEvent.SKIP_REQUESTED)
            del self.leases[utterance_id]
            self.activity[annotator_id] = now

    def active_leases_for(self, annotator_id: str) -> list[tuple[Utterance, Lease]]:
        now = utcnow()
        with self.lock:
            self._sweep(now)
            return [
                (self.utterances[uid], lease)
                for uid, lease in self.leases.items()
                if lease.annotator_id == annotator_id
            ]

    def progress(self) -> ProgressReport:
        now = utcnow()
        with self.lock:
            self._sweep(now)
            counts = {state: 0 for state in UtteranceState}
            for u in self.utterances.values():
                counts[u.state] += 1
            words, audio_s = collected_totals(self.store.load_state())
            cutoff = now - timedelta(seconds=ACTIVE_WINDOW_S)
            active = sum(1 for ts in self.activity.values() if ts >= cutoff)
            return ProgressReport(
                total=len(self.utterances),
                annotated=counts[UtteranceState.ANNOTATED],
                leased=counts[UtteranceState.LEASED],
                skipped=counts[UtteranceState.SKIPPED],
                words_collected=words,
                audio_minutes_collected=audio_s / 60.0,
                active_annotators_last_10min=active,
            )

    def utterance_json(self, u: Utterance) -> dict:
        base = {
            "utterance_id": u.utterance_id,
            "kind": u.kind,
            "rank": u.priority_rank,
        }
        if u.kind == "audio":
            base["duration_s"] = u.payload.duration_s
            base["audio_url"] = (
                f"/api/tasks/{self.descriptor.task_id}/audio/{u.utterance_id}"
            )
        else:
            base["sentence"] = u.payload.sentence
        return base


class AppState:
    def __init__(self, cfg: ServiceConfig):
        self.cfg = cfg
        self.cfg.data_dir = Path(cfg.data_dir)
        self.cfg.data_dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._runtimes: dict[str, TaskRuntime] = {}
        self._tokens: dict[str, str] = {}
        # async ingest bookkeeping: task_id -> status dict
        self.pending: dict[str, dict] = {}

    def runtime(self, task_id: str) -> TaskRuntime:
        if not re.fullmatch(r"[A-Za-z0-9_\-]+", task_id):
            raise TaskNotFound(task_id)
        with self._lock:
            rt = self._runtimes.get(task_id)
            if rt is None:
                store = TaskStore.open(self.cfg.data_dir, task_id)
                rt = TaskRuntime(store, self.cfg)
                self._runtimes[task_id] = rt
                self._tokens[rt.descriptor.share_token] = task_id
            return rt

    def register(self, runtime: TaskRuntime) -> None:
        with self._lock:
            self._runtimes[runtime.descriptor.task_id] = runtime
            self._tokens[runtime.descriptor.share_token] = runtime.descriptor.task_id

    def resolve_token(self, share_token: str) -> str | None:
        with self._lock:
            if share_token in self._tokens:
                return self._tokens[share_token]
        for manifest in self.cfg.data_dir.glob("*/manifest.json"):
            try:
                raw = json.loads(manifest.read_text("utf-8"))
                token = raw["task"]["share_token"]
            except (OSError, ValueError, KeyError):
                continue
            with self._lock:
                self._tokens[token] = raw["task"]["task_id"]
        with self._lock:
            return self._tokens.get(share_token)

    def sweep_all(self) -> None:
        with self._lock:
            runtimes = list(self._runtimes.values())
        for rt in runtimes:
            rt.sweep()


class Unsatisfiable(Exception):
    pass


def parse_range(value: str, size: int) -> tuple[int, int] | None:
    """Single byte range per RFC 9110; malformed headers are ignored."""
    if not value or not value.startswith("bytes="):
        return None
    spec = value[len("bytes=") :].strip()
    if "," in spec or "-" not in spec:
        return None
    first, last = spec.split("-", 1)
    first, last = first.strip(), last.strip()
    if first == "":
        if not last.isdigit():
            return None
        suffix = int(last)
        if suffix == 0:
            raise Unsatisfiable()
        return max(0, size - suffix), size - 1
    if not first.isdigit() or (last and not last.isdigit()):
        return None
    start = int(first)
    end = int(last) if last else size - 1
    if start >= size or start > end:
        raise Unsatisfiable()
    return start, min(end, size - 1)


def parse_multipart(content_type: str, body: bytes) -> tuple[dict[str, str], list[tuple[str, bytes]]]:
    """(form fields, files) from a multipart/form-data payload."""
    match = re.search(r'boundary="?([^";]+)"?', content_type or "")
    if not match:
        raise ValueError("missing multipart boundary")
    boundary = b"--" + match.group(1).encode("utf-8")
    fields: dict[str, str] = {}
    files: list[tuple[str, bytes]] = []
    chunks = body.split(boundary)
    for chunk in chunks[1:-1]:
        chunk = chunk.removeprefix(b"\r\n")
        if chunk in (b"", b"--", b"--\r\n"):
            continue
        head, _, payload = chunk.partition(b"\r\n\r\n")
        payload = payload.removesuffix(b"\r\n")
        disposition = ""
        for line in head.split(b"\r\n"):
            if line.lower().startswith(b"content-disposition:"):
                disposition = line.decode("utf-8", "replace")
        name_match = re.search(r'name="((?:[^"\\]|\\.)*)"', disposition)
        file_match = re.search(r'filename="((?:[^"\\]|\\.)*)"', disposition)
        if file_match:
            files.append((file_match.group(1), payload))
        elif name_match:
            fields[name_match.group(1)] = payload.decode("utf-8", "replace")
    return fields, files


_ROUTES = [
    ("POST", re.compile(r"^/api/tasks$"), "create_task"),
    ("GET", re.compile(r"^/api/config$"), "get_config"),
    ("GET", re.compile(r"^/api/resolve/(?P<token>[^/]+)$"), "resolve"),
    ("GET", re.compile(r"^/api/tasks/(?P<tid>[^/]+)/status$"), "status"),
    ("GET", re.compile(r"^/api/tasks/(?P<tid>[^/]+)/leases$"), "get_leases"),
    ("POST", re.compile(r"^/api/tasks/(?P<tid>[^/]+)/next$"), "next_utterance"),
    (
        "GET",
        re.compile(r"^/api/tasks/(?P<tid>[^/]+)/annotations/(?P<uid>[^/]+)$"),
        "get_annotation",
    ),
    (
        "PUT",
        re.compile(r"^/api/tasks/(?P<tid>[^/]+)/annotations/(?P<uid>[^/]+)$"),
        "put_annotation",
    ),
    (
        "POST",
        re.compile(r"^/api/tasks/(?P<tid>[^/]+)/recordings/(?P<uid>[^/]+)$"),
        "post_recording",
    ),
    (
        "POST",
        re.compile(r"^/api/tasks/(?P<tid>[^/]+)/utterances/(?P<uid>[^/]+)/skip$"),
        "post_skip",
    ),
    ("GET", re.compile(r"^/api/tasks/(?P<tid>[^/]+)/audio/(?P<uid>[^/]+)$"), "get_audio"),
    ("GET", re.compile(r"^/api/tasks/(?P<tid>[^/]+)/progress$"), "get_progress"),
    ("GET", re.compile(r"^/api/tasks/(?P<tid>[^/]+)/export$"), "get_export"),
]


class ApiHandler(BaseHTTPRequestHandler):
    app: AppState  # injected by make_server
    protocol_version = "HTTP/1.1"
    server_version = "santlr"

    # -- plumbing ------------------------------------------------------------

    def log_message(self, fmt, *args):  # quiet by default
        pass

    def _cors(self) -> None:
        self.send_header("Access-Control-Allow-Origin", self.app.cfg.allow_origin)
        self.send_header(
            "Access-Control-Allow-Headers", "Content-Type, X-Share-Token"
        )
        self.send_header(
            "Access-Control-Allow-Methods", "GET, POST, PUT, OPTIONS"
        )

    def _send_bytes(
        self,
        code: int,
        payload: bytes,
        content_type: str,
        extra: dict[str, str] | None = None,
    ) -> None:
        self.send_response(code)
        self._cors()
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(payload)))
        for key, value in (extra or {}).items():
            self.send_header(key, value)
        self.end_headers()
        if self.command != "HEAD":
            self.wfile.write(payload)

    def _send_json(self, code: int, obj) -> None:
        self._send_bytes(
            code, json.dumps(obj).encode("utf-8"), "application/json; charset=utf-8"
        )

    def _send_error_json(self, code: int, message: str) -> None:
        self._send_json(code, {"error": message})

    def _send_empty(self, code: int) -> None:
        self.send_response(code)
        self._cors()
        self.send_header("Content-Length", "0")
        self.end_headers()

    def _query(self) -> dict[str, str]:
        from urllib.parse import parse_qs, urlparse

        parsed = urlparse(self.path)
        return {k: v[0] for k, v in parse_qs(parsed.query).items()}

    def _path_only(self) -> str:
        return self.path.split("?", 1)[0]

    def _body(self) -> bytes:
        length = int(self.headers.get("Content-Length") or 0)
        limit = self.app.cfg.max_upload_mb * 1024 * 1024
        if length > limit:
            raise _PayloadTooLarge()
        return self.rfile.read(length)

    def _json_body(self) -> dict:
        raw = self._body()
        try:
            obj = json.loads(raw.decode("utf-8"))
        except ValueError as exc:
            raise _BadRequest(f"invalid JSON body: {exc}") from exc
        if not isinstance(obj, dict):
            raise _BadRequest("expected a JSON object")
        return obj

    def _share_token(self) -> str:
        return self._query().get("token") or self.headers.get("X-Share-Token") or ""

    def _authorized_runtime(self, task_id: str) -> TaskRuntime:
        try:
            rt = self.app.runtime(task_id)
        except TaskNotFound:
            raise _NotFound(f"unknown task {task_id}")
        if self._share_token() != rt.descriptor.share_token:
            raise _Forbidden("bad or missing share token")
        return rt

    # -- dispatch ------------------------------------------------------------

    def _dispatch(self) -> None:
        path = self._path_only()
        try:
            for method, pattern, name in _ROUTES:
                if method != self.command:
                    continue
                match = pattern.match(path)
                if match:
                    getattr(self, name)(**match.groupdict())
                    return
            if self.command == "GET":
                self._serve_static(path)
                return
            self._send_error_json(404, "no such endpoint")
        except _HttpError as exc:
            self._send_error_json(exc.code, str(exc))
        except BrokenPipeError:
            pass
        except Exception as exc:  # 500 with a terse message, not a traceback
            self._send_error_json(500, f"internal error: {type(exc).__name__}")

    def do_GET(self):
        self._dispatch()

    def do_HEAD(self):
        self._dispatch()

    def do_POST(self):
        self._dispatch()

    def do_PUT(self):
        self._dispatch()

    def do_OPTIONS(self):
        self._send_empty(204)

    # -- endpoints -----------------------------------------------------------

    def get_config(self) -> None:
        self._send_json(
            200,
            {
                "version": __version__,
                "poll_interval_s": 10,
                "autosave_interval_s": 3,
            },
        )

    def resolve(self, token: str) -> None:
        task_id = self.app.resolve_token(token)
        if task_id is None:
            raise _NotFound("unknown share token")
        rt = self.app.runtime(task_id)
        if rt.descriptor.share_token != token:
            raise _Forbidden("token mismatch")
        self._send_json(
            200,
            {
                "task_id": task_id,
                "mode": rt.descriptor.mode.value,
                "language_tag": rt.descriptor.language_tag,
            },
        )

    def create_task(self) -> None:
        content_type = self.headers.get("Content-Type", "")
        if not content_type.startswith("multipart/form-data"):
            raise _BadRequest("expected multipart/form-data")
        try:
            fields, files = parse_multipart(content_type, self._body())
        except ValueError as exc:
            raise _BadRequest(str(exc)) from exc
        mode_raw = fields.get("mode", "")
        try:
            mode = TaskMode(mode_raw)
        except ValueError:
            raise _BadRequest(f"mode must be transcribe or record, got {mode_raw!r}")
        config = RankingConfig()
        if fields.get("config"):
            try:
                config = RankingConfig.from_dict(json.loads(fields["config"]))
            except (ValueError, TypeError) as exc:
                raise _BadRequest(f"bad config: {exc}") from exc
        try:
            prepared = prepare_upload(mode, files, self.app.cfg.vad)
        except BadUpload as exc:
            raise _BadRequest(str(exc)) from exc
        if prepared.count == 0:
            raise _Unprocessable("preprocessing produced zero utterances")

        descriptor = new_task(mode, config, fields.get("language_tag", ""))
        admin_token = new_admin_token()
        share_url = f"{self._base_url()}/t/{descriptor.share_token}"
        response = {
            "task_id": descriptor.task_id,
            "share_url": share_url,
            "share_token": descriptor.share_token,
            "admin_token": admin_token,
            "utterances": prepared.count,
        }

        if prepared.count > self.app.cfg.async_threshold:
            self.app.pending[descriptor.task_id] = {
                "state": "processing",
                "share_token": descriptor.share_token,
            }

            def run() -> None:
                try:
                    assemble_task(
                        self.app.cfg.data_dir,
                        descriptor,
                        admin_token,
                        prepared,
                        transcode_cmd=self.app.cfg.transcode_cmd,
                    )
                    self.app.pending[descriptor.task_id]["state"] = "ready"
                except Exception as exc:
                    self.app.pending[descriptor.task_id] = {
                        "state": "failed",
                        "share_token": descriptor.share_token,
                        "error": str(exc),
                    }

            threading.Thread(target=run, daemon=True).start()
            response["status"] = "processing"
            response["status_url"] = f"/api/tasks/{descriptor.task_id}/status"
            self._send_json(202, response)
            return

        try:
            assemble_task(
                self.app.cfg.data_dir,
                descriptor,
                admin_token,
                prepared,
                transcode_cmd=self.app.cfg.transcode_cmd,
            )
        except NoUtterances as exc:
            raise _Unprocessable(str(exc)) from exc
        self.app.register(
            TaskRuntime(
                TaskStore.open(self.app.cfg.data_dir, descriptor.task_id),
                self.app.cfg,
            )
        )
        response["status"] = "ready"
        self._send_json(201, response)

    def status(self, tid: str) -> None:
        pending = self.app.pending.get(tid)
        if pending is not None and pending["state"] != "ready":
            if self._share_token() != pending["share_token"]:
                raise _Forbidden("bad or missing share token")
            self._send_json(
                200, {"state": pending["state"], "error": pending.get("error")}
            )
            return
        rt = self._authorized_runtime(tid)
        self._send_json(200, {"state": "ready", "utterances": len(rt.utterances)})

    def next_utterance(self, tid: str) -> None:
        rt = self._authorized_runtime(tid)
        body = self._json_body()
        annotator_id = str(body.get("annotator_id", "")).strip()
        if not annotator_id:
            raise _BadRequest("annotator_id is required")
        try:
            granted = rt.grant_next(annotator_id)
        except LeaseLimit as exc:
            raise _Conflict(str(exc)) from exc
        if granted is None:
            self._send_empty(204)
            return
        utterance, lease = granted
        self._send_json(
            200,
            {
                "utterance": rt.utterance_json(utterance),
                "lease": {
                    "utterance_id": lease.utterance_id,
                    "annotator_id": lease.annotator_id,
                    "issued_at": lease.issued_at.isoformat(),
                    "ttl_s": lease.ttl_s,
                    "expires_at": lease.expires_at().isoformat(),
                },
            },
        )

    def get_leases(self, tid: str) -> None:
        """The caller's own active leases; lets a reloaded page resume."""
        rt = self._authorized_runtime(tid)
        annotator_id = self._query().get("annotator_id", "").strip()
        if not annotator_id:
            raise _BadRequest("annotator_id is required")
        leases = [
            {
                "utterance": rt.utterance_json(utterance),
                "lease": {
                    "utterance_id": lease.utterance_id,
                    "annotator_id": lease.annotator_id,
                    "issued_at": lease.issued_at.isoformat(),
                    "ttl_s": lease.ttl_s,
                    "expires_at": lease.expires_at().isoformat(),
                },
            }
            for utterance, lease in rt.active_leases_for(annotator_id)
        ]
        self._send_json(200, {"leases": leases})

    def get_annotation(self, tid: str, uid: str) -> None:
        """Latest saved revision for (utterance, caller); draft recovery."""
        rt = self._authorized_runtime(tid)
        annotator_id = self._query().get("annotator_id", "").strip()
        if not annotator_id:
            raise _BadRequest("annotator_id is required")
        if uid not in rt.utterances:
            raise _NotFound(f"unknown utterance {uid}")
        record = rt.store.record_for(uid, annotator_id)
        if record is None:
            raise _NotFound("no saved revision")
        body = {
            "utterance_id": uid,
            "revision": record.revision,
            "final": record.final,
            "saved_at": record.saved_at.isoformat(),
        }
        if isinstance(record.content, TranscriptText):
            body["text"] = record.content.text
        else:
            body["recording"] = {
                "path": record.content.path,
                "duration_s": record.content.duration_s,
            }
        self._send_json(200, body)

    def put_annotation(self, tid: str, uid: str) -> None:
        rt = self._authorized_runtime(tid)
        body = self._json_body()
        annotator_id = str(body.get("annotator_id", "")).strip()
        if not annotator_id:
            raise _BadRequest("annotator_id is required")
        try:
            revision = int(body["revision"])
        except (KeyError, TypeError, ValueError):
            raise _BadRequest("revision must be an integer")
        text = body.get("text", "")
        if not isinstance(text, str):
            raise _BadRequest("text must be a string")
        final = bool(body.get("final", False))
        try:
            accepted = rt.save_transcript(uid, annotator_id, revision, text, final)
        except KeyError:
            raise _NotFound(f"unknown utterance {uid}")
        except WrongMode as exc:
            raise _BadRequest(str(exc)) from exc
        except LeaseExpiredError as exc:
            raise _Gone(str(exc)) from exc
        except NotLeased as exc:
            raise _Conflict(str(exc)) from exc
        except StaleRevision as exc:
            self._send_json(
                409,
                {"error": str(exc), "expected": exc.expected, "got": exc.got},
            )
            return
        self._send_json(200, {"accepted_revision": accepted})

    def post_recording(self, tid: str, uid: str) -> None:
        rt = self._authorized_runtime(tid)
        content_type = self.headers.get("Content-Type", "")
        if not content_type.startswith("multipart/form-data"):
            raise _BadRequest("expected multipart/form-data")
        try:
            fields, files = parse_multipart(content_type, self._body())
        except ValueError as exc:
            raise _BadRequest(str(exc)) from exc
        annotator_id = fields.get("annotator_id", "").strip()
        if not annotator_id:
            raise _BadRequest("annotator_id is required")
        try:
            revision = int(fields.get("revision", ""))
        except ValueError:
            raise _BadRequest("revision must be an integer")
        final = fields.get("final", "true").lower() != "false"
        if len(files) != 1:
            raise _BadRequest("exactly one WAV file expected")
        try:
            accepted = rt.save_recording(uid, annotator_id, revision, files[0][1], final)
        except KeyError:
            raise _NotFound(f"unknown utterance {uid}")
        except WrongMode as exc:
            raise _BadRequest(str(exc)) from exc
        except (MalformedHeader, UnsupportedEncoding, TruncatedPayload) as exc:
            self._send_error_json(415, f"undecodable audio: {exc}")
            return
        except LeaseExpiredError as exc:
            raise _Gone(str(exc)) from exc
        except NotLeased as exc:
            raise _Conflict(str(exc)) from exc
        except StaleRevision as exc:
            self._send_json(
                409, {"error": str(exc), "expected": exc.expected, "got": exc.got}
            )
            return
        self._send_json(200, {"accepted_revision": accepted})

    def post_skip(self, tid: str, uid: str) -> None:
        rt = self._authorized_runtime(tid)
        body = self._json_body()
        annotator_id = str(body.get("annotator_id", "")).strip()
        if not annotator_id:
            raise _BadRequest("annotator_id is required")
        try:
            rt.skip(uid, annotator_id)
        except KeyError:
            raise _NotFound(f"unknown utterance {uid}")
        except NotLeased as exc:
            raise _Conflict(str(exc)) from exc
        self._send_json(200, {"skipped": uid})

    def get_audio(self, tid: str, uid: str) -> None:
        rt = self._authorized_runtime(tid)
        utterance = rt.utterances.get(uid)
        if utterance is None or utterance.kind != "audio":
            raise _NotFound(f"no audio for utterance {uid}")
        clip_id = utterance.payload.clip_id
        path = rt.store.media_path(f"{clip_id}.mp3")
        content_type = "audio/mpeg"
        if not path.is_file():
            path = rt.store.media_path(f"{clip_id}.wav")
            content_type = "audio/wav"
        if not path.is_file():
            raise _NotFound("clip media missing")
        data = path.read_bytes()
        size = len(data)
        header = self.headers.get("Range", "")
        try:
            rng = parse_range(header, size) if header else None
        except Unsatisfiable:
            self._send_bytes(
                416,
                b"",
                content_type,
                {"Content-Range": f"bytes */{size}", "Accept-Ranges": "bytes"},
            )
            return
        if rng is None:
            self._send_bytes(
                200, data, content_type, {"Accept-Ranges": "bytes"}
            )
            return
        start, end = rng
        self._send_bytes(
            206,
            data[start : end + 1],
            content_type,
            {
                "Content-Range": f"bytes {start}-{end}/{size}",
                "Accept-Ranges": "bytes",
            },
        )

    def get_progress(self, tid: str) -> None:
        rt = self._authorized_runtime(tid)
        self._send_json(200, rt.progress().to_dict())

    def get_export(self, tid: str) -> None:
        try:
            rt = self.app.runtime(tid)
        except TaskNotFound:
            raise _NotFound(f"unknown task {tid}")
        if self._query().get("admin_token") != rt.admin_token:
            raise _Forbidden("bad admin token")
        exclude_skipped = self._query().get("exclude_skipped", "") in ("1", "true")
        with rt.lock:
            payload = rt.store.export_archive(exclude_skipped=exclude_skipped)
        self._send_bytes(
            200,
            payload,
            "application/zip",
            {"Content-Disposition": f'attachment; filename="{tid}.zip"'},
        )

    # -- static frontend -----------------------------------------------------

    def _base_url(self) -> str:
        if self.app.cfg.base_url:
            return self.app.cfg.base_url.rstrip("/")
        host = self.headers.get("Host") or f"localhost:{self.app.cfg.port}"
        return f"http://{host}"

    def _serve_static(self, path: str) -> None:
        root = self.app.cfg.frontend_dir
        if root is None or not Path(root).is_dir():
            raise _NotFound("no frontend bundle installed")
        root = Path(root).resolve()
        if path == "/" or path.startswith("/t/"):
            target = root / "index.html"
        else:
            target = (root / path.lstrip("/")).resolve()
            if not str(target).startswith(str(root)):
                raise _NotFound("bad path")
        if not target.is_file():
            raise _NotFound(path)
        content_type = (
            mimetypes.guess_type(str(target))[0] or "application/octet-stream"
        )
        self._send_bytes(200, target.read_bytes(), content_type)


class _HttpError(Exception):
    code = 500


class _BadRequest(_HttpError):
    code = 400


class _Forbidden(_HttpError):
    code = 403


class _NotFound(_HttpError):
    code = 404


class _Conflict(_HttpError):
    code = 409


class _Gone(_HttpError):
    code = 410


class _PayloadTooLarge(_HttpError):
    code = 413

    def __str__(self) -> str:
        return "payload too large"


class _Unprocessable(_HttpError):
    code = 422


def make_server(cfg: ServiceConfig) -> tuple[ThreadingHTTPServer, AppState]:
    app = AppState(cfg)

    class Handler(ApiHandler):
        pass

    Handler.app = app
    server = ThreadingHTTPServer((cfg.host, cfg.port), Handler)
    server.daemon_threads = True
    return server, app


def serve_forever(cfg: ServiceConfig) -> None:
    server, app = make_server(cfg)

    def sweeper() -> None:
        period = max(1.0, cfg.lease_ttl_s / 3.0)
        while True:
            time.sleep(period)
            app.sweep_all()

    threading.Thread(target=sweeper, daemon=True).start()
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
