import io
import json
import threading
import time
import zipfile

import numpy as np
import pytest
import requests

from conftest import SR, silence, tone, wav_bytes_ref
from santlr.service import (
    ServiceConfig,
    make_server,
    parse_multipart,
    parse_range,
    Unsatisfiable,
)


@pytest.fixture
def make_service(tmp_path):
    servers = []

    def start(**overrides):
        cfg = ServiceConfig(
            data_dir=tmp_path / "data", port=0, host="127.0.0.1", **overrides
        )
        server, app = make_server(cfg)
        cfg.port = server.server_address[1]
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        servers.append(server)
        return f"http://127.0.0.1:{cfg.port}", app

    yield start
    for server in servers:
        server.shutdown()
        server.server_close()


def three_segment_wav() -> bytes:
    pieces = [silence(0.6)]
    for freq in (500, 900, 1300):
        pieces.append(tone(freq, 1.0, 0.5))
        pieces.append(silence(0.8))
    return wav_bytes_ref(np.concatenate(pieces))


FIVE_SENTENCES = "One two three. Four five six. Seven eight. Nine ten here. Final sentence now."


def create_transcribe(base, wav=None, **extra_fields):
    return requests.post(
        f"{base}/api/tasks",
        data={"mode": "transcribe", **extra_fields},
        files=[("files", ("clip.wav", wav or three_segment_wav(), "audio/wav"))],
    )


def create_record(base, text=FIVE_SENTENCES):
    return requests.post(
        f"{base}/api/tasks",
        data={"mode": "record"},
        files=[("files", ("prompts.txt", text.encode("utf-8"), "text/plain"))],
    )


def auth(task):
    return {"token": task["share_token"]}


def next_utterance(base, task, annotator="ann1"):
    return requests.post(
        f"{base}/api/tasks/{task['task_id']}/next",
        params=auth(task),
        json={"annotator_id": annotator},
    )


class TestCreateTask:
    def test_wav_with_three_segments(self, make_service):
        base, _ = make_service()
        resp = create_transcribe(base)
        assert resp.status_code == 201
        body = resp.json()
        assert body["utterances"] == 3
        assert body["share_url"].endswith(f"/t/{body['share_token']}")
        assert body["admin_token"]

    def test_txt_with_five_sentences(self, make_service):
        base, _ = make_service()
        resp = create_record(base)
        assert resp.status_code == 201
        assert resp.json()["utterances"] == 5

    def test_empty_file_unprocessable(self, make_service):
        base, _ = make_service()
        resp = requests.post(
            f"{base}/api/tasks",
            data={"mode": "record"},
            files=[("files", ("empty.txt", b"", "text/plain"))],
        )
        assert resp.status_code == 422

    def test_wrong_file_kind(self, make_service):
        base, _ = make_service()
        resp = requests.post(
            f"{base}/api/tasks",
            data={"mode": "transcribe"},
            files=[("files", ("notes.txt", b"hello", "text/plain"))],
        )
        assert resp.status_code == 400
        assert "notes.txt" in resp.json()["error"]

    def test_silent_wav_unprocessable(self, make_service):
        base, _ = make_service()
        resp = create_transcribe(base, wav=wav_bytes_ref(silence(2.0)))
        assert resp.status_code == 422

    def test_custom_config_applies(self, make_service):
        base, _ = make_service()
        resp = requests.post(
            f"{base}/api/tasks",
            data={"mode": "record", "config": json.dumps({"lm_order": 2})},
            files=[("files", ("p.txt", FIVE_SENTENCES.encode(), "text/plain"))],
        )
        assert resp.status_code == 201

    def test_bad_config_rejected(self, make_service):
        base, _ = make_service()
        resp = requests.post(
            f"{base}/api/tasks",
            data={"mode": "record", "config": json.dumps({"lm_order": 0})},
            files=[("files", ("p.txt", FIVE_SENTENCES.encode(), "text/plain"))],
        )
        assert resp.status_code == 400

    def test_async_path(self, make_service):
        base, _ = make_service(async_threshold=2)
        resp = create_record(base)
        assert resp.status_code == 202
        body = resp.json()
        assert body["status"] == "processing"
        token = body["share_token"]
        deadline = time.time() + 10
        state = None
        while time.time() < deadline:
            status = requests.get(
                f"{base}/api/tasks/{body['task_id']}/status",
                params={"token": token},
            )
            assert status.status_code == 200
            state = status.json()["state"]
            if state == "ready":
                break
            time.sleep(0.05)
        assert state == "ready"
        nxt = next_utterance(base, body)
        assert nxt.status_code == 200


class TestAuth:
    def test_unknown_task_404(self, make_service):
        base, _ = make_service()
        resp = requests.post(
            f"{base}/api/tasks/t_doesnotexist/next",
            params={"token": "x"},
            json={"annotator_id": "a"},
        )
        assert resp.status_code == 404

    def test_bad_token_403(self, make_service):
        base, _ = make_service()
        task = create_record(base).json()
        resp = requests.post(
            f"{base}/api/tasks/{task['task_id']}/next",
            params={"token": "wrong"},
            json={"annotator_id": "a"},
        )
        assert resp.status_code == 403

    def test_header_token_accepted(self, make_service):
        base, _ = make_service()
        task = create_record(base).json()
        resp = requests.get(
            f"{base}/api/tasks/{task['task_id']}/progress",
            headers={"X-Share-Token": task["share_token"]},
        )
        assert resp.status_code == 200

    def test_resolve_token(self, make_service):
        base, _ = make_service()
        task = create_record(base).json()
        resp = requests.get(f"{base}/api/resolve/{task['share_token']}")
        assert resp.status_code == 200
        assert resp.json()["task_id"] == task["task_id"]
        assert resp.json()["mode"] == "record"
        assert requests.get(f"{base}/api/resolve/bogus").status_code == 404


class TestLeases:
    def test_next_returns_queue_head(self, make_service):
        base, app = make_service()
        task = create_transcribe(base).json()
        rt = app.runtime(task["task_id"])
        resp = next_utterance(base, task)
        assert resp.status_code == 200
        body = resp.json()
        assert body["utterance"]["utterance_id"] == rt.queue_ids[0]
        assert body["lease"]["annotator_id"] == "ann1"

    def test_two_concurrent_nexts_disjoint(self, make_service):
        base, _ = make_service()
        task = create_transcribe(base).json()
        results = []
        barrier = threading.Barrier(2)

        def grab(name):
            barrier.wait()
            resp = next_utterance(base, task, annotator=name)
            results.append(resp.json()["utterance"]["utterance_id"])

        threads = [
            threading.Thread(target=grab, args=(f"a{i}",)) for i in range(2)
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert len(set(results)) == 2

    def test_lease_limit(self, make_service):
        base, _ = make_service()
        task = create_record(base).json()
        for _ in range(3):
            assert next_utterance(base, task).status_code == 200
        assert next_utterance(base, task).status_code == 409

    def test_exhausted_queue_204(self, make_service):
        base, _ = make_service()
        task = create_record(base, text="Only one sentence.").json()
        tid = task["task_id"]
        got = next_utterance(base, task)
        uid = got.json()["utterance"]["utterance_id"]
        requests.post(
            f"{base}/api/tasks/{tid}/recordings/{uid}",
            params=auth(task),
            data={"annotator_id": "ann1", "revision": "1", "final": "true"},
            files=[("file", ("take.wav", wav_bytes_ref(tone(440, 1.0, 0.3)), "audio/wav"))],
        )
        assert next_utterance(base, task).status_code == 204

    def test_expired_lease_returns_to_queue(self, make_service):
        base, _ = make_service(lease_ttl_s=0.2)
        task = create_record(base, text="Just one here.").json()
        first = next_utterance(base, task, annotator="slow")
        uid = first.json()["utterance"]["utterance_id"]
        time.sleep(0.35)
        second = next_utterance(base, task, annotator="fast")
        assert second.status_code == 200
        assert second.json()["utterance"]["utterance_id"] == uid


class TestAnnotations:
    def _leased_task(self, base, annotator="ann1"):
        task = create_transcribe(base).json()
        lease = next_utterance(base, task, annotator=annotator).json()
        return task, lease["utterance"]["utterance_id"]

    def _put(self, base, task, uid, annotator="ann1", **body):
        payload = {"annotator_id": annotator, **body}
        return requests.put(
            f"{base}/api/tasks/{task['task_id']}/annotations/{uid}",
            params=auth(task),
            json=payload,
        )

    def test_draft_then_final_flow(self, make_service):
        base, app = make_service()
        task, uid = self._leased_task(base)
        for rev, text in [(1, "d"), (2, "dr"), (3, "dra")]:
            resp = self._put(base, task, uid, revision=rev, text=text, final=False)
            assert resp.status_code == 200
            assert resp.json()["accepted_revision"] == rev
        resp = self._put(base, task, uid, revision=4, text="draft final", final=True)
        assert resp.status_code == 200
        rt = app.runtime(task["task_id"])
        record = rt.store.record_for(uid, "ann1")
        assert record.final and record.content.text == "draft final"
        progress = requests.get(
            f"{base}/api/tasks/{task['task_id']}/progress", params=auth(task)
        ).json()
        assert progress["annotated"] == 1

    def test_stale_revision_409(self, make_service):
        base, _ = make_service()
        task, uid = self._leased_task(base)
        assert self._put(base, task, uid, revision=1, text="a").status_code == 200
        assert self._put(base, task, uid, revision=2, text="b").status_code == 200
        resp = self._put(base, task, uid, revision=1, text="replay-different")
        assert resp.status_code == 409
        assert resp.json()["expected"] == 3

    def test_idempotent_retry_accepted(self, make_service):
        base, _ = make_service()
        task, uid = self._leased_task(base)
        first = self._put(base, task, uid, revision=1, text="same", final=False)
        retry = self._put(base, task, uid, revision=1, text="same", final=False)
        assert first.status_code == retry.status_code == 200
        assert retry.json()["accepted_revision"] == 1

    def test_final_after_expiry_410(self, make_service):
        base, _ = make_service(lease_ttl_s=0.2)
        task, uid = self._leased_task(base)
        time.sleep(0.35)
        resp = self._put(base, task, uid, revision=1, text="late", final=True)
        assert resp.status_code == 410
        # back in queue for someone else
        nxt = next_utterance(base, task, annotator="other")
        assert nxt.json()["utterance"]["utterance_id"] == uid

    def test_draft_grace_after_expiry(self, make_service):
        base, _ = make_service(lease_ttl_s=0.2)
        task, uid = self._leased_task(base)
        time.sleep(0.35)
        resp = self._put(base, task, uid, revision=1, text="kept draft", final=False)
        assert resp.status_code == 200

    def test_unknown_utterance_404(self, make_service):
        base, _ = make_service()
        task, _ = self._leased_task(base)
        assert self._put(base, task, "u_missing", revision=1, text="x").status_code == 404

    def test_wrong_mode_400(self, make_service):
        base, _ = make_service()
        task = create_record(base).json()
        lease = next_utterance(base, task).json()
        uid = lease["utterance"]["utterance_id"]
        resp = self._put(base, task, uid, revision=1, text="no")
        assert resp.status_code == 400

    def test_skip(self, make_service):
        base, _ = make_service()
        task, uid = self._leased_task(base)
        resp = requests.post(
            f"{base}/api/tasks/{task['task_id']}/utterances/{uid}/skip",
            params=auth(task),
            json={"annotator_id": "ann1"},
        )
        assert resp.status_code == 200
        progress = requests.get(
            f"{base}/api/tasks/{task['task_id']}/progress", params=auth(task)
        ).json()
        assert progress["skipped"] == 1
        # terminal: nobody gets it again
        seen = []
        while True:
            nxt = next_utterance(base, task, annotator="sweep")
            if nxt.status_code != 200:
                break
            got = nxt.json()["utterance"]["utterance_id"]
            seen.append(got)
            requests.post(
                f"{base}/api/tasks/{task['task_id']}/utterances/{got}/skip",
                params=auth(task),
                json={"annotator_id": "sweep"},
            )
        assert uid not in seen


class TestDraftRecovery:
    def test_lease_and_draft_recoverable_after_reload(self, make_service):
        base, _ = make_service()
        task = create_transcribe(base).json()
        tid = task["task_id"]
        lease = next_utterance(base, task, annotator="resumer").json()
        uid = lease["utterance"]["utterance_id"]
        requests.put(
            f"{base}/api/tasks/{tid}/annotations/{uid}",
            params=auth(task),
            json={"annotator_id": "resumer", "revision": 1, "text": "half a sent", "final": False},
        )
        # a fresh page: find my lease, then my draft
        mine = requests.get(
            f"{base}/api/tasks/{tid}/leases",
            params={**auth(task), "annotator_id": "resumer"},
        ).json()["leases"]
        assert [l["utterance"]["utterance_id"] for l in mine] == [uid]
        draft = requests.get(
            f"{base}/api/tasks/{tid}/annotations/{uid}",
            params={**auth(task), "annotator_id": "resumer"},
        ).json()
        assert draft == {
            "utterance_id": uid,
            "revision": 1,
            "final": False,
            "saved_at": draft["saved_at"],
            "text": "half a sent",
        }

    def test_no_draft_404(self, make_service):
        base, _ = make_service()
        task = create_transcribe(base).json()
        lease = next_utterance(base, task).json()
        uid = lease["utterance"]["utterance_id"]
        resp = requests.get(
            f"{base}/api/tasks/{task['task_id']}/annotations/{uid}",
            params={**auth(task), "annotator_id": "ann1"},
        )
        assert resp.status_code == 404

    def test_leases_empty_for_stranger(self, make_service):
        base, _ = make_service()
        task = create_transcribe(base).json()
        next_utterance(base, task, annotator="worker")
        mine = requests.get(
            f"{base}/api/tasks/{task['task_id']}/leases",
            params={**auth(task), "annotator_id": "someone-else"},
        ).json()["leases"]
        assert mine == []


class TestRecordings:
    def _leased(self, base):
        task = create_record(base).json()
        lease = next_utterance(base, task).json()
        return task, lease["utterance"]["utterance_id"]

    def _post(self, base, task, uid, wav, revision=1, final="true", annotator="ann1"):
        return requests.post(
            f"{base}/api/tasks/{task['task_id']}/recordings/{uid}",
            params=auth(task),
            data={"annotator_id": annotator, "revision": str(revision), "final": final},
            files=[("file", ("take.wav", wav, "audio/wav"))],
        )

    def test_valid_recording_accepted(self, make_service):
        base, app = make_service()
        task, uid = self._leased(base)
        resp = self._post(base, task, uid, wav_bytes_ref(tone(440, 3.0, 0.3)))
        assert resp.status_code == 200
        rt = app.runtime(task["task_id"])
        record = rt.store.record_for(uid, "ann1")
        assert record.content.duration_s == pytest.approx(3.0, abs=0.01)
        assert rt.store.media_path(record.content.path).is_file()

    def test_truncated_wav_415(self, make_service):
        base, app = make_service()
        task, uid = self._leased(base)
        resp = self._post(base, task, uid, wav_bytes_ref(tone(440, 1.0, 0.3))[:-77])
        assert resp.status_code == 415
        rt = app.runtime(task["task_id"])
        assert rt.store.record_for(uid, "ann1") is None
        assert not list(rt.store.media_dir.glob("rec_*"))

    def test_rerecord_keeps_previous_file(self, make_service):
        base, app = make_service()
        task, uid = self._leased(base)
        assert self._post(base, task, uid, wav_bytes_ref(tone(440, 1.0, 0.3)), 1, "false").status_code == 200
        assert self._post(base, task, uid, wav_bytes_ref(tone(600, 2.0, 0.3)), 2, "true").status_code == 200
        rt = app.runtime(task["task_id"])
        files = sorted(p.name for p in rt.store.media_dir.glob("rec_*"))
        assert len(files) == 2
        # export picks the latest
        export = requests.get(
            f"{base}/api/tasks/{task['task_id']}/export",
            params={"admin_token": task["admin_token"]},
        )
        archive = zipfile.ZipFile(io.BytesIO(export.content))
        tsv = archive.read("transcripts.tsv").decode()
        assert float(tsv.strip().split("\n")[1].split("\t")[2]) == pytest.approx(2.0, abs=0.01)


class TestAudioStreaming:
    def _task_with_audio(self, base):
        task = create_transcribe(base).json()
        lease = next_utterance(base, task).json()
        uid = lease["utterance"]["utterance_id"]
        url = f"{base}/api/tasks/{task['task_id']}/audio/{uid}"
        return task, url

    def test_full_fetch(self, make_service):
        base, _ = make_service()
        task, url = self._task_with_audio(base)
        resp = requests.get(url, params=auth(task))
        assert resp.status_code == 200
        assert resp.headers["Accept-Ranges"] == "bytes"
        assert resp.headers["Content-Type"] == "audio/wav"
        assert resp.content[:4] == b"RIFF"
        size = len(resp.content)

        ranged = requests.get(url, params=auth(task), headers={"Range": "bytes=0-99"})
        assert ranged.status_code == 206
        assert len(ranged.content) == 100
        assert ranged.headers["Content-Range"] == f"bytes 0-99/{size}"
        assert ranged.content == resp.content[:100]

        tail = requests.get(url, params=auth(task), headers={"Range": "bytes=-50"})
        assert tail.status_code == 206
        assert tail.content == resp.content[-50:]

        open_ended = requests.get(
            url, params=auth(task), headers={"Range": f"bytes={size - 10}-"}
        )
        assert open_ended.status_code == 206
        assert open_ended.content == resp.content[-10:]

        beyond = requests.get(
            url, params=auth(task), headers={"Range": f"bytes={size + 1000}-"}
        )
        assert beyond.status_code == 416
        assert beyond.headers["Content-Range"] == f"bytes */{size}"

    def test_transcode_hook_preferred(self, make_service, tmp_path):
        base, app = make_service(transcode_cmd="cp {wav} {out}")
        task, url = self._task_with_audio(base)
        resp = requests.get(url, params=auth(task))
        assert resp.status_code == 200
        assert resp.headers["Content-Type"] == "audio/mpeg"


class TestProgress:
    def test_fresh_task(self, make_service):
        base, _ = make_service()
        task = create_record(base).json()
        progress = requests.get(
            f"{base}/api/tasks/{task['task_id']}/progress", params=auth(task)
        ).json()
        assert progress["total"] == 5
        assert progress["annotated"] == 0
        assert progress["leased"] == 0
        assert progress["skipped"] == 0
        assert progress["words_collected"] == 0

    def test_words_collected_from_transcripts(self, make_service):
        base, _ = make_service()
        task = create_transcribe(base).json()
        tid = task["task_id"]
        texts = ["one two three", "four five six seven", "eight nine ten"]
        for text in texts:
            lease = next_utterance(base, task).json()
            uid = lease["utterance"]["utterance_id"]
            requests.put(
                f"{base}/api/tasks/{tid}/annotations/{uid}",
                params=auth(task),
                json={"annotator_id": "ann1", "revision": 1, "text": text, "final": True},
            )
        progress = requests.get(
            f"{base}/api/tasks/{tid}/progress", params=auth(task)
        ).json()
        assert progress["annotated"] == 3
        assert progress["words_collected"] == 10
        assert progress["audio_minutes_collected"] > 0
        assert progress["active_annotators_last_10min"] == 1

    def test_state_sum_invariant_under_random_workload(self, make_service):
        import random

        rng = random.Random(5)
        base, _ = make_service()
        task = create_record(base).json()
        tid = task["task_id"]
        held = {}
        for step in range(60):
            action = rng.random()
            progress = requests.get(
                f"{base}/api/tasks/{tid}/progress", params=auth(task)
            ).json()
            pending = progress["total"] - progress["annotated"] - progress["leased"] - progress["skipped"]
            assert pending >= 0
            if action < 0.5:
                annotator = f"a{rng.randint(0, 2)}"
                resp = next_utterance(base, task, annotator=annotator)
                if resp.status_code == 200:
                    held[resp.json()["utterance"]["utterance_id"]] = annotator
            elif held:
                uid, annotator = rng.choice(list(held.items()))
                del held[uid]
                if rng.random() < 0.5:
                    requests.post(
                        f"{base}/api/tasks/{tid}/recordings/{uid}",
                        params=auth(task),
                        data={"annotator_id": annotator, "revision": "1", "final": "true"},
                        files=[("file", ("t.wav", wav_bytes_ref(tone(500, 0.5, 0.3)), "audio/wav"))],
                    )
                else:
                    requests.post(
                        f"{base}/api/tasks/{tid}/utterances/{uid}/skip",
                        params=auth(task),
                        json={"annotator_id": annotator},
                    )


class TestExportEndpoint:
    def test_bad_admin_token_403(self, make_service):
        base, _ = make_service()
        task = create_record(base).json()
        resp = requests.get(
            f"{base}/api/tasks/{task['task_id']}/export",
            params={"admin_token": "wrong"},
        )
        assert resp.status_code == 403

    def test_zip_streamed(self, make_service):
        base, _ = make_service()
        task = create_record(base).json()
        resp = requests.get(
            f"{base}/api/tasks/{task['task_id']}/export",
            params={"admin_token": task["admin_token"]},
        )
        assert resp.status_code == 200
        assert resp.headers["Content-Type"] == "application/zip"
        archive = zipfile.ZipFile(io.BytesIO(resp.content))
        assert "meta.json" in archive.namelist()


class TestConfigEndpoint:
    def test_config(self, make_service):
        base, _ = make_service()
        resp = requests.get(f"{base}/api/config")
        assert resp.status_code == 200
        assert "version" in resp.json()

    def test_cors_headers(self, make_service):
        base, _ = make_service(allow_origin="https://ui.example")
        resp = requests.get(f"{base}/api/config")
        assert resp.headers["Access-Control-Allow-Origin"] == "https://ui.example"
        preflight = requests.options(f"{base}/api/config")
        assert preflight.status_code == 204


class TestParsers:
    def test_parse_range_cases(self):
        assert parse_range("bytes=0-99", 1000) == (0, 99)
        assert parse_range("bytes=900-", 1000) == (900, 999)
        assert parse_range("bytes=-50", 1000) == (950, 999)
        assert parse_range("bytes=0-5000", 1000) == (0, 999)
        assert parse_range("", 1000) is None
        assert parse_range("items=0-1", 1000) is None
        assert parse_range("bytes=4-2,7-9", 1000) is None
        with pytest.raises(Unsatisfiable):
            parse_range("bytes=2000-", 1000)
        with pytest.raises(Unsatisfiable):
            parse_range("bytes=5-2", 1000)

    def test_parse_multipart_mixed(self):
        boundary = "XbOuNdArYx"
        body = (
            f"--{boundary}\r\n"
            'Content-Disposition: form-data; name="mode"\r\n'
            "\r\n"
            "record\r\n"
            f"--{boundary}\r\n"
            'Content-Disposition: form-data; name="files"; filename="a.txt"\r\n'
            "Content-Type: text/plain\r\n"
            "\r\n"
            "line one\r\n"
            f"--{boundary}--\r\n"
        ).encode()
        fields, files = parse_multipart(
            f"multipart/form-data; boundary={boundary}", body
        )
        assert fields == {"mode": "record"}
        assert files == [("a.txt", b"line one")]

    def test_parse_multipart_binary_payload(self):
        boundary = "b1"
        blob = bytes(range(256)) * 3
        body = (
            b"--b1\r\n"
            b'Content-Disposition: form-data; name="files"; filename="x.wav"\r\n'
            b"\r\n" + blob + b"\r\n"
            b"--b1--\r\n"
        )
        _, files = parse_multipart("multipart/form-data; boundary=b1", body)
        assert files == [("x.wav", blob)]
