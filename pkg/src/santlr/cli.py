"""Administrative command line over the same library code as the service.

Exit codes: 0 success, 1 user error (bad input, unknown task), 2 internal
failure. Every command takes --json for machine-readable output.
"""

from __future__ import annotations

import argparse
import json
import os
import statistics
import sys
from datetime import timedelta
from pathlib import Path

from santlr.model import TaskMode
from santlr.pipeline import BadUpload, NoUtterances, ingest_task, rerank_task
from santlr.ranking import RankingConfig
from santlr.service import ServiceConfig, serve_forever
from santlr.stats import compute_session_stats
from santlr.store import CorruptManifest, TaskNotFound, TaskStore, load_task

EXIT_OK = 0
EXIT_USER = 1
EXIT_INTERNAL = 2


class UserError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse errors are user errors, not crashes
        raise UserError(message)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--data-dir",
        default=os.environ.get("SANTLR_DATA_DIR", "santlr-data"),
        help="task storage directory (env SANTLR_DATA_DIR)",
    )
    p.add_argument("--json", action="store_true", help="machine-readable output")


def _add_ranking_flags(p: argparse.ArgumentParser) -> None:
    defaults = RankingConfig()
    p.add_argument("--w-snr", type=float, default=defaults.w_snr)
    p.add_argument("--w-overlap", type=float, default=defaults.w_overlap)
    p.add_argument("--snr-target-db", type=float, default=defaults.snr_target_db)
    p.add_argument(
        "--overlap-threshold", type=float, default=defaults.overlap_threshold
    )
    p.add_argument("--lm-order", type=int, default=defaults.lm_order)
    p.add_argument("--lm-add-k", type=float, default=defaults.lm_add_k)
    p.add_argument(
        "--text-dup-threshold", type=float, default=defaults.text_dup_threshold
    )


def _config_from_args(args: argparse.Namespace) -> RankingConfig:
    cfg = RankingConfig(
        w_snr=args.w_snr,
        w_overlap=args.w_overlap,
        snr_target_db=args.snr_target_db,
        overlap_threshold=args.overlap_threshold,
        lm_order=args.lm_order,
        lm_add_k=args.lm_add_k,
        text_dup_threshold=args.text_dup_threshold,
    )
    try:
        cfg.validate()
    except ValueError as exc:
        raise UserError(str(exc)) from exc
    return cfg


def build_parser() -> _Parser:
    parser = _Parser(prog="santlr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_ingest = sub.add_parser("ingest", help="create a ranked task from files")
    p_ingest.add_argument("--mode", required=True, choices=["transcribe", "record"])
    p_ingest.add_argument("--language", default="", help="language tag for the task")
    p_ingest.add_argument(
        "--base-url", default="http://localhost:8080", help="prefix for share links"
    )
    p_ingest.add_argument("files", nargs="+", metavar="FILE")
    _add_ranking_flags(p_ingest)
    _add_common(p_ingest)

    p_rank = sub.add_parser("rank", help="recompute a task's ranked queue")
    p_rank.add_argument("--task", required=True)
    _add_ranking_flags(p_rank)
    _add_common(p_rank)

    p_serve = sub.add_parser("serve", help="run the annotation service")
    p_serve.add_argument("--port", type=int, default=8080)
    p_serve.add_argument("--host", default="0.0.0.0")
    p_serve.add_argument("--lease-ttl-s", type=float, default=900.0)
    p_serve.add_argument("--transcode-cmd", default=None)
    p_serve.add_argument("--max-upload-mb", type=int, default=512)
    p_serve.add_argument("--allow-origin", default="*")
    p_serve.add_argument("--async-threshold", type=int, default=500)
    p_serve.add_argument("--frontend-dir", default=None)
    p_serve.add_argument("--base-url", default=None)
    _add_common(p_serve)

    p_export = sub.add_parser("export", help="export annotations as a ZIP")
    p_export.add_argument("--task", required=True)
    p_export.add_argument("--out", required=True)
    p_export.add_argument("--exclude-skipped", action="store_true")
    _add_common(p_export)

    p_stats = sub.add_parser("stats", help="collection throughput per hour")
    p_stats.add_argument("--task", required=True)
    p_stats.add_argument("--window-min", type=float, default=60.0)
    _add_common(p_stats)

    return parser


def _cmd_ingest(args) -> int:
    mode = TaskMode(args.mode)
    files = []
    for name in args.files:
        path = Path(name)
        if not path.is_file():
            raise UserError(f"{name}: no such file")
        files.append((path.name, path.read_bytes()))
    try:
        result = ingest_task(
            Path(args.data_dir), mode, files, config=_config_from_args(args)
        )
    except (BadUpload, NoUtterances) as exc:
        raise UserError(str(exc)) from exc
    share_url = f"{args.base_url.rstrip('/')}/t/{result.descriptor.share_token}"
    out = {
        "task_id": result.descriptor.task_id,
        "share_url": share_url,
        "share_token": result.descriptor.share_token,
        "admin_token": result.admin_token,
        "utterances": result.utterance_count,
    }
    if args.json:
        print(json.dumps(out))
    else:
        print(f"task_id: {out['task_id']}")
        print(f"share_url: {out['share_url']}")
        print(f"admin_token: {out['admin_token']}")
        print(f"utterances: {out['utterances']}")
    return EXIT_OK


def _cmd_rank(args) -> int:
    try:
        queue = rerank_task(Path(args.data_dir), args.task, _config_from_args(args))
    except (TaskNotFound, CorruptManifest) as exc:
        raise UserError(str(exc)) from exc
    finals = [e.score.final_score for e in queue.entries]
    summary = {
        "task_id": args.task,
        "utterances": len(finals),
        "final_score": {
            "min": min(finals),
            "median": statistics.median(finals),
            "max": max(finals),
        },
    }
    if args.json:
        print(json.dumps(summary))
    else:
        print(f"utterances: {summary['utterances']}")
        score = summary["final_score"]
        print(
            f"final_score: min={score['min']:.6g} "
            f"median={score['median']:.6g} max={score['max']:.6g}"
        )
    return EXIT_OK


def _cmd_serve(args) -> int:
    cfg = ServiceConfig(
        data_dir=Path(args.data_dir),
        port=args.port,
        host=args.host,
        lease_ttl_s=args.lease_ttl_s,
        max_upload_mb=args.max_upload_mb,
        allow_origin=args.allow_origin,
        transcode_cmd=args.transcode_cmd,
        async_threshold=args.async_threshold,
        base_url=args.base_url,
        frontend_dir=Path(args.frontend_dir) if args.frontend_dir else None,
    )
    print(f"serving on {cfg.host}:{cfg.port}, data in {cfg.data_dir}", file=sys.stderr)
    serve_forever(cfg)
    return EXIT_OK


def _cmd_export(args) -> int:
    try:
        store = TaskStore.open(Path(args.data_dir), args.task)
    except (TaskNotFound, CorruptManifest) as exc:
        raise UserError(str(exc)) from exc
    try:
        payload = store.export_archive(exclude_skipped=args.exclude_skipped)
    finally:
        store.close()
    out_path = Path(args.out)
    out_path.write_bytes(payload)
    result = {"task_id": args.task, "out": str(out_path), "bytes": len(payload)}
    if args.json:
        print(json.dumps(result))
    else:
        print(f"wrote {result['bytes']} bytes to {result['out']}")
    return EXIT_OK


def _cmd_stats(args) -> int:
    try:
        state = load_task(Path(args.data_dir), args.task)
    except (TaskNotFound, CorruptManifest) as exc:
        raise UserError(str(exc)) from exc
    if args.window_min <= 0:
        raise UserError("--window-min must be > 0")
    finals = [
        state.latest_final_record(u.utterance_id) for u in state.utterances
    ]
    final_times = [r.saved_at for r in finals if r is not None]
    from santlr.model import utcnow

    window_end = max(final_times) + timedelta(seconds=1) if final_times else utcnow()
    window_start = window_end - timedelta(minutes=args.window_min)
    stats = compute_session_stats(state, window_start, window_end)
    result = {
        "task_id": args.task,
        "window_min": args.window_min,
        "words_per_hour": stats.words_per_hour,
        "audio_minutes_per_hour": stats.audio_minutes_per_hour,
        "words": stats.words,
        "audio_minutes": stats.audio_minutes,
    }
    if args.json:
        print(json.dumps(result))
    else:
        print(f"window: last {args.window_min:g} min")
        print(f"words/hour: {stats.words_per_hour:.1f}")
        print(f"audio minutes/hour: {stats.audio_minutes_per_hour:.2f}")
    return EXIT_OK


_COMMANDS = {
    "ingest": _cmd_ingest,
    "rank": _cmd_rank,
    "serve": _cmd_serve,
    "export": _cmd_export,
    "stats": _cmd_stats,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UserError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except KeyboardInterrupt:
        return EXIT_USER
    except Exception as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
