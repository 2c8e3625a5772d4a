#!/usr/bin/env python3
"""Create demo transcribe + record tasks from synthesized data.

Usage:
    python scripts/make_demo_task.py [--data-dir DIR]

Prints the share and admin tokens for both tasks; point `santlr serve`
at the same data dir and open the share URLs.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from santlr.audio import PcmBuffer, encode_wav
from santlr.model import TaskMode
from santlr.pipeline import ingest_task

SR = 16000

DEMO_TEXT = """\
The quick brown fox jumps over the lazy dog.
A watched pot never boils. Practice makes perfect.
Better late than never! Still waters run deep.
Actions speak louder than words.
The quick brown fox jumps over the lazy dog.
"""


def synth_session(seed: int = 0) -> bytes:
    """A few tone bursts separated by silence, like a field recording."""
    rng = np.random.default_rng(seed)
    pieces = [np.zeros(int(0.8 * SR))]
    for k in range(4):
        freq = rng.uniform(200, 2000)
        duration = rng.uniform(0.8, 3.0)
        t = np.arange(int(duration * SR)) / SR
        burst = 0.4 * np.sin(2 * np.pi * freq * t)
        burst += rng.uniform(-0.01, 0.01, len(burst))
        pieces.append(burst)
        pieces.append(np.zeros(int(rng.uniform(0.7, 1.2) * SR)))
    return encode_wav(PcmBuffer(np.concatenate(pieces), SR))


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--data-dir", default="santlr-data")
    parser.add_argument("--base-url", default="http://localhost:8080")
    args = parser.parse_args()
    data_dir = Path(args.data_dir)

    audio = ingest_task(
        data_dir,
        TaskMode.TRANSCRIBE,
        [("demo_session.wav", synth_session())],
    )
    text = ingest_task(
        data_dir,
        TaskMode.RECORD,
        [("demo_prompts.txt", DEMO_TEXT.encode("utf-8"))],
    )
    for label, result in (("transcribe", audio), ("record", text)):
        d = result.descriptor
        print(f"{label} task: {d.task_id} ({result.utterance_count} utterances)")
        print(f"  share: {args.base_url}/t/{d.share_token}")
        print(f"  admin_token: {result.admin_token}")
    print(f"\nnext: santlr serve --data-dir {data_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
