#!/usr/bin/env python3
"""Sweep the SNR and overlap weights over a synthetic clip batch.

Shows how far each penalty moves the queue away from the pure
shortest-first order (Kendall tau distance, normalized) and how many
near-duplicates stay in the top quartile. Useful when tuning weights for
a new language before inviting annotators.
"""

import random
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from santlr.model import AudioClipRef
from santlr.phonemes import PhonemeSequence
from santlr.ranking import RankingConfig, rank_audio


def collapse(symbols):
    out = []
    for s in symbols:
        if not out or out[-1] != s:
            out.append(s)
    return tuple(out)


def make_batch(rng, n=120, dup_fraction=0.2):
    clips, phonemes = [], {}
    for i in range(n):
        duration = rng.uniform(1.0, 12.0)
        clip = AudioClipRef(
            clip_id=f"c{i}",
            source_file="synthetic",
            start_s=0.0,
            end_s=duration,
            duration_s=duration,
            sample_rate_hz=16000,
            snr_db=rng.uniform(-5.0, 35.0),
        )
        clips.append(clip)
        if i > 0 and rng.random() < dup_fraction:
            source = phonemes[f"c{rng.randrange(i)}"].symbols
            phonemes[clip.clip_id] = PhonemeSequence(source, clip.clip_id)
        else:
            seq = collapse(rng.randrange(32) for _ in range(rng.randint(5, 14)))
            phonemes[clip.clip_id] = PhonemeSequence(seq, clip.clip_id)
    return clips, phonemes


def kendall_distance(a, b):
    pos = {x: i for i, x in enumerate(b)}
    mapped = [pos[x] for x in a]
    inversions = 0
    for i in range(len(mapped)):
        for j in range(i + 1, len(mapped)):
            inversions += mapped[i] > mapped[j]
    pairs = len(mapped) * (len(mapped) - 1) / 2
    return inversions / pairs


def duplicate_pairs_in_top_quarter(queue, phonemes):
    top = queue.ordered_ids()[: len(queue.entries) // 4]
    seqs = [phonemes[uid].symbols for uid in top]
    return sum(
        seqs[i] == seqs[j] for i in range(len(seqs)) for j in range(i + 1, len(seqs))
    )


def main() -> int:
    rng = random.Random(7)
    clips, phonemes = make_batch(rng)
    baseline = rank_audio(
        clips, phonemes, RankingConfig(w_snr=0.0, w_overlap=0.0)
    ).ordered_ids()

    print(f"{'w_snr':>6} {'w_overlap':>9} {'tau_vs_duration':>16} {'dups_in_top25%':>15}")
    for w_snr in (0.0, 0.25, 0.5, 1.0):
        for w_overlap in (0.0, 0.5, 1.0, 2.0):
            cfg = RankingConfig(w_snr=w_snr, w_overlap=w_overlap)
            queue = rank_audio(clips, phonemes, cfg)
            tau = kendall_distance(queue.ordered_ids(), baseline)
            dups = duplicate_pairs_in_top_quarter(queue, phonemes)
            print(f"{w_snr:>6.2f} {w_overlap:>9.2f} {tau:>16.4f} {dups:>15d}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
