"""Levenshtein edit distance over arbitrary symbol sequences.

One kernel serves both the phoneme-overlap and text-dedup similarity
measures; unit costs (1 insert / 1 delete / 1 substitute).
"""

from __future__ import annotations

from typing import Hashable, Sequence


class EmptySequenceError(ValueError):
    pass


def levenshtein(a: Sequence[Hashable], b: Sequence[Hashable]) -> int:
    """Edit distance between two sequences with unit costs.

    Works on strings, lists of tokens, or lists of symbol ids alike.
    O(len(a) * len(b)) time, O(min(len(a), len(b))) memory.
    """
    if len(a) < len(b):
        a, b = b, a
    if len(b) == 0:
        return len(a)
    prev = list(range(len(b) + 1))
    cur = [0] * (len(b) + 1)
    for i, sa in enumerate(a, start=1):
        cur[0] = i
        for j, sb in enumerate(b, start=1):
            cost = 0 if sa == sb else 1
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + cost)
        prev, cur = cur, prev
    return prev[len(b)]


def normalized_similarity(a: Sequence[Hashable], b: Sequence[Hashable]) -> float:
    """1 - distance / max(len); 1.0 for identical, 0.0 for fully disjoint.

    Both sequences must be non-empty.
    """
    if len(a) == 0 or len(b) == 0:
        raise EmptySequenceError("similarity is undefined for empty sequences")
    longest = max(len(a), len(b))
    return 1.0 - levenshtein(a, b) / longest


def similarity_upper_bound(len_a: int, len_b: int) -> float:
    """Best possible similarity for two sequences of the given lengths.

    distance >= |len_a - len_b|, so similarity <= 1 - |diff| / max.
    Used to skip hopeless pairs in the dedup prefilter.
    """
    longest = max(len_a, len_b)
    if longest == 0:
        return 1.0
    return 1.0 - abs(len_a - len_b) / longest
