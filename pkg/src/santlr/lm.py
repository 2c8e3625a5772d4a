"""Count-based n-gram language model with add-k smoothing.

Small and exactly specified on purpose: sentence scores feed the text
ranking, so the arithmetic must be reproducible by hand. Unseen contexts
back off to the longest suffix with a nonzero count (no discount).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"


class EmptyCorpusError(ValueError):
    pass


class EmptySentenceError(ValueError):
    pass


@dataclass
class NgramLanguageModel:
    order: int
    add_k: float
    counts: dict[tuple[str, ...], int] = field(default_factory=dict)
    vocab: set[str] = field(default_factory=set)
    total_unigrams: int = 0

    def _map(self, token: str) -> str:
        return token if token in self.vocab else UNK

    def logprob(self, tokens: Sequence[str]) -> float:
        """Sum of log P(w_i | context) over the sentence plus EOS.

        Contexts are add-k smoothed; a context with zero count is
        truncated to the longest suffix that was observed.
        """
        if not tokens:
            raise EmptySentenceError("cannot score an empty sentence")
        mapped = [self._map(t) for t in tokens]
        padded = [BOS] * (self.order - 1) + mapped + [EOS]
        vocab_size = len(self.vocab)
        total = 0.0
        for i in range(self.order - 1, len(padded)):
            word = padded[i]
            context = tuple(padded[i - self.order + 1 : i])
            while context and self.counts.get(context, 0) == 0:
                context = context[1:]
            denom = self.counts[context] if context else self.total_unigrams
            num = self.counts.get(context + (word,), 0)
            total += math.log(
                (num + self.add_k) / (denom + self.add_k * vocab_size)
            )
        return total

    def perplexity(self, tokens: Sequence[str]) -> float:
        """Per-token perplexity, EOS counted, BOS not."""
        events = len(tokens) + 1
        return math.exp(-self.logprob(tokens) / events)


def train_ngram_lm(
    sentences: Iterable[Sequence[str]], order: int = 3, add_k: float = 0.1
) -> NgramLanguageModel:
    """Accumulate all 1..order gram counts over BOS/EOS-padded sentences."""
    if order < 1:
        raise ValueError("order must be >= 1")
    if add_k <= 0:
        raise ValueError("add_k must be > 0")
    lm = NgramLanguageModel(order=order, add_k=add_k)
    lm.vocab.update((BOS, EOS, UNK))
    seen_any = False
    for sentence in sentences:
        if not sentence:
            continue
        seen_any = True
        lm.vocab.update(sentence)
        padded = [BOS] * (order - 1) + list(sentence) + [EOS]
        for n in range(1, order + 1):
            for i in range(len(padded) - n + 1):
                gram = tuple(padded[i : i + n])
                lm.counts[gram] = lm.counts.get(gram, 0) + 1
    if not seen_any:
        raise EmptyCorpusError("training corpus has no non-empty sentence")
    lm.total_unigrams = sum(
        count for gram, count in lm.counts.items() if len(gram) == 1
    )
    return lm


def sentence_perplexity(lm: NgramLanguageModel, tokens: Sequence[str]) -> float:
    return lm.perplexity(tokens)
