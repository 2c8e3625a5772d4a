import math
import random

import hypothesis.strategies as st
import pytest
from hypothesis import given, settings

from oracles import lm_logprob_ref, lm_perplexity_ref
from santlr.lm import (
    BOS,
    EOS,
    EmptyCorpusError,
    EmptySentenceError,
    NgramLanguageModel,
    sentence_perplexity,
    train_ngram_lm,
)


def test_bigram_counts_example():
    lm = train_ngram_lm([["a", "b"]], order=2, add_k=0.1)
    assert lm.counts[(BOS, "a")] == 1
    assert lm.counts[("a", "b")] == 1
    assert lm.counts[("b", EOS)] == 1


def test_doubled_corpus_doubles_counts_keeps_probabilities():
    single = train_ngram_lm([["a", "b"]], order=2, add_k=1e-12)
    double = train_ngram_lm([["a", "b"], ["a", "b"]], order=2, add_k=1e-12)
    for gram, count in single.counts.items():
        assert double.counts[gram] == 2 * count
    assert sentence_perplexity(single, ["a", "b"]) == pytest.approx(
        sentence_perplexity(double, ["a", "b"]), rel=1e-9
    )


def test_unigram_count_sum():
    rng = random.Random(11)
    corpus = [
        [rng.choice("abcdef") for _ in range(rng.randint(1, 9))] for _ in range(100)
    ]
    lm = train_ngram_lm(corpus, order=1, add_k=0.1)
    total_tokens = sum(len(s) for s in corpus)
    unigram_sum = sum(v for g, v in lm.counts.items() if len(g) == 1)
    assert unigram_sum == total_tokens + len(corpus)


def test_single_sentence_corpus_perplexity_one():
    lm = train_ngram_lm([["the", "cat", "sat"]], order=2, add_k=1e-12)
    assert sentence_perplexity(lm, ["the", "cat", "sat"]) == pytest.approx(
        1.0, abs=1e-9
    )


def test_unigram_frequent_beats_rare():
    lm = train_ngram_lm([["a", "a", "a", "a"], ["b"]], order=1, add_k=0.1)
    assert sentence_perplexity(lm, ["a", "a"]) < sentence_perplexity(lm, ["b", "b"])


def test_count_monotonicity_invariant():
    rng = random.Random(5)
    corpus = [
        [rng.choice("wxyz") for _ in range(rng.randint(1, 6))] for _ in range(30)
    ]
    lm = train_ngram_lm(corpus, order=3, add_k=0.5)
    for gram, count in lm.counts.items():
        if len(gram) > 1:
            assert count <= lm.counts[gram[:-1]]


def test_oov_tokens_map_to_unk():
    lm = train_ngram_lm([["a", "b"]], order=2, add_k=0.1)
    ppl = sentence_perplexity(lm, ["zzz", "b"])
    assert math.isfinite(ppl) and ppl > 1.0


def test_empty_corpus_rejected():
    with pytest.raises(EmptyCorpusError):
        train_ngram_lm([], order=2, add_k=0.1)
    with pytest.raises(EmptyCorpusError):
        train_ngram_lm([[]], order=2, add_k=0.1)


def test_empty_sentence_rejected():
    lm = train_ngram_lm([["a"]], order=2, add_k=0.1)
    with pytest.raises(EmptySentenceError):
        sentence_perplexity(lm, [])


def _random_corpus(rng, vocab_size, n_sentences):
    vocab = [f"w{i}" for i in range(vocab_size)]
    return [
        [rng.choice(vocab) for _ in range(rng.randint(1, 8))]
        for _ in range(n_sentences)
    ]


def test_matches_logprob_oracle():
    rng = random.Random(42)
    for trial in range(200):
        order = rng.randint(1, 3)
        add_k = rng.choice([0.01, 0.1, 0.5, 1.0])
        corpus = _random_corpus(rng, rng.randint(2, 20), rng.randint(1, 12))
        lm = train_ngram_lm(corpus, order=order, add_k=add_k)
        sentence = rng.choice(corpus) if rng.random() < 0.7 else _random_corpus(rng, 25, 1)[0]
        expected = lm_logprob_ref(corpus, order, add_k, sentence)
        assert lm.logprob(sentence) == pytest.approx(expected, rel=1e-12)
        assert sentence_perplexity(lm, sentence) == pytest.approx(
            lm_perplexity_ref(corpus, order, add_k, sentence), rel=1e-12
        )


@settings(max_examples=150)
@given(
    st.lists(
        st.lists(st.sampled_from("abcd"), min_size=1, max_size=6),
        min_size=1,
        max_size=8,
    ),
    st.lists(st.sampled_from("abcdx"), min_size=1, max_size=8),
    st.integers(1, 3),
)
def test_perplexity_at_least_one(corpus, sentence, order):
    lm = train_ngram_lm(corpus, order=order, add_k=0.3)
    assert sentence_perplexity(lm, sentence) >= 1.0 - 1e-12


def test_smaller_add_k_does_not_hurt_training_perplexity():
    rng = random.Random(9)
    corpus = _random_corpus(rng, 8, 20)
    strong = train_ngram_lm(corpus, order=2, add_k=1.0)
    weak = train_ngram_lm(corpus, order=2, add_k=0.01)
    avg_strong = sum(sentence_perplexity(strong, s) for s in corpus) / len(corpus)
    avg_weak = sum(sentence_perplexity(weak, s) for s in corpus) / len(corpus)
    assert avg_weak <= avg_strong + 1e-9


def test_backoff_truncation_unseen_context():
    # "c a" has an unseen bigram context for the second token's history
    lm = train_ngram_lm([["a", "b"], ["c", "d"]], order=3, add_k=0.1)
    sentence = ["c", "a"]
    expected = lm_logprob_ref([["a", "b"], ["c", "d"]], 3, 0.1, sentence)
    assert lm.logprob(sentence) == pytest.approx(expected, rel=1e-12)
