"""Cleanup of raw uploaded text into ranked-ready sentences.

Researcher uploads arrive noisy (markup, emoji, junk whitespace); this
module normalizes them into clean sentences and tokens. All functions
are pure and idempotent, so re-cleaning stored text is always safe.
"""

from __future__ import annotations

import html
import unicodedata
import uuid
from dataclasses import dataclass

import regex as _regex

_COMMENT_RE = _regex.compile(r"<!--.*?-->", _regex.DOTALL)
# script/style elements disappear together with their content
_ELEMENT_RE = _regex.compile(
    r"<(script|style)\b[^<>]*>.*?</\1\s*>", _regex.DOTALL | _regex.IGNORECASE
)
# a tag opens with a letter, /, ! or ? -- a bare "a < b" comparison does not
_TAG_RE = _regex.compile(r"</?[A-Za-z](?:[^<>\"']|\"[^\"]*\"|'[^']*')*>|<[!?][^<>]*>")

_EXT_PICTOGRAPHIC = _regex.compile(r"\p{Extended_Pictographic}")

_ZWJ = "‍"
_VARIATION_SELECTORS = ("︎", "️")

_SENTENCE_SPLIT_RE = _regex.compile(r"(?<=[.!?।。؟])\s+")

_MAX_CLEAN_PASSES = 100


@dataclass(frozen=True)
class RawDocument:
    """Uploaded text, kept verbatim after UTF-8 sanitization."""

    doc_id: str
    text: str
    source_name: str


def ingest_text(raw: bytes, source_name: str) -> RawDocument:
    """Decode an uploaded .txt payload; invalid UTF-8 becomes U+FFFD."""
    return RawDocument(
        doc_id=f"doc_{uuid.uuid4().hex[:12]}",
        text=raw.decode("utf-8", errors="replace"),
        source_name=source_name,
    )


def strip_markup(text: str) -> str:
    """Remove HTML tag syntax and decode character entities.

    Comments and script/style elements vanish with their content; other
    tags leave their content behind. An unbalanced ``<`` with no closing
    ``>`` stays verbatim. Runs to a fixpoint so the result never contains
    tag syntax and the function is idempotent.
    """
    for _ in range(_MAX_CLEAN_PASSES):
        cleaned = _COMMENT_RE.sub("", text)
        cleaned = _ELEMENT_RE.sub("", cleaned)
        cleaned = _TAG_RE.sub("", cleaned)
        cleaned = html.unescape(cleaned)
        if cleaned == text:
            return cleaned
        text = cleaned
    return text


def _is_regional_indicator(ch: str) -> bool:
    return "\U0001f1e6" <= ch <= "\U0001f1ff"


def _is_emoji_modifier(ch: str) -> bool:
    return "\U0001f3fb" <= ch <= "\U0001f3ff"


def _remove_emoji_once(text: str) -> str:
    n = len(text)
    drop = [False] * n
    for i, ch in enumerate(text):
        if _is_emoji_modifier(ch) or _EXT_PICTOGRAPHIC.match(ch):
            drop[i] = True
    # regional indicators go in flag pairs; an unpaired one survives
    i = 0
    while i < n - 1:
        if (
            _is_regional_indicator(text[i])
            and _is_regional_indicator(text[i + 1])
            and not drop[i]
            and not drop[i + 1]
        ):
            drop[i] = drop[i + 1] = True
            i += 2
        else:
            i += 1
    # variation selectors and joiners belong to the sequence they serve
    for i, ch in enumerate(text):
        if ch in _VARIATION_SELECTORS and i > 0 and drop[i - 1]:
            drop[i] = True
    for i, ch in enumerate(text):
        if ch == _ZWJ and (
            (i > 0 and drop[i - 1]) or (i + 1 < n and drop[i + 1])
        ):
            drop[i] = True
    return "".join(ch for i, ch in enumerate(text) if not drop[i])


def remove_emoji(text: str) -> str:
    """Remove pictographic emoji, modifiers, ZWJ sequences and flag pairs.

    ZWJ survives outside emoji sequences (Sinhala and other scripts use
    it for conjuncts). Everything that is not part of an emoji sequence
    is preserved in order. Idempotent.
    """
    for _ in range(_MAX_CLEAN_PASSES):
        cleaned = _remove_emoji_once(text)
        if cleaned == text:
            return cleaned
        text = cleaned
    return text


def segment_sentences(text: str) -> list[str]:
    """Split cleaned text into sentences.

    Splits on newlines and after terminal punctuation (., !, ?, the
    Devanagari danda, CJK and Arabic marks) followed by whitespace.
    Scripts without terminal punctuation fall back to line breaks.
    """
    sentences = []
    for line in text.splitlines():
        for piece in _SENTENCE_SPLIT_RE.split(line):
            piece = piece.strip()
            if piece:
                sentences.append(piece)
    return sentences


def _strip_punct(token: str) -> str:
    start, end = 0, len(token)
    while start < end and unicodedata.category(token[start]).startswith("P"):
        start += 1
    while end > start and unicodedata.category(token[end - 1]).startswith("P"):
        end -= 1
    return token[start:end]


def tokenize(sentence: str) -> list[str]:
    """Whitespace tokens, edge punctuation stripped, case-folded."""
    tokens = []
    for raw in sentence.split():
        tok = _strip_punct(raw).casefold()
        if tok:
            tokens.append(tok)
    return tokens
