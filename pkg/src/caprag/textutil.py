"""Shared text helpers: tokenization, sentence splitting, match normalization.

The tokenizer defined here is the single term definition used by the sparse
scorer, the bag-of-terms test embedder, and the token-level answer metric,
so all of them agree on what a "term" is.
"""

from __future__ import annotations

import re

# Maximal runs of letters/digits (underscore excluded), casefolded.
_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)

# Numbers with an optional decimal part, or letter runs; used only for
# match normalization where "0.50" must stay one unit.
_MATCH_UNIT_RE = re.compile(r"\d+(?:\.\d+)?|[^\W\d_]+", re.UNICODE)

_SENTENCE_SPLIT_RE = re.compile(r"(?<=[.!?])\s+")


def tokenize(text: str) -> list[str]:
    """Split text into casefolded maximal letter/digit runs, in order."""
    return _TOKEN_RE.findall(text.casefold())


def split_sentences(text: str) -> list[str]:
    """Split text into sentences on ``.!?`` followed by whitespace.

    Newlines without sentence punctuation do not split; blank-only pieces
    are dropped.
    """
    parts = _SENTENCE_SPLIT_RE.split(text)
    return [p.strip() for p in parts if p.strip()]


def first_sentences(text: str, count: int) -> str:
    """Return the first `count` sentences of text joined by a space."""
    return " ".join(split_sentences(text)[:count])


def canonical_number(token: str) -> str:
    """Canonicalize a decimal string: no leading/trailing zeros, no bare dot.

    "0.50" -> "0.5", "007" -> "7", "17.0" -> "17", "17" -> "17".
    """
    if "." in token:
        whole, frac = token.split(".", 1)
        whole = whole.lstrip("0") or "0"
        frac = frac.rstrip("0")
        return f"{whole}.{frac}" if frac else whole
    return token.lstrip("0") or "0"


def normalize_for_matching(text: str) -> str:
    """Normalize text for lexical-containment checks.

    Casefolds, canonicalizes numbers, and collapses everything else to
    single-space-separated units, padded with one leading/trailing space so
    substring checks respect unit boundaries.
    """
    units = []
    for unit in _MATCH_UNIT_RE.findall(text.casefold()):
        if unit[0].isdigit():
            unit = canonical_number(unit)
        units.append(unit)
    return " " + " ".join(units) + " " if units else " "


def contains_normalized(haystack: str, needle: str) -> bool:
    """True if the normalized needle occurs as a unit run in the haystack."""
    norm_needle = normalize_for_matching(needle).strip()
    if not norm_needle:
        return True
    return f" {norm_needle} " in normalize_for_matching(haystack)
