"""Token estimation and word tokenization used for sealing and accounting."""

from __future__ import annotations

import re
from typing import Callable

TokenEstimator = Callable[[str], int]

_WORD_RE = re.compile(r"[^\W_]+")



def estimate_tokens(text: str) -> int:
    """Whitespace word count scaled by 1.3, rounded up."""
    words = len(text.split())
    # integer arithmetic keeps the rounding exact (1.3 has no finite binary form)
    return -(-words * 13 // 10) if words else 0


def words(text: str) -> list[str]:
    """Lowercased alphanumeric runs; punctuation and whitespace are separators."""
    return _WORD_RE.findall(text.lower())


STOPWORDS = frozenset(
    """
    a about above after again against all am an and any are as at be because been
    before being below between both but by can could did do does doing down during
    each few for from further had has have having he her here hers herself him
    himself his how i if in into is it its itself just me more most my myself no nor
    not now of off on once only or other our ours ourselves out over own same she
    should so some such than that the their theirs them themselves then there these
    they this those through to too under until up very was we were what when where
    which while who whom why will with would you your yours yourself yourselves
    """.split()
)


def content_words(text: str) -> list[str]:
    """Unique non-stopword tokens in first-seen order."""
    seen: dict[str, None] = {}
    for w in words(text):
        if w not in STOPWORDS:
            seen.setdefault(w)
    return list(seen)


__all__ = ["TokenEstimator", "estimate_tokens", "words", "content_words", "STOPWORDS"]
