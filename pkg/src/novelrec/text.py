"""Text normalization for exact-match interest descriptions."""

import re

_NON_WORD = re.compile(r"[^\w\s]+", flags=re.UNICODE)


def normalize_text(text: str) -> str:
    """Lowercase, strip punctuation, collapse whitespace.

    This is the one canonical form used everywhere a generated string is
    compared against a cluster description; matching is exact on the
    normalized form, never fuzzy.
    """
    lowered = text.lower()
    stripped = _NON_WORD.sub(" ", lowered).replace("_", " ")
    return " ".join(stripped.split())
