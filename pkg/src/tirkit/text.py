"""Small text utilities: approximate token counting and character caps.

Token counts here are whitespace-delimited approximations, used whenever a
backend does not report real usage.
"""

from __future__ import annotations

import re

_TOKEN_RE = re.compile(r"\S+")


def approx_token_count(text: str) -> int:
    return sum(1 for _ in _TOKEN_RE.finditer(text))


def token_limit_cut(text: str, max_tokens: int) -> int | None:
    """Position to cut ``text`` at so it holds exactly ``max_tokens`` tokens.

    Returns None when the text does not provably exceed the budget: fewer
    than ``max_tokens`` tokens, or exactly that many with nothing after the
    last one (the final token might still be growing mid-stream).
    """
    for i, m in enumerate(_TOKEN_RE.finditer(text), start=1):
        if i == max_tokens:
            return m.end() if m.end() < len(text) else None
    return None


def truncate_chars(text: str, cap: int) -> tuple[str, bool]:
    """Cut to at most ``cap`` characters (never mid-character: str slicing
    is code-point exact). Returns (text, was_truncated)."""
    if len(text) <= cap:
        return text, False
    return text[:cap], True
