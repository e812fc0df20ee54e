"""Whitespace token counting, the fallback used whenever a backend does not report usage."""

from __future__ import annotations


def count_tokens(text: str) -> int:
    return len(text.split())
