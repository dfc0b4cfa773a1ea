"""Word splitting shared by corpus filtering and chunked scoring."""

from __future__ import annotations


def split_words(text: str) -> list[str]:
    """Split on runs of Unicode whitespace; punctuation stays attached."""
    return text.split()


def word_count(text: str) -> int:
    return len(text.split())
