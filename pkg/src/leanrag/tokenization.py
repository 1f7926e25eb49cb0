"""Pluggable tokenization used by chunking, history trimming and dataset stats.

Model-specific tokenizers plug in through the ``Tokenizer`` protocol; the
default implementation counts whitespace-separated words so the rest of the
stack stays independent of any particular model vocabulary.
"""
from __future__ import annotations

from typing import Callable, Protocol, Sequence

TokenCounter = Callable[[str], int]


class Tokenizer(Protocol):
    """Encode/decode interface over string token streams."""

    def encode(self, text: str) -> list[str]: ...

    def decode(self, tokens: Sequence[str]) -> str: ...

    def count(self, text: str) -> int: ...


class WhitespaceTokenizer:
    """Splits on whitespace. Round-trips token streams, not raw whitespace."""

    def encode(self, text: str) -> list[str]:
        return text.split()

    def decode(self, tokens: Sequence[str]) -> str:
        return " ".join(tokens)

    def count(self, text: str) -> int:
        return len(text.split())


DEFAULT_TOKENIZER = WhitespaceTokenizer()


def whitespace_token_count(text: str) -> int:
    return DEFAULT_TOKENIZER.count(text)
