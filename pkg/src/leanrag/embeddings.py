"""Embedding providers.

A provider declares its dimension up front and maps equal texts to equal
vectors. The HTTP provider speaks the ``POST /embed`` contract; the hashing
provider is a deterministic, dependency-free stand-in used for offline runs
and tests.
"""
from __future__ import annotations

import hashlib
from typing import Protocol, Sequence

import httpx
import numpy as np


class ProviderError(RuntimeError):
    """Raised when a provider misbehaves (transport, shape or dimension)."""


class EmbeddingProvider(Protocol):
    dimension: int

    def embed(self, texts: Sequence[str]) -> np.ndarray: ...


class HashingEmbeddingProvider:
    """Feature-hashed bag-of-words vectors, L2-normalized.

    Identical texts map to identical vectors and shared words pull vectors
    together, which is enough signal for toy corpora. Hashes are keyed with
    blake2b so results are stable across processes.
    """

    def __init__(self, dimension: int = 768):
        if dimension < 1:
            raise ValueError("dimension must be >= 1")
        self.dimension = dimension

    def _slot(self, token: str) -> tuple[int, float]:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        value = int.from_bytes(digest, "little")
        index = value % self.dimension
        sign = 1.0 if (value >> 63) & 1 else -1.0
        return index, sign

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        matrix = np.zeros((len(texts), self.dimension), dtype=np.float32)
        for row, text in enumerate(texts):
            for token in text.lower().split():
                index, sign = self._slot(token)
                matrix[row, index] += sign
            norm = float(np.linalg.norm(matrix[row]))
            if norm > 0.0:
                matrix[row] /= norm
        return matrix


class HttpEmbeddingProvider:
    """Client for the /embed wire contract: {"texts": [...]} -> {"vectors": [[...]]}."""

    def __init__(
        self,
        base_url: str,
        dimension: int,
        client: httpx.Client | None = None,
        timeout: float = 120.0,
    ):
        if not base_url:
            raise ProviderError("embedding provider requires base_url")
        if dimension < 1:
            raise ProviderError("embedding dimension must be >= 1")
        self.base_url = base_url.rstrip("/")
        self.dimension = dimension
        self._client = client or httpx.Client(timeout=timeout)

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        try:
            response = self._client.post(self.base_url + "/embed", json={"texts": list(texts)})
        except httpx.HTTPError as exc:
            raise ProviderError(f"embedding transport failure: {exc}") from exc
        if response.status_code != 200:
            raise ProviderError(
                f"embedding endpoint returned status {response.status_code}: {response.text[:500]}"
            )
        body = response.json()
        vectors = body.get("vectors")
        if not isinstance(vectors, list) or len(vectors) != len(texts):
            raise ProviderError("embedding response must carry one vector per text")
        matrix = np.asarray(vectors, dtype=np.float32)
        if matrix.ndim != 2 or matrix.shape[1] != self.dimension:
            raise ProviderError(
                f"embedding dimension mismatch: expected {self.dimension}, "
                f"got shape {matrix.shape}"
            )
        return matrix
