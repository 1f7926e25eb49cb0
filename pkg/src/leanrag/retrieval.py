"""Token-aware chunking, exact vector search and retrieval evaluation.

Search is a brute-force scan over the whole index: with a few thousand
vectors that is faster to reason about than an ANN structure and makes
results exactly reproducible. Ordering is fully deterministic; distance ties
break lexicographically on (doc_title, seq_no).
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import CorpusRecord
from .embeddings import EmbeddingProvider
from .tokenization import DEFAULT_TOKENIZER, Tokenizer

logger = logging.getLogger(__name__)

MODES = ("full_pages", "summaries")
METRICS = ("l2", "cosine")

ChunkRef = tuple[str, int]  # (doc_title, seq_no)


class RetrievalError(ValueError):
    """Raised for invalid retrieval configuration or inconsistent inputs."""


@dataclass
class Chunk:
    doc_title: str
    seq_no: int
    text: str
    token_count: int


@dataclass
class RetrievalConfig:
    mode: str = "full_pages"
    metric: str = "l2"
    k: int = 5
    max_chunk_tokens: int = 384
    overlap_tokens: int = 50

    def validate(self) -> None:
        if self.mode not in MODES:
            raise RetrievalError(f"unknown mode {self.mode!r}")
        if self.metric not in METRICS:
            raise RetrievalError(f"unknown metric {self.metric!r}")
        if self.k < 1:
            raise RetrievalError("k must be >= 1")
        if self.max_chunk_tokens < 1:
            raise RetrievalError("max_chunk_tokens must be >= 1")
        if not 0 <= self.overlap_tokens < self.max_chunk_tokens:
            raise RetrievalError("overlap_tokens must satisfy 0 <= overlap < max_chunk_tokens")


def chunk_document(
    text: str,
    tokenizer: Tokenizer = DEFAULT_TOKENIZER,
    max_tokens: int = 384,
    overlap: int = 50,
    doc_title: str = "",
) -> list[Chunk]:
    """Split a document into token windows of at most ``max_tokens``.

    Each window after the first starts ``overlap`` tokens before the previous
    window's end, so consecutive chunks share exactly ``overlap`` tokens and
    dropping the first ``overlap`` tokens of every chunk but the first
    reconstructs the original token stream.
    """
    if max_tokens < 1:
        raise RetrievalError("max_tokens must be >= 1")
    if not 0 <= overlap < max_tokens:
        raise RetrievalError("overlap must satisfy 0 <= overlap < max_tokens")
    tokens = tokenizer.encode(text)
    if not tokens:
        return []
    chunks: list[Chunk] = []
    start = 0
    seq_no = 0
    while True:
        end = min(start + max_tokens, len(tokens))
        window = tokens[start:end]
        chunks.append(
            Chunk(
                doc_title=doc_title,
                seq_no=seq_no,
                text=tokenizer.decode(window),
                token_count=len(window),
            )
        )
        if end >= len(tokens):
            break
        start = end - overlap
        seq_no += 1
    return chunks


@dataclass
class VectorIndex:
    """Exact-search index: a dense matrix plus (doc_title, seq_no) row refs."""

    dimension: int
    metric: str
    mode: str
    refs: list[ChunkRef]
    matrix: np.ndarray

    def __post_init__(self) -> None:
        if self.matrix.ndim != 2:
            raise RetrievalError("index matrix must be 2-dimensional")
        if self.matrix.shape != (len(self.refs), self.dimension):
            raise RetrievalError(
                f"index shape mismatch: matrix {self.matrix.shape}, "
                f"{len(self.refs)} refs, dimension {self.dimension}"
            )

    def __len__(self) -> int:
        return len(self.refs)


def _distances(matrix: np.ndarray, query: np.ndarray, metric: str) -> np.ndarray:
    m = matrix.astype(np.float64, copy=False)
    q = query.astype(np.float64, copy=False)
    if metric == "l2":
        diff = m - q
        return np.sqrt(np.einsum("ij,ij->i", diff, diff))
    if metric == "cosine":
        norms = np.linalg.norm(m, axis=1) * float(np.linalg.norm(q))
        dots = m @ q
        similarity = np.divide(dots, norms, out=np.zeros_like(dots), where=norms > 0)
        return 1.0 - similarity
    raise RetrievalError(f"unknown metric {metric!r}")


def query_top_k(
    index: VectorIndex, query_vector: np.ndarray, k: int
) -> list[tuple[ChunkRef, float]]:
    """Exact top-k by ascending distance; ties break on (doc_title, seq_no).

    ``k`` larger than the index returns everything.
    """
    query_vector = np.asarray(query_vector)
    if query_vector.shape != (index.dimension,):
        raise RetrievalError(
            f"query vector shape {query_vector.shape} does not match dimension {index.dimension}"
        )
    if k < 1:
        raise RetrievalError("k must be >= 1")
    if len(index) == 0:
        return []
    scores = _distances(index.matrix, query_vector, index.metric)
    order = sorted(range(len(index)), key=lambda i: (scores[i], index.refs[i]))
    return [(index.refs[i], float(scores[i])) for i in order[:k]]


def build_index(
    records: Sequence[CorpusRecord],
    config: RetrievalConfig,
    provider: EmbeddingProvider,
    *,
    tokenizer: Tokenizer = DEFAULT_TOKENIZER,
    batch_size: int = 64,
    max_workers: int = 1,
) -> VectorIndex:
    """Embed the corpus into an exact-search index.

    ``full_pages`` embeds every chunk of every document; ``summaries`` embeds
    exactly one vector per record and requires every record to carry a
    summary. Embedding batches may run in parallel; the final row layout is
    always ordered by record then seq_no.
    """
    config.validate()
    texts: list[str] = []
    refs: list[ChunkRef] = []
    if config.mode == "summaries":
        for record in records:
            if record.summary is None:
                raise RetrievalError(
                    f"summaries mode requires a summary on every record; "
                    f"{record.title!r} has none"
                )
            texts.append(record.summary)
            refs.append((record.title, 0))
    else:
        for record in records:
            for chunk in chunk_document(
                record.full_content,
                tokenizer,
                config.max_chunk_tokens,
                config.overlap_tokens,
                doc_title=record.title,
            ):
                texts.append(chunk.text)
                refs.append((chunk.doc_title, chunk.seq_no))

    if not texts:
        matrix = np.zeros((0, provider.dimension), dtype=np.float32)
        return VectorIndex(provider.dimension, config.metric, config.mode, [], matrix)

    batches = [texts[i : i + batch_size] for i in range(0, len(texts), batch_size)]
    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            parts = list(pool.map(provider.embed, batches))
    else:
        parts = [provider.embed(batch) for batch in batches]
    matrix = np.vstack(parts).astype(np.float32)
    if matrix.shape != (len(texts), provider.dimension):
        raise RetrievalError(
            f"provider returned shape {matrix.shape}, expected "
            f"({len(texts)}, {provider.dimension})"
        )
    logger.info(
        "built %s index: %d records -> %d vectors (dim %d)",
        config.mode, len(records), len(refs), provider.dimension,
    )
    return VectorIndex(provider.dimension, config.metric, config.mode, refs, matrix)


@dataclass
class RetrievalResult:
    doc_title: str
    best_score: float
    matched_chunks: list[tuple[int, float]]
    payload: str


def expand_to_full_documents(
    hits: Sequence[tuple[ChunkRef, float]],
    records: Sequence[CorpusRecord],
    mode: str = "full_pages",
) -> list[RetrievalResult]:
    """Collapse chunk hits to whole documents.

    One result per distinct title, carrying the best (lowest) score and all
    matched chunks; results order by (best_score, title) ascending. The
    payload is the record's full content or its summary, per mode.
    """
    if mode not in MODES:
        raise RetrievalError(f"unknown mode {mode!r}")
    by_title = {r.title: r for r in records}
    grouped: dict[str, list[tuple[int, float]]] = {}
    for (title, seq_no), score in hits:
        if title not in by_title:
            raise RetrievalError(f"hit references unknown document {title!r}")
        grouped.setdefault(title, []).append((seq_no, score))

    results = []
    for title, matched in grouped.items():
        record = by_title[title]
        if mode == "summaries":
            if record.summary is None:
                raise RetrievalError(f"record {title!r} has no summary to expand to")
            payload = record.summary
        else:
            payload = record.full_content
        matched.sort(key=lambda pair: (pair[1], pair[0]))
        results.append(
            RetrievalResult(
                doc_title=title,
                best_score=min(score for _, score in matched),
                matched_chunks=matched,
                payload=payload,
            )
        )
    results.sort(key=lambda r: (r.best_score, r.doc_title))
    return results


def render_context_block(results: Sequence[RetrievalResult]) -> str:
    """Titled payloads with their scores, one block per document, for prompts."""
    return "\n\n".join(
        f"Condition: {r.doc_title} (similarity score: {r.best_score:.4f})\n{r.payload}"
        for r in results
    )


def render_sources(results: Sequence[RetrievalResult]) -> str:
    """The retrieved titles as a JSON list, for the {sources} prompt slot."""
    return json.dumps([r.doc_title for r in results], ensure_ascii=False)


class Retriever:
    """Bundles index, corpus and provider into a text-in, documents-out API."""

    def __init__(
        self,
        index: VectorIndex,
        records: Sequence[CorpusRecord],
        provider: EmbeddingProvider,
        config: RetrievalConfig | None = None,
    ):
        if provider.dimension != index.dimension:
            raise RetrievalError(
                f"provider dimension {provider.dimension} does not match "
                f"index dimension {index.dimension}"
            )
        self.index = index
        self.records = list(records)
        self.provider = provider
        self.config = config or RetrievalConfig(mode=index.mode, metric=index.metric)
        self.query_count = 0

    def search(self, query_text: str, k: int | None = None) -> list[tuple[ChunkRef, float]]:
        self.query_count += 1
        vector = self.provider.embed([query_text])[0]
        return query_top_k(self.index, vector, k or self.config.k)

    def retrieve(self, query_text: str, k: int | None = None) -> list[RetrievalResult]:
        return expand_to_full_documents(
            self.search(query_text, k), self.records, mode=self.index.mode
        )


@dataclass
class PAtKTable:
    cutoffs: list[int]
    values: dict[int, float]
    query_count: int


def evaluate_p_at_k(
    index: VectorIndex,
    queries: Sequence[tuple[str, str]],
    cutoffs: Sequence[int],
    provider: EmbeddingProvider,
) -> PAtKTable:
    """Fraction of (query_text, gold_title) pairs whose gold document appears
    among the top-k entries, after document-level dedup of chunk hits.

    Cutoffs must be sorted ascending; values are then nondecreasing in k.
    """
    cutoffs = list(cutoffs)
    if not cutoffs or any(c < 1 for c in cutoffs):
        raise RetrievalError("cutoffs must be positive")
    if cutoffs != sorted(cutoffs):
        raise RetrievalError("cutoffs must be sorted ascending")
    hits_at = {k: 0 for k in cutoffs}
    if queries:
        vectors = provider.embed([text for text, _ in queries])
        for vector, (_, gold_title) in zip(vectors, queries):
            ranked = query_top_k(index, vector, max(cutoffs))
            titles = [ref[0] for ref, _ in ranked]
            for k in cutoffs:
                if gold_title in titles[:k]:
                    hits_at[k] += 1
    count = len(queries)
    values = {k: (hits_at[k] / count if count else 0.0) for k in cutoffs}
    return PAtKTable(cutoffs=cutoffs, values=values, query_count=count)


def save_index(index: VectorIndex, path: str | Path) -> None:
    """Persist as a JSON header line plus packed little-endian float32 rows,
    with a sidecar manifest mapping row -> (title, seq_no)."""
    path = Path(path)
    header = {
        "dimension": index.dimension,
        "metric": index.metric,
        "mode": index.mode,
        "count": len(index),
    }
    with path.open("wb") as handle:
        handle.write((json.dumps(header, sort_keys=True) + "\n").encode("utf-8"))
        handle.write(index.matrix.astype("<f4").tobytes())
    manifest = [[title, seq_no] for title, seq_no in index.refs]
    manifest_path = Path(str(path) + ".manifest.json")
    manifest_path.write_text(json.dumps(manifest, ensure_ascii=False), encoding="utf-8")


def load_index(path: str | Path) -> VectorIndex:
    path = Path(path)
    with path.open("rb") as handle:
        header_line = handle.readline()
        payload = handle.read()
    try:
        header = json.loads(header_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise RetrievalError(f"{path}: invalid index header: {exc}") from exc
    dimension, count = int(header["dimension"]), int(header["count"])
    expected = count * dimension * 4
    if len(payload) != expected:
        raise RetrievalError(
            f"{path}: expected {expected} bytes of vector data, found {len(payload)}"
        )
    matrix = np.frombuffer(payload, dtype="<f4").reshape(count, dimension).copy()
    manifest_path = Path(str(path) + ".manifest.json")
    rows = json.loads(manifest_path.read_text(encoding="utf-8"))
    if len(rows) != count:
        raise RetrievalError(
            f"{manifest_path}: manifest rows ({len(rows)}) do not match count ({count})"
        )
    refs = [(str(title), int(seq_no)) for title, seq_no in rows]
    return VectorIndex(dimension, str(header["metric"]), str(header["mode"]), refs, matrix)
