"""Shared fixtures: a deterministic toy corpus and ready-made retrievers.

Every document's first sentence repeats its title plus a unique marker term,
so embedding retrieval is near-perfect and the scripted endpoints (which quote
that first sentence into symptom text and read titles back out of questions)
form a closed, fully predictable loop.
"""
from __future__ import annotations

import pytest

from leanrag.corpus import CorpusRecord
from leanrag.embeddings import HashingEmbeddingProvider
from leanrag.retrieval import RetrievalConfig, Retriever, build_index

TOY_TITLES = [
    "Influenza",
    "Migraine",
    "Appendicitis",
    "Tension Headache",
    "Asthma",
    "Chickenpox",
    "Gout",
    "Shingles",
    "Tonsillitis",
    "Anaemia",
    "Conjunctivitis",
    "Eczema",
    "Sciatica",
    "Vertigo",
    "Bronchitis",
    "Sinusitis",
    "Cystitis",
    "Labyrinthitis",
    "Psoriasis",
    "Scarlet Fever",
]


def make_toy_corpus(count: int = 20) -> list[CorpusRecord]:
    records = []
    for i, title in enumerate(TOY_TITLES[:count]):
        body = (
            f"{title} is a condition with a distinctive marker term zq{i}x. "
            f"Typical signs develop over several days and include marker zq{i}x complaints. "
            "People usually ask a pharmacist first. Most cases settle with rest and fluids. "
            "Severe presentations need urgent assessment. " * 3
        )
        records.append(CorpusRecord(title=title, full_content=body))
    return records


@pytest.fixture
def toy_corpus() -> list[CorpusRecord]:
    return make_toy_corpus()


@pytest.fixture
def provider() -> HashingEmbeddingProvider:
    return HashingEmbeddingProvider(dimension=256)


@pytest.fixture
def retriever(toy_corpus, provider) -> Retriever:
    config = RetrievalConfig(mode="full_pages", metric="l2", k=5)
    index = build_index(toy_corpus, config, provider)
    return Retriever(index, toy_corpus, provider, config)
