"""Retrieval-augmented clinical triage: corpus tools, retrieval, synthetic
queries, reasoning traces, evaluation, and the chat backend."""

from .budget import BudgetForcingPolicy, budget_forced_generate
from .corpus import CorpusRecord, load_corpus, summarise_corpus, write_corpus
from .embeddings import HashingEmbeddingProvider, HttpEmbeddingProvider
from .evaluation import run_prediction_eval
from .gateway import (
    ChatMessage,
    ModelOutput,
    ToolSchema,
    complete,
    parse_reasoning,
    render_chat_template,
)
from .orchestrator import ConversationThread, new_thread, run_rag_turn, trim_history
from .retrieval import (
    RetrievalConfig,
    Retriever,
    build_index,
    chunk_document,
    evaluate_p_at_k,
    expand_to_full_documents,
    load_index,
    query_top_k,
    save_index,
)
from .synth import Disposition, QueryType, SyntheticQuery, generate_query_dataset
from .traces import TRAINING_CONFIG, build_trace_dataset, export_training_bundle

__version__ = "0.1.0"

__all__ = [
    "BudgetForcingPolicy",
    "ChatMessage",
    "ConversationThread",
    "CorpusRecord",
    "Disposition",
    "HashingEmbeddingProvider",
    "HttpEmbeddingProvider",
    "ModelOutput",
    "QueryType",
    "RetrievalConfig",
    "Retriever",
    "SyntheticQuery",
    "TRAINING_CONFIG",
    "ToolSchema",
    "budget_forced_generate",
    "build_index",
    "build_trace_dataset",
    "chunk_document",
    "complete",
    "evaluate_p_at_k",
    "expand_to_full_documents",
    "export_training_bundle",
    "generate_query_dataset",
    "load_corpus",
    "load_index",
    "new_thread",
    "parse_reasoning",
    "query_top_k",
    "render_chat_template",
    "run_prediction_eval",
    "run_rag_turn",
    "save_index",
    "summarise_corpus",
    "trim_history",
    "write_corpus",
    "__version__",
]
