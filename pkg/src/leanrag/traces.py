"""Reasoning-trace dataset construction and fine-tuning bundle export."""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from . import gateway
from .gateway import ChatEndpoint, EndpointError, ModelOutput
from .retrieval import RetrievalResult, Retriever, render_context_block, render_sources
from .synth import SyntheticQuery
from .tokenization import TokenCounter, whitespace_token_count

logger = logging.getLogger(__name__)

TRACE_PROMPT = """Use the following pieces of retrieved context and similarity scores (lower scores means higher similarity to the patient's query):
{context}

A patient has given the following description of their symptoms:
"{question}"

This is a summary of their demographics:
{demographics}

Using the sources and context provided, submit the condition and the severity level in the format: "(condition, severity)". Do not provide any explanation to the output, only your final answer.

Remember that the condition must either be one of {sources} or "inconclusive" if you think that the condition is not listed.
Remember that the severity level must be one of ["Self-care", "Urgent Primary Care", "A&E"]."""

# Exact fine-tuning recipe the exported bundle pins down.
TRAINING_CONFIG = {
    "epochs": 5,
    "learning_rate": 1e-5,
    "lr_schedule": "cosine",
    "per_device_batch_size": 1,
    "precision": "bf16",
    "block_size": 32768,
    "sharding": "full-shard auto-wrap",
    "gradient_checkpointing": True,
    "optimizer": "adam-with-weight-decay",
    "weight_decay": 1e-4,
    "adam_beta1": 0.9,
    "adam_beta2": 0.95,
    "eval_every_steps": 50,
}


class TraceError(ValueError):
    """Raised when a trace cannot be assembled (refusal, empty answer)."""


class TruncationWarning(UserWarning):
    """An exported example is longer than the training block size."""


def build_trace_prompt(query: SyntheticQuery, retrieved: Sequence[RetrievalResult]) -> str:
    """Fill the trace prompt with context, question, demographics and sources."""
    if not retrieved:
        raise TraceError("cannot build a trace prompt without retrieved documents")
    prompt = (
        TRACE_PROMPT
        .replace("{context}", render_context_block(retrieved))
        .replace("{question}", query.symptoms_description)
        .replace("{demographics}", query.demographics.to_prompt_block())
        .replace("{sources}", render_sources(retrieved))
    )
    leftover = [p for p in ("{context}", "{question}", "{demographics}", "{sources}") if p in prompt]
    if leftover:
        raise TraceError(f"unresolved placeholders after substitution: {leftover}")
    return prompt


@dataclass
class TraceExample:
    query: SyntheticQuery
    retrieved_titles: list[str]
    reasoning: str
    final_answer: str
    concatenated_text: str
    token_length: int


def assemble_trace(
    query: SyntheticQuery,
    retrieved: Sequence[RetrievalResult],
    teacher_output: ModelOutput,
    *,
    token_counter: TokenCounter = whitespace_token_count,
    delimiters: tuple[str, str] = gateway.DEFAULT_THINK_DELIMITERS,
) -> TraceExample:
    """Fold one teacher response into a training example.

    The training text is the chat-template rendering of the prompt turn and an
    assistant turn holding the think-delimited reasoning plus final answer.
    Empty answers or reasoning (teacher refusals) raise :class:`TraceError`.
    """
    answer = teacher_output.answer.strip()
    if not answer:
        raise TraceError("teacher returned an empty final answer")
    reasoning = (teacher_output.reasoning or "").strip()
    if not reasoning:
        raise TraceError("teacher returned no reasoning trace")
    prompt = build_trace_prompt(query, retrieved)
    open_delim, close_delim = delimiters
    assistant_text = f"{open_delim}{reasoning}{close_delim}{answer}"
    concatenated = gateway.render_chat_template(
        [gateway.user(prompt), gateway.assistant(assistant_text)]
    )
    return TraceExample(
        query=query,
        retrieved_titles=[r.doc_title for r in retrieved],
        reasoning=reasoning,
        final_answer=answer,
        concatenated_text=concatenated,
        token_length=token_counter(concatenated),
    )


def build_trace_dataset(
    queries: Sequence[SyntheticQuery],
    retriever: Retriever,
    teacher: ChatEndpoint,
    *,
    k: int = 5,
    token_counter: TokenCounter = whitespace_token_count,
    max_attempts: int = 1,
) -> tuple[list[TraceExample], list[tuple[SyntheticQuery, str]]]:
    """Retrieve, ask the teacher, assemble; skipped queries are returned with
    the reason rather than silently dropped. ``max_attempts`` > 1 retries
    refusals with a fresh teacher call."""
    examples: list[TraceExample] = []
    skipped: list[tuple[SyntheticQuery, str]] = []
    for query in queries:
        retrieved = retriever.retrieve(query.symptoms_description, k)
        reason = "no documents retrieved"
        if retrieved:
            prompt = build_trace_prompt(query, retrieved)
            for attempt in range(max_attempts):
                try:
                    output = gateway.complete(teacher, [gateway.user(prompt)])
                    examples.append(
                        assemble_trace(
                            query, retrieved, output, token_counter=token_counter
                        )
                    )
                    reason = ""
                    break
                except (EndpointError, TraceError) as exc:
                    reason = str(exc)
                    logger.warning(
                        "trace attempt %d/%d failed for %r: %s",
                        attempt + 1, max_attempts, query.condition_title, exc,
                    )
        if reason:
            skipped.append((query, reason))
    return examples, skipped


@dataclass
class DatasetStats:
    count: int
    mean_token_length: float
    max_token_length: int
    histogram: list[tuple[int, int]] = field(default_factory=list)
    empty: bool = False


def dataset_stats(examples: Sequence[TraceExample], *, bucket_width: int = 1024) -> DatasetStats:
    """Token-length stats; the histogram buckets are [start, start + width)."""
    if bucket_width < 1:
        raise ValueError("bucket_width must be >= 1")
    if not examples:
        return DatasetStats(0, 0.0, 0, [], empty=True)
    lengths = [e.token_length for e in examples]
    buckets: dict[int, int] = {}
    for length in lengths:
        start = (length // bucket_width) * bucket_width
        buckets[start] = buckets.get(start, 0) + 1
    return DatasetStats(
        count=len(lengths),
        mean_token_length=sum(lengths) / len(lengths),
        max_token_length=max(lengths),
        histogram=sorted(buckets.items()),
    )


@dataclass
class TrainingBundle:
    examples_file: Path
    config: dict


def export_training_bundle(
    examples: Sequence[TraceExample],
    out_dir: str | Path,
    *,
    config: dict | None = None,
) -> TrainingBundle:
    """Write examples.jsonl, config.json and stats.json under ``out_dir``.

    Examples longer than the training block size are exported as-is but
    flagged, since the trainer will truncate them.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    config = dict(config or TRAINING_CONFIG)
    block_size = config.get("block_size", 0)

    examples_file = out_dir / "examples.jsonl"
    overlong = 0
    with examples_file.open("w", encoding="utf-8") as handle:
        for example in examples:
            if block_size and example.token_length > block_size:
                overlong += 1
            handle.write(
                json.dumps(
                    {
                        "text": example.concatenated_text,
                        "condition_title": example.query.condition_title,
                        "query_type": example.query.query_type.value,
                        "disposition": example.query.disposition.display,
                        "token_length": example.token_length,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )
    if overlong:
        warnings.warn(
            f"{overlong} example(s) exceed block_size {block_size} and will be "
            "truncated during training",
            TruncationWarning,
            stacklevel=2,
        )

    (out_dir / "config.json").write_text(
        json.dumps(config, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    stats = dataset_stats(examples)
    (out_dir / "stats.json").write_text(
        json.dumps(
            {
                "count": stats.count,
                "mean_token_length": stats.mean_token_length,
                "max_token_length": stats.max_token_length,
                "histogram": stats.histogram,
            },
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )
    return TrainingBundle(examples_file=examples_file, config=config)


def save_traces(examples: Sequence[TraceExample], path: str | Path) -> None:
    """Intermediate JSONL so trace generation and export can run separately."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as handle:
        for example in examples:
            handle.write(
                json.dumps(
                    {
                        "query": example.query.to_json_dict(),
                        "retrieved_titles": example.retrieved_titles,
                        "reasoning": example.reasoning,
                        "final_answer": example.final_answer,
                        "concatenated_text": example.concatenated_text,
                        "token_length": example.token_length,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def load_traces(path: str | Path) -> list[TraceExample]:
    path = Path(path)
    examples = []
    with path.open(encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                examples.append(
                    TraceExample(
                        query=SyntheticQuery.from_json_dict(obj["query"]),
                        retrieved_titles=list(obj["retrieved_titles"]),
                        reasoning=obj["reasoning"],
                        final_answer=obj["final_answer"],
                        concatenated_text=obj["concatenated_text"],
                        token_length=int(obj["token_length"]),
                    )
                )
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise TraceError(f"{path}:{lineno}: invalid trace row: {exc}") from exc
    return examples
