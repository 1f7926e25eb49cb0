"""Condition-page corpus: loading, cleaning, exclusion and summarisation.

The on-disk format is JSONL with keys ``title``, ``full_content`` and an
optional ``summary``, UTF-8 encoded, one record per line.
"""
from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from . import gateway
from .gateway import ChatEndpoint, EndpointError

logger = logging.getLogger(__name__)

SUMMARISATION_PROMPT = (
    "Summarise the document below, focusing only on symptoms and how to decide "
    "the next course of action. Be concise - aim for a summary of 3-4 sentences "
    "or fewer, keeping only essential information.\n"
    "\n"
    "Document:\n"
    "{document}"
)


class CorpusError(ValueError):
    """Raised for malformed corpus files or invalid records."""


@dataclass
class CorpusRecord:
    title: str
    full_content: str
    summary: str | None = None

    def __post_init__(self) -> None:
        if not self.title:
            raise CorpusError("record title must be non-empty")
        if not self.full_content:
            raise CorpusError(f"record {self.title!r} has empty full_content")
        if self.summary is not None:
            if not self.summary:
                raise CorpusError(f"record {self.title!r} has an empty summary")
            if len(self.summary) >= len(self.full_content):
                raise CorpusError(
                    f"record {self.title!r} summary is not shorter than its full content"
                )


def load_corpus(path: str | Path) -> list[CorpusRecord]:
    """Load a JSONL corpus; blank lines are ignored.

    Raises ``FileNotFoundError`` for a missing file and :class:`CorpusError`
    (with the line number) for malformed lines or duplicate titles.
    """
    path = Path(path)
    records: list[CorpusRecord] = []
    seen: set[str] = set()
    with path.open(encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if not isinstance(obj, dict):
                raise CorpusError(f"{path}:{lineno}: expected a JSON object")
            try:
                record = CorpusRecord(
                    title=obj.get("title", ""),
                    full_content=obj.get("full_content", ""),
                    summary=obj.get("summary"),
                )
            except CorpusError as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from exc
            if record.title in seen:
                raise CorpusError(f"{path}:{lineno}: duplicate title {record.title!r}")
            seen.add(record.title)
            records.append(record)
    return records


def write_corpus(records: Sequence[CorpusRecord], path: str | Path) -> None:
    """Write records as JSONL; the ``summary`` key is omitted when absent."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as handle:
        for record in records:
            obj: dict[str, str] = {
                "title": record.title,
                "full_content": record.full_content,
            }
            if record.summary is not None:
                obj["summary"] = record.summary
            handle.write(json.dumps(obj, ensure_ascii=False) + "\n")


def exclude_records(
    records: Sequence[CorpusRecord], titles: Sequence[str]
) -> list[CorpusRecord]:
    """Drop the listed titles. Unmatched titles are logged, not errors."""
    wanted = set(titles)
    kept = [r for r in records if r.title not in wanted]
    matched = {r.title for r in records} & wanted
    for missing in sorted(wanted - matched):
        logger.warning("exclusion title %r not present in corpus", missing)
    return kept


@dataclass
class SummarisationReport:
    record_count: int
    mean_reduction_ratio: float
    per_record_ratios: dict[str, float] = field(default_factory=dict)
    failed_titles: list[str] = field(default_factory=list)


def _summarise_one(
    record: CorpusRecord,
    endpoint: ChatEndpoint,
    prompt_template: str,
    max_attempts: int,
    backoff: float,
) -> str | None:
    prompt = prompt_template.replace("{document}", record.full_content)
    for attempt in range(max_attempts):
        try:
            output = gateway.complete(endpoint, [gateway.user(prompt)])
        except EndpointError as exc:
            logger.warning(
                "summarisation attempt %d/%d failed for %r: %s",
                attempt + 1, max_attempts, record.title, exc,
            )
            if attempt + 1 < max_attempts:
                time.sleep(backoff * (2 ** attempt))
            continue
        summary = output.answer.strip()
        if summary and len(summary) < len(record.full_content):
            return summary
        logger.warning(
            "summarisation attempt %d/%d for %r produced an unusable summary",
            attempt + 1, max_attempts, record.title,
        )
        if attempt + 1 < max_attempts:
            time.sleep(backoff * (2 ** attempt))
    return None


def summarise_corpus(
    records: Sequence[CorpusRecord],
    endpoint: ChatEndpoint,
    prompt_template: str = SUMMARISATION_PROMPT,
    *,
    max_attempts: int = 3,
    backoff: float = 1.0,
    parallelism: int = 1,
) -> tuple[list[CorpusRecord], SummarisationReport]:
    """Summarise every record with one LLM call each.

    Failed records (transport errors after retries, or unusable output) keep
    no summary and are listed in the report. Reduction ratio is
    ``len(summary) / len(full_content)``; it is reported, never enforced.
    """
    if "{document}" not in prompt_template:
        raise CorpusError("summarisation prompt template must contain {document}")
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")

    if parallelism == 1:
        summaries = [
            _summarise_one(r, endpoint, prompt_template, max_attempts, backoff)
            for r in records
        ]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            summaries = list(
                pool.map(
                    lambda r: _summarise_one(
                        r, endpoint, prompt_template, max_attempts, backoff
                    ),
                    records,
                )
            )

    out: list[CorpusRecord] = []
    ratios: dict[str, float] = {}
    failed: list[str] = []
    for record, summary in zip(records, summaries):
        if summary is None:
            failed.append(record.title)
            out.append(CorpusRecord(record.title, record.full_content))
        else:
            out.append(CorpusRecord(record.title, record.full_content, summary))
            ratios[record.title] = len(summary) / len(record.full_content)
    mean_ratio = sum(ratios.values()) / len(ratios) if ratios else 0.0
    report = SummarisationReport(
        record_count=len(ratios),
        mean_reduction_ratio=mean_ratio,
        per_record_ratios=ratios,
        failed_titles=failed,
    )
    if failed:
        logger.warning("summarisation failed for %d record(s): %s", len(failed), failed)
    return out, report
