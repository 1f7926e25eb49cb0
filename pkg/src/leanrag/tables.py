"""Plain-text tables for the evaluation CLI output."""
from __future__ import annotations

from typing import Sequence

from .evaluation import AggregateReport, EvalRunReport
from .retrieval import PAtKTable
from .synth import QueryType


def format_p_at_k_table(table: PAtKTable, label: str, document_count: int) -> str:
    """Retrieval precision table: one row, one column per cutoff."""
    headers = ["Input", "Documents"] + [f"p@{k}" for k in table.cutoffs]
    row = [label, str(document_count)] + [f"{table.values[k]:.2f}" for k in table.cutoffs]
    widths = [max(len(h), len(v)) for h, v in zip(headers, row)]
    line = "  ".join(h.ljust(w) for h, w in zip(headers, widths))
    body = "  ".join(v.ljust(w) for v, w in zip(row, widths))
    return f"{line}\n{body}"


def format_accuracy_table(
    rows: Sequence[tuple[str, int | None, AggregateReport]]
) -> str:
    """Accuracy summary: one row per (model label, k, aggregate)."""
    headers = ["LLM", "k", "Condition", "Disposition"]
    body_rows = []
    for label, k, aggregate in rows:
        if aggregate.single_run:
            condition = f"{aggregate.mean_condition_accuracy:.2f}"
            disposition = f"{aggregate.mean_disposition_accuracy:.2f}"
        else:
            condition = f"{aggregate.mean_condition_accuracy:.2f} ({aggregate.std_condition_accuracy:.2f})"
            disposition = f"{aggregate.mean_disposition_accuracy:.2f} ({aggregate.std_disposition_accuracy:.2f})"
        body_rows.append([label, str(k) if k is not None else "-", condition, disposition])
    widths = [
        max(len(headers[i]), *(len(r[i]) for r in body_rows)) if body_rows else len(headers[i])
        for i in range(len(headers))
    ]
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths))]
    for row in body_rows:
        lines.append("  ".join(v.ljust(w) for v, w in zip(row, widths)))
    return "\n".join(lines)


def format_per_type_table(label: str, report: EvalRunReport) -> str:
    """Per-query-type breakdown for one run."""
    headers = ["Type of Query", "Model", "Condition", "Disposition"]
    body_rows = []
    for query_type in QueryType:
        if query_type not in report.per_query_type:
            continue
        cond, disp = report.per_query_type[query_type]
        body_rows.append([query_type.value, label, f"{cond:.2f}", f"{disp:.2f}"])
    widths = [
        max(len(headers[i]), *(len(r[i]) for r in body_rows)) if body_rows else len(headers[i])
        for i in range(len(headers))
    ]
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths))]
    for row in body_rows:
        lines.append("  ".join(v.ljust(w) for v, w in zip(row, widths)))
    return "\n".join(lines)
