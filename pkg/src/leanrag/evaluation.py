"""Condition and next-action prediction evaluation.

Covers prompt construction for tool and text modes (with or without retrieved
context), prediction parsing, scoring with per-query-type breakdowns,
multi-run aggregation and the deployment memory estimate.
"""
from __future__ import annotations

import logging
import re
import statistics
import warnings
from dataclasses import dataclass, field
from typing import Sequence

from . import gateway
from .budget import BudgetForcingPolicy, budget_forced_generate
from .gateway import ChatEndpoint, EndpointError, ModelOutput, ToolParam, ToolSchema
from .retrieval import (
    RetrievalResult,
    Retriever,
    evaluate_p_at_k,
    render_context_block,
    render_sources,
)
from .synth import Disposition, QueryType, SyntheticQuery
from .traces import TRACE_PROMPT

logger = logging.getLogger(__name__)

MODES = ("tool", "text")

SUBMIT_TOOL = ToolSchema(
    name="submit_condition_recommendation",
    description="Submit the most likely condition and the severity level for the patient.",
    parameters=[
        ToolParam("condition", "string", "The most likely condition, or 'inconclusive'."),
        ToolParam("severity", "string", "One of 'Self-care', 'Urgent Primary Care', 'A&E'."),
    ],
)

_SYSTEM_HEADER_CONTEXT = """You are a clinical AI assistant.

You will be given a description of a patient's symptoms, some retrieved context that could be relevant to those symptoms and similarity scores for each piece of context (a lower similarity score means the higher similarity to the patient's query).

You need to suggest the most likely condition and the level of severity.

You should decide one of these options for severity:
* A&E: Emergency hospital treatment required
* Urgent Primary Care: patient should be seen as soon as possible, by a GP, urgent care centre, or similar
* Self-care: Issue can be handled at home and/or with over-the-counter medication.
"""

_SYSTEM_HEADER_NO_CONTEXT = """You are a clinical AI assistant.

You will be given a description of their symptoms.

You need to suggest the most likely condition and the level of severity.

You should decide one of these options for severity:
* A&E: Emergency hospital treatment required
* Urgent Primary Care: patient should be seen as soon as possible, by a GP, urgent care centre, or similar
* Self-care: Issue can be handled at home and/or with over-the-counter medication.
"""

_SYSTEM_TOOL_LINE = """You should use the provided tool to submit the condition and severity level.

"""

_SYSTEM_FOOTER = """Importantly, if you think that the condition is not listed, please use "inconclusive" for the condition."""

SYSTEM_TOOL_CONTEXT = _SYSTEM_HEADER_CONTEXT + "\n" + _SYSTEM_TOOL_LINE + _SYSTEM_FOOTER
SYSTEM_TEXT_CONTEXT = _SYSTEM_HEADER_CONTEXT + "\n" + _SYSTEM_FOOTER
SYSTEM_TOOL_NO_CONTEXT = _SYSTEM_HEADER_NO_CONTEXT + "\n" + _SYSTEM_TOOL_LINE + _SYSTEM_FOOTER
SYSTEM_TEXT_NO_CONTEXT = _SYSTEM_HEADER_NO_CONTEXT + "\n" + _SYSTEM_FOOTER

USER_TOOL_CONTEXT = """Use the following pieces of retrieved context and similarity scores (lower scores means higher similarity to the patient's query):
{context}

A patient has given the following description of their symptoms:
"{question}"

This is a summary of their demographics:
{demographics}

Using the sources and context provided, use the "submit_condition_recommendation" tool to submit the condition and the severity level.

Remember that the condition must either be one of {sources} or "inconclusive" if you think that the condition is not listed.
Remember that the severity level must be one of ["Self-care", "Urgent Primary Care", "A&E"]."""

# Text mode with context reuses the trace prompt wording.
USER_TEXT_CONTEXT = TRACE_PROMPT

USER_TOOL_NO_CONTEXT = """Use the following list of possible conditions:
{conditions}

A patient has given the following description of their symptoms:
"{question}"

This is a summary of their demographics:
{demographics}

Using the sources provided, use the "submit_condition_recommendation" tool to submit the condition and the severity level.

Remember that the condition must either be one of the conditions listed above or "inconclusive" if you think that the condition is not listed.
Remember that the severity level must be one of ["Self-care", "Urgent Primary Care", "A&E"]."""

USER_TEXT_NO_CONTEXT = """Use the following list of possible conditions:
{conditions}

A patient has given the following description of their symptoms:
"{question}"

This is a summary of their demographics:
{demographics}

Using the sources and context provided, submit the condition and the severity level in the format: "(condition, severity)". Do not provide any explanation to the output, only your final answer.

Remember that the condition must either be one of the conditions listed above or "inconclusive" if you think that the condition is not listed.
Remember that the severity level must be one of ["Self-care", "Urgent Primary Care", "A&E"]."""

INCONCLUSIVE = "inconclusive"


class EvaluationError(ValueError):
    """Raised for invalid evaluation setups."""


class PredictionParseError(ValueError):
    """Raised when no usable (condition, severity) pair can be extracted."""


class CeilingViolation(AssertionError):
    """Condition accuracy exceeded retrieval p@k on a retrieval-mode run."""


class CeilingWarning(UserWarning):
    """The same relation, downgraded when ceiling enforcement is off."""


@dataclass
class Prediction:
    condition: str
    disposition: Disposition
    # Set when the condition matched neither the allowed list nor
    # "inconclusive" and was kept verbatim.
    soft_failure: bool = False


@dataclass
class PredictionPrompt:
    system: str
    user: str
    tools: list[ToolSchema] = field(default_factory=list)


def build_prediction_prompt(
    mode: str,
    query: SyntheticQuery,
    *,
    context: Sequence[RetrievalResult] | None = None,
    all_conditions: Sequence[str] | None = None,
) -> PredictionPrompt:
    """Build the system/user pair for one evaluation call.

    Exactly one of ``context`` (retrieval run) or ``all_conditions``
    (retrieval-free run) must be given.
    """
    if mode not in MODES:
        raise EvaluationError(f"unknown mode {mode!r}")
    if (context is None) == (all_conditions is None):
        raise EvaluationError("provide exactly one of context or all_conditions")

    demographics = query.demographics.to_prompt_block()
    if context is not None:
        if not context:
            raise EvaluationError("context must contain at least one document")
        system = SYSTEM_TOOL_CONTEXT if mode == "tool" else SYSTEM_TEXT_CONTEXT
        user = (
            (USER_TOOL_CONTEXT if mode == "tool" else USER_TEXT_CONTEXT)
            .replace("{context}", render_context_block(context))
            .replace("{question}", query.symptoms_description)
            .replace("{demographics}", demographics)
            .replace("{sources}", render_sources(context))
        )
    else:
        if not all_conditions:
            raise EvaluationError("all_conditions must contain at least one title")
        system = SYSTEM_TOOL_NO_CONTEXT if mode == "tool" else SYSTEM_TEXT_NO_CONTEXT
        user = (
            (USER_TOOL_NO_CONTEXT if mode == "tool" else USER_TEXT_NO_CONTEXT)
            .replace("{conditions}", "\n".join(all_conditions))
            .replace("{question}", query.symptoms_description)
            .replace("{demographics}", demographics)
        )
    tools = [SUBMIT_TOOL] if mode == "tool" else []
    return PredictionPrompt(system=system, user=user, tools=tools)


def normalize_condition(text: str) -> str:
    """Case, surrounding whitespace and hyphen/space variants are ignored."""
    return re.sub(r"[\s-]+", " ", text.strip().casefold())


_PAIR_RE = re.compile(r"\(([^()]*),([^()]*)\)")


def parse_text_prediction(
    raw: str,
    allowed_conditions: Sequence[str],
    delimiters: tuple[str, str] = gateway.DEFAULT_THINK_DELIMITERS,
) -> Prediction:
    """Extract the last "(condition, severity)" pair from a text reply.

    The answer region after the end-of-thinking delimiter is scanned first,
    falling back to the whole text. An unknown severity is a hard parse
    failure; an unknown condition is kept verbatim and flagged soft, so it
    scores as incorrect without discarding the row.
    """
    close = delimiters[1]
    regions = []
    if close in raw:
        regions.append(raw.rsplit(close, 1)[1])
    regions.append(raw)

    pair = None
    for region in regions:
        matches = _PAIR_RE.findall(region)
        if matches:
            pair = matches[-1]
            break
    if pair is None:
        raise PredictionParseError("no (condition, severity) pair found")

    condition_text, severity_text = pair[0].strip(), pair[1].strip()
    condition_text = condition_text.strip("\"'")
    severity_text = severity_text.strip("\"'")
    try:
        disposition = Disposition.parse(severity_text)
    except ValueError as exc:
        raise PredictionParseError(f"unknown severity {severity_text!r}") from exc

    lookup = {normalize_condition(title): title for title in allowed_conditions}
    lookup[INCONCLUSIVE] = INCONCLUSIVE
    canonical = lookup.get(normalize_condition(condition_text))
    if canonical is None:
        return Prediction(condition=condition_text, disposition=disposition, soft_failure=True)
    return Prediction(condition=canonical, disposition=disposition)


def parse_tool_prediction(output: ModelOutput) -> Prediction:
    """Extract a prediction from a submit_condition_recommendation call."""
    for call in output.tool_calls:
        if call.name != SUBMIT_TOOL.name:
            continue
        problems = SUBMIT_TOOL.validate_call(call.arguments)
        if problems:
            raise PredictionParseError(f"invalid tool call: {problems}")
        try:
            disposition = Disposition.parse(str(call.arguments["severity"]))
        except ValueError as exc:
            raise PredictionParseError(str(exc)) from exc
        return Prediction(condition=str(call.arguments["condition"]), disposition=disposition)
    raise PredictionParseError("no submit_condition_recommendation call in response")


_SEVERITY_RANK = {
    Disposition.SELF_CARE: 0,
    Disposition.URGENT_PRIMARY_CARE: 1,
    Disposition.A_AND_E: 2,
}


@dataclass
class EvalRunReport:
    n: int
    condition_accuracy: float
    disposition_accuracy: float
    per_query_type: dict[QueryType, tuple[float, float]]
    per_type_counts: dict[QueryType, int]
    parse_failures: int
    soft_parse_failures: int
    underestimation_errors: int
    p_at_k: float | None = None
    k: int | None = None


def score_run(
    predictions: Sequence[Prediction | None],
    gold: Sequence[SyntheticQuery],
) -> EvalRunReport:
    """Score one run. ``None`` marks a parse failure and scores incorrect.

    Disposition underestimates (predicted severity below gold) are counted
    separately; sending an emergency to self-care is the costly direction.
    """
    if len(predictions) != len(gold):
        raise EvaluationError(
            f"got {len(predictions)} predictions for {len(gold)} gold queries"
        )
    if not gold:
        raise EvaluationError("cannot score an empty run")

    condition_hits = 0
    disposition_hits = 0
    parse_failures = 0
    soft_failures = 0
    underestimates = 0
    by_type: dict[QueryType, list[tuple[bool, bool]]] = {}
    for prediction, query in zip(predictions, gold):
        if prediction is None:
            parse_failures += 1
            cond_ok = disp_ok = False
        else:
            if prediction.soft_failure:
                soft_failures += 1
            cond_ok = normalize_condition(prediction.condition) == normalize_condition(
                query.condition_title
            )
            disp_ok = prediction.disposition == query.disposition
            if _SEVERITY_RANK[prediction.disposition] < _SEVERITY_RANK[query.disposition]:
                underestimates += 1
        condition_hits += cond_ok
        disposition_hits += disp_ok
        by_type.setdefault(query.query_type, []).append((cond_ok, disp_ok))

    per_type = {
        qt: (
            sum(c for c, _ in rows) / len(rows),
            sum(d for _, d in rows) / len(rows),
        )
        for qt, rows in by_type.items()
    }
    return EvalRunReport(
        n=len(gold),
        condition_accuracy=condition_hits / len(gold),
        disposition_accuracy=disposition_hits / len(gold),
        per_query_type=per_type,
        per_type_counts={qt: len(rows) for qt, rows in by_type.items()},
        parse_failures=parse_failures,
        soft_parse_failures=soft_failures,
        underestimation_errors=underestimates,
    )


@dataclass
class AggregateReport:
    runs: int
    mean_condition_accuracy: float
    mean_disposition_accuracy: float
    std_condition_accuracy: float
    std_disposition_accuracy: float
    single_run: bool


def aggregate_runs(reports: Sequence[EvalRunReport]) -> AggregateReport:
    """Mean and unbiased sample std over runs; one run reports std 0 flagged."""
    if not reports:
        raise EvaluationError("cannot aggregate zero runs")
    cond = [r.condition_accuracy for r in reports]
    disp = [r.disposition_accuracy for r in reports]
    single = len(reports) < 2
    return AggregateReport(
        runs=len(reports),
        mean_condition_accuracy=sum(cond) / len(cond),
        mean_disposition_accuracy=sum(disp) / len(disp),
        std_condition_accuracy=0.0 if single else statistics.stdev(cond),
        std_disposition_accuracy=0.0 if single else statistics.stdev(disp),
        single_run=single,
    )


def estimate_model_memory(param_count: int) -> int:
    """Inference memory in bytes at 16-bit precision: two bytes per parameter."""
    if param_count < 0:
        raise ValueError("param_count must be >= 0")
    return 2 * param_count


def estimate_model_memory_gb(param_count: int) -> float:
    return estimate_model_memory(param_count) / 1e9


@dataclass
class EvalOutcome:
    reports: list[EvalRunReport]
    aggregate: AggregateReport


def _predict_one(
    endpoint: ChatEndpoint,
    prompt: PredictionPrompt,
    mode: str,
    allowed: Sequence[str],
    budget_policy: BudgetForcingPolicy | None,
) -> Prediction | None:
    try:
        if budget_policy is not None:
            rendered = (
                gateway.render_chat_template(
                    [gateway.system(prompt.system), gateway.user(prompt.user)]
                )
                + f"\n{gateway.CHAT_START}assistant\n"
            )
            output = budget_forced_generate(endpoint, rendered, budget_policy)
        else:
            output = gateway.complete(
                endpoint,
                [gateway.system(prompt.system), gateway.user(prompt.user)],
                tools=prompt.tools or None,
            )
        if mode == "tool":
            return parse_tool_prediction(output)
        return parse_text_prediction(output.raw, allowed)
    except (PredictionParseError, EndpointError) as exc:
        logger.warning("prediction failed: %s", exc)
        return None


def run_prediction_eval(
    queries: Sequence[SyntheticQuery],
    endpoint: ChatEndpoint,
    *,
    mode: str = "tool",
    retriever: Retriever | None = None,
    all_conditions: Sequence[str] | None = None,
    k: int = 5,
    runs: int = 1,
    budget_policy: BudgetForcingPolicy | None = None,
    enforce_ceiling: bool = True,
) -> EvalOutcome:
    """Evaluate an endpoint over the query set, ``runs`` times.

    With a retriever, context comes from top-k retrieval and every run is
    checked against the retrieval ceiling: the model only sees retrieved
    candidates, so condition accuracy cannot honestly exceed p@k. A violation
    raises :class:`CeilingViolation` (downgrade to a warning with
    ``enforce_ceiling=False``; a model may name unretrieved conditions from
    its own knowledge, which the strict check treats as a harness bug).
    """
    if mode not in MODES:
        raise EvaluationError(f"unknown mode {mode!r}")
    if (retriever is None) == (all_conditions is None):
        raise EvaluationError("provide exactly one of retriever or all_conditions")
    if budget_policy is not None and mode != "text":
        raise EvaluationError("budget forcing applies to text mode only")
    if runs < 1:
        raise EvaluationError("runs must be >= 1")
    if not queries:
        raise EvaluationError("cannot evaluate an empty query set")

    ceiling = None
    contexts: list[Sequence[RetrievalResult] | None] = []
    if retriever is not None:
        allowed = [r.title for r in retriever.records]
        for query in queries:
            contexts.append(retriever.retrieve(query.symptoms_description, k))
        table = evaluate_p_at_k(
            retriever.index,
            [(q.symptoms_description, q.condition_title) for q in queries],
            [k],
            retriever.provider,
        )
        ceiling = table.values[k]
    else:
        allowed = list(all_conditions or [])
        contexts = [None] * len(queries)

    reports = []
    for _ in range(runs):
        predictions: list[Prediction | None] = []
        for query, context in zip(queries, contexts):
            if context is not None and not context:
                predictions.append(None)  # nothing retrieved, nothing to ask
                continue
            prompt = build_prediction_prompt(
                mode,
                query,
                context=context,
                all_conditions=None if context is not None else allowed,
            )
            predictions.append(
                _predict_one(endpoint, prompt, mode, allowed, budget_policy)
            )
        report = score_run(predictions, queries)
        if ceiling is not None:
            report.p_at_k = ceiling
            report.k = k
            if report.condition_accuracy > ceiling:
                message = (
                    f"condition accuracy {report.condition_accuracy:.4f} exceeds "
                    f"retrieval p@{k} {ceiling:.4f}"
                )
                if enforce_ceiling:
                    raise CeilingViolation(message)
                warnings.warn(message, CeilingWarning)
        reports.append(report)
    return EvalOutcome(reports=reports, aggregate=aggregate_runs(reports))
