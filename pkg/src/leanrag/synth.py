"""Synthetic patient query generation and train/eval hygiene.

Queries are generated one LLM call per plan row (condition, query type,
disposition, sex). The generator may refuse with a fixed error JSON when the
source page cannot support the requested severity; refused rows are re-drawn.
"""
from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from random import Random
from typing import NamedTuple, Sequence

from . import gateway
from .corpus import CorpusRecord
from .gateway import ChatEndpoint, EndpointError

logger = logging.getLogger(__name__)


class QueryType(str, Enum):
    BASIC = "basic"
    HYPOCHONDRIAC = "hypochondriac"
    DOWNPLAY = "downplay"


class Disposition(str, Enum):
    SELF_CARE = "self_care"
    URGENT_PRIMARY_CARE = "urgent_primary_care"
    A_AND_E = "a_and_e"

    @property
    def display(self) -> str:
        return _DISPLAY[self]

    @classmethod
    def parse(cls, text: str) -> "Disposition":
        """Accept canonical display strings or enum values, case-insensitive."""
        key = re.sub(r"[\s_-]+", " ", text.strip().casefold())
        try:
            return _PARSE[key]
        except KeyError:
            raise ValueError(f"unknown disposition {text!r}") from None


_DISPLAY = {
    Disposition.SELF_CARE: "Self-care",
    Disposition.URGENT_PRIMARY_CARE: "Urgent Primary Care",
    Disposition.A_AND_E: "A&E",
}
_PARSE = {
    "self care": Disposition.SELF_CARE,
    "urgent primary care": Disposition.URGENT_PRIMARY_CARE,
    "a&e": Disposition.A_AND_E,
}

REFUSAL_REASON = (
    "Insufficient symptom information in provided content to match requested severity"
)

SEXES = ("Female", "Male")

QUERY_GENERATION_PROMPT = """Generate a synthetic NHS 111 query based on the following details:

### Query Type:
* "basic": Based on a single condition page, the query mentions relevant symptoms
* "hypochondriac": Based on a single condition page, the query mentions relevant symptoms plus other unrelated complaints and expressions of excessive anxiety
* "downplay": Based on a single condition page, the query downplays the severity of the symptoms

### Condition Content Source:
* The primary textual content extracted from the relevant NHS condition web pages

### Severity Level:
* A&E: Emergency hospital treatment required
* Urgent Primary Care: patient should be seen as soon as possible, by a GP, urgent care centre, or similar
* Self-care: Issue can be handled at home and/or with over-the-counter medication

### Required JSON Output:
Return the query in the following structured JSON format:

```json
{
  "general_demographics": {
    "age": "[Realistic adult age given symptoms and severity, e.g., 20-80, for anyone above 80 use 'above 80']",
    "sex": "{sex}",
    "occupation": "[A common occupation]",
    "social_support": "[Specify if the patient has a social support network, such as a partner, family member, or living carer. If applicable, include details like the carer's role (e.g., 'My partner is here to help me' or 'I live with my daughter who is my carer'). If no support network is present, state 'No support network.']",
    "medical_history": "[Include any relevant comorbidities, such as diabetes, asthma, neurodegenerative conditions (e.g., Alzheimer's, Parkinson's), allergies (e.g., to medications, food, or environmental triggers), or other significant pre-existing health conditions. If the person is on regular medications (e.g., insulin for diabetes, inhalers for asthma, antihistamines for allergies, etc.), list them as well. If there are no significant conditions, medications, or allergies, keep it simple (e.g., 'No known issues' or 'None relevant'). Only include specific conditions, medications, or allergies if they are highly relevant to the current case or commonly co-occur with the condition in question.]"
  },
  "symptoms_description": "[Generate a natural-sounding, first-person query (using 'I', 'my') as if a patient is describing their symptoms to NHS 111. Ensure the described symptoms are primarily drawn from or plausibly related to the condition content AND strongly align with the specified severity_level. Select/adapt details from condition content justifying the target severity (e.g., 'red flag' symptoms for Urgent Primary Care; milder symptoms for Self-care). Ensure consistency with the query_type. Vary tone (e.g., anxious, calm) and sentence structure for realism. Occasionally include precise details, such as temperature readings or numbers from previous exams (e.g., 'My temperature is 39C or 102F'). At other times, be vague when describing symptoms (e.g., 'I have a high temperature'). Numbers can be in either US or UK format, depending on the context.]"
}
```

Ensure the text is realistic, clear, and varied to simulate real-world queries.

If the provided conditions content lacks sufficient symptom information or actionable guidance to construct a plausible scenario for the requested severity_level, please return:
{"error": "Insufficient symptom information in provided content to match requested severity"}

Example Output (Urgent Primary Care, Basic Query for Headache):

```json
{
  "general_demographics": {
    "age": 35,
    "sex": "Female",
    "occupation": "Teacher",
    "social_support": "No support network",
    "medical_history": "No known chronic conditions"
  },
  "symptoms_description": "I've had a severe headache for the past three days that won't go away, even with painkillers. It feels like a tight band around my head, and I'm also feeling slightly nauseous. My vision is a bit blurry when I stand up too quickly. I don't normally get headaches this bad, and I'm starting to feel concerned."
}
```

Reply only with the JSON output, without any additional text or explanation

Generate a query based on the given details:
Query Type: {query_type}
Severity Level: {severity_level}
Sex: {sex}
Conditions web page content: {conditions_content}"""

_PLACEHOLDERS = ("{query_type}", "{severity_level}", "{sex}", "{conditions_content}")


class SynthError(ValueError):
    """Raised for malformed generator responses or invalid plans."""


@dataclass
class Demographics:
    age: str
    sex: str
    occupation: str
    social_support: str
    medical_history: str

    def to_prompt_block(self) -> str:
        return (
            f"age: {self.age}, sex: {self.sex}, occupation: {self.occupation}, "
            f"social support: {self.social_support}, medical history: {self.medical_history}"
        )

    def to_json_dict(self) -> dict[str, str]:
        return {
            "age": self.age,
            "sex": self.sex,
            "occupation": self.occupation,
            "social_support": self.social_support,
            "medical_history": self.medical_history,
        }


@dataclass
class SyntheticQuery:
    condition_title: str
    query_type: QueryType
    disposition: Disposition
    demographics: Demographics
    symptoms_description: str

    def to_json_dict(self) -> dict:
        return {
            "condition_title": self.condition_title,
            "query_type": self.query_type.value,
            "disposition": self.disposition.display,
            "general_demographics": self.demographics.to_json_dict(),
            "symptoms_description": self.symptoms_description,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "SyntheticQuery":
        demo = obj["general_demographics"]
        return cls(
            condition_title=obj["condition_title"],
            query_type=QueryType(obj["query_type"]),
            disposition=Disposition.parse(obj["disposition"]),
            demographics=Demographics(
                age=str(demo["age"]),
                sex=demo["sex"],
                occupation=demo["occupation"],
                social_support=demo["social_support"],
                medical_history=demo["medical_history"],
            ),
            symptoms_description=obj["symptoms_description"],
        )


@dataclass
class GenerationRefusal:
    condition_title: str
    disposition: Disposition
    reason: str


@dataclass
class GenerationFailure:
    condition_title: str
    disposition: Disposition
    error: str


class PlanRow(NamedTuple):
    condition_title: str
    query_type: QueryType
    disposition: Disposition
    sex: str


class QueryGeneration(NamedTuple):
    queries: list[SyntheticQuery]
    refusals: list[GenerationRefusal]
    failures: list[GenerationFailure]


def build_generation_prompt(
    record: CorpusRecord,
    query_type: QueryType,
    disposition: Disposition,
    sex: str,
) -> str:
    """Substitute the four placeholders; the template's literal JSON braces
    stay untouched, so substitution is plain string replacement."""
    prompt = (
        QUERY_GENERATION_PROMPT
        .replace("{query_type}", query_type.value)
        .replace("{severity_level}", disposition.display)
        .replace("{sex}", sex)
        .replace("{conditions_content}", record.full_content)
    )
    leftover = [p for p in _PLACEHOLDERS if p in prompt]
    if leftover:
        raise SynthError(f"unresolved placeholders after substitution: {leftover}")
    return prompt


_FENCE_RE = re.compile(r"```(?:json)?\s*(.*?)```", re.DOTALL)


def _extract_json(raw: str) -> dict:
    fenced = _FENCE_RE.search(raw)
    candidate = fenced.group(1) if fenced else raw
    start, end = candidate.find("{"), candidate.rfind("}")
    if start < 0 or end <= start:
        raise SynthError("response contains no JSON object")
    try:
        obj = json.loads(candidate[start : end + 1])
    except json.JSONDecodeError as exc:
        raise SynthError(f"response JSON is invalid: {exc}") from exc
    if not isinstance(obj, dict):
        raise SynthError("response JSON must be an object")
    return obj


_DEMOGRAPHIC_KEYS = ("age", "sex", "occupation", "social_support", "medical_history")


def parse_generation_response(
    raw: str,
    *,
    condition_title: str = "",
    query_type: QueryType = QueryType.BASIC,
    disposition: Disposition = Disposition.SELF_CARE,
) -> SyntheticQuery | GenerationRefusal:
    """Parse a generator reply (fenced or bare JSON) into a query or refusal.

    The plan context (condition, type, disposition) is attached by the caller;
    the model reply itself only carries demographics and the symptom text.
    """
    obj = _extract_json(raw)
    if "error" in obj:
        return GenerationRefusal(
            condition_title=condition_title,
            disposition=disposition,
            reason=str(obj["error"]),
        )
    demo = obj.get("general_demographics")
    if not isinstance(demo, dict):
        raise SynthError("response is missing general_demographics")
    missing = [key for key in _DEMOGRAPHIC_KEYS if key not in demo]
    if missing:
        raise SynthError(f"general_demographics is missing {missing}")
    symptoms = obj.get("symptoms_description")
    if not isinstance(symptoms, str) or not symptoms.strip():
        raise SynthError("response is missing symptoms_description")
    # Age stays free text: the template allows values like "above 80".
    return SyntheticQuery(
        condition_title=condition_title,
        query_type=query_type,
        disposition=disposition,
        demographics=Demographics(
            age=str(demo["age"]),
            sex=str(demo["sex"]),
            occupation=str(demo["occupation"]),
            social_support=str(demo["social_support"]),
            medical_history=str(demo["medical_history"]),
        ),
        symptoms_description=symptoms,
    )


def build_generation_plan(
    records: Sequence[CorpusRecord], count: int, *, seed: int = 0
) -> list[PlanRow]:
    """Deterministic plan: uniform cycle over (query_type x disposition)
    combinations, conditions drawn from a seeded shuffle, sex alternating."""
    if count < 0:
        raise SynthError("count must be >= 0")
    if count and not records:
        raise SynthError("cannot plan queries over an empty corpus")
    rng = Random(seed)
    titles = [r.title for r in records]
    rng.shuffle(titles)
    combos = [(qt, d) for qt in QueryType for d in Disposition]
    plan = []
    for i in range(count):
        query_type, disposition = combos[i % len(combos)]
        plan.append(
            PlanRow(
                condition_title=titles[i % len(titles)],
                query_type=query_type,
                disposition=disposition,
                sex=SEXES[i % 2],
            )
        )
    return plan


def _generate_one(
    record: CorpusRecord, row: PlanRow, endpoint: ChatEndpoint
) -> SyntheticQuery | GenerationRefusal | GenerationFailure:
    prompt = build_generation_prompt(record, row.query_type, row.disposition, row.sex)
    try:
        output = gateway.complete(endpoint, [gateway.user(prompt)])
        return parse_generation_response(
            output.answer or output.raw,
            condition_title=row.condition_title,
            query_type=row.query_type,
            disposition=row.disposition,
        )
    except (EndpointError, SynthError) as exc:
        logger.warning("query generation failed for %r: %s", row.condition_title, exc)
        return GenerationFailure(
            condition_title=row.condition_title,
            disposition=row.disposition,
            error=str(exc),
        )


def generate_query_set(
    records: Sequence[CorpusRecord],
    endpoint: ChatEndpoint,
    plan: Sequence[PlanRow],
    *,
    parallelism: int = 1,
) -> QueryGeneration:
    """One outcome per plan row: a query, a refusal or a recorded failure."""
    by_title = {r.title: r for r in records}
    for row in plan:
        if row.condition_title not in by_title:
            raise SynthError(f"plan references unknown condition {row.condition_title!r}")

    def work(row: PlanRow):
        return _generate_one(by_title[row.condition_title], row, endpoint)

    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            outcomes = list(pool.map(work, plan))
    else:
        outcomes = [work(row) for row in plan]

    result = QueryGeneration([], [], [])
    for outcome in outcomes:
        if isinstance(outcome, SyntheticQuery):
            result.queries.append(outcome)
        elif isinstance(outcome, GenerationRefusal):
            result.refusals.append(outcome)
        else:
            result.failures.append(outcome)
    return result


def generate_query_dataset(
    records: Sequence[CorpusRecord],
    endpoint: ChatEndpoint,
    target: int,
    *,
    seed: int = 0,
    max_attempt_factor: int = 5,
    parallelism: int = 1,
) -> QueryGeneration:
    """Generate until ``target`` queries exist, re-drawing refused or failed
    rows with fresh plan rows, bounded at ``max_attempt_factor * target``
    attempts overall."""
    if target < 0:
        raise SynthError("target must be >= 0")
    budget = max_attempt_factor * target
    collected = QueryGeneration([], [], [])
    attempts = 0
    draw_seed = seed
    while len(collected.queries) < target and attempts < budget:
        missing = target - len(collected.queries)
        batch = min(missing, budget - attempts)
        plan = build_generation_plan(records, batch, seed=draw_seed)
        draw_seed += 1
        outcome = generate_query_set(records, endpoint, plan, parallelism=parallelism)
        collected.queries.extend(outcome.queries)
        collected.refusals.extend(outcome.refusals)
        collected.failures.extend(outcome.failures)
        attempts += len(plan)
    if len(collected.queries) < target:
        logger.warning(
            "query generation stopped at %d/%d after %d attempts",
            len(collected.queries), target, attempts,
        )
    return collected


def dedup_split(
    eval_set: Sequence[SyntheticQuery], train_set: Sequence[SyntheticQuery]
) -> tuple[list[SyntheticQuery], list[SyntheticQuery]]:
    """Drop training rows whose (condition_title, disposition) key also
    appears in the eval set. Returns (kept, removed)."""
    taken = {(q.condition_title, q.disposition) for q in eval_set}
    kept, removed = [], []
    for query in train_set:
        if (query.condition_title, query.disposition) in taken:
            removed.append(query)
        else:
            kept.append(query)
    return kept, removed


def save_queries(queries: Sequence[SyntheticQuery], path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as handle:
        for query in queries:
            handle.write(json.dumps(query.to_json_dict(), ensure_ascii=False) + "\n")


def load_queries(path: str | Path) -> list[SyntheticQuery]:
    path = Path(path)
    queries = []
    with path.open(encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                queries.append(SyntheticQuery.from_json_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise SynthError(f"{path}:{lineno}: invalid query row: {exc}") from exc
    return queries
