"""Deterministic scripted endpoints.

These stand in for real model servers in tests and offline demo runs. They
speak the same wire shapes as the HTTP endpoints so the rest of the stack
cannot tell the difference. All behavior is a pure function of the prompt, so
repeated runs produce identical artifacts.
"""
from __future__ import annotations

import hashlib
import json
import re
from typing import Any, Callable, Iterable, Sequence

from .budget import Completion

__all__ = [
    "ScriptedChatEndpoint",
    "ScriptedCompletionEndpoint",
    "MockSummariserEndpoint",
    "MockQueryGeneratorEndpoint",
    "MockTeacherEndpoint",
    "MockToolPredictorEndpoint",
    "MockAgentEndpoint",
    "chat_response",
]


def _count(text: str) -> int:
    return len(text.split())


def chat_response(
    content: str | None = None,
    tool_calls: list[dict[str, Any]] | None = None,
    prompt_tokens: int = 0,
) -> dict[str, Any]:
    """Build an OpenAI-shaped chat.completions response body."""
    message: dict[str, Any] = {"role": "assistant", "content": content}
    if tool_calls:
        message["tool_calls"] = tool_calls
    return {
        "choices": [{"index": 0, "message": message, "finish_reason": "stop"}],
        "usage": {
            "prompt_tokens": prompt_tokens,
            "completion_tokens": _count(content or ""),
        },
    }


def tool_call(name: str, arguments: dict[str, Any], call_id: str = "call_0") -> dict[str, Any]:
    return {
        "id": call_id,
        "type": "function",
        "function": {"name": name, "arguments": json.dumps(arguments)},
    }


class ScriptedChatEndpoint:
    """Replays queued replies, or defers to a function of (messages, tools).

    Queued items may be plain strings (content) or full response dicts.
    """

    def __init__(
        self,
        replies: Iterable[str | dict[str, Any]] | None = None,
        fn: Callable[[list[dict[str, Any]], list[dict[str, Any]] | None], str | dict[str, Any]] | None = None,
    ):
        if (replies is None) == (fn is None):
            raise ValueError("provide exactly one of replies or fn")
        self._queue = list(replies) if replies is not None else None
        self._fn = fn
        self.calls: list[list[dict[str, Any]]] = []

    def chat(
        self,
        messages: list[dict[str, Any]],
        tools: list[dict[str, Any]] | None,
        params: dict[str, Any],
    ) -> dict[str, Any]:
        self.calls.append(messages)
        if self._queue is not None:
            if not self._queue:
                raise RuntimeError("scripted endpoint ran out of replies")
            item = self._queue.pop(0)
        else:
            item = self._fn(messages, tools)
        if isinstance(item, str):
            prompt_tokens = sum(_count(m.get("content") or "") for m in messages)
            return chat_response(item, prompt_tokens=prompt_tokens)
        return item


class ScriptedCompletionEndpoint:
    """Token-level completion endpoint driven by a prompt -> token-stream script.

    Tokens render with a leading space; whitespace counting keeps text and
    token accounting consistent.
    """

    def __init__(self, script: Callable[[str], Sequence[str]]):
        self._script = script
        self.calls: list[str] = []

    def count_tokens(self, text: str) -> int:
        return _count(text)

    def generate(self, prompt: str, max_tokens: int, stop: Sequence[str]) -> Completion:
        self.calls.append(prompt)
        emitted: list[str] = []
        for token in self._script(prompt):
            if token in stop:
                return Completion(
                    text="".join(" " + t for t in emitted),
                    token_count=len(emitted),
                    finish="stop",
                    stop_hit=token,
                )
            emitted.append(token)
            if len(emitted) >= max_tokens:
                return Completion(
                    text="".join(" " + t for t in emitted),
                    token_count=len(emitted),
                    finish="length",
                )
        return Completion(
            text="".join(" " + t for t in emitted),
            token_count=len(emitted),
            finish="end",
        )


def _last_user_content(messages: list[dict[str, Any]]) -> str:
    for message in reversed(messages):
        if message.get("role") == "user":
            return message.get("content") or ""
    return ""


def _stable_int(text: str) -> int:
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class MockSummariserEndpoint:
    """Returns the first sentences of the document, capped at roughly 15% of
    its length, echoing the shape of a real summary."""

    def chat(self, messages, tools, params):
        prompt = _last_user_content(messages)
        document = prompt.rsplit("Document:\n", 1)[-1].strip()
        if not document:
            return chat_response("SUMMARY")
        target = max(20, len(document) // 7)
        sentences = re.split(r"(?<=\.)\s+", document)
        summary = ""
        for sentence in sentences:
            if summary and len(summary) + len(sentence) > target:
                break
            summary = (summary + " " + sentence).strip()
        summary = summary[: max(1, len(document) - 1)]
        return chat_response(summary, prompt_tokens=_count(prompt))


# Severity cue phrases the mock generator plants and the mock teacher reads.
_SEVERITY_CUES = {
    "A&E": "I think I need to go to A&E right now.",
    "Urgent Primary Care": "I think I should see my GP as soon as possible.",
    "Self-care": "I think I can manage this at home for now.",
}

_TYPE_FLAVOUR = {
    "basic": "",
    "hypochondriac": "I am extremely worried it could be something far worse, and my ear also itches.",
    "downplay": "It is probably nothing serious, I just wanted to check.",
}

_OCCUPATIONS = ("Teacher", "Electrician", "Nurse", "Shop assistant", "Driver", "Accountant")


class MockQueryGeneratorEndpoint:
    """Emits a valid query JSON whose symptom text quotes the page's first
    sentence and carries a severity cue, or the refusal JSON for pages
    shorter than a plausibility floor."""

    def __init__(self, min_content_chars: int = 40):
        self.min_content_chars = min_content_chars

    def chat(self, messages, tools, params):
        prompt = _last_user_content(messages)
        content = prompt.rsplit("Conditions web page content:", 1)[-1].strip()
        query_type = re.findall(r"Query Type: (\w+)", prompt)[-1]
        severity = re.findall(r"Severity Level: (.+)", prompt)[-1].strip()
        sex = re.findall(r"Sex: (.+)", prompt)[-1].strip()

        if len(content) < self.min_content_chars:
            return chat_response(
                json.dumps({
                    "error": "Insufficient symptom information in provided content to match requested severity"
                })
            )

        first_sentence = re.split(r"(?<=\.)\s+", content)[0].rstrip(".")
        seed = _stable_int(f"{content[:80]}|{query_type}|{severity}")
        age = 20 + seed % 60
        flavour = _TYPE_FLAVOUR.get(query_type, "")
        symptoms = f"{first_sentence} has been bothering me for days."
        if flavour:
            symptoms += f" {flavour}"
        symptoms += f" {_SEVERITY_CUES.get(severity, _SEVERITY_CUES['Self-care'])}"
        body = {
            "general_demographics": {
                "age": str(age),
                "sex": sex,
                "occupation": _OCCUPATIONS[seed % len(_OCCUPATIONS)],
                "social_support": "No support network",
                "medical_history": "No known chronic conditions",
            },
            "symptoms_description": symptoms,
        }
        return chat_response("```json\n" + json.dumps(body, indent=2) + "\n```",
                             prompt_tokens=_count(prompt))


_SOURCES_RE = re.compile(r"must either be one of (\[.*?\]) or \"inconclusive\"", re.DOTALL)
_QUESTION_RE = re.compile(r"description of their symptoms:\n\"(.*?)\"\n", re.DOTALL)
_CONDITION_LIST_RE = re.compile(
    r"Use the following list of possible conditions:\n(.*?)\n\nA patient", re.DOTALL
)
_CONTEXT_HEADER_RE = re.compile(r"^Condition: (.+?) \(similarity score:", re.MULTILINE)


def _conversation_text(messages: list[dict[str, Any]]) -> str:
    return "\n".join(m.get("content") or "" for m in messages)


def _read_candidates(prompt: str) -> list[str]:
    sources = _SOURCES_RE.search(prompt)
    if sources:
        try:
            return [str(t) for t in json.loads(sources.group(1))]
        except json.JSONDecodeError:
            return []
    listed = _CONDITION_LIST_RE.search(prompt)
    if listed:
        return [line.strip() for line in listed.group(1).splitlines() if line.strip()]
    return _CONTEXT_HEADER_RE.findall(prompt)


def _read_question(messages: list[dict[str, Any]], prompt: str) -> str:
    question_match = _QUESTION_RE.search(prompt)
    if question_match:
        return question_match.group(1)
    return _last_user_content(messages)


def _pick_condition(prompt: str, question: str) -> str:
    lowered = question.casefold()
    for title in _read_candidates(prompt):
        if title.casefold() in lowered:
            return title
    return "inconclusive"


def _pick_severity(question: str) -> str:
    for severity, cue in _SEVERITY_CUES.items():
        if cue in question:
            return severity
    return "Self-care"


class MockTeacherEndpoint:
    """A 'perfect reasoner' over planted cues: names a candidate condition iff
    its title appears in the symptom text, otherwise answers inconclusive."""

    def chat(self, messages, tools, params):
        prompt = _conversation_text(messages)
        question = _read_question(messages, prompt)
        condition = _pick_condition(prompt, question)
        severity = _pick_severity(question)
        reasoning = (
            f" The patient's description points towards {condition}."
            f" Given the urgency cues, the right next step is {severity}."
        )
        content = f"<think>{reasoning} </think>\n({condition}, {severity})"
        return chat_response(content, prompt_tokens=_count(prompt))


class MockToolPredictorEndpoint:
    """Same decision rule as the teacher, submitted through the tool channel."""

    def chat(self, messages, tools, params):
        prompt = _conversation_text(messages)
        question = _read_question(messages, prompt)
        arguments = {
            "condition": _pick_condition(prompt, question),
            "severity": _pick_severity(question),
        }
        return chat_response(
            None,
            tool_calls=[tool_call("submit_condition_recommendation", arguments)],
            prompt_tokens=_count(prompt),
        )


_SMALL_TALK = ("hello", "hi", "thanks", "thank you", "bye", "goodbye")


class MockAgentEndpoint:
    """Replies directly to small talk; otherwise asks for retrieval with the
    latest user message as the standalone query."""

    def __init__(self, tool_name: str = "retrieve_condition_context"):
        self.tool_name = tool_name

    def chat(self, messages, tools, params):
        last_user = _last_user_content(messages)
        stripped = last_user.strip().rstrip("!.?").casefold()
        if stripped in _SMALL_TALK:
            return chat_response(
                "Hello! Could you tell me a bit about your symptoms?",
                prompt_tokens=_count(last_user),
            )
        return chat_response(
            None,
            tool_calls=[tool_call(self.tool_name, {"query": last_user})],
            prompt_tokens=_count(last_user),
        )
