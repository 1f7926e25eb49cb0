"""Budget forcing: bounded thinking with delimiter suppression.

The controller drives a completion-style endpoint that supports continuing
from an assistant-side prefix. While the model is thinking it watches for the
end-of-thinking delimiter; early attempts to stop are suppressed by deleting
the delimiter and appending a continuation cue, and overlong thinking is cut
off by force-inserting the delimiter at the token ceiling.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from typing import Protocol, Sequence

import httpx

from .gateway import EndpointError, GatewayError, ModelOutput, parse_reasoning
from .tokenization import whitespace_token_count

logger = logging.getLogger(__name__)


@dataclass
class BudgetForcingPolicy:
    max_think_tokens: int = 1024
    max_suppressions: int = 3
    continuation_text: str = "Wait"
    end_of_thinking_delimiter: str = "</think>"
    start_of_thinking_delimiter: str = "<think>"
    # The answer phase needs some cap so generation always terminates.
    max_answer_tokens: int = 4096

    def validate(self) -> None:
        if self.max_think_tokens < 1:
            raise ValueError("max_think_tokens must be >= 1")
        if self.max_suppressions < 0:
            raise ValueError("max_suppressions must be >= 0")
        if not self.end_of_thinking_delimiter:
            raise ValueError("end_of_thinking_delimiter must be non-empty")


@dataclass
class Completion:
    """One generation step. ``token_count`` covers ``text`` only; a consumed
    stop sequence is reported via ``stop_hit`` and billed separately."""

    text: str
    token_count: int
    finish: str  # "stop" | "length" | "end"
    stop_hit: str | None = None


class CompletionEndpoint(Protocol):
    """Prefix-continuation generation interface required for budget forcing."""

    def generate(self, prompt: str, max_tokens: int, stop: Sequence[str]) -> Completion: ...

    def count_tokens(self, text: str) -> int: ...


def budget_forced_generate(
    endpoint: CompletionEndpoint,
    prompt: str,
    policy: BudgetForcingPolicy | None = None,
) -> ModelOutput:
    """Generate with suppressed early stops and a hard thinking-token ceiling.

    Token accounting: ``completion_tokens`` counts everything that consumed
    generation budget, i.e. model-emitted tokens (including suppressed
    delimiters) plus controller-injected text (continuation cues and a forced
    delimiter). It is therefore always >= the token count of the visible text.
    """
    policy = policy or BudgetForcingPolicy()
    policy.validate()
    if not (hasattr(endpoint, "generate") and hasattr(endpoint, "count_tokens")):
        raise TypeError(
            "budget forcing requires a completion-capable endpoint "
            "(prefix continuation), not a chat-only one"
        )

    delim = policy.end_of_thinking_delimiter
    base = prompt + policy.start_of_thinking_delimiter
    thinking = ""
    thinking_tokens = 0
    suppressions = 0
    consumed = 0
    forced = False

    while True:
        remaining = policy.max_think_tokens - thinking_tokens
        if remaining <= 0:
            forced = True
            break
        step = endpoint.generate(base + thinking, max_tokens=remaining, stop=[delim])
        thinking += step.text
        thinking_tokens += step.token_count
        consumed += step.token_count
        if step.stop_hit is not None:
            # The emitted delimiter consumed budget whether or not we keep it.
            consumed += max(1, endpoint.count_tokens(step.stop_hit))
            if suppressions < policy.max_suppressions:
                suppressions += 1
                thinking += policy.continuation_text
                cue_tokens = max(1, endpoint.count_tokens(policy.continuation_text))
                thinking_tokens += cue_tokens
                consumed += cue_tokens
                continue
            break  # suppression budget spent: accept the delimiter
        if step.finish == "length":
            forced = True
            break
        # Stream ended without a delimiter; close the thinking phase ourselves.
        forced = True
        break

    if forced:
        consumed += max(1, endpoint.count_tokens(delim))
        logger.debug("forced end-of-thinking at %d tokens", thinking_tokens)

    answer_step = endpoint.generate(
        base + thinking + delim, max_tokens=policy.max_answer_tokens, stop=[]
    )
    consumed += answer_step.token_count

    raw = (
        policy.start_of_thinking_delimiter
        + thinking
        + delim
        + answer_step.text
    )
    reasoning, answer = parse_reasoning(
        raw, (policy.start_of_thinking_delimiter, delim)
    )
    return ModelOutput(
        answer=answer,
        reasoning=reasoning,
        raw=raw,
        token_usage=(endpoint.count_tokens(prompt), consumed),
    )


class HttpCompletionEndpoint:
    """Client for OpenAI-compatible /completions servers (prefix continuation).

    Token counts come from the server's usage block; locally injected text is
    counted with a pluggable counter (whitespace words by default).
    """

    def __init__(self, config, client=None, token_counter=None):
        if not config.base_url:
            raise GatewayError("endpoint config requires base_url")
        self.config = config
        self._client = client or httpx.Client(timeout=config.timeout)
        self._count = token_counter or whitespace_token_count

    def count_tokens(self, text: str) -> int:
        return self._count(text)

    def generate(self, prompt: str, max_tokens: int, stop: Sequence[str]) -> Completion:
        payload = {
            "model": self.config.model,
            "prompt": prompt,
            "max_tokens": max_tokens,
        }
        payload.update(self.config.decode_defaults)
        if stop:
            payload["stop"] = list(stop)
        headers = {"Content-Type": "application/json"}
        if self.config.api_key_env:
            key = os.environ.get(self.config.api_key_env, "")
            if key:
                headers["Authorization"] = f"Bearer {key}"
        url = self.config.base_url.rstrip("/") + "/completions"
        try:
            response = self._client.post(url, json=payload, headers=headers)
        except httpx.HTTPError as exc:
            raise EndpointError(f"completion endpoint transport failure: {exc}") from exc
        if response.status_code != 200:
            raise EndpointError(
                f"completion endpoint returned status {response.status_code}: {response.text[:500]}"
            )
        body = response.json()
        try:
            choice = body["choices"][0]
        except (KeyError, IndexError, TypeError) as exc:
            raise EndpointError(f"malformed completion response: {body!r}") from exc
        text = choice.get("text") or ""
        finish = choice.get("finish_reason") or "end"
        usage = body.get("usage") or {}
        tokens = int(usage.get("completion_tokens", self._count(text)))
        stop_hit = stop[0] if (finish == "stop" and stop) else None
        if finish not in ("stop", "length"):
            finish = "end"
        return Completion(text=text, token_count=tokens, finish=finish, stop_hit=stop_hit)
