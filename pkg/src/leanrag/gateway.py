"""Message types, chat templating, reasoning-trace parsing and endpoint clients.

Every other module talks to language models through this one. Endpoints are
handles exposing an OpenAI-style ``chat`` call; ``complete`` converts typed
messages to the wire format, sends them and parses the response (including
``<think>`` delimited reasoning) into a :class:`ModelOutput`.
"""
from __future__ import annotations

import json
import logging
import os
import warnings
from dataclasses import dataclass, field
from typing import Any, Protocol, Sequence

import httpx

logger = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant", "tool")

CHAT_START = "<|im_start|>"
CHAT_END = "<|im_end|>"

DEFAULT_THINK_DELIMITERS = ("<think>", "</think>")


class GatewayError(RuntimeError):
    """Raised for malformed messages, schema violations or bad endpoint use."""


class EndpointError(GatewayError):
    """Raised when an endpoint call fails (transport, status or schema)."""


class TemplateCollisionWarning(UserWarning):
    """Message content contains a chat-template delimiter."""


class UnterminatedReasoningWarning(UserWarning):
    """Reasoning open delimiter was never closed."""


@dataclass
class ToolCall:
    name: str
    arguments: dict[str, Any]
    call_id: str


@dataclass
class ToolParam:
    name: str
    type_tag: str  # "string" | "integer" | "number" | "boolean"
    description: str = ""
    required: bool = True


_TYPE_TAGS: dict[str, type | tuple[type, ...]] = {
    "string": str,
    "integer": int,
    "number": (int, float),
    "boolean": bool,
}


@dataclass
class ToolSchema:
    name: str
    description: str
    parameters: list[ToolParam] = field(default_factory=list)

    def __post_init__(self) -> None:
        names = [p.name for p in self.parameters]
        if len(names) != len(set(names)):
            raise GatewayError(f"tool {self.name!r} has duplicate parameter names")

    def to_wire(self) -> dict[str, Any]:
        """OpenAI-style function schema."""
        properties = {
            p.name: {"type": p.type_tag, "description": p.description}
            for p in self.parameters
        }
        required = [p.name for p in self.parameters if p.required]
        return {
            "type": "function",
            "function": {
                "name": self.name,
                "description": self.description,
                "parameters": {
                    "type": "object",
                    "properties": properties,
                    "required": required,
                },
            },
        }

    def validate_call(self, arguments: dict[str, Any]) -> list[str]:
        """Return a list of problems; empty means the call is dispatchable."""
        problems = []
        known = {p.name: p for p in self.parameters}
        for p in self.parameters:
            if p.required and p.name not in arguments:
                problems.append(f"missing required argument '{p.name}'")
        for name, value in arguments.items():
            param = known.get(name)
            if param is None:
                problems.append(f"unknown argument '{name}'")
                continue
            expected = _TYPE_TAGS.get(param.type_tag)
            if expected is None:
                continue
            if isinstance(value, bool) and param.type_tag in ("integer", "number"):
                problems.append(f"argument '{name}' must be {param.type_tag}")
            elif not isinstance(value, expected):
                problems.append(f"argument '{name}' must be {param.type_tag}")
        return problems


@dataclass
class ChatMessage:
    """One turn. ``reasoning`` and ``retrieved_titles`` are display metadata
    carried by stored threads; they never go over the wire."""

    role: str
    content: str
    tool_calls: list[ToolCall] = field(default_factory=list)
    tool_call_id: str | None = None
    reasoning: str | None = None
    retrieved_titles: list[str] | None = None

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise GatewayError(f"unknown role {self.role!r}")
        if self.role != "assistant" and self.tool_calls:
            raise GatewayError(f"{self.role} messages cannot carry tool calls")
        if not self.content and not self.tool_calls:
            raise GatewayError("message content may be empty only on tool-call turns")

    def to_wire(self) -> dict[str, Any]:
        msg: dict[str, Any] = {"role": self.role, "content": self.content}
        if self.tool_calls:
            msg["tool_calls"] = [
                {
                    "id": c.call_id,
                    "type": "function",
                    "function": {"name": c.name, "arguments": json.dumps(c.arguments)},
                }
                for c in self.tool_calls
            ]
        if self.role == "tool" and self.tool_call_id:
            msg["tool_call_id"] = self.tool_call_id
        return msg


def system(content: str) -> ChatMessage:
    return ChatMessage("system", content)


def user(content: str) -> ChatMessage:
    return ChatMessage("user", content)


def assistant(content: str, **kwargs: Any) -> ChatMessage:
    return ChatMessage("assistant", content, **kwargs)


@dataclass
class ModelOutput:
    """Parsed model response. ``token_usage`` is (prompt_tokens, completion_tokens)."""

    answer: str
    reasoning: str | None = None
    tool_calls: list[ToolCall] = field(default_factory=list)
    raw: str = ""
    token_usage: tuple[int, int] = (0, 0)


def render_chat_template(messages: Sequence[ChatMessage]) -> str:
    """Render messages in the im_start/im_end template, newline-joined.

    Content containing a template delimiter is rendered verbatim but flagged,
    since it would confuse any model trained on this template.
    """
    if not messages:
        raise GatewayError("cannot render an empty message list")
    blocks = []
    for msg in messages:
        if CHAT_START in msg.content or CHAT_END in msg.content:
            warnings.warn(
                f"message content contains a chat template delimiter ({msg.role} turn)",
                TemplateCollisionWarning,
                stacklevel=2,
            )
        blocks.append(f"{CHAT_START}{msg.role}\n{msg.content}{CHAT_END}")
    return "\n".join(blocks)


def parse_reasoning(
    raw: str, delimiters: tuple[str, str] = DEFAULT_THINK_DELIMITERS
) -> tuple[str | None, str]:
    """Split raw model text into (reasoning, answer).

    Reasoning is the text between the first open delimiter and its close; the
    answer is everything after the close. No open delimiter means the whole
    text is the answer. An unterminated open delimiter yields all remaining
    text as reasoning with an empty answer, and a warning.
    """
    open_delim, close_delim = delimiters
    start = raw.find(open_delim)
    if start < 0:
        return None, raw
    body_start = start + len(open_delim)
    end = raw.find(close_delim, body_start)
    if end < 0:
        warnings.warn(
            "reasoning delimiter opened but never closed",
            UnterminatedReasoningWarning,
            stacklevel=2,
        )
        return raw[body_start:], ""
    return raw[body_start:end], raw[end + len(close_delim):]


@dataclass
class EndpointConfig:
    """Connection settings for one model endpoint.

    ``api_key_env`` names an environment variable; the key itself is never
    stored or echoed. ``capabilities`` declares which interfaces the endpoint
    serves ("chat", "completion", "tools").
    """

    kind: str = "openai"
    base_url: str = ""
    model: str = ""
    api_key_env: str = ""
    capabilities: tuple[str, ...] = ("chat",)
    decode_defaults: dict[str, Any] = field(default_factory=dict)
    end_of_thinking: str = "</think>"
    timeout: float = 120.0


class ChatEndpoint(Protocol):
    """Anything that answers an OpenAI-shaped chat.completions request."""

    def chat(
        self,
        messages: list[dict[str, Any]],
        tools: list[dict[str, Any]] | None,
        params: dict[str, Any],
    ) -> dict[str, Any]: ...


class HttpChatEndpoint:
    """Client for OpenAI-compatible /chat/completions servers."""

    def __init__(self, config: EndpointConfig, client: httpx.Client | None = None):
        if not config.base_url:
            raise GatewayError("endpoint config requires base_url")
        self.config = config
        self._client = client or httpx.Client(timeout=config.timeout)

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.config.api_key_env:
            key = os.environ.get(self.config.api_key_env, "")
            if key:
                headers["Authorization"] = f"Bearer {key}"
        return headers

    def chat(
        self,
        messages: list[dict[str, Any]],
        tools: list[dict[str, Any]] | None,
        params: dict[str, Any],
    ) -> dict[str, Any]:
        payload: dict[str, Any] = {"model": self.config.model, "messages": messages}
        payload.update(self.config.decode_defaults)
        payload.update(params)
        if tools:
            payload["tools"] = tools
        url = self.config.base_url.rstrip("/") + "/chat/completions"
        try:
            response = self._client.post(url, json=payload, headers=self._headers())
        except httpx.HTTPError as exc:
            raise EndpointError(f"chat endpoint transport failure: {exc}") from exc
        if response.status_code != 200:
            raise EndpointError(
                f"chat endpoint returned status {response.status_code}: {response.text[:500]}"
            )
        return response.json()


def _parse_wire_tool_calls(raw_calls: Any) -> list[ToolCall]:
    calls = []
    for i, raw in enumerate(raw_calls or []):
        fn = raw.get("function", {})
        args = fn.get("arguments", {})
        if isinstance(args, str):
            try:
                args = json.loads(args) if args else {}
            except json.JSONDecodeError as exc:
                raise EndpointError(f"tool call arguments are not valid JSON: {exc}") from exc
        if not isinstance(args, dict):
            raise EndpointError("tool call arguments must decode to an object")
        calls.append(ToolCall(name=fn.get("name", ""), arguments=args, call_id=raw.get("id", f"call_{i}")))
    return calls


def complete(
    endpoint: ChatEndpoint,
    messages: Sequence[ChatMessage],
    tools: Sequence[ToolSchema] | None = None,
    delimiters: tuple[str, str] = DEFAULT_THINK_DELIMITERS,
    **decode_params: Any,
) -> ModelOutput:
    """Send one chat request and parse the reply.

    Raises :class:`EndpointError` on transport failure, non-success status or
    a response that does not match the expected schema.
    """
    if not messages:
        raise GatewayError("cannot complete an empty message list")
    wire_messages = [m.to_wire() for m in messages]
    wire_tools = [t.to_wire() for t in tools] if tools else None
    response = endpoint.chat(wire_messages, wire_tools, dict(decode_params))
    try:
        choice = response["choices"][0]["message"]
    except (KeyError, IndexError, TypeError) as exc:
        raise EndpointError(f"malformed chat response: {response!r}") from exc
    raw = choice.get("content") or ""
    reasoning, answer = parse_reasoning(raw, delimiters)
    usage = response.get("usage") or {}
    return ModelOutput(
        answer=answer,
        reasoning=reasoning,
        tool_calls=_parse_wire_tool_calls(choice.get("tool_calls")),
        raw=raw,
        token_usage=(int(usage.get("prompt_tokens", 0)), int(usage.get("completion_tokens", 0))),
    )


def tool_error_message(call: ToolCall, problems: Sequence[str]) -> ChatMessage:
    """Structured error reply for an invalid tool call, so the model can retry."""
    body = json.dumps({"error": {"code": "invalid_tool_call", "problems": list(problems)}})
    return ChatMessage("tool", body, tool_call_id=call.call_id)
