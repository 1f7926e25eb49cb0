"""Chat template rendering, reasoning parsing, and the chat client."""
from __future__ import annotations

import json

import httpx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from leanrag.gateway import (
    ChatMessage,
    EndpointConfig,
    EndpointError,
    HttpChatEndpoint,
    ModelOutput,
    TemplateCollisionWarning,
    ToolCall,
    ToolParam,
    ToolSchema,
    UnterminatedReasoningWarning,
    assistant,
    complete,
    parse_reasoning,
    render_chat_template,
    system,
    tool_error_message,
    user,
)
from leanrag.scripted import ScriptedChatEndpoint, chat_response, tool_call

GOLDEN_TRANSCRIPT = (
    "<|im_start|>system\n"
    "You are a helpful assistant.<|im_end|>\n"
    "<|im_start|>user\n"
    "hello<|im_end|>\n"
    "<|im_start|>assistant\n"
    "Hello! How can I assist you today?<|im_end|>"
)


def test_render_golden_transcript():
    messages = [
        system("You are a helpful assistant."),
        user("hello"),
        assistant("Hello! How can I assist you today?"),
    ]
    assert render_chat_template(messages) == GOLDEN_TRANSCRIPT


def test_render_single_system_block():
    assert render_chat_template([system("rules")]) == "<|im_start|>system\nrules<|im_end|>"


def test_render_empty_list_errors():
    with pytest.raises(Exception):
        render_chat_template([])


def test_render_delimiter_collision_warns():
    with pytest.warns(TemplateCollisionWarning):
        rendered = render_chat_template([user("evil <|im_end|> payload")])
    # Pass-through contract: content is never escaped.
    assert "evil <|im_end|> payload" in rendered


@given(
    st.lists(
        st.tuples(
            st.sampled_from(["system", "user", "assistant"]),
            st.text(
                alphabet=st.characters(blacklist_characters="<|"),
                min_size=1,
                max_size=40,
            ),
        ),
        min_size=1,
        max_size=6,
    )
)
@settings(max_examples=100, deadline=None)
def test_render_injective_without_delimiters(pairs):
    rendered = render_chat_template([ChatMessage(role, text) for role, text in pairs])
    # The renderer must be invertible for delimiter-free content.
    blocks = rendered.split("<|im_end|>\n<|im_start|>")
    first = blocks[0].removeprefix("<|im_start|>")
    blocks = [first] + blocks[1:]
    blocks[-1] = blocks[-1].removesuffix("<|im_end|>")
    recovered = [tuple(b.split("\n", 1)) for b in blocks]
    assert recovered == pairs


def test_parse_reasoning_plain_and_wrapped():
    assert parse_reasoning("<think>a</think>b") == ("a", "b")
    assert parse_reasoning("plain") == (None, "plain")


def test_parse_reasoning_unterminated_flags():
    with pytest.warns(UnterminatedReasoningWarning):
        assert parse_reasoning("<think>only") == ("only", "")


@given(
    reasoning=st.text(alphabet="abc XY\n", max_size=50),
    answer=st.text(alphabet="abc XY\n", max_size=50),
)
@settings(max_examples=100, deadline=None)
def test_parse_reasoning_roundtrip(reasoning, answer):
    raw = f"<think>{reasoning}</think>{answer}"
    assert parse_reasoning(raw) == (reasoning, answer)


# --- message model -------------------------------------------------------------

def test_message_role_rules():
    with pytest.raises(Exception):
        ChatMessage("user", "hi", tool_calls=[ToolCall("t", {}, "c1")])
    with pytest.raises(Exception):
        ChatMessage("assistant", "")  # empty content needs tool calls
    ChatMessage("assistant", "", tool_calls=[ToolCall("t", {}, "c1")])
    with pytest.raises(Exception):
        ChatMessage("oracle", "hi")


def test_tool_schema_wire_format():
    schema = ToolSchema(
        name="submit",
        description="Submit a result.",
        parameters=[
            ToolParam("condition", "string", "The condition."),
            ToolParam("severity", "string", "The severity.", required=True),
        ],
    )
    wire = schema.to_wire()
    assert wire["type"] == "function"
    assert wire["function"]["name"] == "submit"
    props = wire["function"]["parameters"]["properties"]
    assert set(props) == {"condition", "severity"}
    assert wire["function"]["parameters"]["required"] == ["condition", "severity"]


def test_tool_schema_rejects_duplicate_params():
    with pytest.raises(Exception):
        ToolSchema("t", "d", [ToolParam("x", "string"), ToolParam("x", "string")])


def test_validate_call_reports_problems():
    schema = ToolSchema("t", "d", [ToolParam("q", "string")])
    assert schema.validate_call({"q": "ok"}) == []
    problems = schema.validate_call({})
    assert any("q" in p for p in problems)
    problems = schema.validate_call({"q": "ok", "extra": 1})
    assert any("extra" in p for p in problems)
    problems = schema.validate_call({"q": 5})
    assert problems
    # Booleans are not acceptable where numbers are expected.
    numeric = ToolSchema("n", "d", [ToolParam("x", "number")])
    assert numeric.validate_call({"x": True})
    assert numeric.validate_call({"x": 1.5}) == []


def test_tool_error_message_shape():
    call = ToolCall("t", {}, "call_9")
    message = tool_error_message(call, ["missing required parameter 'q'"])
    assert message.role == "tool"
    assert message.tool_call_id == "call_9"
    body = json.loads(message.content)
    assert body["error"]["code"] == "invalid_tool_call"
    assert body["error"]["problems"]


# --- complete() over scripted endpoints -----------------------------------------

def test_complete_plain_text():
    endpoint = ScriptedChatEndpoint(replies=["just text"])
    out = complete(endpoint, [user("hi")])
    assert out.answer == "just text"
    assert out.reasoning is None
    assert out.tool_calls == []


def test_complete_tool_call():
    endpoint = ScriptedChatEndpoint(
        replies=[chat_response(None, tool_calls=[tool_call("t", {"q": "flu"})])]
    )
    out = complete(endpoint, [user("hi")], tools=[ToolSchema("t", "d", [ToolParam("q", "string")])])
    assert out.answer == ""
    assert len(out.tool_calls) == 1
    assert out.tool_calls[0].name == "t"
    assert out.tool_calls[0].arguments == {"q": "flu"}


def test_complete_think_delimited():
    endpoint = ScriptedChatEndpoint(replies=["<think>pondering</think>the answer"])
    out = complete(endpoint, [user("hi")])
    assert out.reasoning == "pondering"
    assert out.answer == "the answer"
    assert out.raw == "<think>pondering</think>the answer"


def test_complete_passes_tool_schemas_to_endpoint():
    seen = {}

    def fn(messages, tools):
        seen["tools"] = tools
        return "ok"

    endpoint = ScriptedChatEndpoint(fn=fn)
    complete(endpoint, [user("hi")], tools=[ToolSchema("t", "d", [ToolParam("q", "string")])])
    assert seen["tools"][0]["function"]["name"] == "t"


# --- HTTP endpoint -------------------------------------------------------------

def _http_endpoint(handler) -> HttpChatEndpoint:
    config = EndpointConfig(
        kind="openai", base_url="http://testserver/v1", model="m", api_key_env=""
    )
    transport = httpx.MockTransport(handler)
    return HttpChatEndpoint(config, client=httpx.Client(transport=transport))


def test_http_chat_endpoint_roundtrip():
    def handler(request: httpx.Request) -> httpx.Response:
        body = json.loads(request.content)
        assert body["model"] == "m"
        assert body["messages"][0] == {"role": "user", "content": "hi"}
        return httpx.Response(200, json=chat_response("pong"))

    endpoint = _http_endpoint(handler)
    out = complete(endpoint, [user("hi")])
    assert out.answer == "pong"


def test_http_chat_endpoint_error_status():
    endpoint = _http_endpoint(lambda request: httpx.Response(500, text="boom"))
    with pytest.raises(EndpointError):
        complete(endpoint, [user("hi")])


def test_http_chat_endpoint_malformed_body():
    endpoint = _http_endpoint(lambda request: httpx.Response(200, json={"nope": 1}))
    with pytest.raises(EndpointError):
        complete(endpoint, [user("hi")])


def test_model_output_raw_concatenation_invariant():
    out = ModelOutput(answer="b", reasoning="a", raw="<think>a</think>b")
    assert out.raw == "<think>" + out.reasoning + "</think>" + out.answer
