"""Multi-turn conversational flow: tool decision, retrieval turn, trimming.

Each turn runs two model calls at most: an agent decides whether to consult
the knowledge base (rewriting the query from the conversation history), then
a reasoner answers with the retrieved context placed in the current turn's
system prompt. Context never enters user messages and is never persisted;
only the answer and its display metadata are appended to the thread.
"""
from __future__ import annotations

import logging
import uuid
import warnings
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from typing import Sequence

from . import gateway
from .gateway import ChatEndpoint, ChatMessage, ModelOutput, ToolParam, ToolSchema
from .retrieval import Retriever, render_context_block
from .synth import Demographics
from .tokenization import TokenCounter, whitespace_token_count

logger = logging.getLogger(__name__)

RAG_SYSTEM_PROMPT = """You are a helpful clinical AI assistant deployed in the United Kingdom

You will be given a description of some of the users symptoms and some retieved context from NHS condition web pages which provide information about various medical conditions that could be relevant to those symptoms.

Use the description of the users symptoms, the following retrieved context and similarity scores for each piece of context (a lower similarity score means the higher similarity to the patient's query) to work out what condition(s) the user is suffering from and provide a recommendation of what they should do next.
Never state or refer to the similarity scores to the user.

Ask follow up questions to the user to gather more information or for further details about their symptoms to narrow down the potential conditions.
Focus on the most serious conditions first.

In your response, reply in English and always refer to the user in the second person.

If you don't know the answer to a question, just say that you don't know.
If the retrieved context is not relevant to the patient's query, you should also say that you don't know.

Retrieved context:
{context}

This is a summary of their demographics:
{demographics}"""

AGENT_SYSTEM_PROMPT = """You are a helpful clinical AI assistant deployed in the United Kingdom

You are provided a tool that can retrieve context from a knowledge base taken from NHS condition web pages which provide information about various medical conditions.
You should always use the tool to find relevant information to answer the patient's question rather than relying on your own knowledge.
If you are confused or unsure about the user's question, you should use the tool to find relevant information or ask the user for more information or ask further details about their symptoms.
For follow up questions from the user, you should always use the tool to find new relevant information to answer the user's question given the conversation history.
You should only not use the tool in very simple messages that do not require any context like "Hello" or "Thank you", or when the user is just writing something random.

You can also ask the user for more information or ask further details about their symptoms.
If you are going to reply to the user, always conclude with a question to keep the conversation going to help the user or ask for more details about their symptoms.
In your response, only reply in English and always refer to the user in the second person.

Decide to use the tool at the start. Do not use the tool after you have already started your response."""

RETRIEVER_TOOL = ToolSchema(
    name="retrieve_condition_context",
    description=(
        "Search the knowledge base of condition pages for information relevant "
        "to the patient's symptoms. Rewrite the query from the conversation so "
        "it stands alone."
    ),
    parameters=[ToolParam("query", "string", "Standalone search query.")],
)

FALLBACK_REPLY = (
    "I'm sorry, I wasn't able to process that. Could you describe your "
    "symptoms in a bit more detail?"
)

NO_DEMOGRAPHICS = "Not provided"


class OrchestratorError(RuntimeError):
    """Raised for invalid thread states or turn failures."""


class TrimWarning(UserWarning):
    """The system message alone exceeds the history budget."""


@dataclass
class TrimPolicy:
    max_history_tokens: int
    protect_system: bool = True

    def validate(self) -> None:
        if self.max_history_tokens < 0:
            raise ValueError("max_history_tokens must be >= 0")


def trim_history(
    messages: Sequence[ChatMessage],
    policy: TrimPolicy,
    token_counter: TokenCounter = whitespace_token_count,
) -> list[ChatMessage]:
    """Evict oldest non-system messages until the total fits the budget.

    The system message survives even when it alone exceeds the budget (with a
    warning). Order is preserved and the operation is idempotent.
    """
    policy.validate()
    kept = list(messages)
    def total() -> int:
        return sum(token_counter(m.content) for m in kept)

    while total() > policy.max_history_tokens:
        evictable = [
            i for i, m in enumerate(kept)
            if not (policy.protect_system and m.role == "system")
        ]
        if not evictable:
            warnings.warn(
                "system message alone exceeds the history token budget",
                TrimWarning,
                stacklevel=2,
            )
            break
        kept.pop(evictable[0])
    return kept


@dataclass
class ConversationThread:
    thread_id: str
    messages: list[ChatMessage] = field(default_factory=list)
    demographics: Demographics | None = None
    created_at: str = ""

    def __post_init__(self) -> None:
        self._check_system_invariant()

    def _check_system_invariant(self) -> None:
        system_positions = [i for i, m in enumerate(self.messages) if m.role == "system"]
        if len(system_positions) > 1 or (system_positions and system_positions[0] != 0):
            raise OrchestratorError(
                "a thread holds at most one system message, and it comes first"
            )

    def copy(self) -> "ConversationThread":
        return ConversationThread(
            thread_id=self.thread_id,
            messages=list(self.messages),
            demographics=self.demographics,
            created_at=self.created_at,
        )

    def dialogue(self) -> list[ChatMessage]:
        return [m for m in self.messages if m.role != "system"]

    def demographics_block(self) -> str:
        if self.demographics is None:
            return NO_DEMOGRAPHICS
        return self.demographics.to_prompt_block()

    def set_demographics(self, demographics: Demographics) -> None:
        """Set or replace demographics and the leading system block."""
        self.demographics = demographics
        block = ChatMessage(
            "system", f"This is a summary of their demographics:\n{demographics.to_prompt_block()}"
        )
        if self.messages and self.messages[0].role == "system":
            self.messages[0] = block
        else:
            self.messages.insert(0, block)


def new_thread(
    demographics: Demographics | None = None, thread_id: str | None = None
) -> ConversationThread:
    thread = ConversationThread(
        thread_id=thread_id or uuid.uuid4().hex,
        created_at=datetime.now(timezone.utc).isoformat(),
    )
    if demographics is not None:
        thread.set_demographics(demographics)
    return thread


@dataclass
class AgentDecision:
    kind: str  # "retrieve" | "direct_reply"
    query: str | None = None
    text: str | None = None

    @classmethod
    def retrieve(cls, query: str) -> "AgentDecision":
        if not query:
            raise OrchestratorError("retrieve decisions need a non-empty query")
        return cls(kind="retrieve", query=query)

    @classmethod
    def direct_reply(cls, text: str) -> "AgentDecision":
        return cls(kind="direct_reply", text=text)


@dataclass
class OrchestratorConfig:
    k: int = 5
    trim: TrimPolicy = field(default_factory=lambda: TrimPolicy(max_history_tokens=4096))
    token_counter: TokenCounter = whitespace_token_count


def _interpret_agent_output(
    output: ModelOutput, tool: ToolSchema
) -> tuple[AgentDecision | None, gateway.ToolCall | None, list[str]]:
    """Map one agent response to a decision, or report what was wrong."""
    if not output.tool_calls:
        return AgentDecision.direct_reply(output.answer or FALLBACK_REPLY), None, []
    call = output.tool_calls[0]
    if call.name != tool.name:
        return None, call, [f"unknown tool '{call.name}'"]
    problems = tool.validate_call(call.arguments)
    if not problems:
        query = str(call.arguments.get("query", "")).strip()
        if query:
            return AgentDecision.retrieve(query), call, []
        problems = ["argument 'query' must be a non-empty string"]
    return None, call, problems


def decide_action(
    thread: ConversationThread,
    agent_endpoint: ChatEndpoint,
    retriever_tool: ToolSchema = RETRIEVER_TOOL,
    *,
    config: OrchestratorConfig | None = None,
) -> AgentDecision:
    """Ask the agent whether to retrieve (and with what standalone query).

    A malformed tool call gets one structured-error retry; if the retry is
    still unusable the turn falls back to a direct reply rather than failing.
    """
    config = config or OrchestratorConfig()
    history = trim_history(thread.dialogue(), config.trim, config.token_counter)
    messages = [gateway.system(AGENT_SYSTEM_PROMPT), *history]
    output = gateway.complete(agent_endpoint, messages, tools=[retriever_tool])
    decision, call, problems = _interpret_agent_output(output, retriever_tool)
    if decision is not None:
        return decision

    logger.warning("malformed agent tool call (%s); retrying once", problems)
    retry_messages = [
        *messages,
        gateway.assistant(output.answer or "", tool_calls=[call]),
        gateway.tool_error_message(call, problems),
    ]
    retry = gateway.complete(agent_endpoint, retry_messages, tools=[retriever_tool])
    decision, _, retry_problems = _interpret_agent_output(retry, retriever_tool)
    if decision is not None:
        return decision
    logger.warning("agent retry still malformed (%s); replying directly", retry_problems)
    return AgentDecision.direct_reply(retry.answer or FALLBACK_REPLY)


def run_rag_turn(
    thread: ConversationThread,
    user_text: str,
    agent_endpoint: ChatEndpoint,
    reasoner_endpoint: ChatEndpoint,
    retriever: Retriever,
    config: OrchestratorConfig | None = None,
) -> tuple[ModelOutput, ConversationThread]:
    """Run one turn and return (reply, updated thread).

    The input thread is never mutated, so an endpoint failure mid-turn leaves
    it untouched. Retrieval happens only when the agent asks for it; a fresh
    system prompt carries the context for this turn only and replaces any
    earlier one in the outgoing call.
    """
    if not user_text.strip():
        raise OrchestratorError("user message must be non-empty")
    config = config or OrchestratorConfig()
    work = thread.copy()
    work.messages.append(gateway.user(user_text))

    decision = decide_action(work, agent_endpoint, config=config)
    if decision.kind == "direct_reply":
        reply = ModelOutput(answer=decision.text or FALLBACK_REPLY, raw=decision.text or "")
        work.messages.append(gateway.assistant(reply.answer))
        return reply, work

    results = retriever.retrieve(decision.query or "", config.k)
    context_block = render_context_block(results) or "No relevant context was found."
    system_prompt = (
        RAG_SYSTEM_PROMPT
        .replace("{context}", context_block)
        .replace("{demographics}", work.demographics_block())
    )
    history = trim_history(work.dialogue(), config.trim, config.token_counter)
    output = gateway.complete(
        reasoner_endpoint, [gateway.system(system_prompt), *history]
    )
    # Delimiter parsing keeps surrounding whitespace; the stored reply should not.
    output = replace(output, answer=output.answer.strip())
    work.messages.append(
        gateway.assistant(
            output.answer or FALLBACK_REPLY,
            reasoning=output.reasoning,
            retrieved_titles=[r.doc_title for r in results],
        )
    )
    return output, work
