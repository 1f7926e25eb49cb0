"""REST backend for the chat frontend.

Every response uses the same envelope: {"ok": true, "data": ...} on success,
{"ok": false, "error": {"code", "message"}} otherwise. Error codes are
not_found, bad_request, upstream_failure and conflict. There is no
authentication; `make_app` is the hook point where a deployment would wrap
routes with an auth dependency. Responses never carry credentials or
endpoint configuration.
"""
from __future__ import annotations

import logging
from typing import Any

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .gateway import ChatEndpoint, EndpointError
from .orchestrator import ConversationThread, OrchestratorConfig, run_rag_turn
from .retrieval import Retriever
from .store import StoreError, ThreadStore
from .synth import Demographics

logger = logging.getLogger(__name__)

_STATUS = {
    "not_found": 404,
    "bad_request": 400,
    "conflict": 409,
    "upstream_failure": 502,
}


def _ok(data: Any) -> JSONResponse:
    return JSONResponse({"ok": True, "data": data})


def _err(code: str, message: str) -> JSONResponse:
    return JSONResponse(
        {"ok": False, "error": {"code": code, "message": message}},
        status_code=_STATUS[code],
    )


class DemographicsBody(BaseModel):
    age: str
    sex: str
    occupation: str
    social_support: str
    medical_history: str

    def to_demographics(self) -> Demographics:
        return Demographics(
            age=self.age,
            sex=self.sex,
            occupation=self.occupation,
            social_support=self.social_support,
            medical_history=self.medical_history,
        )


class CreateThreadBody(BaseModel):
    demographics: DemographicsBody | None = None


class PostMessageBody(BaseModel):
    text: str


def _thread_view(thread: ConversationThread) -> dict:
    return {
        "thread_id": thread.thread_id,
        "created_at": thread.created_at,
        "demographics": (
            thread.demographics.to_json_dict() if thread.demographics else None
        ),
        "messages": [
            {
                "role": m.role,
                "content": m.content,
                "reasoning": m.reasoning,
                "retrieved_titles": m.retrieved_titles,
            }
            for m in thread.messages
        ],
    }


def _thread_summary(thread: ConversationThread) -> dict:
    first_user = next((m.content for m in thread.messages if m.role == "user"), "")
    return {
        "thread_id": thread.thread_id,
        "created_at": thread.created_at,
        "message_count": len(thread.messages),
        "preview": first_user[:120],
    }


def make_app(
    store: ThreadStore,
    agent_endpoint: ChatEndpoint,
    reasoner_endpoint: ChatEndpoint,
    retriever: Retriever,
    config: OrchestratorConfig | None = None,
) -> FastAPI:
    app = FastAPI(title="leanrag", docs_url=None, redoc_url=None)
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    turn_config = config or OrchestratorConfig()

    @app.exception_handler(Exception)
    async def unhandled(request: Request, exc: Exception) -> JSONResponse:
        logger.exception("unhandled error on %s", request.url.path)
        return _err("upstream_failure", "internal error")

    @app.post("/threads")
    def create_thread(body: CreateThreadBody | None = None) -> JSONResponse:
        demographics = None
        if body and body.demographics:
            demographics = body.demographics.to_demographics()
        thread = store.create(demographics)
        return _ok(_thread_view(thread))

    @app.get("/threads")
    def list_threads() -> JSONResponse:
        threads = sorted(store.list_threads(), key=lambda t: t.created_at)
        return _ok({"threads": [_thread_summary(t) for t in threads]})

    @app.get("/threads/{thread_id}")
    def get_thread(thread_id: str) -> JSONResponse:
        try:
            thread = store.get(thread_id)
        except StoreError:
            return _err("not_found", f"no thread {thread_id}")
        return _ok(_thread_view(thread))

    @app.put("/threads/{thread_id}/demographics")
    def put_demographics(thread_id: str, body: DemographicsBody) -> JSONResponse:
        try:
            thread = store.get(thread_id)
        except StoreError:
            return _err("not_found", f"no thread {thread_id}")
        thread.set_demographics(body.to_demographics())
        store.update(thread)
        return _ok(_thread_view(thread))

    @app.post("/threads/{thread_id}/messages")
    def post_message(thread_id: str, body: PostMessageBody) -> JSONResponse:
        if not body.text.strip():
            return _err("bad_request", "message text must be non-empty")
        try:
            lock = store.turn_lock(thread_id)
        except StoreError:
            return _err("not_found", f"no thread {thread_id}")
        if not lock.acquire(blocking=False):
            return _err("conflict", "a turn is already in flight on this thread")
        try:
            thread = store.get(thread_id)
            reply, updated = run_rag_turn(
                thread,
                body.text,
                agent_endpoint,
                reasoner_endpoint,
                retriever,
                turn_config,
            )
            store.update(updated)
        except EndpointError as exc:
            logger.warning("turn failed for thread %s: %s", thread_id, exc)
            return _err("upstream_failure", str(exc))
        finally:
            lock.release()
        last = updated.messages[-1]
        return _ok(
            {
                "answer": last.content,
                "reasoning": last.reasoning,
                # None means the turn never retrieved; [] means it retrieved nothing.
                "retrieved_titles": last.retrieved_titles,
            }
        )

    return app
