"""File-backed thread store with per-thread turn locks.

Threads keep their complete display history; model calls see a trimmed window
computed on the fly, so nothing a user said ever disappears from the UI. The
snapshot is a single JSON document written atomically (temp file + rename)
after every mutation.
"""
from __future__ import annotations

import json
import logging
import os
import tempfile
import threading
from pathlib import Path

from .gateway import ChatMessage
from .orchestrator import ConversationThread, new_thread
from .synth import Demographics

logger = logging.getLogger(__name__)


class StoreError(RuntimeError):
    """Raised for unknown threads or snapshot corruption."""


def _message_to_dict(message: ChatMessage) -> dict:
    obj: dict = {"role": message.role, "content": message.content}
    if message.reasoning is not None:
        obj["reasoning"] = message.reasoning
    if message.retrieved_titles is not None:
        obj["retrieved_titles"] = message.retrieved_titles
    return obj


def _message_from_dict(obj: dict) -> ChatMessage:
    return ChatMessage(
        role=obj["role"],
        content=obj["content"],
        reasoning=obj.get("reasoning"),
        retrieved_titles=obj.get("retrieved_titles"),
    )


def _thread_to_dict(thread: ConversationThread) -> dict:
    return {
        "thread_id": thread.thread_id,
        "created_at": thread.created_at,
        "demographics": (
            thread.demographics.to_json_dict() if thread.demographics else None
        ),
        "messages": [_message_to_dict(m) for m in thread.messages],
    }


def _thread_from_dict(obj: dict) -> ConversationThread:
    demographics = None
    if obj.get("demographics"):
        demo = obj["demographics"]
        demographics = Demographics(
            age=str(demo["age"]),
            sex=demo["sex"],
            occupation=demo["occupation"],
            social_support=demo["social_support"],
            medical_history=demo["medical_history"],
        )
    return ConversationThread(
        thread_id=obj["thread_id"],
        messages=[_message_from_dict(m) for m in obj.get("messages", [])],
        demographics=demographics,
        created_at=obj.get("created_at", ""),
    )


class ThreadStore:
    def __init__(self, path: str | Path | None = None):
        self._path = Path(path) if path else None
        self._threads: dict[str, ConversationThread] = {}
        self._lock = threading.RLock()
        self._turn_locks: dict[str, threading.Lock] = {}
        if self._path and self._path.exists():
            self._load()

    def _load(self) -> None:
        assert self._path is not None
        try:
            snapshot = json.loads(self._path.read_text(encoding="utf-8"))
            threads = snapshot["threads"]
        except (json.JSONDecodeError, KeyError, UnicodeDecodeError) as exc:
            raise StoreError(f"corrupt thread snapshot {self._path}: {exc}") from exc
        for thread_id, obj in threads.items():
            self._threads[thread_id] = _thread_from_dict(obj)
        logger.info("loaded %d thread(s) from %s", len(self._threads), self._path)

    def save(self) -> None:
        """Write the snapshot atomically; a crash never leaves a torn file."""
        if self._path is None:
            return
        snapshot = {
            "threads": {
                thread_id: _thread_to_dict(thread)
                for thread_id, thread in sorted(self._threads.items())
            }
        }
        payload = json.dumps(snapshot, indent=2, sort_keys=True, ensure_ascii=False)
        self._path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp_name = tempfile.mkstemp(
            dir=self._path.parent, prefix=self._path.name, suffix=".tmp"
        )
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as handle:
                handle.write(payload)
            os.replace(tmp_name, self._path)
        except BaseException:
            if os.path.exists(tmp_name):
                os.unlink(tmp_name)
            raise

    def create(self, demographics: Demographics | None = None) -> ConversationThread:
        with self._lock:
            thread = new_thread(demographics)
            self._threads[thread.thread_id] = thread
            self.save()
            return thread.copy()

    def get(self, thread_id: str) -> ConversationThread:
        with self._lock:
            thread = self._threads.get(thread_id)
            if thread is None:
                raise StoreError(f"unknown thread {thread_id!r}")
            return thread.copy()

    def list_threads(self) -> list[ConversationThread]:
        with self._lock:
            return [t.copy() for t in self._threads.values()]

    def update(self, thread: ConversationThread) -> None:
        with self._lock:
            if thread.thread_id not in self._threads:
                raise StoreError(f"unknown thread {thread.thread_id!r}")
            self._threads[thread.thread_id] = thread.copy()
            self.save()

    def turn_lock(self, thread_id: str) -> threading.Lock:
        """Per-thread mutual exclusion for message turns (acquire non-blocking;
        a held lock means a turn is already in flight)."""
        with self._lock:
            if thread_id not in self._threads:
                raise StoreError(f"unknown thread {thread_id!r}")
            return self._turn_locks.setdefault(thread_id, threading.Lock())
