"""YAML configuration: endpoint definitions, retrieval settings, paths.

API keys never live in the file; endpoint entries name an environment
variable instead. The ``mock-*`` endpoint kinds run the deterministic
scripted models in-process so the whole pipeline works offline.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from . import scripted
from .budget import HttpCompletionEndpoint
from .embeddings import EmbeddingProvider, HashingEmbeddingProvider, HttpEmbeddingProvider
from .gateway import ChatEndpoint, EndpointConfig, HttpChatEndpoint
from .orchestrator import OrchestratorConfig, TrimPolicy
from .retrieval import RetrievalConfig


class ConfigError(ValueError):
    """Raised for unusable configuration files."""


_MOCK_CHAT_KINDS = {
    "mock-summariser": scripted.MockSummariserEndpoint,
    "mock-generator": scripted.MockQueryGeneratorEndpoint,
    "mock-teacher": scripted.MockTeacherEndpoint,
    "mock-tool-predictor": scripted.MockToolPredictorEndpoint,
    "mock-agent": scripted.MockAgentEndpoint,
}


@dataclass
class AppConfig:
    endpoints: dict[str, dict[str, Any]] = field(default_factory=dict)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    embedding: dict[str, Any] = field(default_factory=lambda: {"kind": "hashing", "dimension": 768})
    trim: TrimPolicy = field(default_factory=lambda: TrimPolicy(max_history_tokens=4096))
    paths: dict[str, str] = field(default_factory=dict)
    server: dict[str, Any] = field(default_factory=lambda: {"host": "127.0.0.1", "port": 8000})

    def orchestrator_config(self) -> OrchestratorConfig:
        return OrchestratorConfig(k=self.retrieval.k, trim=self.trim)

    def path(self, key: str) -> Path:
        try:
            return Path(self.paths[key])
        except KeyError:
            raise ConfigError(f"config paths section is missing {key!r}") from None


def load_config(path: str | Path) -> AppConfig:
    raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config root must be a mapping")

    retrieval_raw = raw.get("retrieval", {})
    retrieval = RetrievalConfig(
        mode=retrieval_raw.get("mode", "full_pages"),
        metric=retrieval_raw.get("metric", "l2"),
        k=int(retrieval_raw.get("k", 5)),
        max_chunk_tokens=int(retrieval_raw.get("max_chunk_tokens", 384)),
        overlap_tokens=int(retrieval_raw.get("overlap_tokens", 50)),
    )
    retrieval.validate()

    trim_raw = raw.get("trim", {})
    trim = TrimPolicy(max_history_tokens=int(trim_raw.get("max_history_tokens", 4096)))

    return AppConfig(
        endpoints=raw.get("endpoints", {}),
        retrieval=retrieval,
        embedding=raw.get("embedding", {"kind": "hashing", "dimension": 768}),
        trim=trim,
        paths={k: str(v) for k, v in raw.get("paths", {}).items()},
        server=raw.get("server", {"host": "127.0.0.1", "port": 8000}),
    )


def make_chat_endpoint(config: AppConfig, name: str) -> ChatEndpoint:
    entry = config.endpoints.get(name)
    if entry is None:
        raise ConfigError(f"config endpoints section is missing {name!r}")
    kind = entry.get("kind", "openai")
    if kind in _MOCK_CHAT_KINDS:
        return _MOCK_CHAT_KINDS[kind]()
    if kind == "openai":
        return HttpChatEndpoint(
            EndpointConfig(
                kind=kind,
                base_url=entry.get("base_url", ""),
                model=entry.get("model", ""),
                api_key_env=entry.get("api_key_env", ""),
                capabilities=tuple(entry.get("capabilities", ["chat"])),
                decode_defaults=entry.get("decode_defaults", {}),
                timeout=float(entry.get("timeout", 120.0)),
            )
        )
    raise ConfigError(f"endpoint {name!r} has unknown kind {kind!r}")


def make_completion_endpoint(config: AppConfig, name: str) -> HttpCompletionEndpoint:
    entry = config.endpoints.get(name)
    if entry is None:
        raise ConfigError(f"config endpoints section is missing {name!r}")
    capabilities = tuple(entry.get("capabilities", []))
    if "completion" not in capabilities:
        raise ConfigError(
            f"endpoint {name!r} does not declare the completion capability "
            "required for budget forcing"
        )
    return HttpCompletionEndpoint(
        EndpointConfig(
            kind=entry.get("kind", "openai"),
            base_url=entry.get("base_url", ""),
            model=entry.get("model", ""),
            api_key_env=entry.get("api_key_env", ""),
            capabilities=capabilities,
            decode_defaults=entry.get("decode_defaults", {}),
            timeout=float(entry.get("timeout", 120.0)),
        )
    )


def make_embedding_provider(config: AppConfig) -> EmbeddingProvider:
    entry = config.embedding
    kind = entry.get("kind", "hashing")
    dimension = int(entry.get("dimension", 768))
    if kind == "hashing":
        return HashingEmbeddingProvider(dimension=dimension)
    if kind == "http":
        return HttpEmbeddingProvider(
            base_url=entry.get("base_url", ""),
            dimension=dimension,
            timeout=float(entry.get("timeout", 120.0)),
        )
    raise ConfigError(f"unknown embedding provider kind {kind!r}")
