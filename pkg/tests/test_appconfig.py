"""Config file loading and endpoint/provider factories."""
from __future__ import annotations

import pytest

from leanrag.appconfig import (
    AppConfig,
    ConfigError,
    load_config,
    make_chat_endpoint,
    make_completion_endpoint,
    make_embedding_provider,
)
from leanrag.budget import HttpCompletionEndpoint
from leanrag.embeddings import HashingEmbeddingProvider, HttpEmbeddingProvider
from leanrag.gateway import HttpChatEndpoint
from leanrag.scripted import MockAgentEndpoint, MockSummariserEndpoint

GOOD = """
endpoints:
  summariser:
    kind: mock-summariser
  agent:
    kind: mock-agent
  reasoner:
    kind: openai
    base_url: http://localhost:9000/v1
    model: some-model
    api_key_env: MODEL_API_KEY
    capabilities: [chat, completion]
retrieval:
  mode: summaries
  metric: l2
  k: 7
embedding:
  kind: hashing
  dimension: 128
trim:
  max_history_tokens: 2048
paths:
  corpus: /tmp/x/corpus.jsonl
  index: /tmp/x/index.bin
server:
  host: 0.0.0.0
  port: 9001
"""


@pytest.fixture
def config(tmp_path) -> AppConfig:
    path = tmp_path / "config.yaml"
    path.write_text(GOOD)
    return load_config(path)


def test_load_config_fields(config):
    assert config.retrieval.mode == "summaries"
    assert config.retrieval.k == 7
    assert config.trim.max_history_tokens == 2048
    assert config.embedding["dimension"] == 128
    assert str(config.path("corpus")).endswith("corpus.jsonl")
    assert config.server["port"] == 9001


def test_orchestrator_config_carries_trim(config):
    orch = config.orchestrator_config()
    assert orch.k == 7
    assert orch.trim.max_history_tokens == 2048


def test_unknown_path_key_errors(config):
    with pytest.raises(ConfigError):
        config.path("nope")


def test_make_chat_endpoint_mock_kinds(config):
    assert isinstance(make_chat_endpoint(config, "summariser"), MockSummariserEndpoint)
    assert isinstance(make_chat_endpoint(config, "agent"), MockAgentEndpoint)


def test_make_chat_endpoint_openai(config):
    endpoint = make_chat_endpoint(config, "reasoner")
    assert isinstance(endpoint, HttpChatEndpoint)


def test_make_chat_endpoint_unknown_name(config):
    with pytest.raises(ConfigError):
        make_chat_endpoint(config, "missing")


def test_make_completion_endpoint_requires_capability(config):
    endpoint = make_completion_endpoint(config, "reasoner")
    assert isinstance(endpoint, HttpCompletionEndpoint)
    with pytest.raises(ConfigError):
        make_completion_endpoint(config, "summariser")


def test_make_embedding_provider_kinds(config, tmp_path):
    provider = make_embedding_provider(config)
    assert isinstance(provider, HashingEmbeddingProvider)
    assert provider.dimension == 128

    http_cfg = tmp_path / "http.yaml"
    http_cfg.write_text(
        GOOD.replace("kind: hashing", "kind: http\n  base_url: http://localhost:9100")
    )
    provider = make_embedding_provider(load_config(http_cfg))
    assert isinstance(provider, HttpEmbeddingProvider)


def test_invalid_retrieval_rejected(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text(GOOD.replace("mode: summaries", "mode: nonsense"))
    with pytest.raises(Exception):
        load_config(path)


def test_non_mapping_config_rejected(tmp_path):
    path = tmp_path / "list.yaml"
    path.write_text("- just\n- a\n- list\n")
    with pytest.raises(ConfigError):
        load_config(path)
