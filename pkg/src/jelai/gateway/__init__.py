"""Outbound LLM access: one chat-completions dialect, a deterministic mock, and failure absorption."""

from jelai.gateway.client import (
    DEFAULT_FALLBACK_TEXT,
    CompletionResult,
    ConfigError,
    LLMGateway,
    ModelParams,
)
from jelai.gateway.mock import mock_complete, mock_stream

__all__ = [
    "DEFAULT_FALLBACK_TEXT",
    "CompletionResult",
    "ConfigError",
    "LLMGateway",
    "ModelParams",
    "mock_complete",
    "mock_stream",
]
