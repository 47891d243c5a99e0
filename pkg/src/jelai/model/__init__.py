"""Canonical domain types, the versioned telemetry/chat schema, validation, and stable hashing."""

from jelai.model.canonical import (
    EventHash,
    canonical_json,
    canonicalize_and_hash,
    format_timestamp,
    parse_timestamp,
    stable_digest,
)
from jelai.model.events import (
    CHAT_ROLES,
    EVENT_TYPES,
    SCHEMA_VERSION,
    CellEditPayload,
    CellExecutePayload,
    ChatMessage,
    NotebookOpenPayload,
    NotebookSavePayload,
    SchemaViolation,
    TelemetryEvent,
    UiActionPayload,
    UnknownEventType,
    validate_chat_message,
    validate_event,
)

__all__ = [
    "CHAT_ROLES",
    "EVENT_TYPES",
    "SCHEMA_VERSION",
    "CellEditPayload",
    "CellExecutePayload",
    "ChatMessage",
    "EventHash",
    "NotebookOpenPayload",
    "NotebookSavePayload",
    "SchemaViolation",
    "TelemetryEvent",
    "UiActionPayload",
    "UnknownEventType",
    "canonical_json",
    "canonicalize_and_hash",
    "format_timestamp",
    "parse_timestamp",
    "stable_digest",
    "validate_chat_message",
    "validate_event",
]
