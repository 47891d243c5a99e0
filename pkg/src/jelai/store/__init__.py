"""Durable, append-only, per-session persistence for telemetry and chat."""

from jelai.store.eventlog import (
    JsonlAppender,
    LogRecord,
    RangeOutOfBounds,
    SessionInfo,
    SessionLogStore,
    StorageFailure,
    UnknownSession,
)

__all__ = [
    "JsonlAppender",
    "LogRecord",
    "RangeOutOfBounds",
    "SessionInfo",
    "SessionLogStore",
    "StorageFailure",
    "UnknownSession",
]
