"""Pydantic request/response models for the wire protocol."""

from __future__ import annotations

from typing import Any

from pydantic import BaseModel, Field


class TelemetryBatch(BaseModel):
    events: list[Any] = Field(default_factory=list)


class Rejection(BaseModel):
    index: int
    reason: str


class AckReport(BaseModel):
    accepted: int
    rejected: list[Rejection]


class ChatRequest(BaseModel):
    session_id: str
    message_id: str
    text: str
    notebook_id: str | None = None
    parent_message_id: str | None = None


class ContextMeta(BaseModel):
    bundle_hash: str
    truncation_applied: bool
    total_chars: int
    cells: int
    history: int
    label: str
    flags: list[str]
    has_error: bool
    finish_reason: str
    backend_service_ms: float | None = None


class ChatResponse(BaseModel):
    message_id: str
    text: str
    condition_id: str
    created_at: str
    context_meta: ContextMeta


class Health(BaseModel):
    live: bool
    ready: bool
    reason: str | None = None


class ReloadResult(BaseModel):
    reloaded: bool
    experiments: int
