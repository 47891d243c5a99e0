"""Telemetry and chat schema: typed events, payload variants, and total validation.

Every incoming document either yields a typed value or a rejection naming every
violated field — validation never raises anything except the two error types
below, no matter how malformed the input is.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime
from typing import Any

from jelai.model.canonical import format_timestamp, parse_timestamp

SCHEMA_VERSION = "jelai.telemetry.v1"

EVENT_TYPES = (
    "cell_edit",
    "cell_execute",
    "notebook_open",
    "notebook_save",
    "ui_action",
)

CHAT_ROLES = ("student", "tutor", "system")

HELP_SEEKING_LABELS = ("instrumental", "executive", "other")


class UnknownEventType(Exception):
    """Raised for a syntactically plausible event whose event_type is not in the schema."""

    def __init__(self, event_type: object) -> None:
        self.event_type = event_type
        super().__init__(f"unknown event_type: {event_type!r}")


class SchemaViolation(Exception):
    """Raised when a document fails validation; carries every violated field."""

    def __init__(self, violations: list[tuple[str, str]]) -> None:
        self.violations = violations
        detail = "; ".join(f"{f}: {r}" for f, r in violations)
        super().__init__(detail or "schema violation")

    @classmethod
    def single(cls, fieldname: str, reason: str) -> "SchemaViolation":
        return cls([(fieldname, reason)])


@dataclass(frozen=True, slots=True)
class CellExecutePayload:
    cell_id: str
    cell_index: int
    source: str
    success: bool
    execution_count: int
    error_name: str | None = None
    error_traceback: str | None = None

    def to_wire(self) -> dict[str, Any]:
        doc: dict[str, Any] = {
            "cell_id": self.cell_id,
            "cell_index": self.cell_index,
            "source": self.source,
            "success": self.success,
            "execution_count": self.execution_count,
        }
        if self.error_name is not None:
            doc["error_name"] = self.error_name
        if self.error_traceback is not None:
            doc["error_traceback"] = self.error_traceback
        return doc


@dataclass(frozen=True, slots=True)
class CellEditPayload:
    cell_id: str
    chars_added: int
    chars_removed: int
    source_snapshot: str | None = None

    def to_wire(self) -> dict[str, Any]:
        doc: dict[str, Any] = {
            "cell_id": self.cell_id,
            "chars_added": self.chars_added,
            "chars_removed": self.chars_removed,
        }
        if self.source_snapshot is not None:
            doc["source_snapshot"] = self.source_snapshot
        return doc


@dataclass(frozen=True, slots=True)
class NotebookOpenPayload:
    notebook_id: str

    def to_wire(self) -> dict[str, Any]:
        return {"notebook_id": self.notebook_id}


@dataclass(frozen=True, slots=True)
class NotebookSavePayload:
    notebook_id: str

    def to_wire(self) -> dict[str, Any]:
        return {"notebook_id": self.notebook_id}


@dataclass(frozen=True, slots=True)
class UiActionPayload:
    action_name: str
    detail: dict[str, Any] | None = None

    def to_wire(self) -> dict[str, Any]:
        doc: dict[str, Any] = {"action_name": self.action_name}
        if self.detail is not None:
            doc["detail"] = self.detail
        return doc


Payload = (
    CellExecutePayload
    | CellEditPayload
    | NotebookOpenPayload
    | NotebookSavePayload
    | UiActionPayload
)


@dataclass(frozen=True, slots=True)
class TelemetryEvent:
    """One timestamped learner action — the unit of ingestion."""

    session_id: str
    user_id: str
    seq: int
    event_time: datetime
    event_type: str
    payload: Payload
    schema_version: str = SCHEMA_VERSION

    def to_wire(self) -> dict[str, Any]:
        return {
            "schema_version": self.schema_version,
            "session_id": self.session_id,
            "user_id": self.user_id,
            "seq": self.seq,
            "event_time": format_timestamp(self.event_time),
            "event_type": self.event_type,
            "payload": self.payload.to_wire(),
        }


@dataclass(frozen=True, slots=True)
class ChatMessage:
    """One chat turn. `condition_id` is stamped by the server on tutor replies;
    `label` is stamped on student messages at ingestion time so reports never
    re-run a different rule set than the live one."""

    session_id: str
    message_id: str
    role: str
    text: str
    sent_at: datetime
    parent_message_id: str | None = None
    condition_id: str | None = None
    label: str | None = None
    user_id: str | None = None
    notebook_id: str | None = None
    context_meta: dict[str, Any] | None = field(default=None)

    def to_wire(self) -> dict[str, Any]:
        doc: dict[str, Any] = {
            "session_id": self.session_id,
            "message_id": self.message_id,
            "role": self.role,
            "text": self.text,
            "sent_at": format_timestamp(self.sent_at),
        }
        if self.parent_message_id is not None:
            doc["parent_message_id"] = self.parent_message_id
        if self.condition_id is not None:
            doc["condition_id"] = self.condition_id
        if self.label is not None:
            doc["label"] = self.label
        if self.user_id is not None:
            doc["user_id"] = self.user_id
        if self.notebook_id is not None:
            doc["notebook_id"] = self.notebook_id
        if self.context_meta is not None:
            doc["context_meta"] = self.context_meta
        return doc


def _want_str(doc: dict, key: str, errors: list, *, required: bool = True, nonempty: bool = True) -> str | None:
    if key not in doc:
        if required:
            errors.append((key, "missing"))
        return None
    value = doc[key]
    if not isinstance(value, str):
        errors.append((key, f"expected string, got {type(value).__name__}"))
        return None
    if nonempty and not value:
        errors.append((key, "must be nonempty"))
        return None
    return value


def _want_int(doc: dict, key: str, errors: list, *, required: bool = True, minimum: int | None = None) -> int | None:
    if key not in doc:
        if required:
            errors.append((key, "missing"))
        return None
    value = doc[key]
    if isinstance(value, bool) or not isinstance(value, int):
        errors.append((key, f"expected integer, got {type(value).__name__}"))
        return None
    if minimum is not None and value < minimum:
        errors.append((key, f"must be >= {minimum}, got {value}"))
        return None
    return value


def _want_bool(doc: dict, key: str, errors: list) -> bool | None:
    if key not in doc:
        errors.append((key, "missing"))
        return None
    value = doc[key]
    if not isinstance(value, bool):
        errors.append((key, f"expected boolean, got {type(value).__name__}"))
        return None
    return value


def _want_timestamp(doc: dict, key: str, errors: list) -> datetime | None:
    raw = _want_str(doc, key, errors)
    if raw is None:
        return None
    try:
        return parse_timestamp(raw)
    except ValueError as exc:
        errors.append((key, str(exc)))
        return None


def _prefixed(errors: list, prefix: str) -> list:
    # Proxy list that rewrites field names as "<prefix>.<field>".
    class _Proxy(list):
        def append(self, item):  # type: ignore[override]
            errors.append((f"{prefix}.{item[0]}", item[1]))

    return _Proxy()


def _payload_from(doc: Any, event_type: str, errors: list) -> Payload | None:
    if not isinstance(doc, dict):
        errors.append(("payload", f"expected object, got {type(doc).__name__}"))
        return None
    sub = _prefixed(errors, "payload")
    before = len(errors)
    if event_type == "cell_execute":
        cell_id = _want_str(doc, "cell_id", sub)
        cell_index = _want_int(doc, "cell_index", sub, minimum=0)
        source = _want_str(doc, "source", sub, nonempty=False)
        success = _want_bool(doc, "success", sub)
        execution_count = _want_int(doc, "execution_count", sub, minimum=1)
        error_name = _want_str(doc, "error_name", sub, required=False)
        error_traceback = _want_str(doc, "error_traceback", sub, required=False, nonempty=False)
        if success is True and error_name is not None:
            errors.append(("payload.error_name", "must be absent when success is true"))
        if success is False and "error_name" not in doc:
            errors.append(("payload.error_name", "required when success is false"))
        if error_traceback is not None and error_name is None:
            errors.append(("payload.error_traceback", "only allowed alongside error_name"))
        if len(errors) > before:
            return None
        return CellExecutePayload(
            cell_id=cell_id,  # type: ignore[arg-type]
            cell_index=cell_index,  # type: ignore[arg-type]
            source=source,  # type: ignore[arg-type]
            success=success,  # type: ignore[arg-type]
            execution_count=execution_count,  # type: ignore[arg-type]
            error_name=error_name,
            error_traceback=error_traceback,
        )
    if event_type == "cell_edit":
        cell_id = _want_str(doc, "cell_id", sub)
        chars_added = _want_int(doc, "chars_added", sub, minimum=0)
        chars_removed = _want_int(doc, "chars_removed", sub, minimum=0)
        snapshot = _want_str(doc, "source_snapshot", sub, required=False, nonempty=False)
        if chars_added is not None and chars_removed is not None and chars_added + chars_removed < 1:
            errors.append(("payload.chars_added", "chars_added + chars_removed must be >= 1"))
        if len(errors) > before:
            return None
        return CellEditPayload(
            cell_id=cell_id,  # type: ignore[arg-type]
            chars_added=chars_added,  # type: ignore[arg-type]
            chars_removed=chars_removed,  # type: ignore[arg-type]
            source_snapshot=snapshot,
        )
    if event_type in ("notebook_open", "notebook_save"):
        notebook_id = _want_str(doc, "notebook_id", sub)
        if len(errors) > before:
            return None
        cls = NotebookOpenPayload if event_type == "notebook_open" else NotebookSavePayload
        return cls(notebook_id=notebook_id)  # type: ignore[arg-type]
    if event_type == "ui_action":
        action_name = _want_str(doc, "action_name", sub)
        detail = doc.get("detail")
        if detail is not None and not isinstance(detail, dict):
            errors.append(("payload.detail", f"expected object, got {type(detail).__name__}"))
        if len(errors) > before:
            return None
        return UiActionPayload(action_name=action_name, detail=detail)  # type: ignore[arg-type]
    raise AssertionError(f"unhandled event_type {event_type}")


def validate_event(raw: Any) -> TelemetryEvent:
    """Validate a structured document into a TelemetryEvent.

    Raises UnknownEventType for a forward-incompatible event_type, and
    SchemaViolation listing every violated field otherwise. Never raises
    anything else, regardless of input shape.
    """
    if not isinstance(raw, dict):
        raise SchemaViolation.single("$", f"expected object, got {type(raw).__name__}")

    event_type = raw.get("event_type")
    if isinstance(event_type, str) and event_type not in EVENT_TYPES:
        raise UnknownEventType(event_type)

    errors: list[tuple[str, str]] = []
    schema_version = _want_str(raw, "schema_version", errors)
    if schema_version is not None and schema_version != SCHEMA_VERSION:
        errors.append(("schema_version", f"expected {SCHEMA_VERSION!r}, got {schema_version!r}"))
    session_id = _want_str(raw, "session_id", errors)
    user_id = _want_str(raw, "user_id", errors)
    seq = _want_int(raw, "seq", errors, minimum=1)
    event_time = _want_timestamp(raw, "event_time", errors)
    if event_type is None:
        errors.append(("event_type", "missing"))
    elif not isinstance(event_type, str):
        errors.append(("event_type", f"expected string, got {type(event_type).__name__}"))

    payload: Payload | None = None
    if isinstance(event_type, str) and event_type in EVENT_TYPES:
        if "payload" not in raw:
            errors.append(("payload", "missing"))
        else:
            payload = _payload_from(raw["payload"], event_type, errors)

    if errors:
        raise SchemaViolation(errors)
    return TelemetryEvent(
        session_id=session_id,  # type: ignore[arg-type]
        user_id=user_id,  # type: ignore[arg-type]
        seq=seq,  # type: ignore[arg-type]
        event_time=event_time,  # type: ignore[arg-type]
        event_type=event_type,  # type: ignore[arg-type]
        payload=payload,  # type: ignore[arg-type]
    )


def validate_chat_message(raw: Any) -> ChatMessage:
    """Validate a structured document into a ChatMessage (same total-validation contract)."""
    if not isinstance(raw, dict):
        raise SchemaViolation.single("$", f"expected object, got {type(raw).__name__}")

    errors: list[tuple[str, str]] = []
    session_id = _want_str(raw, "session_id", errors)
    message_id = _want_str(raw, "message_id", errors)
    role = _want_str(raw, "role", errors)
    if role is not None and role not in CHAT_ROLES:
        errors.append(("role", f"expected one of {CHAT_ROLES}, got {role!r}"))
    text = _want_str(raw, "text", errors, nonempty=False)
    if role == "student" and text is not None and not text.strip():
        errors.append(("text", "must be nonempty after trim for role=student"))
    sent_at = _want_timestamp(raw, "sent_at", errors)
    parent = _want_str(raw, "parent_message_id", errors, required=False)
    condition_id = _want_str(raw, "condition_id", errors, required=False)
    label = _want_str(raw, "label", errors, required=False)
    if label is not None and label not in HELP_SEEKING_LABELS:
        errors.append(("label", f"expected one of {HELP_SEEKING_LABELS}, got {label!r}"))
    user_id = _want_str(raw, "user_id", errors, required=False)
    notebook_id = _want_str(raw, "notebook_id", errors, required=False)
    context_meta = raw.get("context_meta")
    if context_meta is not None and not isinstance(context_meta, dict):
        errors.append(("context_meta", f"expected object, got {type(context_meta).__name__}"))

    if errors:
        raise SchemaViolation(errors)
    return ChatMessage(
        session_id=session_id,  # type: ignore[arg-type]
        message_id=message_id,  # type: ignore[arg-type]
        role=role,  # type: ignore[arg-type]
        text=text,  # type: ignore[arg-type]
        sent_at=sent_at,  # type: ignore[arg-type]
        parent_message_id=parent,
        condition_id=condition_id,
        label=label,
        user_id=user_id,
        notebook_id=notebook_id,
        context_meta=context_meta,
    )
