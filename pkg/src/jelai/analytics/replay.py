"""Offline replay of session logs into traces.

The same fold the live service applies incrementally, run over a stored or
fixture log. Replay of a service-written log must reproduce the live trace
exactly; that equivalence is the system's core correctness oracle.

Fixture session files are JSONL with one `{"kind": ..., "body": {...}}` per
line; stored logs carry the full record envelope and are accepted too.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Iterable

from jelai.analytics.helpseek import EmptyMessage, RuleSet, classify_help_seeking
from jelai.analytics.trace import (
    DEFAULT_TRACE_POLICY,
    OutOfOrderEvent,
    SessionTrace,
    TracePolicy,
    apply_chat,
    apply_event,
)
from jelai.model import ChatMessage, SchemaViolation, TelemetryEvent, UnknownEventType, validate_chat_message, validate_event
from jelai.store import LogRecord


class ReplayError(Exception):
    """A fixture line failed validation or ordering; carries the 1-based line number."""

    def __init__(self, line_no: int, reason: str) -> None:
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"line {line_no}: {reason}")


@dataclass(frozen=True, slots=True)
class ReplayResult:
    trace: SessionTrace
    telemetry_count: int
    chat_count: int


def _label_student_message(message: ChatMessage, rules: RuleSet | None) -> ChatMessage:
    if message.role != "student" or message.label is not None or rules is None:
        return message
    try:
        label = classify_help_seeking(message.text, rules)
    except EmptyMessage:
        return message
    return replace(message, label=label.label)


def replay_bodies(
    bodies: Iterable[TelemetryEvent | ChatMessage],
    policy: TracePolicy = DEFAULT_TRACE_POLICY,
    rules: RuleSet | None = None,
    session_id: str | None = None,
) -> ReplayResult:
    """Fold an ordered stream of validated bodies into a trace.

    Student messages without a stored label are labeled with `rules` on the
    way in, mirroring live ingestion; stored labels always win so a report
    never silently reflects a different rule set than the one used live.
    """
    trace: SessionTrace | None = None
    telemetry = 0
    chat = 0
    verification = rules.verification_patterns if rules is not None else ()
    for body in bodies:
        if trace is None:
            sid = session_id or body.session_id
            trace = SessionTrace(session_id=sid)
        if isinstance(body, TelemetryEvent):
            trace = apply_event(trace, body, policy)
            telemetry += 1
        else:
            trace = apply_chat(trace, _label_student_message(body, rules), verification)
            chat += 1
    if trace is None:
        trace = SessionTrace(session_id=session_id or "")
    return ReplayResult(trace=trace, telemetry_count=telemetry, chat_count=chat)


def replay_records(
    records: Iterable[LogRecord],
    policy: TracePolicy = DEFAULT_TRACE_POLICY,
    rules: RuleSet | None = None,
    session_id: str | None = None,
) -> ReplayResult:
    ordered = sorted(records, key=lambda r: r.offset)
    return replay_bodies((r.body for r in ordered), policy, rules, session_id)


def _parse_fixture_line(doc: Any) -> TelemetryEvent | ChatMessage:
    if not isinstance(doc, dict):
        raise ValueError(f"expected object, got {type(doc).__name__}")
    body = doc.get("body", doc)
    kind = doc.get("kind")
    if kind == "telemetry":
        return validate_event(body)
    if kind == "chat":
        return validate_chat_message(body)
    raise ValueError(f"unknown record kind: {kind!r}")


def replay_session_file(
    path: str | Path,
    policy: TracePolicy = DEFAULT_TRACE_POLICY,
    rules: RuleSet | None = None,
) -> ReplayResult:
    """Replay a fixture session file; raises ReplayError at the offending line."""
    bodies: list[tuple[int, TelemetryEvent | ChatMessage]] = []
    text = Path(path).read_text(encoding="utf-8")
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            bodies.append((line_no, _parse_fixture_line(json.loads(line))))
        except (ValueError, SchemaViolation, UnknownEventType) as exc:
            raise ReplayError(line_no, str(exc)) from exc

    trace: SessionTrace | None = None
    telemetry = 0
    chat = 0
    verification = rules.verification_patterns if rules is not None else ()
    for line_no, body in bodies:
        if trace is None:
            trace = SessionTrace(session_id=body.session_id)
        try:
            if isinstance(body, TelemetryEvent):
                trace = apply_event(trace, body, policy)
                telemetry += 1
            else:
                trace = apply_chat(trace, _label_student_message(body, rules), verification)
                chat += 1
        except OutOfOrderEvent as exc:
            raise ReplayError(line_no, str(exc)) from exc
    if trace is None:
        trace = SessionTrace(session_id="")
    return ReplayResult(trace=trace, telemetry_count=telemetry, chat_count=chat)
