"""Per-session learner traces: a pure fold over telemetry and chat.

`apply_event` / `apply_chat` never mutate their inputs; they return a new
trace. Replaying a session log through them yields a trace identical to the
one built incrementally while the session was live, which is the oracle the
rest of the system leans on.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from datetime import datetime
from typing import Any

from jelai.model import ChatMessage, TelemetryEvent, format_timestamp
from jelai.model.events import CellEditPayload, CellExecutePayload, NotebookOpenPayload


class OutOfOrderEvent(Exception):
    """seq regression within a session — signals an upstream ordering bug."""

    def __init__(self, session_id: str, last_seq: int, got_seq: int) -> None:
        self.session_id = session_id
        self.last_seq = last_seq
        self.got_seq = got_seq
        super().__init__(f"session {session_id}: seq {got_seq} after {last_seq}")


@dataclass(frozen=True, slots=True)
class TracePolicy:
    """Thresholds for trace derivation; all configurable, defaults documented."""

    gap_threshold_s: float = 5.0
    n_exec_keep: int = 10
    avoidance_min_errors: int = 3
    avoidance_window_s: float = 600.0


DEFAULT_TRACE_POLICY = TracePolicy()

FLAG_HELP_AVOIDANCE = "help_avoidance"
FLAG_VERIFICATION = "post_completion_verification"


@dataclass(frozen=True, slots=True)
class EditEpisode:
    """A maximal run of same-cell edits whose inter-event gaps stay under the threshold."""

    cell_id: str
    started_at: datetime
    ended_at: datetime
    events_count: int
    chars_added_total: int
    chars_removed_total: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "cell_id": self.cell_id,
            "started_at": format_timestamp(self.started_at),
            "ended_at": format_timestamp(self.ended_at),
            "events_count": self.events_count,
            "chars_added_total": self.chars_added_total,
            "chars_removed_total": self.chars_removed_total,
        }


@dataclass(frozen=True, slots=True)
class ExecutionSnapshot:
    cell_id: str
    source: str
    success: bool
    at: datetime

    def to_dict(self) -> dict[str, Any]:
        return {
            "cell_id": self.cell_id,
            "source": self.source,
            "success": self.success,
            "at": format_timestamp(self.at),
        }


@dataclass(frozen=True, slots=True)
class ErrorInfo:
    error_name: str
    traceback: str
    at: datetime

    def to_dict(self) -> dict[str, Any]:
        return {
            "error_name": self.error_name,
            "traceback": self.traceback,
            "at": format_timestamp(self.at),
        }


@dataclass(frozen=True, slots=True)
class ChatTurn:
    role: str
    text: str
    label: str | None
    at: datetime

    def to_dict(self) -> dict[str, Any]:
        return {"role": self.role, "text": self.text, "label": self.label, "at": format_timestamp(self.at)}


@dataclass(frozen=True, slots=True)
class BehaviourFlag:
    kind: str  # FLAG_HELP_AVOIDANCE | FLAG_VERIFICATION
    raised_at: datetime
    evidence: tuple[str, ...]  # record references, e.g. "telemetry/seq=12"

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "raised_at": format_timestamp(self.raised_at), "evidence": list(self.evidence)}


@dataclass(frozen=True, slots=True)
class _FailureRef:
    ref: str
    at: datetime


@dataclass(frozen=True, slots=True)
class SessionTrace:
    """Derived per-session state folded from telemetry and chat."""

    session_id: str
    user_id: str | None = None
    notebook_id: str | None = None
    last_seq: int = 0
    executions_total: int = 0
    errors_total: int = 0
    per_cell_error_streak: dict[str, int] = field(default_factory=dict)
    last_error: ErrorInfo | None = None
    recent_executions: tuple[ExecutionSnapshot, ...] = ()
    edit_episodes: tuple[EditEpisode, ...] = ()
    chat_turns: tuple[ChatTurn, ...] = ()
    flags: tuple[BehaviourFlag, ...] = ()
    last_success_at: datetime | None = None
    last_student_chat_at: datetime | None = None
    prev_student_chat_at: datetime | None = None
    avoidance_failures: tuple[_FailureRef, ...] = ()
    avoidance_flagged: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "session_id": self.session_id,
            "user_id": self.user_id,
            "notebook_id": self.notebook_id,
            "last_seq": self.last_seq,
            "executions_total": self.executions_total,
            "errors_total": self.errors_total,
            "per_cell_error_streak": dict(sorted(self.per_cell_error_streak.items())),
            "last_error": self.last_error.to_dict() if self.last_error else None,
            "recent_executions": [e.to_dict() for e in self.recent_executions],
            "edit_episodes": [e.to_dict() for e in self.edit_episodes],
            "chat_turns": [t.to_dict() for t in self.chat_turns],
            "flags": [f.to_dict() for f in self.flags],
            "last_success_at": format_timestamp(self.last_success_at) if self.last_success_at else None,
            "last_student_chat_at": format_timestamp(self.last_student_chat_at) if self.last_student_chat_at else None,
        }


def new_trace(session_id: str, user_id: str | None = None) -> SessionTrace:
    return SessionTrace(session_id=session_id, user_id=user_id)


# -- edit coalescing ---------------------------------------------------------


def _fold_edit(
    episodes: tuple[EditEpisode, ...],
    cell_id: str,
    at: datetime,
    chars_added: int,
    chars_removed: int,
    gap_threshold_s: float,
) -> tuple[EditEpisode, ...]:
    if episodes:
        last = episodes[-1]
        gap = (at - last.ended_at).total_seconds()
        if last.cell_id == cell_id and gap <= gap_threshold_s:
            merged = replace(
                last,
                ended_at=at,
                events_count=last.events_count + 1,
                chars_added_total=last.chars_added_total + chars_added,
                chars_removed_total=last.chars_removed_total + chars_removed,
            )
            return episodes[:-1] + (merged,)
    fresh = EditEpisode(
        cell_id=cell_id,
        started_at=at,
        ended_at=at,
        events_count=1,
        chars_added_total=chars_added,
        chars_removed_total=chars_removed,
    )
    return episodes + (fresh,)


def coalesce_edits(edit_events: list[TelemetryEvent], gap_threshold_s: float = 5.0) -> list[EditEpisode]:
    """Coalesce a time-sorted, single-session stream of cell_edit events into episodes.

    A new episode starts whenever the cell changes or the gap since the
    previous edit event exceeds the threshold; totals are sums of deltas.
    """
    episodes: tuple[EditEpisode, ...] = ()
    for event in edit_events:
        payload = event.payload
        assert isinstance(payload, CellEditPayload), f"not a cell_edit event: {event.event_type}"
        episodes = _fold_edit(
            episodes, payload.cell_id, event.event_time, payload.chars_added, payload.chars_removed, gap_threshold_s
        )
    return list(episodes)


# -- behaviour detection -----------------------------------------------------


def detect_help_avoidance(trace: SessionTrace, policy: TracePolicy = DEFAULT_TRACE_POLICY) -> BehaviourFlag | None:
    """Flag when enough failures pile up inside the window with no help request between them.

    Returns None if the trace is already flagged for the current streak; the
    condition resets on a student message or a successful execution.
    """
    if trace.avoidance_flagged or not trace.avoidance_failures:
        return None
    newest = trace.avoidance_failures[-1].at
    window_start_s = newest.timestamp() - policy.avoidance_window_s
    in_window = [f for f in trace.avoidance_failures if f.at.timestamp() >= window_start_s]
    if len(in_window) < policy.avoidance_min_errors:
        return None
    return BehaviourFlag(
        kind=FLAG_HELP_AVOIDANCE,
        raised_at=newest,
        evidence=tuple(f.ref for f in in_window),
    )


def detect_verification(
    text: str,
    trace: SessionTrace,
    verification_patterns: tuple[re.Pattern[str], ...],
    message_ref: str,
    at: datetime,
) -> BehaviourFlag | None:
    """Flag a student message that asks for confirmation right after a clean run.

    Requires a successful execution with no failure after it; a session with
    no completed run never flags.
    """
    if trace.last_success_at is None:
        return None
    if trace.last_error is not None and trace.last_error.at >= trace.last_success_at:
        return None
    if not any(p.search(text) for p in verification_patterns):
        return None
    return BehaviourFlag(kind=FLAG_VERIFICATION, raised_at=at, evidence=(message_ref,))


def active_flag_kinds(trace: SessionTrace) -> set[str]:
    """Flag kinds still relevant to the conversation turn being handled now.

    A flag stays active until the next successful execution or until a
    further student message moves the conversation past it; the boundary is
    the later of last_success_at and the student message before the latest
    one, so the first reply after a raise still sees it.
    """
    boundary: datetime | None = None
    for candidate in (trace.last_success_at, trace.prev_student_chat_at):
        if candidate is not None and (boundary is None or candidate > boundary):
            boundary = candidate
    active = set()
    for flag in trace.flags:
        if boundary is None or flag.raised_at >= boundary:
            active.add(flag.kind)
    return active


# -- the fold ----------------------------------------------------------------


def apply_event(
    trace: SessionTrace, event: TelemetryEvent, policy: TracePolicy = DEFAULT_TRACE_POLICY
) -> SessionTrace:
    """Fold one telemetry event into the trace; pure, raises OutOfOrderEvent on seq regression."""
    if event.session_id != trace.session_id:
        raise ValueError(f"event for session {event.session_id} applied to trace {trace.session_id}")
    if event.seq <= trace.last_seq:
        raise OutOfOrderEvent(trace.session_id, trace.last_seq, event.seq)

    updates: dict[str, Any] = {"last_seq": event.seq}
    if trace.user_id is None:
        updates["user_id"] = event.user_id

    payload = event.payload
    if isinstance(payload, CellExecutePayload):
        updates["executions_total"] = trace.executions_total + 1
        recent = trace.recent_executions + (
            ExecutionSnapshot(payload.cell_id, payload.source, payload.success, event.event_time),
        )
        updates["recent_executions"] = recent[-policy.n_exec_keep :]
        streaks = dict(trace.per_cell_error_streak)
        if payload.success:
            streaks[payload.cell_id] = 0
            updates["last_success_at"] = event.event_time
            updates["avoidance_failures"] = ()
            updates["avoidance_flagged"] = False
        else:
            updates["errors_total"] = trace.errors_total + 1
            streaks[payload.cell_id] = streaks.get(payload.cell_id, 0) + 1
            updates["last_error"] = ErrorInfo(
                error_name=payload.error_name or "",
                traceback=payload.error_traceback or "",
                at=event.event_time,
            )
            ref = f"telemetry/seq={event.seq}"
            updates["avoidance_failures"] = trace.avoidance_failures + (_FailureRef(ref, event.event_time),)
        updates["per_cell_error_streak"] = streaks
        next_trace = replace(trace, **updates)
        if not payload.success:
            flag = detect_help_avoidance(next_trace, policy)
            if flag is not None:
                next_trace = replace(next_trace, flags=next_trace.flags + (flag,), avoidance_flagged=True)
        return next_trace

    if isinstance(payload, CellEditPayload):
        updates["edit_episodes"] = _fold_edit(
            trace.edit_episodes,
            payload.cell_id,
            event.event_time,
            payload.chars_added,
            payload.chars_removed,
            policy.gap_threshold_s,
        )
        return replace(trace, **updates)

    if isinstance(payload, NotebookOpenPayload) and trace.notebook_id is None:
        updates["notebook_id"] = payload.notebook_id
    # notebook_save and ui_action are stored but do not alter derived state.
    return replace(trace, **updates)


def apply_chat(
    trace: SessionTrace,
    message: ChatMessage,
    verification_patterns: tuple[re.Pattern[str], ...] = (),
) -> SessionTrace:
    """Fold one chat message into the trace.

    Student messages carry their stored help-seeking label, reset the
    help-avoidance condition, and may raise a verification flag; tutor and
    system turns only extend the transcript.
    """
    if message.session_id != trace.session_id:
        raise ValueError(f"message for session {message.session_id} applied to trace {trace.session_id}")

    turn = ChatTurn(role=message.role, text=message.text, label=message.label, at=message.sent_at)
    updates: dict[str, Any] = {"chat_turns": trace.chat_turns + (turn,)}
    if trace.notebook_id is None and message.notebook_id is not None:
        updates["notebook_id"] = message.notebook_id
    if trace.user_id is None and message.user_id is not None:
        updates["user_id"] = message.user_id

    if message.role != "student":
        return replace(trace, **updates)

    flag = detect_verification(
        message.text,
        trace,
        verification_patterns,
        message_ref=f"chat/message_id={message.message_id}",
        at=message.sent_at,
    )
    if flag is not None:
        updates["flags"] = trace.flags + (flag,)
    updates["prev_student_chat_at"] = trace.last_student_chat_at
    updates["last_student_chat_at"] = message.sent_at
    updates["avoidance_failures"] = ()
    updates["avoidance_flagged"] = False
    return replace(trace, **updates)
