"""Assemble the real-time context snapshot attached to a chat turn.

The bundle is a pure function of a trace snapshot plus the current message:
read-your-writes holds because the service folds acknowledged telemetry into
the trace before snapshotting it for the chat path.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Any

from jelai.analytics.helpseek import OTHER_LABEL, HelpSeekingLabel
from jelai.analytics.trace import SessionTrace, active_flag_kinds
from jelai.model import stable_digest

TRUNCATION_MARKER = "\n…[truncated]…\n"


@dataclass(frozen=True, slots=True)
class EnrichmentPolicy:
    """Size knobs for context assembly. Character budgets, not tokens, so the
    policy is tokenizer-independent (~4 chars/token as a rule of thumb)."""

    n_recent_cells: int = 3
    history_turns: int = 10
    traceback_max_chars: int = 2000
    cell_max_chars: int = 1500
    total_budget_chars: int = 12000

    def __post_init__(self) -> None:
        for name in ("n_recent_cells", "history_turns", "traceback_max_chars", "cell_max_chars", "total_budget_chars"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.total_budget_chars < self.cell_max_chars + self.traceback_max_chars:
            raise ValueError("total_budget_chars must cover cell_max_chars + traceback_max_chars")


def middle_truncate(text: str, max_chars: int) -> str:
    """Shrink text under max_chars by keeping its head and tail (a quarter of
    the allowance each) around a marker; text already within the cap is returned
    unchanged."""
    if len(text) <= max_chars:
        return text
    keep = max(1, max_chars // 4)
    head, tail = text[:keep], text[-keep:]
    if len(head) + len(tail) + len(TRUNCATION_MARKER) > max_chars:
        return (head + TRUNCATION_MARKER)[:max_chars]
    return head + TRUNCATION_MARKER + tail


@dataclass(frozen=True, slots=True)
class RecentCell:
    cell_id: str
    source: str
    success: bool

    def to_dict(self) -> dict[str, Any]:
        return {"cell_id": self.cell_id, "source": self.source, "success": self.success}


@dataclass(frozen=True, slots=True)
class ContextBundle:
    """The context snapshot handed to prompt construction."""

    task_objective: str | None
    recent_cells: tuple[RecentCell, ...]  # newest last
    last_error: tuple[str, str] | None  # (error_name, truncated traceback)
    edit_summary: dict[str, int]
    chat_history: tuple[tuple[str, str], ...]  # (role, text), oldest first
    current_label: HelpSeekingLabel
    active_flags: tuple[str, ...]  # sorted kinds
    bundle_hash: str = ""

    def content_dict(self) -> dict[str, Any]:
        return {
            "task_objective": self.task_objective,
            "recent_cells": [c.to_dict() for c in self.recent_cells],
            "last_error": list(self.last_error) if self.last_error else None,
            "edit_summary": dict(sorted(self.edit_summary.items())),
            "chat_history": [list(t) for t in self.chat_history],
            "current_label": self.current_label.to_dict(),
            "active_flags": list(self.active_flags),
        }

    def to_dict(self) -> dict[str, Any]:
        doc = self.content_dict()
        doc["bundle_hash"] = self.bundle_hash
        return doc

    def with_hash(self) -> "ContextBundle":
        return replace(self, bundle_hash=stable_digest(self.content_dict()))


def build_context(
    trace: SessionTrace,
    policy: EnrichmentPolicy,
    objective: str | None = None,
    current_message: tuple[str, HelpSeekingLabel] | None = None,
) -> ContextBundle:
    """Build the bundle for the trace as it stands right now.

    When the trace's final chat turn is the student message being handled
    (the normal orchestration order), that turn is excluded from the history
    so it appears only as the current message.
    """
    label = current_message[1] if current_message is not None else OTHER_LABEL

    cells = tuple(
        RecentCell(
            cell_id=snapshot.cell_id,
            source=middle_truncate(snapshot.source, policy.cell_max_chars),
            success=snapshot.success,
        )
        for snapshot in trace.recent_executions[-policy.n_recent_cells :]
    )

    error: tuple[str, str] | None = None
    if trace.last_error is not None:
        error = (
            trace.last_error.error_name,
            middle_truncate(trace.last_error.traceback, policy.traceback_max_chars),
        )

    edit_summary = {
        "episodes": len(trace.edit_episodes),
        "chars_added": sum(e.chars_added_total for e in trace.edit_episodes),
        "chars_removed": sum(e.chars_removed_total for e in trace.edit_episodes),
    }

    turns = list(trace.chat_turns)
    if (
        current_message is not None
        and turns
        and turns[-1].role == "student"
        and turns[-1].text == current_message[0]
    ):
        turns = turns[:-1]
    history = tuple((t.role, t.text) for t in turns[-policy.history_turns :])

    return ContextBundle(
        task_objective=objective,
        recent_cells=cells,
        last_error=error,
        edit_summary=edit_summary,
        chat_history=history,
        current_label=label,
        active_flags=tuple(sorted(active_flag_kinds(trace))),
    ).with_hash()
