"""Deterministic per-session metric aggregation over a trace."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Any

from jelai.analytics.helpseek import LABEL_EXECUTIVE, LABEL_INSTRUMENTAL
from jelai.analytics.trace import SessionTrace


@dataclass(frozen=True, slots=True)
class SessionMetrics:
    student_messages: int
    tutor_messages: int
    executive_count: int
    instrumental_count: int
    executive_pct: float | None  # 100 * executive / (executive + instrumental); None when unlabeled
    executions: int
    errors: int
    edit_episodes: int
    flags_raised: dict[str, int]

    def to_dict(self) -> dict[str, Any]:
        return {
            "student_messages": self.student_messages,
            "tutor_messages": self.tutor_messages,
            "executive_count": self.executive_count,
            "instrumental_count": self.instrumental_count,
            "executive_pct": self.executive_pct,
            "executions": self.executions,
            "errors": self.errors,
            "edit_episodes": self.edit_episodes,
            "flags_raised": dict(sorted(self.flags_raised.items())),
        }


def session_metrics(trace: SessionTrace) -> SessionMetrics:
    student = 0
    tutor = 0
    executive = 0
    instrumental = 0
    for turn in trace.chat_turns:
        if turn.role == "student":
            student += 1
            if turn.label == LABEL_EXECUTIVE:
                executive += 1
            elif turn.label == LABEL_INSTRUMENTAL:
                instrumental += 1
        elif turn.role == "tutor":
            tutor += 1
    labeled = executive + instrumental
    executive_pct = 100.0 * executive / labeled if labeled > 0 else None
    flags = Counter(flag.kind for flag in trace.flags)
    return SessionMetrics(
        student_messages=student,
        tutor_messages=tutor,
        executive_count=executive,
        instrumental_count=instrumental,
        executive_pct=executive_pct,
        executions=trace.executions_total,
        errors=trace.errors_total,
        edit_episodes=len(trace.edit_episodes),
        flags_raised=dict(flags),
    )
