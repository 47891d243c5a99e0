"""Per-condition study reports over a session store.

This is the single aggregation code path: the HTTP report endpoint and the
offline CLI both call into it, so their outputs are byte-identical on the
same store. A session belongs to the condition stamped on its tutor messages;
sessions without a stamp (or stamped with a condition outside the experiment)
are not part of that experiment's report.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Any

from jelai.analytics.helpseek import RuleSet
from jelai.analytics.metrics import SessionMetrics, session_metrics
from jelai.analytics.replay import replay_records
from jelai.analytics.trace import FLAG_HELP_AVOIDANCE, FLAG_VERIFICATION, TracePolicy, DEFAULT_TRACE_POLICY
from jelai.model import ChatMessage
from jelai.store import SessionLogStore

CSV_COLUMNS = [
    "condition_id",
    "sessions",
    "dialogue_messages_mean",
    "student_messages_mean",
    "tutor_messages_mean",
    "executions_mean",
    "errors_mean",
    "edit_episodes_mean",
    "instrumental_count",
    "executive_count",
    "instrumental_pct",
    "executive_pct",
    "help_avoidance_flags",
    "verification_flags",
]


@dataclass(frozen=True, slots=True)
class ConditionReport:
    condition_id: str
    sessions: int
    dialogue_messages_mean: float | None
    student_messages_mean: float | None
    tutor_messages_mean: float | None
    executions_mean: float | None
    errors_mean: float | None
    edit_episodes_mean: float | None
    instrumental_count: int
    executive_count: int
    instrumental_pct: float | None
    executive_pct: float | None
    help_avoidance_flags: int
    verification_flags: int

    def to_dict(self) -> dict[str, Any]:
        return {name: getattr(self, name) for name in CSV_COLUMNS}


class UnknownExperiment(Exception):
    pass


def _session_condition(chat_bodies: list[ChatMessage]) -> str | None:
    for message in chat_bodies:
        if message.role == "tutor" and message.condition_id:
            return message.condition_id
    return None


def _aggregate(condition_id: str, per_session: list[SessionMetrics]) -> ConditionReport:
    n = len(per_session)

    def mean(values: list[int]) -> float | None:
        return sum(values) / n if n else None

    instrumental = sum(m.instrumental_count for m in per_session)
    executive = sum(m.executive_count for m in per_session)
    labeled = instrumental + executive
    return ConditionReport(
        condition_id=condition_id,
        sessions=n,
        dialogue_messages_mean=mean([m.student_messages + m.tutor_messages for m in per_session]),
        student_messages_mean=mean([m.student_messages for m in per_session]),
        tutor_messages_mean=mean([m.tutor_messages for m in per_session]),
        executions_mean=mean([m.executions for m in per_session]),
        errors_mean=mean([m.errors for m in per_session]),
        edit_episodes_mean=mean([m.edit_episodes for m in per_session]),
        instrumental_count=instrumental,
        executive_count=executive,
        instrumental_pct=100.0 * instrumental / labeled if labeled else None,
        executive_pct=100.0 * executive / labeled if labeled else None,
        help_avoidance_flags=sum(m.flags_raised.get(FLAG_HELP_AVOIDANCE, 0) for m in per_session),
        verification_flags=sum(m.flags_raised.get(FLAG_VERIFICATION, 0) for m in per_session),
    )


def build_report(
    store: SessionLogStore,
    condition_ids: list[str],
    rules: RuleSet | None = None,
    trace_policy: TracePolicy = DEFAULT_TRACE_POLICY,
) -> list[ConditionReport]:
    """One row per condition, in the experiment's declared condition order."""
    buckets: dict[str, list[SessionMetrics]] = {cid: [] for cid in condition_ids}
    for session_id in store.session_ids():
        records = store.read_all(session_id)
        chat_bodies = [r.body for r in records if isinstance(r.body, ChatMessage)]
        condition = _session_condition(chat_bodies)
        if condition is None or condition not in buckets:
            continue
        trace = replay_records(records, trace_policy, rules, session_id=session_id).trace
        buckets[condition].append(session_metrics(trace))
    return [_aggregate(cid, buckets[cid]) for cid in condition_ids]


def _format_value(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def render_csv(rows: list[ConditionReport]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow([_format_value(getattr(row, name)) for name in CSV_COLUMNS])
    return buffer.getvalue()


def render_json(rows: list[ConditionReport]) -> list[dict[str, Any]]:
    return [row.to_dict() for row in rows]
