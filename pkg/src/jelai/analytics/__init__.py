"""Learning analytics: session traces, help-seeking classification, behaviour flags, metrics."""

from jelai.analytics.helpseek import (
    ClassifierRule,
    EmptyMessage,
    HelpSeekingLabel,
    RuleSet,
    classify_help_seeking,
    load_rules,
)
from jelai.analytics.metrics import SessionMetrics, session_metrics
from jelai.analytics.trace import (
    DEFAULT_TRACE_POLICY,
    BehaviourFlag,
    ChatTurn,
    EditEpisode,
    ErrorInfo,
    ExecutionSnapshot,
    OutOfOrderEvent,
    SessionTrace,
    TracePolicy,
    active_flag_kinds,
    apply_chat,
    apply_event,
    coalesce_edits,
    detect_help_avoidance,
    detect_verification,
    new_trace,
)

__all__ = [
    "DEFAULT_TRACE_POLICY",
    "BehaviourFlag",
    "ChatTurn",
    "ClassifierRule",
    "EditEpisode",
    "EmptyMessage",
    "ErrorInfo",
    "ExecutionSnapshot",
    "HelpSeekingLabel",
    "OutOfOrderEvent",
    "RuleSet",
    "SessionMetrics",
    "SessionTrace",
    "TracePolicy",
    "active_flag_kinds",
    "apply_chat",
    "apply_event",
    "classify_help_seeking",
    "coalesce_edits",
    "detect_help_avoidance",
    "detect_verification",
    "load_rules",
    "new_trace",
    "session_metrics",
]
