"""Rule-based help-seeking classification of student chat messages.

Labels follow the instrumental/executive distinction: instrumental requests
aim at understanding (explanations, hints, diagnoses), executive requests aim
at obtaining the finished answer. Every rule in the set is matched; the label
with the highest summed weight wins, ties break on the single highest-priority
matched rule and then conservatively toward `executive`.

The rule set ships as a data file so analysis scripts can re-run the exact
classifier the service used. An LLM-backed classifier can be plugged in behind
the same call signature, but the rule engine is the default because it is
deterministic and auditable.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any

LABEL_INSTRUMENTAL = "instrumental"
LABEL_EXECUTIVE = "executive"
LABEL_OTHER = "other"


class EmptyMessage(Exception):
    """The message is empty after whitespace trim; nothing to classify."""


class RulesError(Exception):
    """The rules file is malformed; carries every violation found."""

    def __init__(self, violations: list[str]) -> None:
        self.violations = violations
        super().__init__("; ".join(violations))


@dataclass(frozen=True, slots=True)
class ClassifierRule:
    id: str
    target_label: str  # instrumental | executive
    pattern: re.Pattern[str]
    weight: float
    priority: int


@dataclass(frozen=True, slots=True)
class HelpSeekingLabel:
    label: str
    matched_rules: tuple[str, ...]
    confidence: float

    def to_dict(self) -> dict[str, Any]:
        return {"label": self.label, "matched_rules": list(self.matched_rules), "confidence": self.confidence}


@dataclass(frozen=True, slots=True)
class RuleSet:
    rules: tuple[ClassifierRule, ...]
    verification_patterns: tuple[re.Pattern[str], ...]


OTHER_LABEL = HelpSeekingLabel(label=LABEL_OTHER, matched_rules=(), confidence=1.0)


def load_rules(path: str | Path) -> RuleSet:
    """Load and validate a rules file; raises RulesError naming every violation."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise RulesError([f"cannot read rules file {path}: {exc}"]) from exc
    violations: list[str] = []
    rules: list[ClassifierRule] = []
    seen_ids: set[str] = set()
    for i, raw in enumerate(doc.get("rules", [])):
        where = f"rules[{i}]"
        rule_id = raw.get("id")
        if not isinstance(rule_id, str) or not rule_id:
            violations.append(f"{where}.id: missing or empty")
            continue
        if rule_id in seen_ids:
            violations.append(f"{where}.id: duplicate id {rule_id!r}")
            continue
        seen_ids.add(rule_id)
        target = raw.get("target_label")
        if target not in (LABEL_INSTRUMENTAL, LABEL_EXECUTIVE):
            violations.append(f"{where}.target_label: must be instrumental or executive, got {target!r}")
            continue
        weight = raw.get("weight")
        if not isinstance(weight, (int, float)) or isinstance(weight, bool) or weight <= 0:
            violations.append(f"{where}.weight: must be a positive number, got {weight!r}")
            continue
        priority = raw.get("priority", 0)
        if not isinstance(priority, int) or isinstance(priority, bool):
            violations.append(f"{where}.priority: must be an integer, got {priority!r}")
            continue
        try:
            pattern = re.compile(raw.get("pattern", ""), re.IGNORECASE)
        except re.error as exc:
            violations.append(f"{where}.pattern: does not compile: {exc}")
            continue
        rules.append(ClassifierRule(id=rule_id, target_label=target, pattern=pattern, weight=float(weight), priority=priority))
    verification: list[re.Pattern[str]] = []
    for i, raw_pattern in enumerate(doc.get("verification_patterns", [])):
        try:
            verification.append(re.compile(raw_pattern, re.IGNORECASE))
        except (re.error, TypeError) as exc:
            violations.append(f"verification_patterns[{i}]: does not compile: {exc}")
    if violations:
        raise RulesError(violations)
    return RuleSet(rules=tuple(rules), verification_patterns=tuple(verification))


def classify_help_seeking(text: str, rules: RuleSet) -> HelpSeekingLabel:
    """Classify one student message against a rule set.

    Raises EmptyMessage when the text trims to nothing. With no rule matched
    the label is `other` (the only way `other` is ever produced).
    """
    if not text.strip():
        raise EmptyMessage("message is empty after trim")

    matched = [rule for rule in rules.rules if rule.pattern.search(text)]
    if not matched:
        return OTHER_LABEL

    weights = {LABEL_INSTRUMENTAL: 0.0, LABEL_EXECUTIVE: 0.0}
    best_priority = {LABEL_INSTRUMENTAL: None, LABEL_EXECUTIVE: None}
    for rule in matched:
        weights[rule.target_label] += rule.weight
        prev = best_priority[rule.target_label]
        if prev is None or rule.priority > prev:
            best_priority[rule.target_label] = rule.priority

    if weights[LABEL_INSTRUMENTAL] > weights[LABEL_EXECUTIVE]:
        winner = LABEL_INSTRUMENTAL
    elif weights[LABEL_EXECUTIVE] > weights[LABEL_INSTRUMENTAL]:
        winner = LABEL_EXECUTIVE
    else:
        pri_i = best_priority[LABEL_INSTRUMENTAL]
        pri_e = best_priority[LABEL_EXECUTIVE]
        if pri_i is not None and (pri_e is None or pri_i > pri_e):
            winner = LABEL_INSTRUMENTAL
        else:
            # Equal priorities fall toward executive: over-flagging
            # answer-seeking is safer than under-flagging it.
            winner = LABEL_EXECUTIVE

    total = weights[LABEL_INSTRUMENTAL] + weights[LABEL_EXECUTIVE]
    confidence = weights[winner] / total if total > 0 else 1.0
    return HelpSeekingLabel(
        label=winner,
        matched_rules=tuple(rule.id for rule in matched),
        confidence=confidence,
    )
