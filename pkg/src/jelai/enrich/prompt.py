"""Render the condition-specific prompt and shrink it under the size budget.

Truncation shrinks bundle-derived content in a fixed priority order — oldest
history turns, then oldest recent cells, then the traceback, then cell
sources — re-rendering after each cut. Template prose and the current student
message are never altered; if even they cannot fit, the request is
unserveable and BudgetImpossible is raised.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from typing import Any, Protocol

from jelai.enrich.context import TRUNCATION_MARKER, ContextBundle, EnrichmentPolicy, middle_truncate

KNOWN_PLACEHOLDERS = frozenset({"objective", "recent_code", "last_error", "flags", "label"})

_PLACEHOLDER_RE = re.compile(r"\{([a-z_]+)\}")

SCAFFOLD_DIRECTIVE = (
    "\n\nThe student is currently asking for a direct solution. Do not provide "
    "complete solutions or finished code. Guide them instead: give a hint, ask "
    "a question that exposes the gap, or explain the underlying concept, so "
    "they can produce the answer themselves."
)

# Smallest useful remnant of a traceback / cell source before the section is
# dropped outright during budget truncation.
_SECTION_FLOOR_CHARS = 160


class TemplateError(Exception):
    """A template references a placeholder outside the known set."""

    def __init__(self, names: list[str]) -> None:
        self.names = names
        super().__init__(f"unknown placeholder(s): {', '.join(sorted(names))}")


class BudgetImpossible(Exception):
    """The untouchable parts (template prose + current student message) exceed the budget."""


def unknown_placeholders(template: str) -> list[str]:
    return sorted({m.group(1) for m in _PLACEHOLDER_RE.finditer(template)} - KNOWN_PLACEHOLDERS)


class PromptCondition(Protocol):
    """What prompt rendering needs from an experiment condition."""

    condition_id: str
    system_prompt_template: str
    scaffold_on_executive: bool


@dataclass(frozen=True, slots=True)
class PromptMetadata:
    condition_id: str
    bundle_hash: str
    truncation_applied: bool
    total_chars: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "condition_id": self.condition_id,
            "bundle_hash": self.bundle_hash,
            "truncation_applied": self.truncation_applied,
            "total_chars": self.total_chars,
        }


@dataclass(frozen=True, slots=True)
class EnrichedPrompt:
    """The final message sequence for the LLM; `bundle` and `condition` are
    retained so truncation can shrink context and re-render."""

    system_text: str
    messages: tuple[tuple[str, str], ...]  # (role, text), ends with the student turn
    metadata: PromptMetadata
    bundle: ContextBundle
    condition: PromptCondition

    @property
    def student_text(self) -> str:
        return self.messages[-1][1]

    def to_dict(self) -> dict[str, Any]:
        return {
            "system_text": self.system_text,
            "messages": [list(m) for m in self.messages],
            "metadata": self.metadata.to_dict(),
        }


def _render_cells(bundle: ContextBundle) -> str:
    blocks = []
    for cell in bundle.recent_cells:
        status = "ok" if cell.success else "error"
        blocks.append(f"### Cell {cell.cell_id} [{status}]\n{cell.source}")
    return "\n\n".join(blocks)


def _render_error(bundle: ContextBundle) -> str:
    if bundle.last_error is None:
        return ""
    name, traceback = bundle.last_error
    return f"{name}\n{traceback}" if traceback else name


def _substitute(template: str, bundle: ContextBundle) -> str:
    values = {
        "objective": bundle.task_objective or "",
        "recent_code": _render_cells(bundle),
        "last_error": _render_error(bundle),
        "flags": ", ".join(bundle.active_flags),
        "label": bundle.current_label.label,
    }

    unknown: list[str] = []

    def repl(match: re.Match[str]) -> str:
        name = match.group(1)
        if name not in KNOWN_PLACEHOLDERS:
            unknown.append(name)
            return match.group(0)
        return values[name]

    rendered = _PLACEHOLDER_RE.sub(repl, template)
    if unknown:
        raise TemplateError(unknown)
    return rendered


def render_prompt(
    bundle: ContextBundle,
    condition: PromptCondition,
    student_message: str,
    truncation_applied: bool = False,
) -> EnrichedPrompt:
    """Render the system text and message list for one chat turn.

    Missing context renders as empty sections, never as literal placeholders.
    With an executive label and scaffolding enabled on the condition, the
    guidance-over-solutions directive is appended to the system text.
    """
    system_text = _substitute(condition.system_prompt_template, bundle)
    if condition.scaffold_on_executive and bundle.current_label.label == "executive":
        system_text += SCAFFOLD_DIRECTIVE
    messages = tuple(bundle.chat_history) + (("student", student_message),)
    total = len(system_text) + sum(len(text) for _, text in messages)
    return EnrichedPrompt(
        system_text=system_text,
        messages=messages,
        metadata=PromptMetadata(
            condition_id=condition.condition_id,
            bundle_hash=bundle.bundle_hash,
            truncation_applied=truncation_applied,
            total_chars=total,
        ),
        bundle=bundle,
        condition=condition,
    )


def truncate_to_budget(prompt: EnrichedPrompt, policy: EnrichmentPolicy) -> EnrichedPrompt:
    """Enforce the total character budget; idempotent.

    Shrink order: (1) oldest history turns, (2) oldest recent cells down to
    the current one, (3) traceback (middle-truncated, then dropped), (4) cell
    sources (middle-truncated, then dropped). The system template's prose and
    the current student message are never touched.
    """
    budget = policy.total_budget_chars
    if prompt.metadata.total_chars <= budget:
        return prompt

    bundle = prompt.bundle
    student = prompt.student_text

    def rebuild(b: ContextBundle) -> EnrichedPrompt:
        return render_prompt(b.with_hash(), prompt.condition, student, truncation_applied=True)

    current = rebuild(bundle)

    # (1) oldest history turns
    while current.metadata.total_chars > budget and current.bundle.chat_history:
        current = rebuild(replace(current.bundle, chat_history=current.bundle.chat_history[1:]))

    # (2) oldest recent cells; the newest is the current cell and survives to step 4
    while current.metadata.total_chars > budget and len(current.bundle.recent_cells) > 1:
        current = rebuild(replace(current.bundle, recent_cells=current.bundle.recent_cells[1:]))

    # (3) traceback: middle-truncate by the overflow, then drop the section
    if current.metadata.total_chars > budget and current.bundle.last_error is not None:
        name, traceback = current.bundle.last_error
        over = current.metadata.total_chars - budget
        cap = max(_SECTION_FLOOR_CHARS, len(traceback) - over)
        if cap < len(traceback):
            current = rebuild(replace(current.bundle, last_error=(name, middle_truncate(traceback, cap))))
        if current.metadata.total_chars > budget:
            current = rebuild(replace(current.bundle, last_error=None))

    # (4) cell sources: middle-truncate the survivors, then drop them
    if current.metadata.total_chars > budget and current.bundle.recent_cells:
        cells = list(current.bundle.recent_cells)
        for i, cell in enumerate(cells):
            over = current.metadata.total_chars - budget
            if over <= 0:
                break
            cap = max(_SECTION_FLOOR_CHARS, len(cell.source) - over)
            if cap < len(cell.source):
                cells[i] = replace(cell, source=middle_truncate(cell.source, cap))
                current = rebuild(replace(current.bundle, recent_cells=tuple(cells)))
        if current.metadata.total_chars > budget:
            current = rebuild(replace(current.bundle, recent_cells=()))

    if current.metadata.total_chars > budget:
        raise BudgetImpossible(
            f"irreducible prompt ({current.metadata.total_chars} chars) exceeds budget ({budget})"
        )
    return current


__all__ = [
    "KNOWN_PLACEHOLDERS",
    "SCAFFOLD_DIRECTIVE",
    "TRUNCATION_MARKER",
    "BudgetImpossible",
    "EnrichedPrompt",
    "PromptCondition",
    "PromptMetadata",
    "TemplateError",
    "render_prompt",
    "truncate_to_budget",
    "unknown_placeholders",
]
