"""Real-time context assembly and condition-specific prompt construction."""

from jelai.enrich.context import ContextBundle, EnrichmentPolicy, build_context
from jelai.enrich.prompt import (
    KNOWN_PLACEHOLDERS,
    BudgetImpossible,
    EnrichedPrompt,
    PromptMetadata,
    TemplateError,
    render_prompt,
    truncate_to_budget,
    unknown_placeholders,
)

__all__ = [
    "KNOWN_PLACEHOLDERS",
    "BudgetImpossible",
    "ContextBundle",
    "EnrichedPrompt",
    "EnrichmentPolicy",
    "PromptMetadata",
    "TemplateError",
    "build_context",
    "render_prompt",
    "truncate_to_budget",
    "unknown_placeholders",
]
