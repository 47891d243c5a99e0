"""Deterministic mock LLM backend.

The reply fingerprints the context that actually reached the backend —
`MOCK[cells=<n>,history=<k>,label=<label>,flags=<f>]: <first 40 chars of the
student message>` — so end-to-end tests can assert on enrichment without a
model. An optional artificial delay simulates model service time for latency
experiments.
"""

from __future__ import annotations

import asyncio
import time
from typing import AsyncIterator

from jelai.enrich.prompt import EnrichedPrompt

_STREAM_CHUNK_CHARS = 24


def mock_text(prompt: EnrichedPrompt) -> str:
    bundle = prompt.bundle
    return (
        f"MOCK[cells={len(bundle.recent_cells)},"
        f"history={len(prompt.messages) - 1},"
        f"label={bundle.current_label.label},"
        f"flags={','.join(bundle.active_flags)}]: "
        f"{prompt.student_text[:40]}"
    )


async def mock_complete(prompt: EnrichedPrompt, delay_s: float = 0.0) -> tuple[str, float]:
    """Produce the fingerprint reply; returns (text, service_time_s)."""
    start = time.monotonic()
    if delay_s > 0:
        await asyncio.sleep(delay_s)
    return mock_text(prompt), time.monotonic() - start


async def mock_stream(prompt: EnrichedPrompt, delay_s: float = 0.0) -> AsyncIterator[str]:
    """Stream the fingerprint reply in fixed-size chunks; concatenation equals mock_complete's text."""
    text = mock_text(prompt)
    if delay_s > 0:
        # Spread the artificial delay across chunks like a generating model would.
        chunks = range(0, len(text), _STREAM_CHUNK_CHARS)
        per_chunk = delay_s / max(1, len(list(chunks)))
    else:
        per_chunk = 0.0
    for i in range(0, len(text), _STREAM_CHUNK_CHARS):
        if per_chunk > 0:
            await asyncio.sleep(per_chunk)
        yield text[i : i + _STREAM_CHUNK_CHARS]
