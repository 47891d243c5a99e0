"""Byte-stable canonical form and hashing for events and other records.

Canonical form: UTF-8 JSON with lexicographically sorted keys, compact
separators, and timestamps normalized to `YYYY-MM-DDThh:mm:ss.mmmZ`
(millisecond precision, UTC). The same value always canonicalizes to the
same bytes on every platform, so digests are portable across processes.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Any

_TS_RE = re.compile(
    r"^(\d{4})-(\d{2})-(\d{2})[Tt](\d{2}):(\d{2}):(\d{2})(\.\d+)?(?:[Zz]|\+00:00|\+0000)$"
)


def parse_timestamp(raw: str) -> datetime:
    """Parse an RFC3339 UTC timestamp; sub-millisecond digits are truncated.

    Raises ValueError for non-UTC offsets or anything unparsable.
    """
    match = _TS_RE.match(raw)
    if not match:
        raise ValueError("not an RFC3339 UTC timestamp (expected ...Z or ...+00:00)")
    year, month, day, hour, minute, second = (int(g) for g in match.groups()[:6])
    frac = match.group(7)
    micros = 0
    if frac:
        digits = frac[1:10]  # at most nanoseconds
        micros = int(digits.ljust(6, "0")[:6])
    micros = (micros // 1000) * 1000  # millisecond precision
    try:
        return datetime(year, month, day, hour, minute, second, micros, tzinfo=timezone.utc)
    except ValueError as exc:
        raise ValueError(str(exc)) from None


def format_timestamp(ts: datetime) -> str:
    """Render a datetime in the canonical `YYYY-MM-DDThh:mm:ss.mmmZ` form."""
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    ts = ts.astimezone(timezone.utc)
    millis = ts.microsecond // 1000
    return f"{ts.year:04d}-{ts.month:02d}-{ts.day:02d}T{ts.hour:02d}:{ts.minute:02d}:{ts.second:02d}.{millis:03d}Z"


def canonical_json(value: Any) -> bytes:
    """Serialize to canonical UTF-8 JSON bytes (sorted keys, compact, non-ASCII kept)."""
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def stable_digest(value: Any) -> str:
    """64-hex-char SHA-256 digest over the canonical JSON of `value`."""
    return hashlib.sha256(canonical_json(value)).hexdigest()


@dataclass(frozen=True, slots=True)
class EventHash:
    digest: str

    def __post_init__(self) -> None:
        if len(self.digest) != 64 or any(c not in "0123456789abcdef" for c in self.digest):
            raise ValueError("digest must be 64 lowercase hex chars")


def canonicalize_and_hash(event: Any) -> EventHash:
    """Hash a validated event (anything exposing `to_wire()`); equal events hash equal."""
    return EventHash(stable_digest(event.to_wire()))
