"""Concurrent scripted-client load harness.

Each simulated user runs the scenario script (edit / execute / chat loops
with think-time jitter) against the live HTTP API, posting telemetry exactly
like a real client: one batch per action, acknowledged before the next
action. Chat latency is measured end-to-end; the backend's self-reported
service time (stamped by the mock or stub) is subtracted to isolate
middleware overhead. With a fixed seed the request sequences are
deterministic — latencies vary run to run, counts do not.
"""

from __future__ import annotations

import asyncio
import json
import math
import random
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import httpx

from jelai.model import format_timestamp


@dataclass(frozen=True, slots=True)
class LoadProfile:
    users: int
    duration_s: float
    think_time_s: float = 2.0
    script: str = "scenarios/basic.json"
    mock_delay_s: float | None = None  # informational: delay configured server-side
    seed: int = 1234

    def __post_init__(self) -> None:
        if self.users < 1:
            raise ValueError("users must be >= 1")
        if self.duration_s <= 0:
            raise ValueError("duration_s must be positive")


@dataclass(frozen=True, slots=True)
class LatencyStats:
    count: int
    p50_ms: float
    p95_ms: float
    p99_ms: float
    max_ms: float
    error_count: int
    middleware_overhead_p95_ms: float | None

    def to_dict(self) -> dict[str, Any]:
        return {
            "count": self.count,
            "p50_ms": self.p50_ms,
            "p95_ms": self.p95_ms,
            "p99_ms": self.p99_ms,
            "max_ms": self.max_ms,
            "error_count": self.error_count,
            "middleware_overhead_p95_ms": self.middleware_overhead_p95_ms,
        }


@dataclass(slots=True)
class SessionAudit:
    telemetry_sent: int = 0
    telemetry_accepted: int = 0
    chats: int = 0


@dataclass(slots=True)
class LoadReport:
    stats: LatencyStats
    sessions: dict[str, SessionAudit] = field(default_factory=dict)
    errors: list[str] = field(default_factory=list)


def _nearest_rank(sorted_values: list[float], q: float) -> float:
    """Nearest-rank percentile over an ascending list."""
    if not sorted_values:
        return 0.0
    rank = max(1, math.ceil(q / 100.0 * len(sorted_values)))
    return sorted_values[rank - 1]


def load_script(path: str | Path) -> dict[str, Any]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(doc.get("loop"), list) or not doc["loop"]:
        raise ValueError(f"scenario {path}: 'loop' must be a nonempty list of actions")
    return doc


class _Client:
    """One scripted user loop."""

    def __init__(
        self,
        index: int,
        base_url: str,
        token: str,
        script: dict[str, Any],
        profile: LoadProfile,
        run_id: str,
    ) -> None:
        self.index = index
        self.base_url = base_url.rstrip("/")
        self.headers = {"Authorization": f"Bearer {token}"}
        self.script = script
        self.profile = profile
        self.session_id = f"load-{run_id}-u{index:03d}"
        self.rng = random.Random(profile.seed + index)
        self.seq = 0
        self.exec_count = 0
        self.chat_count = 0
        self.audit = SessionAudit()
        self.chat_latencies_ms: list[float] = []
        self.overheads_ms: list[float] = []
        self.errors: list[str] = []

    def _now(self) -> str:
        return format_timestamp(datetime.now(timezone.utc))

    def _next_seq(self) -> int:
        self.seq += 1
        return self.seq

    async def _think(self) -> None:
        jitter = self.profile.think_time_s * self.rng.uniform(0.5, 1.5)
        await asyncio.sleep(jitter)

    def _event(self, event_type: str, payload: dict[str, Any], user_id: str) -> dict[str, Any]:
        return {
            "schema_version": "jelai.telemetry.v1",
            "session_id": self.session_id,
            "user_id": user_id,
            "seq": self._next_seq(),
            "event_time": self._now(),
            "event_type": event_type,
            "payload": payload,
        }

    async def _post_events(self, client: httpx.AsyncClient, events: list[dict[str, Any]]) -> None:
        self.audit.telemetry_sent += len(events)
        response = await client.post(
            f"{self.base_url}/api/v1/telemetry/batch", json={"events": events}, headers=self.headers
        )
        if response.status_code != 200:
            self.errors.append(f"telemetry http {response.status_code}")
            return
        doc = response.json()
        self.audit.telemetry_accepted += doc.get("accepted", 0)
        for rejection in doc.get("rejected", []):
            self.errors.append(f"telemetry rejected: {rejection}")

    async def _chat(self, client: httpx.AsyncClient, text: str) -> None:
        self.chat_count += 1
        body = {
            "session_id": self.session_id,
            "message_id": f"m-{self.index:03d}-{self.chat_count:05d}",
            "text": text,
        }
        started = time.monotonic()
        response = await client.post(f"{self.base_url}/api/v1/chat", json=body, headers=self.headers)
        elapsed_ms = (time.monotonic() - started) * 1000.0
        if response.status_code != 200:
            self.errors.append(f"chat http {response.status_code}")
            return
        self.audit.chats += 1
        self.chat_latencies_ms.append(elapsed_ms)
        meta = response.json().get("context_meta") or {}
        backend_ms = meta.get("backend_service_ms")
        if isinstance(backend_ms, (int, float)):
            self.overheads_ms.append(max(0.0, elapsed_ms - float(backend_ms)))

    async def _run_action(self, client: httpx.AsyncClient, action: dict[str, Any], user_id: str) -> None:
        kind = action.get("action")
        if kind == "notebook_open":
            await self._post_events(
                client, [self._event("notebook_open", {"notebook_id": action.get("notebook_id", "nb")}, user_id)]
            )
        elif kind == "edit":
            payload = {
                "cell_id": action.get("cell", "c1"),
                "chars_added": int(action.get("chars_added", 10)),
                "chars_removed": int(action.get("chars_removed", 0)),
            }
            await self._post_events(client, [self._event("cell_edit", payload, user_id)])
        elif kind == "execute":
            self.exec_count += 1
            fail_every = int(action.get("fail_every", 0))
            failed = fail_every > 0 and self.exec_count % fail_every == 0
            payload: dict[str, Any] = {
                "cell_id": action.get("cell", "c1"),
                "cell_index": 0,
                "source": action.get("source", "print('load test')"),
                "success": not failed,
                "execution_count": self.exec_count,
            }
            if failed:
                payload["error_name"] = "StubError"
                payload["error_traceback"] = "Traceback: StubError: scripted failure"
            await self._post_events(client, [self._event("cell_execute", payload, user_id)])
        elif kind == "chat":
            texts = action.get("texts") or ["How does this work?"]
            await self._chat(client, texts[(self.chat_count) % len(texts)])
        else:
            raise ValueError(f"unknown scenario action: {kind!r}")

    async def run(self, user_id: str) -> None:
        deadline = time.monotonic() + self.profile.duration_s
        timeout = httpx.Timeout(30.0, read=max(30.0, self.profile.duration_s))
        async with httpx.AsyncClient(timeout=timeout) as client:
            try:
                for action in self.script.get("setup", []):
                    await self._run_action(client, action, user_id)
                while time.monotonic() < deadline:
                    for action in self.script["loop"]:
                        if time.monotonic() >= deadline:
                            break
                        await self._run_action(client, action, user_id)
                        await self._think()
            except httpx.HTTPError as exc:
                self.errors.append(f"transport: {type(exc).__name__}: {exc}")


async def run_loadgen(profile: LoadProfile, target_url: str, token: str, user_id: str) -> LoadReport:
    script = load_script(profile.script)
    run_id = f"{int(time.time()) % 100000:05d}"

    # Fail fast when the target is unreachable.
    async with httpx.AsyncClient(timeout=5.0) as client:
        try:
            health = await client.get(f"{target_url.rstrip('/')}/api/v1/healthz")
            health.raise_for_status()
        except httpx.HTTPError as exc:
            raise ConnectionError(f"target {target_url} unreachable: {exc}") from exc

    clients = [_Client(i, target_url, token, script, profile, run_id) for i in range(profile.users)]
    await asyncio.gather(*(c.run(user_id) for c in clients))

    latencies = sorted(l for c in clients for l in c.chat_latencies_ms)
    overheads = sorted(o for c in clients for o in c.overheads_ms)
    errors = [e for c in clients for e in c.errors]
    stats = LatencyStats(
        count=len(latencies),
        p50_ms=_nearest_rank(latencies, 50),
        p95_ms=_nearest_rank(latencies, 95),
        p99_ms=_nearest_rank(latencies, 99),
        max_ms=latencies[-1] if latencies else 0.0,
        error_count=len(errors),
        middleware_overhead_p95_ms=_nearest_rank(overheads, 95) if overheads else None,
    )
    return LoadReport(
        stats=stats,
        sessions={c.session_id: c.audit for c in clients},
        errors=errors,
    )
