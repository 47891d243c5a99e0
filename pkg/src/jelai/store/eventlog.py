"""Append-only JSON-Lines session logs with ordered reads.

Layout: one file per session per kind under the data directory —
`events/<session>.jsonl` for telemetry, `chat/<session>.jsonl` for chat.
Offsets are a single dense sequence per session spanning both kinds, so a
full ordered read merges the two files by offset. Each line is one record:

    {"kind": "...", "offset": N, "stored_at": "...", "body": {...}}

The (seq -> offset) and (message_id -> offset) indexes are rebuilt on
startup by scanning; duplicate telemetry (same session_id + seq) and chat
(same message_id) appends are acknowledged with the original offset and
not re-appended, which makes ingestion idempotent for at-least-once
clients. Field order inside a line follows canonicalization rules.
"""

from __future__ import annotations

import json
import os
import threading
import time
import urllib.parse
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Iterable

from jelai.model import (
    ChatMessage,
    TelemetryEvent,
    canonical_json,
    format_timestamp,
    parse_timestamp,
    validate_chat_message,
    validate_event,
)

# Group-commit window: appends flush immediately, fsync at most this often.
FSYNC_INTERVAL_S = 0.05


class StorageFailure(Exception):
    """I/O error surfaced to the caller; the append may be retried."""


class UnknownSession(Exception):
    pass


class RangeOutOfBounds(Exception):
    pass


@dataclass(frozen=True, slots=True)
class LogRecord:
    kind: str  # "telemetry" | "chat"
    offset: int
    stored_at: datetime
    body: TelemetryEvent | ChatMessage

    def to_wire(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "offset": self.offset,
            "stored_at": format_timestamp(self.stored_at),
            "body": self.body.to_wire(),
        }


@dataclass(frozen=True, slots=True)
class SessionInfo:
    session_id: str
    record_count: int
    last_activity: datetime


def parse_record(raw: Any) -> LogRecord:
    """Parse one stored line back into a typed record (re-validates the body)."""
    if not isinstance(raw, dict):
        raise ValueError(f"record must be an object, got {type(raw).__name__}")
    kind = raw.get("kind")
    if kind == "telemetry":
        body: TelemetryEvent | ChatMessage = validate_event(raw.get("body"))
    elif kind == "chat":
        body = validate_chat_message(raw.get("body"))
    else:
        raise ValueError(f"unknown record kind: {kind!r}")
    offset = raw.get("offset")
    if not isinstance(offset, int) or isinstance(offset, bool) or offset < 0:
        raise ValueError(f"bad offset: {offset!r}")
    stored_at = parse_timestamp(raw.get("stored_at", ""))
    return LogRecord(kind=kind, offset=offset, stored_at=stored_at, body=body)


class JsonlAppender:
    """Minimal thread-safe append-only JSONL writer (used for incident logs)."""

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self._lock = threading.Lock()

    def append(self, doc: dict[str, Any]) -> None:
        line = canonical_json(doc) + b"\n"
        with self._lock:
            try:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "ab") as fh:
                    fh.write(line)
                    fh.flush()
            except OSError as exc:
                raise StorageFailure(f"cannot append to {self.path}: {exc}") from exc


@dataclass
class _SessionState:
    lock: threading.RLock = field(default_factory=threading.RLock)
    next_offset: int = 0
    seq_to_offset: dict[int, int] = field(default_factory=dict)
    message_to_offset: dict[str, int] = field(default_factory=dict)
    last_activity: datetime | None = None
    last_fsync: float = 0.0


def _encode_session(session_id: str) -> str:
    # Percent-encode anything a filesystem could object to; UUIDs pass through.
    return urllib.parse.quote(session_id, safe="-_.~abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789")


def _decode_session(name: str) -> str:
    return urllib.parse.unquote(name)


class SessionLogStore:
    """Thread-safe per-session append-only store.

    Writes to one session are serialized by a per-session lock; sessions never
    share a lock, so a slow reader of one session cannot stall writers of
    another. `scan()` must run once before use (rebuilds indexes from disk).
    """

    def __init__(
        self,
        data_dir: str | Path,
        now_fn: Callable[[], datetime] | None = None,
        fsync_interval: float = FSYNC_INTERVAL_S,
    ) -> None:
        self.data_dir = Path(data_dir)
        self._now = now_fn or (lambda: datetime.now(timezone.utc))
        self._fsync_interval = fsync_interval
        self._registry_lock = threading.Lock()
        self._sessions: dict[str, _SessionState] = {}
        self._scanned = False

    # -- lifecycle ---------------------------------------------------------

    def scan(self) -> None:
        """Rebuild in-memory indexes by scanning every session file on disk."""
        try:
            for kind, sub in (("telemetry", "events"), ("chat", "chat")):
                directory = self.data_dir / sub
                directory.mkdir(parents=True, exist_ok=True)
                for path in sorted(directory.glob("*.jsonl")):
                    session_id = _decode_session(path.stem)
                    state = self._state_for(session_id)
                    self._scan_file(path, kind, state)
        except OSError as exc:
            raise StorageFailure(f"store scan failed: {exc}") from exc
        self._scanned = True

    def _scan_file(self, path: Path, kind: str, state: _SessionState) -> None:
        with open(path, "rb") as fh:
            lines = fh.read().split(b"\n")
        for i, line in enumerate(lines):
            if not line.strip():
                continue
            try:
                record = parse_record(json.loads(line.decode("utf-8")))
            except (ValueError, UnicodeDecodeError) as exc:
                if i == len(lines) - 1:
                    # A torn final line is the expected crash artifact; skip it.
                    continue
                raise StorageFailure(f"{path}:{i + 1}: corrupt record: {exc}") from exc
            state.next_offset = max(state.next_offset, record.offset + 1)
            if state.last_activity is None or record.stored_at > state.last_activity:
                state.last_activity = record.stored_at
            if kind == "telemetry":
                assert isinstance(record.body, TelemetryEvent)
                state.seq_to_offset[record.body.seq] = record.offset
            else:
                assert isinstance(record.body, ChatMessage)
                state.message_to_offset[record.body.message_id] = record.offset

    def close(self) -> None:
        # Appends open/flush/close per write, so there is nothing to tear down;
        # kept so callers can treat the store like any closable resource.
        pass

    # -- internals ---------------------------------------------------------

    def _state_for(self, session_id: str) -> _SessionState:
        with self._registry_lock:
            state = self._sessions.get(session_id)
            if state is None:
                state = _SessionState()
                self._sessions[session_id] = state
            return state

    def _path_for(self, session_id: str, kind: str) -> Path:
        sub = "events" if kind == "telemetry" else "chat"
        return self.data_dir / sub / f"{_encode_session(session_id)}.jsonl"

    def _write(self, session_id: str, kind: str, state: _SessionState, record: LogRecord) -> None:
        # Open-per-append keeps the fd count flat no matter how many sessions
        # are live; the group-commit window still bounds fsync frequency.
        try:
            path = self._path_for(session_id, kind)
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "ab") as fh:
                fh.write(canonical_json(record.to_wire()) + b"\n")
                fh.flush()
                now = time.monotonic()
                if now - state.last_fsync >= self._fsync_interval:
                    os.fsync(fh.fileno())
                    state.last_fsync = now
        except OSError as exc:
            raise StorageFailure(f"append failed for session {session_id}: {exc}") from exc

    # -- operations --------------------------------------------------------

    def append(self, body: TelemetryEvent | ChatMessage) -> int:
        """Durably append a validated body to its session log; returns its offset.

        Re-appending a telemetry event with a seen (session_id, seq), or a chat
        message with a seen message_id, returns the original offset unchanged.
        """
        if isinstance(body, TelemetryEvent):
            return self.append_event(body)
        return self.append_chat(body)

    def append_event(self, event: TelemetryEvent) -> int:
        state = self._state_for(event.session_id)
        with state.lock:
            existing = state.seq_to_offset.get(event.seq)
            if existing is not None:
                return existing
            offset = state.next_offset
            record = LogRecord(kind="telemetry", offset=offset, stored_at=self._now(), body=event)
            self._write(event.session_id, "telemetry", state, record)
            state.next_offset = offset + 1
            state.seq_to_offset[event.seq] = offset
            state.last_activity = record.stored_at
            return offset

    def append_chat(self, message: ChatMessage) -> int:
        state = self._state_for(message.session_id)
        with state.lock:
            existing = state.message_to_offset.get(message.message_id)
            if existing is not None:
                return existing
            offset = state.next_offset
            record = LogRecord(kind="chat", offset=offset, stored_at=self._now(), body=message)
            self._write(message.session_id, "chat", state, record)
            state.next_offset = offset + 1
            state.message_to_offset[message.message_id] = offset
            state.last_activity = record.stored_at
            return offset

    def has_event(self, session_id: str, seq: int) -> bool:
        state = self._state_for(session_id)
        with state.lock:
            return seq in state.seq_to_offset

    def has_chat(self, session_id: str, message_id: str) -> bool:
        state = self._state_for(session_id)
        with state.lock:
            return message_id in state.message_to_offset

    def record_count(self, session_id: str) -> int:
        state = self._state_for(session_id)
        with state.lock:
            return state.next_offset

    def _load_records(self, session_id: str, state: _SessionState) -> list[LogRecord]:
        records: list[LogRecord] = []
        for kind in ("telemetry", "chat"):
            path = self._path_for(session_id, kind)
            if not path.exists():
                continue
            try:
                with open(path, "rb") as fh:
                    raw = fh.read()
            except OSError as exc:
                raise StorageFailure(f"read failed for session {session_id}: {exc}") from exc
            for line in raw.split(b"\n"):
                if line.strip():
                    records.append(parse_record(json.loads(line.decode("utf-8"))))
        records.sort(key=lambda r: r.offset)
        return records

    def read_range(self, session_id: str, from_offset: int, to_offset: int) -> list[LogRecord]:
        """Return exactly the records in [from_offset, to_offset], in offset order."""
        state = self._state_for(session_id)
        with state.lock:
            if state.next_offset == 0:
                raise UnknownSession(session_id)
            if from_offset < 0 or from_offset > to_offset or to_offset >= state.next_offset:
                raise RangeOutOfBounds(
                    f"[{from_offset}, {to_offset}] outside log [0, {state.next_offset - 1}]"
                )
            records = self._load_records(session_id, state)
        return [r for r in records if from_offset <= r.offset <= to_offset]

    def read_all(self, session_id: str) -> list[LogRecord]:
        state = self._state_for(session_id)
        with state.lock:
            if state.next_offset == 0:
                raise UnknownSession(session_id)
            return self._load_records(session_id, state)

    def session_ids(self) -> list[str]:
        with self._registry_lock:
            ids = [sid for sid, st in self._sessions.items() if st.next_offset > 0]
        return sorted(ids)

    def list_sessions(self) -> list[SessionInfo]:
        """Every session with at least one record, exactly once."""
        infos = []
        for sid in self.session_ids():
            state = self._state_for(sid)
            with state.lock:
                if state.next_offset == 0:
                    continue
                assert state.last_activity is not None
                infos.append(
                    SessionInfo(
                        session_id=sid,
                        record_count=state.next_offset,
                        last_activity=state.last_activity,
                    )
                )
        return infos

    def iter_all_records(self) -> Iterable[tuple[str, list[LogRecord]]]:
        for sid in self.session_ids():
            yield sid, self.read_all(sid)
