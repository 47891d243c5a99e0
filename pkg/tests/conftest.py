"""Shared fixtures: repo paths, event builders, and a service app factory."""

from __future__ import annotations

import json
import shutil
from datetime import datetime, timedelta, timezone
from pathlib import Path

import pytest

from jelai.model import validate_chat_message, validate_event

REPO = Path(__file__).resolve().parent.parent
FIXTURES = REPO / "fixtures"
CONFIG_DIR = REPO / "config"

BASE_TIME = datetime(2026, 3, 2, 10, 0, 0, tzinfo=timezone.utc)


def at(seconds: float) -> datetime:
    return BASE_TIME + timedelta(seconds=seconds)


def ts(seconds: float) -> str:
    t = at(seconds)
    return t.strftime("%Y-%m-%dT%H:%M:%S.") + f"{t.microsecond // 1000:03d}Z"


def make_event(
    seq: int,
    event_type: str = "cell_execute",
    t: float = 0.0,
    session_id: str = "sess-1",
    user_id: str = "alice",
    **payload_overrides,
):
    payloads = {
        "cell_execute": {
            "cell_id": "c1",
            "cell_index": 0,
            "source": "print('hi')",
            "success": True,
            "execution_count": seq,
        },
        "cell_edit": {"cell_id": "c1", "chars_added": 5, "chars_removed": 1},
        "notebook_open": {"notebook_id": "nb-1"},
        "notebook_save": {"notebook_id": "nb-1"},
        "ui_action": {"action_name": "palette_open"},
    }
    payload = dict(payloads[event_type])
    payload.update(payload_overrides)
    if event_type == "cell_execute" and payload.get("success") is False and "error_name" not in payload:
        payload["error_name"] = "ValueError"
        payload["error_traceback"] = "Traceback: ValueError: boom"
    return validate_event(
        {
            "schema_version": "jelai.telemetry.v1",
            "session_id": session_id,
            "user_id": user_id,
            "seq": seq,
            "event_time": ts(t),
            "event_type": event_type,
            "payload": payload,
        }
    )


def make_chat(
    message_id: str,
    role: str = "student",
    text: str = "How does this work?",
    t: float = 0.0,
    session_id: str = "sess-1",
    **extra,
):
    doc = {
        "session_id": session_id,
        "message_id": message_id,
        "role": role,
        "text": text,
        "sent_at": ts(t),
    }
    doc.update({k: v for k, v in extra.items() if v is not None})
    return validate_chat_message(doc)


def load_session_fixture(name: str) -> list:
    """Parse a fixture session file into validated bodies, in order."""
    bodies = []
    for line in (FIXTURES / "sessions" / f"{name}.jsonl").read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        doc = json.loads(line)
        if doc["kind"] == "telemetry":
            bodies.append(validate_event(doc["body"]))
        else:
            bodies.append(validate_chat_message(doc["body"]))
    return bodies


TEST_TOKENS = {
    "tok-alice": {"user_id": "alice", "role": "student"},
    "tok-bob": {"user_id": "bob", "role": "student"},
    "tok-prof": {"user_id": "prof", "role": "instructor"},
}


def write_test_config(tmp_path: Path, config_overrides: dict | None = None) -> Path:
    """Materialize a config dir (config.json + rules + tokens) under tmp_path."""
    config_dir = tmp_path / "config"
    config_dir.mkdir(parents=True, exist_ok=True)
    shutil.copy(CONFIG_DIR / "helpseek_rules.json", config_dir / "helpseek_rules.json")
    (config_dir / "tokens.json").write_text(json.dumps(TEST_TOKENS), encoding="utf-8")
    doc = json.loads((CONFIG_DIR / "example.json").read_text(encoding="utf-8"))
    if config_overrides:
        _deep_update(doc, config_overrides)
    path = config_dir / "config.json"
    path.write_text(json.dumps(doc, indent=2), encoding="utf-8")
    return path


def _deep_update(target: dict, overrides: dict) -> None:
    for key, value in overrides.items():
        if isinstance(value, dict) and value and isinstance(target.get(key), dict):
            _deep_update(target[key], value)
        else:
            target[key] = value


@pytest.fixture
def service_app(tmp_path):
    """A fully initialized app on a fresh data dir with the mock backend."""
    from jelai.service.app import Settings, create_app

    config_path = write_test_config(tmp_path)
    settings = Settings(
        config_path=config_path,
        data_dir=tmp_path / "data",
        mock_llm=True,
    )
    app = create_app(settings)
    yield app
    app.state.ctx.close()


@pytest.fixture
def client(service_app):
    from fastapi.testclient import TestClient

    with TestClient(service_app) as test_client:
        yield test_client


def auth(token: str) -> dict[str, str]:
    return {"Authorization": f"Bearer {token}"}


# -- acceptance reporting -----------------------------------------------------

ACCEPTANCE_RESULTS: list[str] = []


def record_criterion(number: int, name: str, passed: bool, detail: str = "") -> None:
    status = "PASS" if passed else "FAIL"
    suffix = f" ({detail})" if detail else ""
    ACCEPTANCE_RESULTS.append(f"criterion {number} [{name}]: {status}{suffix}")
    assert passed, f"criterion {number} [{name}] failed{suffix}"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_RESULTS:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)


class ServerThread:
    """Run the app under real uvicorn on an ephemeral port, in a thread."""

    def __init__(self, app) -> None:
        import socket

        import uvicorn

        self._sock = socket.socket()
        self._sock.bind(("127.0.0.1", 0))
        self.port = self._sock.getsockname()[1]
        self.base_url = f"http://127.0.0.1:{self.port}"
        config = uvicorn.Config(app, log_level="error", access_log=False)
        self.server = uvicorn.Server(config)
        import threading

        self._thread = threading.Thread(
            target=self.server.run, kwargs={"sockets": [self._sock]}, daemon=True
        )

    def __enter__(self) -> "ServerThread":
        import time

        self._thread.start()
        deadline = time.monotonic() + 10
        while not self.server.started:
            if time.monotonic() > deadline:
                raise RuntimeError("uvicorn did not start in time")
            time.sleep(0.01)
        return self

    def __exit__(self, *exc) -> None:
        self.server.should_exit = True
        self._thread.join(timeout=5)
