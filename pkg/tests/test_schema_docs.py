"""The published JSON Schemas and the in-code validator must agree.

Dual route: the hand-rolled validator gates ingestion; the schema documents
are the published contract clients build against. Every fixture must satisfy
both, and documents rejected by one must be rejected by the other.
"""

from __future__ import annotations

import json

import jsonschema
import pytest

from jelai.model import SchemaViolation, UnknownEventType, validate_chat_message, validate_event

from .conftest import FIXTURES, REPO

EVENT_SCHEMA = json.loads((REPO / "docs" / "schema" / "telemetry_event.schema.json").read_text())
CHAT_SCHEMA = json.loads((REPO / "docs" / "schema" / "chat_message.schema.json").read_text())


def fixture_docs():
    for name in ("s01", "s02"):
        for line in (FIXTURES / "sessions" / f"{name}.jsonl").read_text().splitlines():
            doc = json.loads(line)
            yield doc["kind"], doc["body"]
    yield "telemetry", json.loads((FIXTURES / "events" / "exec_ok.json").read_text())


def test_every_fixture_satisfies_both_routes():
    for kind, body in fixture_docs():
        if kind == "telemetry":
            jsonschema.validate(body, EVENT_SCHEMA)
            validate_event(body)
        else:
            jsonschema.validate(body, CHAT_SCHEMA)
            validate_chat_message(body)


@pytest.mark.parametrize(
    "mutate",
    [
        lambda d: d.pop("seq"),
        lambda d: d.update(seq=0),
        lambda d: d.update(event_type="mouse_wiggle"),
        lambda d: d["payload"].update(success=False),  # failure without error_name
        lambda d: d["payload"].update(error_name="E"),  # error_name on success
        lambda d: d.update(schema_version="jelai.telemetry.v2"),
        lambda d: d.update(event_time="not-a-time"),
    ],
)
def test_rejections_agree_for_telemetry(mutate):
    doc = json.loads((FIXTURES / "events" / "exec_ok.json").read_text())
    mutate(doc)
    with pytest.raises((SchemaViolation, UnknownEventType)):
        validate_event(doc)
    with pytest.raises(jsonschema.ValidationError):
        jsonschema.validate(doc, EVENT_SCHEMA)


@pytest.mark.parametrize(
    "mutate",
    [
        lambda d: d.pop("message_id"),
        lambda d: d.update(role="teacher"),
        lambda d: d.update(text="   "),
        lambda d: d.update(label="keen"),
    ],
)
def test_rejections_agree_for_chat(mutate):
    doc = {
        "session_id": "s",
        "message_id": "m1",
        "role": "student",
        "text": "why is this broken?",
        "sent_at": "2026-03-02T10:00:00.000Z",
        "label": "instrumental",
    }
    mutate(doc)
    with pytest.raises(SchemaViolation):
        validate_chat_message(doc)
    with pytest.raises(jsonschema.ValidationError):
        jsonschema.validate(doc, CHAT_SCHEMA)
