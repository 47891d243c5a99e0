"""The middleware service: telemetry ingestion, the chat round-trip, reports, health.

Concurrency model: one asyncio lock per session serializes trace mutations;
the lock is never held across the LLM call, so slow model backends cannot
stall telemetry ingestion for the same session, and other sessions never
share a lock at all. Handlers take one config snapshot at entry; hot reload
swaps the snapshot atomically and in-flight requests finish under the old one.
"""

from __future__ import annotations

import asyncio
import json
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from fastapi import FastAPI, Header, HTTPException, Query, Request
from fastapi.responses import JSONResponse, PlainTextResponse, StreamingResponse

from jelai.analytics.helpseek import EmptyMessage, classify_help_seeking
from jelai.analytics.replay import replay_records
from jelai.analytics.report import build_report, render_csv, render_json
from jelai.analytics.trace import OutOfOrderEvent, SessionTrace, apply_chat, apply_event
from jelai.enrich.context import build_context
from jelai.enrich.prompt import BudgetImpossible, EnrichedPrompt, render_prompt, truncate_to_budget
from jelai.experiments.assignment import assign_condition
from jelai.experiments.config import AppConfig, ConfigError, Experiment, ExperimentCondition, load_config
from jelai.gateway.client import CompletionResult, LLMGateway
from jelai.model import ChatMessage, SchemaViolation, UnknownEventType, format_timestamp, validate_event
from jelai.service.auth import Principal, principal_from_header
from jelai.service.schemas import (
    AckReport,
    ChatRequest,
    ChatResponse,
    ContextMeta,
    Health,
    Rejection,
    ReloadResult,
    TelemetryBatch,
)
from jelai.store import JsonlAppender, SessionLogStore, StorageFailure

MAX_BATCH_SIZE = 500


@dataclass(slots=True)
class Settings:
    config_path: Path
    data_dir: Path
    mock_llm: bool = False
    mock_delay_s: float = 0.0
    playground_dir: Path | None = None


@dataclass(frozen=True, slots=True)
class RuntimeSnapshot:
    """Everything a request needs, swapped as one unit on reload."""

    config: AppConfig
    gateway: LLMGateway


@dataclass(slots=True)
class SessionState:
    trace: SessionTrace
    lock: asyncio.Lock = field(default_factory=asyncio.Lock)


class AppContext:
    def __init__(self, settings: Settings) -> None:
        self.settings = settings
        self.ready = False
        self.ready_reason: str | None = "starting: store scan pending"
        self.store = SessionLogStore(settings.data_dir)
        self.sessions: dict[str, SessionState] = {}
        self.runtime: RuntimeSnapshot | None = None
        self.chat_pending = 0

    # -- lifecycle -----------------------------------------------------------

    def initialize(self) -> None:
        """Load config, scan the store, and rebuild session traces; sets readiness."""
        try:
            config = load_config(self.settings.config_path)
        except ConfigError:
            raise  # config problems are fatal at startup, not a degraded state
        self.runtime = self._snapshot_for(config)
        try:
            self._probe_writable()
            self.store.scan()
            self._rebuild_sessions(config)
        except StorageFailure as exc:
            self.ready = False
            self.ready_reason = str(exc)
            return
        self.ready = True
        self.ready_reason = None

    def _probe_writable(self) -> None:
        probe = self.settings.data_dir / ".writable-probe"
        try:
            self.settings.data_dir.mkdir(parents=True, exist_ok=True)
            probe.write_bytes(b"ok")
            probe.unlink()
        except OSError as exc:
            raise StorageFailure(f"data dir not writable: {exc}") from exc

    def _rebuild_sessions(self, config: AppConfig) -> None:
        for session_id in self.store.session_ids():
            records = self.store.read_all(session_id)
            result = replay_records(records, config.defaults.trace_policy, config.rules, session_id=session_id)
            self.sessions[session_id] = SessionState(trace=result.trace)

    def reload_config(self) -> AppConfig:
        config = load_config(self.settings.config_path)
        self.runtime = self._snapshot_for(config)
        return config

    def _snapshot_for(self, config: AppConfig) -> RuntimeSnapshot:
        gateway = LLMGateway(
            fallback_text=config.defaults.fallback_text,
            incident_log=JsonlAppender(self.settings.data_dir / "incidents.jsonl"),
            use_mock=self.settings.mock_llm,
            mock_delay_s=self.settings.mock_delay_s,
            max_concurrent=config.defaults.max_concurrent_llm,
        )
        return RuntimeSnapshot(config=config, gateway=gateway)

    def close(self) -> None:
        self.store.close()

    # -- helpers -------------------------------------------------------------

    def snapshot(self) -> RuntimeSnapshot:
        if self.runtime is None or not self.ready:
            raise HTTPException(status_code=503, detail=self.ready_reason or "not ready")
        return self.runtime

    def session(self, session_id: str, create: bool = False) -> SessionState | None:
        state = self.sessions.get(session_id)
        if state is None and create:
            state = SessionState(trace=SessionTrace(session_id=session_id))
            self.sessions[session_id] = state
        return state


def _now() -> datetime:
    # Canonical wire precision is milliseconds; stamping anything finer would
    # make a replayed trace differ from the live one.
    now = datetime.now(timezone.utc)
    return now.replace(microsecond=(now.microsecond // 1000) * 1000)


def _resolve_condition(
    config: AppConfig, trace: SessionTrace, request_notebook: str | None
) -> tuple[Experiment, ExperimentCondition, str | None]:
    notebook_id = trace.notebook_id or request_notebook
    experiment = config.experiment_for_notebook(notebook_id)
    owner = trace.user_id or ""
    condition_id = assign_condition(owner, experiment)
    condition = experiment.condition(condition_id)
    assert condition is not None  # config validation guarantees the fixed target exists
    objective = experiment.task_objectives.get(notebook_id) if notebook_id else None
    return experiment, condition, objective


def _context_meta(prompt: EnrichedPrompt, result: CompletionResult) -> ContextMeta:
    bundle = prompt.bundle
    return ContextMeta(
        bundle_hash=prompt.metadata.bundle_hash,
        truncation_applied=prompt.metadata.truncation_applied,
        total_chars=prompt.metadata.total_chars,
        cells=len(bundle.recent_cells),
        history=len(prompt.messages) - 1,
        label=bundle.current_label.label,
        flags=list(bundle.active_flags),
        has_error=bundle.last_error is not None,
        finish_reason=result.finish_reason,
        backend_service_ms=(
            result.backend_service_time_s * 1000.0 if result.backend_service_time_s is not None else None
        ),
    )


def _stored_meta(meta: ContextMeta) -> dict[str, Any]:
    doc = meta.model_dump()
    doc.pop("backend_service_ms", None)  # timing is measurement, not provenance
    return doc


def create_app(settings: Settings, defer_init: bool = False) -> FastAPI:
    app = FastAPI(title="jelai middleware", version="0.1.0", openapi_url=None)
    ctx = AppContext(settings)
    app.state.ctx = ctx
    if not defer_init:
        ctx.initialize()

    def principal_of(authorization: str | None) -> Principal:
        snapshot = ctx.snapshot()
        return principal_from_header(authorization, snapshot.config.tokens)

    # -- health ---------------------------------------------------------------

    @app.get("/api/v1/healthz", response_model=Health)
    async def healthz() -> Health:
        return Health(live=True, ready=ctx.ready, reason=ctx.ready_reason)

    # -- telemetry ingestion ----------------------------------------------------

    @app.post("/api/v1/telemetry/batch", response_model=AckReport)
    async def telemetry_batch(
        batch: TelemetryBatch, authorization: str | None = Header(default=None)
    ) -> AckReport:
        snapshot = ctx.snapshot()
        principal = principal_from_header(authorization, snapshot.config.tokens)
        if len(batch.events) > MAX_BATCH_SIZE:
            raise HTTPException(status_code=413, detail=f"batch exceeds {MAX_BATCH_SIZE} events")

        accepted = 0
        rejected: list[Rejection] = []
        policy = snapshot.config.defaults.trace_policy
        for index, raw in enumerate(batch.events):
            try:
                event = validate_event(raw)
            except UnknownEventType as exc:
                rejected.append(Rejection(index=index, reason=str(exc)))
                continue
            except SchemaViolation as exc:
                rejected.append(Rejection(index=index, reason=str(exc)))
                continue
            if not principal.is_instructor and event.user_id != principal.user_id:
                rejected.append(Rejection(index=index, reason="user_id does not match token"))
                continue
            state = ctx.session(event.session_id, create=True)
            assert state is not None
            async with state.lock:
                owner = state.trace.user_id
                if owner is not None and owner != event.user_id:
                    rejected.append(Rejection(index=index, reason="session belongs to another user"))
                    continue
                if ctx.store.has_event(event.session_id, event.seq):
                    accepted += 1  # idempotent re-delivery
                    continue
                try:
                    new_trace = apply_event(state.trace, event, policy)
                except OutOfOrderEvent as exc:
                    rejected.append(Rejection(index=index, reason=str(exc)))
                    continue
                try:
                    ctx.store.append_event(event)
                except StorageFailure as exc:
                    rejected.append(Rejection(index=index, reason=f"storage failure: {exc}"))
                    continue
                state.trace = new_trace
                accepted += 1
        return AckReport(accepted=accepted, rejected=rejected)

    # -- chat -------------------------------------------------------------------

    def _find_stored_reply(session_id: str, student_message_id: str) -> ChatMessage | None:
        for record in ctx.store.read_all(session_id):
            body = record.body
            if isinstance(body, ChatMessage) and body.role == "tutor" and body.parent_message_id == student_message_id:
                return body
        return None

    def _response_from_stored(reply: ChatMessage) -> ChatResponse:
        meta = reply.context_meta or {}
        return ChatResponse(
            message_id=reply.message_id,
            text=reply.text,
            condition_id=reply.condition_id or "",
            created_at=format_timestamp(reply.sent_at),
            context_meta=ContextMeta(
                bundle_hash=meta.get("bundle_hash", ""),
                truncation_applied=bool(meta.get("truncation_applied", False)),
                total_chars=int(meta.get("total_chars", 0)),
                cells=int(meta.get("cells", 0)),
                history=int(meta.get("history", 0)),
                label=meta.get("label", "other"),
                flags=list(meta.get("flags", [])),
                has_error=bool(meta.get("has_error", False)),
                finish_reason=meta.get("finish_reason", "stop"),
            ),
        )

    async def _prepare_chat(
        snapshot: RuntimeSnapshot, principal: Principal, request: ChatRequest
    ) -> tuple[SessionState, EnrichedPrompt, ExperimentCondition, str] | ChatResponse:
        """Persist and fold the student turn, then build the prompt.

        Returns the stored reply directly when the message_id was already
        answered (client retry), making the chat POST idempotent.
        """
        config = snapshot.config
        text = request.text
        if not text.strip():
            raise HTTPException(status_code=422, detail="message text is empty")
        try:
            label = classify_help_seeking(text, config.rules)
        except EmptyMessage:
            raise HTTPException(status_code=422, detail="message text is empty") from None

        state = ctx.session(request.session_id, create=True)
        assert state is not None

        async with state.lock:
            owner = state.trace.user_id
            if owner is not None and owner != principal.user_id and not principal.is_instructor:
                raise HTTPException(status_code=403, detail="session belongs to another user")
            retry = ctx.store.has_chat(request.session_id, request.message_id)
            if not retry:
                student_msg = ChatMessage(
                    session_id=request.session_id,
                    message_id=request.message_id,
                    role="student",
                    text=text,
                    sent_at=_now(),
                    parent_message_id=request.parent_message_id,
                    label=label.label,
                    user_id=principal.user_id,
                    notebook_id=request.notebook_id,
                )
                ctx.store.append_chat(student_msg)
                state.trace = apply_chat(state.trace, student_msg, config.rules.verification_patterns)
            trace_snapshot = state.trace

        if retry:
            reply = _find_stored_reply(request.session_id, request.message_id)
            if reply is not None:
                return _response_from_stored(reply)

        _, condition, objective = _resolve_condition(config, trace_snapshot, request.notebook_id)
        bundle = build_context(trace_snapshot, condition.enrichment_policy, objective, (text, label))
        try:
            prompt = truncate_to_budget(
                render_prompt(bundle, condition, text), condition.enrichment_policy
            )
        except BudgetImpossible as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from None
        return state, prompt, condition, text

    async def _persist_tutor(
        state: SessionState,
        snapshot: RuntimeSnapshot,
        request: ChatRequest,
        prompt: EnrichedPrompt,
        condition: ExperimentCondition,
        result: CompletionResult,
    ) -> ChatResponse:
        meta = _context_meta(prompt, result)
        tutor_msg = ChatMessage(
            session_id=request.session_id,
            message_id=f"t-{uuid.uuid4().hex[:12]}",
            role="tutor",
            text=result.text,
            sent_at=_now(),
            parent_message_id=request.message_id,
            condition_id=condition.condition_id,
            context_meta=_stored_meta(meta),
        )
        async with state.lock:
            ctx.store.append_chat(tutor_msg)
            state.trace = apply_chat(state.trace, tutor_msg, snapshot.config.rules.verification_patterns)
        return ChatResponse(
            message_id=tutor_msg.message_id,
            text=result.text,
            condition_id=condition.condition_id,
            created_at=format_timestamp(tutor_msg.sent_at),
            context_meta=meta,
        )

    def _check_backpressure(snapshot: RuntimeSnapshot) -> None:
        limit = snapshot.config.defaults.max_concurrent_llm + snapshot.config.defaults.chat_queue_limit
        if ctx.chat_pending >= limit:
            raise HTTPException(status_code=503, detail="chat queue full")

    @app.post("/api/v1/chat")
    async def chat(request: ChatRequest, raw_request: Request, authorization: str | None = Header(default=None)):
        snapshot = ctx.snapshot()
        principal = principal_from_header(authorization, snapshot.config.tokens)
        wants_stream = "text/event-stream" in (raw_request.headers.get("accept") or "")
        _check_backpressure(snapshot)

        ctx.chat_pending += 1
        try:
            prepared = await _prepare_chat(snapshot, principal, request)
            if isinstance(prepared, ChatResponse):
                return prepared
            state, prompt, condition, _ = prepared
            if not wants_stream:
                result = await snapshot.gateway.complete(prompt, condition.model_params)
                return await _persist_tutor(state, snapshot, request, prompt, condition, result)
            return StreamingResponse(
                _chat_stream(state, snapshot, request, prompt, condition),
                media_type="text/event-stream",
            )
        finally:
            ctx.chat_pending -= 1

    async def _chat_stream(
        state: SessionState,
        snapshot: RuntimeSnapshot,
        request: ChatRequest,
        prompt: EnrichedPrompt,
        condition: ExperimentCondition,
    ):
        queue: asyncio.Queue[str | None] = asyncio.Queue()

        async def sink(chunk: str) -> None:
            await queue.put(chunk)

        async def produce() -> CompletionResult:
            try:
                return await snapshot.gateway.stream_complete(prompt, condition.model_params, sink)
            finally:
                await queue.put(None)

        producer = asyncio.create_task(produce())
        while True:
            chunk = await queue.get()
            if chunk is None:
                break
            yield f"data: {json.dumps({'delta': chunk})}\n\n"
        result = await producer
        response = await _persist_tutor(state, snapshot, request, prompt, condition, result)
        final = {"done": True, **response.model_dump()}
        yield f"data: {json.dumps(final)}\n\n"

    # -- session inspection -------------------------------------------------------

    @app.get("/api/v1/sessions/{session_id}/trace")
    async def get_trace(session_id: str, authorization: str | None = Header(default=None)):
        principal = principal_of(authorization)
        state = ctx.session(session_id)
        if state is None:
            raise HTTPException(status_code=404, detail="unknown session")
        async with state.lock:
            trace = state.trace
        if not principal.is_instructor and trace.user_id not in (None, principal.user_id):
            raise HTTPException(status_code=403, detail="not your session")
        return JSONResponse(trace.to_dict())

    @app.get("/api/v1/sessions/{session_id}/context-preview")
    async def context_preview(session_id: str, authorization: str | None = Header(default=None)):
        snapshot = ctx.snapshot()
        principal = principal_from_header(authorization, snapshot.config.tokens)
        if not principal.is_instructor:
            raise HTTPException(status_code=403, detail="instructor role required")
        state = ctx.session(session_id)
        if state is None:
            raise HTTPException(status_code=404, detail="unknown session")
        async with state.lock:
            trace = state.trace
        _, condition, objective = _resolve_condition(snapshot.config, trace, None)
        bundle = build_context(trace, condition.enrichment_policy, objective, None)
        return JSONResponse(bundle.to_dict())

    # -- reports --------------------------------------------------------------------

    @app.get("/api/v1/experiments/{experiment_id}/report")
    async def experiment_report(
        experiment_id: str,
        format: str = Query(default="json"),
        authorization: str | None = Header(default=None),
    ):
        snapshot = ctx.snapshot()
        principal = principal_from_header(authorization, snapshot.config.tokens)
        if not principal.is_instructor:
            raise HTTPException(status_code=403, detail="instructor role required")
        experiment = snapshot.config.experiments.get(experiment_id)
        if experiment is None:
            raise HTTPException(status_code=404, detail="unknown experiment")
        if format not in ("csv", "json"):
            raise HTTPException(status_code=406, detail="format must be csv or json")
        rows = build_report(
            ctx.store,
            [c.condition_id for c in experiment.conditions],
            snapshot.config.rules,
            snapshot.config.defaults.trace_policy,
        )
        if format == "csv":
            return PlainTextResponse(render_csv(rows), media_type="text/csv; charset=utf-8")
        return JSONResponse(render_json(rows))

    # -- admin --------------------------------------------------------------------

    @app.post("/api/v1/admin/reload", response_model=ReloadResult)
    async def reload_config(authorization: str | None = Header(default=None)) -> ReloadResult:
        principal = principal_of(authorization)
        if not principal.is_instructor:
            raise HTTPException(status_code=403, detail="instructor role required")
        try:
            config = ctx.reload_config()
        except ConfigError as exc:
            raise HTTPException(status_code=400, detail=exc.violations) from None
        return ReloadResult(reloaded=True, experiments=len(config.experiments))

    # -- optional static playground --------------------------------------------------

    playground = settings.playground_dir
    if playground is not None and playground.exists():
        from fastapi.staticfiles import StaticFiles

        app.mount("/playground", StaticFiles(directory=playground, html=True), name="playground")

    return app
