// Telemetry event builders. Every user action the protocol models goes
// through one of these, so schema conformance is centralized here.

import { SeqCounter } from "./seq.js";
import { RunOutcome, SCHEMA_VERSION, TelemetryEvent } from "./types.js";

export interface SessionContext {
    sessionId: string;
    userId: string;
    seq: SeqCounter;
    now?: () => Date;
}

function eventTime(ctx: SessionContext): string {
    const now = ctx.now ? ctx.now() : new Date();
    return now.toISOString(); // YYYY-MM-DDThh:mm:ss.mmmZ — the canonical form
}

function base(ctx: SessionContext, type: TelemetryEvent["event_type"], payload: Record<string, unknown>): TelemetryEvent {
    return {
        schema_version: SCHEMA_VERSION,
        session_id: ctx.sessionId,
        user_id: ctx.userId,
        seq: ctx.seq.next(),
        event_time: eventTime(ctx),
        event_type: type,
        payload,
    };
}

export function buildNotebookOpen(ctx: SessionContext, notebookId: string): TelemetryEvent {
    return base(ctx, "notebook_open", { notebook_id: notebookId });
}

export function buildNotebookSave(ctx: SessionContext, notebookId: string): TelemetryEvent {
    return base(ctx, "notebook_save", { notebook_id: notebookId });
}

export function buildUiAction(ctx: SessionContext, actionName: string, detail?: Record<string, unknown>): TelemetryEvent {
    const payload: Record<string, unknown> = { action_name: actionName };
    if (detail !== undefined) {
        payload.detail = detail;
    }
    return base(ctx, "ui_action", payload);
}

export function buildCellEdit(
    ctx: SessionContext,
    cellId: string,
    charsAdded: number,
    charsRemoved: number,
    sourceSnapshot?: string,
): TelemetryEvent {
    const payload: Record<string, unknown> = {
        cell_id: cellId,
        chars_added: charsAdded,
        chars_removed: charsRemoved,
    };
    if (sourceSnapshot !== undefined) {
        payload.source_snapshot = sourceSnapshot;
    }
    return base(ctx, "cell_edit", payload);
}

export function buildCellExecute(
    ctx: SessionContext,
    cellId: string,
    cellIndex: number,
    source: string,
    outcome: RunOutcome,
    executionCount: number,
): TelemetryEvent {
    const payload: Record<string, unknown> = {
        cell_id: cellId,
        cell_index: cellIndex,
        source,
        success: outcome.success,
        execution_count: executionCount,
    };
    if (!outcome.success) {
        payload.error_name = outcome.error_name;
        payload.error_traceback = outcome.traceback;
    }
    return base(ctx, "cell_execute", payload);
}
