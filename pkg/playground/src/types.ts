// Wire types for the middleware protocol (jelai.telemetry.v1).

export const SCHEMA_VERSION = "jelai.telemetry.v1";

export type EventType =
    | "cell_edit"
    | "cell_execute"
    | "notebook_open"
    | "notebook_save"
    | "ui_action";

export interface TelemetryEvent {
    schema_version: typeof SCHEMA_VERSION;
    session_id: string;
    user_id: string;
    seq: number;
    event_time: string; // YYYY-MM-DDThh:mm:ss.mmmZ
    event_type: EventType;
    payload: Record<string, unknown>;
}

export interface AckReport {
    accepted: number;
    rejected: { index: number; reason: string }[];
}

export interface ChatRequestBody {
    session_id: string;
    message_id: string;
    text: string;
    notebook_id?: string;
}

export interface ContextMeta {
    bundle_hash: string;
    truncation_applied: boolean;
    total_chars: number;
    cells: number;
    history: number;
    label: string;
    flags: string[];
    has_error: boolean;
    finish_reason: string;
    backend_service_ms?: number | null;
}

export interface ChatResponseBody {
    message_id: string;
    text: string;
    condition_id: string;
    created_at: string;
    context_meta: ContextMeta;
}

export type RunOutcome =
    | { success: true; output: string }
    | { success: false; error_name: string; traceback: string };

export interface StubRule {
    pattern: string;
    regex?: boolean;
    outcome: RunOutcome;
}

export interface PlaygroundCell {
    cell_id: string;
    source: string;
    last_result: RunOutcome | null;
    dirty: boolean;
}
