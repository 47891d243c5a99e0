import { describe, expect, it } from "vitest";

import { ApiClient, sseData } from "../src/api.js";
import { ChatResponseBody } from "../src/types.js";

function sseStream(frames: string[]): ReadableStream<Uint8Array> {
    const encoder = new TextEncoder();
    return new ReadableStream({
        start(controller) {
            for (const frame of frames) {
                controller.enqueue(encoder.encode(frame));
            }
            controller.close();
        },
    });
}

const FINAL: ChatResponseBody = {
    message_id: "t-1",
    text: "hello there",
    condition_id: "pedagogical",
    created_at: "2026-03-02T10:00:00.000Z",
    context_meta: {
        bundle_hash: "0".repeat(64),
        truncation_applied: false,
        total_chars: 42,
        cells: 0,
        history: 0,
        label: "other",
        flags: [],
        has_error: false,
        finish_reason: "stop",
    },
};

describe("sse parsing", () => {
    it("yields data payloads across chunk boundaries", async () => {
        const frames = ['data: {"delta": "he', 'llo"}\n\ndata: {"del', 'ta": " world"}\n\n'];
        const seen: string[] = [];
        for await (const data of sseData(sseStream(frames))) {
            seen.push(data);
        }
        expect(seen).toEqual(['{"delta": "hello"}', '{"delta": " world"}']);
    });
});

describe("chat client", () => {
    function fakeFetch(frames: string[]): typeof fetch {
        return (async () =>
            new Response(sseStream(frames), {
                status: 200,
                headers: { "Content-Type": "text/event-stream" },
            })) as typeof fetch;
    }

    it("streams deltas then returns the final document", async () => {
        const frames = [
            'data: {"delta": "hello"}\n\n',
            'data: {"delta": " there"}\n\n',
            `data: ${JSON.stringify({ done: true, ...FINAL })}\n\n`,
        ];
        const client = new ApiClient("http://server", "tok", fakeFetch(frames));
        const deltas: string[] = [];
        const result = await client.chat(
            { session_id: "s", message_id: "m1", text: "hi" },
            (chunk) => deltas.push(chunk),
        );
        expect(deltas.join("")).toBe("hello there");
        expect(result.final.text).toBe("hello there");
        expect(result.fellBack).toBe(false);
    });

    it("flags a fallback reply so the UI can style it", async () => {
        const fallbackFinal = {
            ...FINAL,
            text: "try again in a moment",
            context_meta: { ...FINAL.context_meta, finish_reason: "error_fallback" },
        };
        const frames = [
            'data: {"delta": "partial"}\n\n',
            'data: {"delta": "try again in a moment"}\n\n',
            `data: ${JSON.stringify({ done: true, ...fallbackFinal })}\n\n`,
        ];
        const client = new ApiClient("http://server", "tok", fakeFetch(frames));
        const result = await client.chat({ session_id: "s", message_id: "m1", text: "hi" }, () => {});
        expect(result.fellBack).toBe(true);
        expect(result.final.text).toBe("try again in a moment");
    });

    it("posts telemetry batches with bearer auth", async () => {
        let captured: { url: string; init: RequestInit } | null = null;
        const fetchFn = (async (url: RequestInfo | URL, init?: RequestInit) => {
            captured = { url: String(url), init: init ?? {} };
            return new Response(JSON.stringify({ accepted: 1, rejected: [] }), { status: 200 });
        }) as typeof fetch;
        const client = new ApiClient("http://server", "tok-x", fetchFn);
        const ack = await client.postTelemetryBatch([
            {
                schema_version: "jelai.telemetry.v1",
                session_id: "s",
                user_id: "u",
                seq: 1,
                event_time: "2026-03-02T10:00:00.000Z",
                event_type: "ui_action",
                payload: { action_name: "x" },
            },
        ]);
        expect(ack.accepted).toBe(1);
        expect(captured!.url).toBe("http://server/api/v1/telemetry/batch");
        const headers = captured!.init.headers as Record<string, string>;
        expect(headers.Authorization).toBe("Bearer tok-x");
    });

    it("raises on http errors so the queue keeps the events", async () => {
        const fetchFn = (async () => new Response("{}", { status: 503 })) as typeof fetch;
        const client = new ApiClient("http://server", "tok", fetchFn);
        await expect(client.postTelemetryBatch([])).rejects.toThrow("503");
    });
});
