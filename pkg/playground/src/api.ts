// HTTP client for the middleware: telemetry batches plus streaming chat.
// Talks only the public wire protocol — no build-time coupling to the server.

import { AckReport, ChatRequestBody, ChatResponseBody, TelemetryEvent } from "./types.js";

export interface ChatStreamResult {
    final: ChatResponseBody;
    fellBack: boolean;
}

export class ApiClient {
    constructor(
        private readonly baseUrl: string,
        private readonly token: string,
        private readonly fetchFn: typeof fetch = fetch,
    ) {}

    private headers(extra: Record<string, string> = {}): Record<string, string> {
        return {
            Authorization: `Bearer ${this.token}`,
            "Content-Type": "application/json",
            ...extra,
        };
    }

    async postTelemetryBatch(events: TelemetryEvent[]): Promise<AckReport> {
        const response = await this.fetchFn(`${this.baseUrl}/api/v1/telemetry/batch`, {
            method: "POST",
            headers: this.headers(),
            body: JSON.stringify({ events }),
        });
        if (!response.ok) {
            throw new Error(`telemetry batch failed: HTTP ${response.status}`);
        }
        return (await response.json()) as AckReport;
    }

    /**
     * Send a chat message and stream the tutor reply. `onDelta` fires per
     * chunk; the returned final document is authoritative (after a mid-stream
     * backend failure its text is the fallback and replaces the partial).
     */
    async chat(body: ChatRequestBody, onDelta: (chunk: string) => void): Promise<ChatStreamResult> {
        const response = await this.fetchFn(`${this.baseUrl}/api/v1/chat`, {
            method: "POST",
            headers: this.headers({ Accept: "text/event-stream" }),
            body: JSON.stringify(body),
        });
        if (!response.ok || !response.body) {
            throw new Error(`chat failed: HTTP ${response.status}`);
        }
        let final: ChatResponseBody | null = null;
        for await (const data of sseData(response.body)) {
            const doc = JSON.parse(data) as { done?: boolean; delta?: string } & Partial<ChatResponseBody>;
            if (doc.done) {
                final = doc as unknown as ChatResponseBody;
            } else if (typeof doc.delta === "string") {
                onDelta(doc.delta);
            }
        }
        if (final === null) {
            throw new Error("chat stream ended without a final document");
        }
        return { final, fellBack: final.context_meta.finish_reason === "error_fallback" };
    }
}

/** Parse `data:` payloads out of an SSE byte stream. */
export async function* sseData(stream: ReadableStream<Uint8Array>): AsyncGenerator<string> {
    const reader = stream.getReader();
    const decoder = new TextDecoder();
    let buffer = "";
    try {
        for (;;) {
            const { value, done } = await reader.read();
            if (done) {
                break;
            }
            buffer += decoder.decode(value, { stream: true });
            let newline = buffer.indexOf("\n");
            while (newline >= 0) {
                const line = buffer.slice(0, newline).trimEnd();
                buffer = buffer.slice(newline + 1);
                if (line.startsWith("data:")) {
                    yield line.slice(5).trim();
                }
                newline = buffer.indexOf("\n");
            }
        }
    } finally {
        reader.releaseLock();
    }
}
