// Ordered, offline-safe outbound telemetry queue.
//
// Events enter the queue the moment the UI produces them and leave only after
// the server acknowledges the batch, so a dropped connection loses nothing:
// the queue persists across reloads and flushes again on reconnect. Delivery
// is at-least-once in seq order; the server dedupes by (session_id, seq).

import { KeyValueStore } from "./storage.js";
import { AckReport, TelemetryEvent } from "./types.js";

export type PostBatch = (events: TelemetryEvent[]) => Promise<AckReport>;

const BATCH_LIMIT = 100;

export class OutboundQueue {
    private items: TelemetryEvent[];
    private readonly key: string;
    private inflight: Promise<boolean> | null = null;
    private retryTimer: ReturnType<typeof setTimeout> | null = null;
    private retryDelayMs = 1000;

    onPendingChange: ((pending: number) => void) | null = null;

    constructor(
        private readonly store: KeyValueStore,
        sessionId: string,
        private readonly post: PostBatch,
        private readonly maxRetryDelayMs: number = 30_000,
    ) {
        this.key = `jelai.queue.${sessionId}`;
        this.items = this.load();
    }

    private load(): TelemetryEvent[] {
        const raw = this.store.get(this.key);
        if (!raw) {
            return [];
        }
        try {
            const parsed = JSON.parse(raw);
            return Array.isArray(parsed) ? (parsed as TelemetryEvent[]) : [];
        } catch {
            return [];
        }
    }

    private save(): void {
        this.store.set(this.key, JSON.stringify(this.items));
        this.onPendingChange?.(this.items.length);
    }

    get pending(): number {
        return this.items.length;
    }

    enqueue(event: TelemetryEvent): void {
        this.items.push(event);
        this.save();
        void this.flush();
    }

    /** Push everything queued, oldest first; reschedules itself on failure.
     * Concurrent callers share the in-flight drain (events stay ordered). */
    flush(): Promise<boolean> {
        if (this.inflight === null) {
            this.inflight = this.drain().finally(() => {
                this.inflight = null;
            });
        }
        return this.inflight;
    }

    private async drain(): Promise<boolean> {
        while (this.items.length > 0) {
            const batch = this.items.slice(0, BATCH_LIMIT);
            let ack: AckReport;
            try {
                ack = await this.post(batch);
            } catch {
                this.scheduleRetry();
                return false;
            }
            // Acknowledged (accepted or deduped or rejected-with-reason):
            // either way the server has ruled on these events; keeping
            // rejected ones would just replay the same rejection.
            this.items = this.items.slice(batch.length);
            this.save();
            if (ack.rejected.length > 0) {
                console.warn("telemetry rejections:", ack.rejected);
            }
        }
        this.retryDelayMs = 1000;
        return true;
    }

    private scheduleRetry(): void {
        if (this.retryTimer !== null) {
            return;
        }
        const delay = this.retryDelayMs;
        this.retryDelayMs = Math.min(this.retryDelayMs * 2, this.maxRetryDelayMs);
        this.retryTimer = setTimeout(() => {
            this.retryTimer = null;
            void this.flush();
        }, delay);
    }
}
