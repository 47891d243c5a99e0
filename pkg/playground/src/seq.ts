// Per-session monotone event counter.
//
// The server treats (session_id, seq) as the event identity, so the counter
// must never repeat or go backwards — including across page reloads and
// reconnects. It is persisted on every increment.

import { KeyValueStore } from "./storage.js";

export class SeqCounter {
    private current: number;
    private readonly key: string;

    constructor(private readonly store: KeyValueStore, sessionId: string) {
        this.key = `jelai.seq.${sessionId}`;
        const saved = store.get(this.key);
        this.current = saved ? parseInt(saved, 10) || 0 : 0;
    }

    peek(): number {
        return this.current;
    }

    next(): number {
        this.current += 1;
        this.store.set(this.key, String(this.current));
        return this.current;
    }
}
