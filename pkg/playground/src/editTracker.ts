// Keystroke aggregation: an 800 ms idle debounce folds a burst of keypresses
// into one cell_edit delta. Individual keypress content never leaves the
// browser — only character counts, plus a full source snapshot on every 20th
// edit event (and on every execution, which always carries the source).

export const DEBOUNCE_MS = 800;
export const SNAPSHOT_EVERY = 20;

export interface EditDelta {
    cellId: string;
    charsAdded: number;
    charsRemoved: number;
    sourceSnapshot?: string;
}

type FlushFn = (delta: EditDelta) => void;
type Timer = ReturnType<typeof setTimeout>;

/** Session-wide counter deciding which edit events carry a snapshot. */
export class SnapshotCadence {
    private count = 0;

    constructor(private readonly every: number = SNAPSHOT_EVERY) {}

    wantsSnapshot(): boolean {
        this.count += 1;
        return this.count % this.every === 0;
    }
}

export class EditTracker {
    private pendingAdded = 0;
    private pendingRemoved = 0;
    private lastSource = "";
    private timer: Timer | null = null;

    constructor(
        private readonly cellId: string,
        private readonly cadence: SnapshotCadence,
        private readonly flushFn: FlushFn,
        private readonly debounceMs: number = DEBOUNCE_MS,
    ) {}

    /** Record one input burst: the caller diffs old/new source lengths. */
    record(charsAdded: number, charsRemoved: number, currentSource: string): void {
        this.pendingAdded += charsAdded;
        this.pendingRemoved += charsRemoved;
        this.lastSource = currentSource;
        if (this.timer !== null) {
            clearTimeout(this.timer);
        }
        this.timer = setTimeout(() => this.flush(), this.debounceMs);
    }

    /** Emit the pending delta immediately (also called before executions). */
    flush(): void {
        if (this.timer !== null) {
            clearTimeout(this.timer);
            this.timer = null;
        }
        if (this.pendingAdded + this.pendingRemoved < 1) {
            return; // nothing observable happened
        }
        const delta: EditDelta = {
            cellId: this.cellId,
            charsAdded: this.pendingAdded,
            charsRemoved: this.pendingRemoved,
        };
        if (this.cadence.wantsSnapshot()) {
            delta.sourceSnapshot = this.lastSource;
        }
        this.pendingAdded = 0;
        this.pendingRemoved = 0;
        this.flushFn(delta);
    }
}

/** Length-diff heuristic turning a textarea input event into a delta. */
export function diffLengths(before: string, after: string): { added: number; removed: number } {
    if (after.length > before.length) {
        return { added: after.length - before.length, removed: 0 };
    }
    if (after.length < before.length) {
        return { added: 0, removed: before.length - after.length };
    }
    // Same length but changed content: count it as one replace.
    return before === after ? { added: 0, removed: 0 } : { added: 1, removed: 1 };
}
