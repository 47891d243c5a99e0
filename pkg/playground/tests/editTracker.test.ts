import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { EditDelta, EditTracker, SnapshotCadence, diffLengths } from "../src/editTracker.js";

describe("edit tracking", () => {
    beforeEach(() => vi.useFakeTimers());
    afterEach(() => vi.useRealTimers());

    function tracker(flushed: EditDelta[], cadence = new SnapshotCadence()) {
        return new EditTracker("c1", cadence, (delta) => flushed.push(delta), 800);
    }

    it("folds a typing burst into one event after the idle window", () => {
        const flushed: EditDelta[] = [];
        const t = tracker(flushed);
        for (let i = 0; i < 10; i++) {
            t.record(1, 0, "x".repeat(i + 1));
            vi.advanceTimersByTime(100); // keeps typing inside the window
        }
        expect(flushed).toHaveLength(0);
        vi.advanceTimersByTime(800);
        expect(flushed).toEqual([{ cellId: "c1", charsAdded: 10, charsRemoved: 0 }]);
    });

    it("counts deletions", () => {
        const flushed: EditDelta[] = [];
        const t = tracker(flushed);
        t.record(0, 3, "ab");
        vi.advanceTimersByTime(800);
        expect(flushed).toEqual([{ cellId: "c1", charsAdded: 0, charsRemoved: 3 }]);
    });

    it("separate bursts produce separate events", () => {
        const flushed: EditDelta[] = [];
        const t = tracker(flushed);
        t.record(5, 0, "aaaaa");
        vi.advanceTimersByTime(800);
        t.record(2, 1, "aaaaaa");
        vi.advanceTimersByTime(800);
        expect(flushed).toHaveLength(2);
    });

    it("every 20th edit event carries a source snapshot", () => {
        const flushed: EditDelta[] = [];
        const t = tracker(flushed);
        for (let i = 0; i < 21; i++) {
            t.record(1, 0, `source v${i}`);
            vi.advanceTimersByTime(800); // each burst flushes as its own event
        }
        expect(flushed).toHaveLength(21);
        expect(flushed[19]?.sourceSnapshot).toBe("source v19");
        expect(flushed.filter((d) => d.sourceSnapshot !== undefined)).toHaveLength(1);
    });

    it("the snapshot cadence spans cells (session-wide counter)", () => {
        const flushed: EditDelta[] = [];
        const cadence = new SnapshotCadence(3);
        const a = new EditTracker("a", cadence, (d) => flushed.push(d), 800);
        const b = new EditTracker("b", cadence, (d) => flushed.push(d), 800);
        a.record(1, 0, "a1");
        vi.advanceTimersByTime(800);
        b.record(1, 0, "b1");
        vi.advanceTimersByTime(800);
        a.record(1, 0, "a2");
        vi.advanceTimersByTime(800);
        expect(flushed.map((d) => d.sourceSnapshot)).toEqual([undefined, undefined, "a2"]);
    });

    it("flush() before execution emits the pending burst immediately", () => {
        const flushed: EditDelta[] = [];
        const t = tracker(flushed);
        t.record(4, 0, "abcd");
        t.flush();
        expect(flushed).toHaveLength(1);
        vi.advanceTimersByTime(800);
        expect(flushed).toHaveLength(1); // no double flush
    });

    it("an empty burst never emits (delta invariant: added+removed >= 1)", () => {
        const flushed: EditDelta[] = [];
        const t = tracker(flushed);
        t.record(0, 0, "same");
        vi.advanceTimersByTime(800);
        expect(flushed).toHaveLength(0);
    });
});

describe("length diffing", () => {
    it("maps textarea changes to deltas", () => {
        expect(diffLengths("ab", "abc")).toEqual({ added: 1, removed: 0 });
        expect(diffLengths("abc", "a")).toEqual({ added: 0, removed: 2 });
        expect(diffLengths("abc", "abd")).toEqual({ added: 1, removed: 1 });
        expect(diffLengths("abc", "abc")).toEqual({ added: 0, removed: 0 });
    });
});
