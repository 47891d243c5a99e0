// Key-value persistence behind the seq counter and the offline queue.
// localStorage in the browser; an in-memory map everywhere else (tests).

export interface KeyValueStore {
    get(key: string): string | null;
    set(key: string, value: string): void;
    remove(key: string): void;
}

export class MemoryStore implements KeyValueStore {
    private data = new Map<string, string>();

    get(key: string): string | null {
        return this.data.has(key) ? (this.data.get(key) as string) : null;
    }

    set(key: string, value: string): void {
        this.data.set(key, value);
    }

    remove(key: string): void {
        this.data.delete(key);
    }
}

class LocalStorageStore implements KeyValueStore {
    get(key: string): string | null {
        try {
            return localStorage.getItem(key);
        } catch {
            return null;
        }
    }

    set(key: string, value: string): void {
        try {
            localStorage.setItem(key, value);
        } catch {
            // Quota or privacy mode: telemetry still flows, it just won't
            // survive a reload.
        }
    }

    remove(key: string): void {
        try {
            localStorage.removeItem(key);
        } catch {
            /* ignore */
        }
    }
}

export function defaultStore(): KeyValueStore {
    if (typeof localStorage !== "undefined") {
        return new LocalStorageStore();
    }
    return new MemoryStore();
}
