// End-to-end against a live middleware: the exact module pipeline the browser
// uses (stub runner -> event builders -> offline queue -> chat stream) talks
// to a real server over HTTP. Skipped when the Python package is not
// installed in the environment.

import { mkdtempSync, readFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { fileURLToPath } from "node:url";
import { ChildProcess, spawn, spawnSync } from "node:child_process";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { SessionContext, buildCellExecute, buildNotebookOpen } from "../src/events.js";
import { OutboundQueue } from "../src/queue.js";
import { StubRunner } from "../src/runner.js";
import { SeqCounter } from "../src/seq.js";
import { MemoryStore } from "../src/storage.js";
import { TelemetryEvent } from "../src/types.js";

const PYTHON = process.env.PYTHON ?? "python3";
const REPO = fileURLToPath(new URL("../..", import.meta.url));
const TOKEN = "dev-token-alice";
const USER = "alice";

const pythonReady = spawnSync(PYTHON, ["-c", "import jelai"], { cwd: REPO }).status === 0;

const BOOT = `
import socket, sys
from pathlib import Path
import uvicorn
from jelai.service.app import Settings, create_app

app = create_app(Settings(
    config_path=Path("config/example.json"),
    data_dir=Path(sys.argv[1]),
    mock_llm=True,
))
sock = socket.socket()
sock.bind(("127.0.0.1", 0))
print(sock.getsockname()[1], flush=True)
uvicorn.Server(uvicorn.Config(app, log_level="error")).run(sockets=[sock])
`;

describe.skipIf(!pythonReady)("playground modules against a live middleware", () => {
    let server: ChildProcess;
    let base = "";

    beforeAll(async () => {
        const dataDir = mkdtempSync(join(tmpdir(), "jelai-pg-"));
        server = spawn(PYTHON, ["-c", BOOT, dataDir], { cwd: REPO, stdio: ["ignore", "pipe", "inherit"] });
        const port = await new Promise<string>((resolve, reject) => {
            const timer = setTimeout(() => reject(new Error("server did not print a port")), 15_000);
            server.stdout!.once("data", (chunk: Buffer) => {
                clearTimeout(timer);
                resolve(chunk.toString().trim());
            });
            server.once("exit", (code) => reject(new Error(`server exited early: ${code}`)));
        });
        base = `http://127.0.0.1:${port}`;
        for (let i = 0; i < 100; i++) {
            try {
                const health = await fetch(`${base}/api/v1/healthz`);
                if (health.ok && (await health.json()).ready) {
                    return;
                }
            } catch {
                /* not up yet */
            }
            await new Promise((r) => setTimeout(r, 100));
        }
        throw new Error("server never became ready");
    }, 30_000);

    afterAll(() => {
        server?.kill();
    });

    it("execute-then-chat reproduces the context fingerprint through the wire", async () => {
        const session = `pg-live-${Date.now()}`;
        const api = new ApiClient(base, TOKEN);
        const store = new MemoryStore();
        const ctx: SessionContext = { sessionId: session, userId: USER, seq: new SeqCounter(store, session) };
        const queue = new OutboundQueue(store, session, (events) => api.postTelemetryBatch(events));
        const runner = StubRunner.fromConfig(JSON.parse(readFileSync(join(REPO, "playground", "rules.json"), "utf-8")));

        queue.enqueue(buildNotebookOpen(ctx, "nb-pandas-intro"));
        const outcome = runner.run("total = count(rows)  # BUG");
        expect(outcome.success).toBe(false);
        queue.enqueue(buildCellExecute(ctx, "c1", 0, "total = count(rows)  # BUG", outcome, 1));
        expect(await queue.flush()).toBe(true);
        expect(queue.pending).toBe(0);

        const deltas: string[] = [];
        const result = await api.chat(
            { session_id: session, message_id: `${session}-m1`, text: "why did this fail?", notebook_id: "nb-pandas-intro" },
            (chunk) => deltas.push(chunk),
        );
        expect(result.final.text).toBe(deltas.join(""));
        expect(result.final.text.startsWith("MOCK[cells=1,history=0,label=instrumental,flags=]: why did this fail?")).toBe(true);
        expect(result.final.context_meta.has_error).toBe(true);
        expect(result.fellBack).toBe(false);
    }, 20_000);

    it("offline queue flush survives a forced disconnect with no duplicates server-side", async () => {
        const session = `pg-offline-${Date.now()}`;
        const api = new ApiClient(base, TOKEN);
        const store = new MemoryStore();
        const ctx: SessionContext = { sessionId: session, userId: USER, seq: new SeqCounter(store, session) };

        let online = false;
        let firstBatchRetried = false;
        const queue = new OutboundQueue(store, session, async (events: TelemetryEvent[]) => {
            if (!online) {
                throw new TypeError("fetch failed"); // what a dead network looks like
            }
            const ack = await api.postTelemetryBatch(events);
            if (events.some((e) => e.seq === 1)) {
                firstBatchRetried = true;
            }
            return ack;
        });

        queue.enqueue(buildNotebookOpen(ctx, "nb-pandas-intro"));
        queue.enqueue(buildCellExecute(ctx, "c1", 0, "print(1)", { success: true, output: "1" }, 1));
        await queue.flush();
        expect(queue.pending).toBe(2); // disconnected: held locally

        online = true; // "reconnect"
        expect(await queue.flush()).toBe(true);
        expect(queue.pending).toBe(0);
        expect(firstBatchRetried).toBe(true);

        // A client crash right after send would replay the same events: the
        // server must acknowledge without duplicating.
        const replay = [
            buildNotebookOpen({ ...ctx, seq: new SeqCounter(new MemoryStore(), session) }, "nb-pandas-intro"),
        ];
        const ack = await api.postTelemetryBatch(replay); // same (session, seq=1)
        expect(ack.accepted).toBe(1);
        expect(ack.rejected).toEqual([]);

        const trace = await fetch(`${base}/api/v1/sessions/${session}/trace`, {
            headers: { Authorization: `Bearer ${TOKEN}` },
        }).then((r) => r.json());
        expect(trace.executions_total).toBe(1);
        expect(trace.last_seq).toBe(2); // two unique events, replay deduped
    }, 20_000);
});
