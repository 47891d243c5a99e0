// Playground shell: notebook-style cells beside a tutor chat panel.
//
// Configuration comes from the query string (so the page stays a static
// asset): ?server=…&token=…&session=…&user=…&notebook=…&rules=…&tutor=…
// Unset values fall back to same-origin, a generated session id, and the
// bundled rules.json.

import { ApiClient } from "./api.js";
import { DEBOUNCE_MS, EditTracker, SnapshotCadence, diffLengths } from "./editTracker.js";
import {
    SessionContext,
    buildCellEdit,
    buildCellExecute,
    buildNotebookOpen,
    buildUiAction,
} from "./events.js";
import { OutboundQueue } from "./queue.js";
import { StubRunner } from "./runner.js";
import { SeqCounter } from "./seq.js";
import { defaultStore } from "./storage.js";
import { PlaygroundCell } from "./types.js";

interface Config {
    server: string;
    token: string;
    session: string;
    user: string;
    notebook: string;
    rulesUrl: string;
    tutorName: string;
}

function readConfig(): Config {
    const params = new URLSearchParams(location.search);
    const store = defaultStore();
    let session = params.get("session") ?? store.get("jelai.last-session") ?? "";
    if (!session) {
        session = `pg-${crypto.randomUUID()}`;
    }
    store.set("jelai.last-session", session);
    return {
        server: params.get("server") ?? "",
        token: params.get("token") ?? "",
        session,
        user: params.get("user") ?? "student",
        notebook: params.get("notebook") ?? "nb-pandas-intro",
        rulesUrl: params.get("rules") ?? "./rules.json",
        tutorName: params.get("tutor") ?? "Juno",
    };
}

function el<K extends keyof HTMLElementTagNameMap>(
    tag: K,
    className?: string,
    text?: string,
): HTMLElementTagNameMap[K] {
    const node = document.createElement(tag);
    if (className) {
        node.className = className;
    }
    if (text !== undefined) {
        node.textContent = text;
    }
    return node;
}

async function start(): Promise<void> {
    const config = readConfig();
    const store = defaultStore();
    const api = new ApiClient(config.server, config.token);
    const seq = new SeqCounter(store, config.session);
    const ctx: SessionContext = { sessionId: config.session, userId: config.user, seq };
    const queue = new OutboundQueue(store, config.session, (events) => api.postTelemetryBatch(events));
    const cadence = new SnapshotCadence();

    let runner = new StubRunner();
    try {
        const response = await fetch(config.rulesUrl);
        if (response.ok) {
            runner = StubRunner.fromConfig(await response.json());
        }
    } catch {
        // No rules file: the built-in default success rule still applies.
    }

    const cells: PlaygroundCell[] = [];
    let executionCount = 0;
    let chatCount = 0;

    // -- layout ---------------------------------------------------------------

    const root = document.getElementById("app") as HTMLElement;
    const cellsPane = el("div", "cells");
    const chatPane = el("div", "chat");
    root.append(cellsPane, chatPane);

    const toolbar = el("div", "toolbar");
    const addButton = el("button", "add-cell", "+ cell");
    const pendingBadge = el("span", "badge hidden", "");
    const sessionTag = el("span", "session-tag", `session ${config.session}`);
    toolbar.append(addButton, pendingBadge, sessionTag);
    cellsPane.append(toolbar);

    queue.onPendingChange = (pending) => {
        pendingBadge.textContent = pending > 0 ? `${pending} event(s) pending` : "";
        pendingBadge.classList.toggle("hidden", pending === 0);
    };

    const transcript = el("div", "transcript");
    const chatForm = el("form", "chat-form");
    const chatInput = el("textarea", "chat-input") as HTMLTextAreaElement;
    chatInput.placeholder = `Ask ${config.tutorName}…`;
    const sendButton = el("button", "send", "Send") as HTMLButtonElement;
    sendButton.type = "submit";
    sendButton.disabled = true;
    chatForm.append(chatInput, sendButton);
    chatPane.append(el("div", "chat-title", config.tutorName), transcript, chatForm);

    chatInput.addEventListener("input", () => {
        sendButton.disabled = chatInput.value.trim().length === 0;
    });

    // -- cells ----------------------------------------------------------------

    function addCell(initialSource = ""): void {
        const cell: PlaygroundCell = {
            cell_id: `c${cells.length + 1}`,
            source: initialSource,
            last_result: null,
            dirty: false,
        };
        cells.push(cell);
        const index = cells.length - 1;

        const wrap = el("div", "cell");
        const label = el("div", "cell-label", `[${cell.cell_id}]`);
        const area = el("textarea", "cell-source") as HTMLTextAreaElement;
        area.value = initialSource;
        area.rows = 4;
        area.spellcheck = false;
        const runButton = el("button", "run", "Run");
        const output = el("pre", "cell-output hidden");
        wrap.append(label, area, runButton, output);
        cellsPane.append(wrap);

        const tracker = new EditTracker(
            cell.cell_id,
            cadence,
            (delta) =>
                queue.enqueue(
                    buildCellEdit(ctx, delta.cellId, delta.charsAdded, delta.charsRemoved, delta.sourceSnapshot),
                ),
            DEBOUNCE_MS,
        );

        let previous = area.value;
        area.addEventListener("input", () => {
            const { added, removed } = diffLengths(previous, area.value);
            previous = area.value;
            cell.source = area.value;
            cell.dirty = true;
            tracker.record(added, removed, area.value);
        });

        runButton.addEventListener("click", (event) => {
            event.preventDefault();
            tracker.flush(); // the edit burst belongs before its execution
            executionCount += 1;
            const outcome = runner.run(cell.source);
            cell.last_result = outcome;
            cell.dirty = false;
            queue.enqueue(buildCellExecute(ctx, cell.cell_id, index, cell.source, outcome, executionCount));
            output.classList.remove("hidden");
            output.classList.toggle("error", !outcome.success);
            output.textContent = outcome.success ? outcome.output : outcome.traceback;
        });
    }

    addButton.addEventListener("click", (event) => {
        event.preventDefault();
        queue.enqueue(buildUiAction(ctx, "add_cell"));
        addCell();
    });

    // -- chat -----------------------------------------------------------------

    function bubble(role: "student" | "tutor"): HTMLElement {
        const node = el("div", `bubble ${role}`);
        transcript.append(node);
        transcript.scrollTop = transcript.scrollHeight;
        return node;
    }

    chatForm.addEventListener("submit", async (event) => {
        event.preventDefault();
        const text = chatInput.value.trim();
        if (!text) {
            return;
        }
        chatInput.value = "";
        sendButton.disabled = true;
        chatCount += 1;
        bubble("student").textContent = text;
        const reply = bubble("tutor");
        reply.textContent = "…";
        let streamed = "";
        try {
            const result = await api.chat(
                {
                    session_id: config.session,
                    message_id: `${config.session}-m${chatCount}`,
                    text,
                    notebook_id: config.notebook,
                },
                (chunk) => {
                    streamed += chunk;
                    reply.textContent = streamed;
                    transcript.scrollTop = transcript.scrollHeight;
                },
            );
            reply.textContent = result.final.text;
            if (result.fellBack) {
                reply.classList.add("fallback");
                reply.append(el("div", "retry-hint", "The tutor had a hiccup — try sending that again."));
            }
        } catch (error) {
            reply.classList.add("fallback");
            reply.textContent = "Could not reach the tutor. Your code activity is queued and will sync.";
            console.error("chat failed:", error);
        }
    });

    // -- boot -----------------------------------------------------------------

    queue.enqueue(buildNotebookOpen(ctx, config.notebook));
    addCell("print('hello, playground')");
    window.addEventListener("online", () => void queue.flush());
}

void start();
