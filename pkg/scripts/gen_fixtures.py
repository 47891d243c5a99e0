#!/usr/bin/env python3
"""Regenerate the committed fixtures.

The expected-value files are derived by the independent oracle functions in
this script (one-pass counting, split-point episode partitioning, first-
principles flag rules over the raw JSON lines) — NOT by the library's fold —
so tests that compare the library against these files are a real dual-route
check. The two bundle expectation files are the exception: they are produced
via the replay tool once and reviewed by hand, as recorded in their names.

Run from the repository root:  python scripts/gen_fixtures.py
"""

from __future__ import annotations

import json
import math
import re
import sys
from datetime import datetime, timedelta, timezone
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

GAP_THRESHOLD_S = 5.0
N_EXEC_KEEP = 10
AVOID_MIN_ERRORS = 3
AVOID_WINDOW_S = 600.0

BASE = datetime(2026, 3, 2, 10, 0, 0, tzinfo=timezone.utc)


def ts(seconds: float) -> str:
    t = BASE + timedelta(seconds=seconds)
    return t.strftime("%Y-%m-%dT%H:%M:%S.") + f"{t.microsecond // 1000:03d}Z"


# ---------------------------------------------------------------------------
# Independent oracle: derive the expected trace from raw fixture lines
# ---------------------------------------------------------------------------


def derive_expected_trace(lines: list[dict], verification_patterns: list[str]) -> dict:
    """One-pass derivation of the final trace, written from the stated rules.

    Works directly on raw JSON; no imports from the library's analytics code.
    """
    patterns = [re.compile(p, re.IGNORECASE) for p in verification_patterns]

    session_id = None
    user_id = None
    notebook_id = None
    last_seq = 0
    executions = []  # (cell, source, success, at_str)
    edits = []  # (cell, at_str, added, removed)
    chat_turns = []
    flags = []
    last_error = None
    last_success_at = None
    last_student_chat_at = None
    failures_since_reset = []  # (ref, at_str)
    avoidance_flagged = False

    def at_seconds(at_str: str) -> float:
        return datetime.strptime(at_str, "%Y-%m-%dT%H:%M:%S.%fZ").timestamp()

    for line in lines:
        kind, body = line["kind"], line["body"]
        if session_id is None:
            session_id = body["session_id"]
        if kind == "telemetry":
            last_seq = body["seq"]
            if user_id is None:
                user_id = body["user_id"]
            payload = body["payload"]
            etype = body["event_type"]
            at = body["event_time"]
            if etype == "notebook_open" and notebook_id is None:
                notebook_id = payload["notebook_id"]
            elif etype == "cell_edit":
                edits.append((payload["cell_id"], at, payload["chars_added"], payload["chars_removed"]))
            elif etype == "cell_execute":
                executions.append((payload["cell_id"], payload["source"], payload["success"], at))
                if payload["success"]:
                    last_success_at = at
                    failures_since_reset = []
                    avoidance_flagged = False
                else:
                    last_error = {
                        "error_name": payload.get("error_name", ""),
                        "traceback": payload.get("error_traceback", ""),
                        "at": at,
                    }
                    failures_since_reset.append((f"telemetry/seq={body['seq']}", at))
                    window_start = at_seconds(at) - AVOID_WINDOW_S
                    in_window = [f for f in failures_since_reset if at_seconds(f[1]) >= window_start]
                    if not avoidance_flagged and len(in_window) >= AVOID_MIN_ERRORS:
                        flags.append(
                            {"kind": "help_avoidance", "raised_at": at, "evidence": [f[0] for f in in_window]}
                        )
                        avoidance_flagged = True
        else:
            role = body["role"]
            at = body["sent_at"]
            chat_turns.append({"role": role, "text": body["text"], "label": body.get("label"), "at": at})
            if notebook_id is None and body.get("notebook_id"):
                notebook_id = body["notebook_id"]
            if user_id is None and body.get("user_id"):
                user_id = body["user_id"]
            if role == "student":
                # Verification: pattern match right after a clean run.
                clean = last_success_at is not None and (
                    last_error is None or last_error["at"] < last_success_at
                )
                if clean and any(p.search(body["text"]) for p in patterns):
                    flags.append(
                        {
                            "kind": "post_completion_verification",
                            "raised_at": at,
                            "evidence": [f"chat/message_id={body['message_id']}"],
                        }
                    )
                last_student_chat_at = at
                failures_since_reset = []
                avoidance_flagged = False

    # Streaks: length of the maximal trailing failure run per cell.
    streaks: dict[str, int] = {}
    for cell in {e[0] for e in executions}:
        cell_execs = [e for e in executions if e[0] == cell]
        run = 0
        for _, _, success, _ in reversed(cell_execs):
            if success:
                break
            run += 1
        streaks[cell] = run

    # Episodes: split before index i when the cell changes or the gap exceeds the threshold.
    episodes = []
    for i, (cell, at, added, removed) in enumerate(edits):
        split = i == 0 or cell != edits[i - 1][0] or (at_seconds(at) - at_seconds(edits[i - 1][1])) > GAP_THRESHOLD_S
        if split:
            episodes.append(
                {
                    "cell_id": cell,
                    "started_at": at,
                    "ended_at": at,
                    "events_count": 1,
                    "chars_added_total": added,
                    "chars_removed_total": removed,
                }
            )
        else:
            ep = episodes[-1]
            ep["ended_at"] = at
            ep["events_count"] += 1
            ep["chars_added_total"] += added
            ep["chars_removed_total"] += removed

    errors_total = sum(1 for e in executions if not e[2])
    return {
        "session_id": session_id,
        "user_id": user_id,
        "notebook_id": notebook_id,
        "last_seq": last_seq,
        "executions_total": len(executions),
        "errors_total": errors_total,
        "per_cell_error_streak": dict(sorted(streaks.items())),
        "last_error": last_error,
        "recent_executions": [
            {"cell_id": c, "source": s, "success": ok, "at": at} for c, s, ok, at in executions[-N_EXEC_KEEP:]
        ],
        "edit_episodes": episodes,
        "chat_turns": chat_turns,
        "flags": flags,
        "last_success_at": last_success_at,
        "last_student_chat_at": last_student_chat_at,
    }


# ---------------------------------------------------------------------------
# s01: a realistic single session (37 records)
# ---------------------------------------------------------------------------


def telemetry(session: str, user: str, seq: int, t: float, etype: str, payload: dict) -> dict:
    return {
        "kind": "telemetry",
        "body": {
            "schema_version": "jelai.telemetry.v1",
            "session_id": session,
            "user_id": user,
            "seq": seq,
            "event_time": ts(t),
            "event_type": etype,
            "payload": payload,
        },
    }


def chat(session: str, mid: str, role: str, t: float, text: str, **extra) -> dict:
    body = {"session_id": session, "message_id": mid, "role": role, "text": text, "sent_at": ts(t)}
    body.update({k: v for k, v in extra.items() if v is not None})
    return {"kind": "chat", "body": body}


def edit(session: str, user: str, seq: int, t: float, cell: str, added: int, removed: int) -> dict:
    return telemetry(session, user, seq, t, "cell_edit", {"cell_id": cell, "chars_added": added, "chars_removed": removed})


def execute(
    session: str, user: str, seq: int, t: float, cell: str, source: str, count: int,
    error: tuple[str, str] | None = None,
) -> dict:
    payload = {"cell_id": cell, "cell_index": int(cell[1:]) - 1, "source": source, "success": error is None, "execution_count": count}
    if error is not None:
        payload["error_name"], payload["error_traceback"] = error
    return telemetry(session, user, seq, t, "cell_execute", payload)


def build_s01(classify, condition_id: str) -> list[dict]:
    s, u = "s01", "alice"
    nb_tb = 'Traceback (most recent call last):\n  File "<cell>", line 1, in <module>\nNameError: name \'mass\' is not defined'
    attr_tb = 'Traceback (most recent call last):\n  File "<cell>", line 1, in <module>\nAttributeError: \'DataFrameGroupBy\' object has no attribute \'mass\''
    val_tb = 'Traceback (most recent call last):\n  File "<cell>", line 2, in <module>\nValueError: could not convert string to float: \'NA\''
    type_tb = "Traceback (most recent call last):\n  File \"<cell>\", line 2, in <module>\nTypeError: unsupported operand type(s) for /: 'str' and 'int'"

    def student(mid: str, t: float, text: str, notebook: str | None = None) -> dict:
        return chat(s, mid, "student", t, text, label=classify(text), user_id=u, notebook_id=notebook)

    def tutor(mid: str, parent: str, t: float, text: str) -> dict:
        return chat(s, mid, "tutor", t, text, parent_message_id=parent, condition_id=condition_id)

    return [
        telemetry(s, u, 1, 0, "notebook_open", {"notebook_id": "nb-pandas-intro"}),
        edit(s, u, 2, 10, "c1", 35, 0),
        edit(s, u, 3, 12, "c1", 20, 2),
        edit(s, u, 4, 14, "c1", 5, 1),
        execute(s, u, 5, 20, "c1", "import pandas as pd\npenguins = pd.read_csv('penguins.csv')", 1),
        student("s01-m1", 25, "How does the range function work?"),
        tutor("s01-m2", "s01-m1", 27, "Think about what range(10) produces: where does it start, and where does it stop?"),
        edit(s, u, 6, 40, "c2", 42, 0),
        edit(s, u, 7, 41, "c2", 10, 3),
        execute(s, u, 8, 50, "c2", "penguins.groupby('species').mass.mean()", 2, ("NameError", nb_tb)),
        edit(s, u, 9, 55, "c2", 8, 4),
        execute(s, u, 10, 60, "c2", "penguins.groupby('species').mass.mean()", 3, ("AttributeError", attr_tb)),
        student("s01-m3", 70, "Why am I getting a NameError here?"),
        tutor("s01-m4", "s01-m3", 73, "Look carefully at the column name you reference: does the DataFrame have a column called mass?"),
        edit(s, u, 11, 90, "c2", 15, 6),
        execute(s, u, 12, 100, "c2", "penguins.groupby('species')['body_mass_g'].mean()", 4),
        edit(s, u, 13, 110, "c3", 60, 0),
        edit(s, u, 14, 112, "c3", 12, 2),
        execute(s, u, 15, 120, "c3", "ratios = penguins['body_mass_g'] / penguins['flipper_length_mm']\nratios.describe()", 5, ("ValueError", val_tb)),
        edit(s, u, 16, 130, "c3", 9, 5),
        execute(s, u, 17, 140, "c3", "ratios = penguins['body_mass_g'] / penguins['flipper_length_mm']\nratios.describe()", 6, ("ValueError", val_tb)),
        edit(s, u, 18, 150, "c3", 4, 2),
        execute(s, u, 19, 160, "c3", "clean = penguins.dropna()\nclean['body_mass_g'] / clean['flipper_length_mm']", 7, ("TypeError", type_tb)),
        edit(s, u, 20, 170, "c3", 11, 3),
        execute(s, u, 21, 180, "c3", "clean = penguins.dropna()\nclean['body_mass_g'].astype(float) / clean['flipper_length_mm']", 8),
        student("s01-m5", 190, "Is this correct now?"),
        tutor("s01-m6", "s01-m5", 193, "The run is clean. How could you check the result yourself, say against one species you compute by hand?"),
        edit(s, u, 22, 200, "c4", 25, 0),
        execute(s, u, 23, 210, "c4", "clean.describe()", 9),
        telemetry(s, u, 24, 215, "notebook_save", {"notebook_id": "nb-pandas-intro"}),
        edit(s, u, 25, 220, "c4", 6, 1),
        execute(s, u, 26, 230, "c4", "clean.groupby('species').describe()", 10),
        student("s01-m7", 240, "Can you explain what groupby does?"),
        tutor("s01-m8", "s01-m7", 243, "Picture splitting the rows into buckets keyed by species. What would you then compute per bucket?"),
        edit(s, u, 27, 250, "c5", 30, 0),
        execute(s, u, 28, 260, "c5", "clean.groupby('species')['body_mass_g'].agg(['mean', 'std'])", 11),
        execute(s, u, 29, 270, "c5", "clean.groupby('species')['body_mass_g'].agg(['mean', 'std'])", 12),
    ]


# s02: a smaller edge-case session (unicode, ui_action, seq gaps, no flags).
def build_s02(classify, condition_id: str) -> list[dict]:
    s, u = "s02", "bob"
    return [
        telemetry(s, u, 1, 0, "notebook_open", {"notebook_id": "nb-plotting"}),
        telemetry(s, u, 2, 4, "ui_action", {"action_name": "tutor_panel_open", "detail": {"panel": "right"}}),
        edit(s, u, 3, 10, "c1", 18, 0),
        # seq 4 lost client-side: gaps are legal, regressions are not.
        edit(s, u, 5, 13, "c1", 7, 2),
        execute(s, u, 6, 20, "c1", "título = 'Pingüinos — masa corporal'\nprint(título)", 1),
        chat(s, "s02-m1", "student", 30, "¿Why does the accent break my string?", label=classify("¿Why does the accent break my string?"), user_id=u),
        chat(s, "s02-m2", "tutor", 33, "It doesn't — Python 3 strings are Unicode. What happens if you print it?", parent_message_id="s02-m1", condition_id=condition_id),
        edit(s, u, 7, 40, "c2", 52, 0),
        execute(s, u, 8, 50, "c2", "plt.scatter(df.flipper_length_mm, df.body_mass_g)", 2, (
            "NameError",
            'Traceback (most recent call last):\n  File "<cell>", line 1, in <module>\nNameError: name \'plt\' is not defined',
        )),
        telemetry(s, u, 9, 55, "notebook_save", {"notebook_id": "nb-plotting"}),
        execute(s, u, 10, 60, "c2", "import matplotlib.pyplot as plt\nplt.scatter(df.flipper_length_mm, df.body_mass_g)", 3),
    ]


# ---------------------------------------------------------------------------
# edits_mixed: coalescing fixture with its own split-point-derived expectation
# ---------------------------------------------------------------------------


def build_edits_mixed() -> list[dict]:
    s, u = "edits-mixed", "alice"
    spec = [
        ("c-a", 0, 10, 0),
        ("c-a", 1, 5, 1),
        ("c-b", 3, 7, 0),
        ("c-b", 8, 4, 2),
        ("c-a", 10, 6, 0),
        ("c-a", 70, 3, 3),
    ]
    return [edit(s, u, i + 1, t, cell, a, r) for i, (cell, t, a, r) in enumerate(spec)]


def derive_expected_episodes(lines: list[dict]) -> list[dict]:
    edits = [
        (l["body"]["payload"]["cell_id"], l["body"]["event_time"], l["body"]["payload"]["chars_added"], l["body"]["payload"]["chars_removed"])
        for l in lines
        if l["body"]["event_type"] == "cell_edit"
    ]

    def secs(at: str) -> float:
        return datetime.strptime(at, "%Y-%m-%dT%H:%M:%S.%fZ").timestamp()

    episodes: list[dict] = []
    for i, (cell, at, added, removed) in enumerate(edits):
        split = i == 0 or cell != edits[i - 1][0] or secs(at) - secs(edits[i - 1][1]) > GAP_THRESHOLD_S
        if split:
            episodes.append({"cell_id": cell, "started_at": at, "ended_at": at, "events_count": 1, "chars_added_total": added, "chars_removed_total": removed})
        else:
            ep = episodes[-1]
            ep["ended_at"] = at
            ep["events_count"] += 1
            ep["chars_added_total"] += added
            ep["chars_removed_total"] += removed
    return episodes


# ---------------------------------------------------------------------------
# Two-arm study store, constructed to the target per-condition means
# ---------------------------------------------------------------------------

STUDY_TARGETS = {
    # condition -> (dialogue per session, executions, errors), 10 sessions each
    "pedagogical": {"dialogue": [18] * 7 + [17] * 3, "executions": [8] * 7 + [9] * 3, "errors": [5] * 7 + [6] * 3},
    "generic": {"dialogue": [11] * 7 + [10] * 3, "executions": [13] * 8 + [12] * 2, "errors": [7] * 6 + [8] * 4},
}

STUDENT_POOLS = {
    "pedagogical": [
        "Why does my loop stop at 9 instead of 10?",
        "How does the range function work?",
        "What does this error message mean?",
        "Can you explain what a dictionary is?",
        "Where am I going wrong with this function?",
        "Give me the code for task 3",
        "How do I read a CSV file?",
    ],
    "generic": [
        "Give me the code for task 3",
        "Just tell me the answer",
        "Can you write the whole function for me?",
        "Fix this error for me",
        "Why does my loop stop at 9 instead of 10?",
        "Show me the answer",
    ],
}

TUTOR_POOL = [
    "Look at the loop bounds: what is the last value the loop body sees?",
    "Try printing the intermediate value before the division.",
    "Which column does the error message name, and does it exist?",
    "Break the task into the load step and the aggregation step.",
]


def pick_users(assign, experiment, wanted: str, count: int, prefix: str) -> list[str]:
    users = []
    i = 0
    while len(users) < count:
        i += 1
        candidate = f"{prefix}{i:03d}"
        if assign(candidate, experiment) == wanted:
            users.append(candidate)
    return users


def generate_study(store_cls, assign, experiment, classify, out_dir: Path) -> None:
    counter = {"n": 0}

    def fake_now():
        counter["n"] += 1
        return BASE + timedelta(hours=40, seconds=counter["n"])

    store = store_cls(out_dir, now_fn=fake_now)
    store.scan()

    session_index = 0
    for condition_id, targets in STUDY_TARGETS.items():
        users = pick_users(assign, experiment, condition_id, 10, f"stu-{condition_id[0]}-")
        pool = STUDENT_POOLS[condition_id]
        for k in range(10):
            session_index += 1
            session = f"study-{condition_id[0]}-{k + 1:02d}"
            user = users[k]
            dialogue = targets["dialogue"][k]
            n_exec = targets["executions"][k]
            n_err = targets["errors"][k]
            n_student = math.ceil(dialogue / 2)
            n_tutor = dialogue // 2

            base_t = session_index * 4000.0
            t = base_t
            seq = 0

            def put_event(etype: str, payload: dict) -> None:
                nonlocal seq, t
                seq += 1
                t += 7.0
                store.append(_validate_event(telemetry(session, user, seq, t, etype, payload)["body"]))

            def put_chat(doc: dict) -> None:
                nonlocal t
                t += 7.0
                doc["body"]["sent_at"] = ts(t)
                store.append(_validate_chat(doc["body"]))

            put_event("notebook_open", {"notebook_id": "nb-pandas-intro"})

            # Spread failures across the executions: fail on even slots while budget lasts.
            failure_slots = set()
            slot = 0
            while len(failure_slots) < n_err:
                failure_slots.add(slot)
                slot += 2
                if slot >= n_exec:
                    slot = 1
            chats_done_s = 0
            chats_done_t = 0
            rounds = max(n_exec, n_student)
            for i in range(rounds):
                if i < n_exec:
                    put_event("cell_edit", {"cell_id": f"c{i % 3 + 1}", "chars_added": 12 + i, "chars_removed": i % 4})
                    failed = i in failure_slots
                    payload = {
                        "cell_id": f"c{i % 3 + 1}",
                        "cell_index": i % 3,
                        "source": f"step_{i} = transform(df, {i})",
                        "success": not failed,
                        "execution_count": i + 1,
                    }
                    if failed:
                        payload["error_name"] = "ValueError"
                        payload["error_traceback"] = "Traceback (most recent call last):\n  ValueError: bad step"
                    put_event("cell_execute", payload)
                if chats_done_s < n_student:
                    text = pool[chats_done_s % len(pool)]
                    mid = f"{session}-m{chats_done_s + chats_done_t + 1:03d}"
                    put_chat(chat(session, mid, "student", 0, text, label=classify(text), user_id=user, notebook_id="nb-pandas-intro"))
                    chats_done_s += 1
                    if chats_done_t < n_tutor:
                        reply_mid = f"{session}-m{chats_done_s + chats_done_t + 1:03d}"
                        put_chat(chat(session, reply_mid, "tutor", 0, TUTOR_POOL[chats_done_t % len(TUTOR_POOL)], parent_message_id=mid, condition_id=condition_id))
                        chats_done_t += 1
    store.close()


# ---------------------------------------------------------------------------

_validate_event = None
_validate_chat = None


def main() -> None:
    global _validate_event, _validate_chat
    from jelai.analytics.helpseek import classify_help_seeking, load_rules
    from jelai.experiments.assignment import assign_condition
    from jelai.experiments.config import load_config
    from jelai.model import validate_chat_message, validate_event
    from jelai.store import SessionLogStore

    _validate_event = validate_event
    _validate_chat = validate_chat_message

    rules = load_rules(ROOT / "config" / "helpseek_rules.json")
    rules_doc = json.loads((ROOT / "config" / "helpseek_rules.json").read_text())
    config = load_config(ROOT / "config" / "example.json")
    experiment = config.experiments["prompt-pilot"]

    def classify(text: str) -> str:
        return classify_help_seeking(text, rules).label

    sessions_dir = ROOT / "fixtures" / "sessions"
    sessions_dir.mkdir(parents=True, exist_ok=True)

    for name, builder, user in (("s01", build_s01, "alice"), ("s02", build_s02, "bob")):
        condition = assign_condition(user, experiment)
        lines = builder(classify, condition)
        path = sessions_dir / f"{name}.jsonl"
        path.write_text("".join(json.dumps(l, ensure_ascii=False) + "\n" for l in lines), encoding="utf-8")
        expected = derive_expected_trace(lines, rules_doc["verification_patterns"])
        (sessions_dir / f"{name}.expected.json").write_text(
            json.dumps(expected, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
        )
        print(f"{name}: {len(lines)} records, "
              f"{expected['executions_total']} executions, {expected['errors_total']} errors, "
              f"{len(expected['edit_episodes'])} episodes, {len(expected['flags'])} flags")

    # Bundles: produced via the replay tool (reviewed by hand), not the oracle.
    from jelai.analytics.replay import replay_session_file
    from jelai.enrich.context import build_context

    s01_lines = [json.loads(l) for l in (sessions_dir / "s01.jsonl").read_text().splitlines()]
    objective = experiment.task_objectives["nb-pandas-intro"]
    policy = config.defaults.enrichment_policy

    partial = sessions_dir / "_s01_partial.jsonl"
    partial.write_text("".join(json.dumps(l, ensure_ascii=False) + "\n" for l in s01_lines[:31]), encoding="utf-8")
    trace30 = replay_session_file(partial, rules=rules).trace
    partial.unlink()
    bundle30 = build_context(trace30, policy, objective, None)
    (sessions_dir / "s01.bundle30.expected.json").write_text(
        json.dumps(bundle30.to_dict(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )

    trace_full = replay_session_file(sessions_dir / "s01.jsonl", rules=rules).trace
    bundle_now = build_context(trace_full, policy, objective, None)
    (sessions_dir / "s01.bundleNow.expected.json").write_text(
        json.dumps(bundle_now.to_dict(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )

    edits_dir = ROOT / "fixtures" / "edits"
    edits_dir.mkdir(parents=True, exist_ok=True)
    mixed = build_edits_mixed()
    (edits_dir / "edits_mixed.json").write_text(
        json.dumps([l["body"] for l in mixed], indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )
    (edits_dir / "edits_mixed.expected.json").write_text(
        json.dumps(derive_expected_episodes(mixed), indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )
    print(f"edits_mixed: {len(mixed)} edits, {len(derive_expected_episodes(mixed))} episodes")

    study_dir = ROOT / "fixtures" / "study" / "data"
    if study_dir.exists():
        import shutil

        shutil.rmtree(study_dir)
    generate_study(SessionLogStore, assign_condition, experiment, classify, study_dir)
    n_files = len(list(study_dir.rglob("*.jsonl")))
    print(f"study: wrote {n_files} session files under {study_dir}")


if __name__ == "__main__":
    main()
