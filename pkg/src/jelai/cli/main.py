"""`jelai` command line: serve the middleware, plus researcher tooling."""

from __future__ import annotations

import asyncio
import json
import sys
from pathlib import Path

import click

from jelai.analytics.helpseek import EmptyMessage, classify_help_seeking, load_rules
from jelai.analytics.replay import ReplayError, replay_session_file
from jelai.analytics.report import build_report, render_csv, render_json
from jelai.experiments.config import ConfigError, load_config
from jelai.model import SchemaViolation, UnknownEventType, validate_chat_message, validate_event
from jelai.store import SessionLogStore


@click.group()
def main() -> None:
    """Tutoring middleware: telemetry ingestion, learner traces, context-enriched LLM chat."""


@main.command()
@click.option("--config", "config_path", envvar="JELAI_CONFIG", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--data-dir", envvar="JELAI_DATA_DIR", default=Path("data"), type=click.Path(path_type=Path), show_default=True)
@click.option("--listen", envvar="JELAI_LISTEN", default="127.0.0.1:8800", show_default=True, help="host:port to bind")
@click.option("--mock-llm", envvar="JELAI_MOCK_LLM", is_flag=True, help="use the deterministic mock backend")
@click.option("--mock-delay", envvar="JELAI_MOCK_DELAY", default=0.0, type=float, show_default=True, help="artificial mock latency (s)")
@click.option("--playground-dir", envvar="JELAI_PLAYGROUND_DIR", default=None, type=click.Path(path_type=Path), help="serve the playground UI from this directory under /playground/")
def serve(config_path: Path, data_dir: Path, listen: str, mock_llm: bool, mock_delay: float, playground_dir: Path | None) -> None:
    """Run the middleware HTTP service."""
    import uvicorn

    from jelai.service.app import Settings, create_app

    host, _, port = listen.rpartition(":")
    settings = Settings(
        config_path=config_path,
        data_dir=data_dir,
        mock_llm=mock_llm,
        mock_delay_s=mock_delay,
        playground_dir=playground_dir,
    )
    try:
        app = create_app(settings)
    except ConfigError as exc:
        for violation in exc.violations:
            click.echo(f"config error: {violation}", err=True)
        raise SystemExit(2) from None
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port), log_level="warning")


@main.command()
@click.option("--data-dir", envvar="JELAI_DATA_DIR", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--config", "config_path", envvar="JELAI_CONFIG", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--experiment", "experiment_id", required=True)
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="csv", show_default=True)
def report(data_dir: Path, config_path: Path, experiment_id: str, fmt: str) -> None:
    """Per-condition study report over a data directory (same code path as the API)."""
    config = load_config(config_path)
    experiment = config.experiments.get(experiment_id)
    if experiment is None:
        raise click.ClickException(f"unknown experiment: {experiment_id}")
    store = SessionLogStore(data_dir)
    store.scan()
    rows = build_report(
        store,
        [c.condition_id for c in experiment.conditions],
        config.rules,
        config.defaults.trace_policy,
    )
    if fmt == "csv":
        click.echo(render_csv(rows), nl=False)
    else:
        click.echo(json.dumps(render_json(rows), indent=2))


@main.command()
@click.argument("fixture", type=click.Path(exists=True, path_type=Path))
@click.option("--expect", type=click.Path(exists=True, path_type=Path), default=None, help="expected trace JSON to compare against")
@click.option("--rules", "rules_path", type=click.Path(exists=True, path_type=Path), default=None, help="label unlabeled student messages with this rule set")
def replay(fixture: Path, expect: Path | None, rules_path: Path | None) -> None:
    """Replay a session fixture into a final trace; optionally compare to an expected file."""
    rules = load_rules(rules_path) if rules_path else None
    try:
        result = replay_session_file(fixture, rules=rules)
    except ReplayError as exc:
        raise click.ClickException(str(exc)) from None
    trace_doc = result.trace.to_dict()
    click.echo(json.dumps(trace_doc, indent=2))
    if expect is not None:
        expected = json.loads(expect.read_text(encoding="utf-8"))
        if trace_doc != expected:
            raise click.ClickException(f"trace does not match {expect}")
        click.echo(f"trace matches {expect}", err=True)


@main.command("classify-eval")
@click.option("--corpus", required=True, type=click.Path(exists=True, path_type=Path), help="TSV of text<TAB>label")
@click.option("--rules", "rules_path", required=True, type=click.Path(exists=True, path_type=Path))
def classify_eval(corpus: Path, rules_path: Path) -> None:
    """Evaluate the rule classifier against a hand-labeled corpus."""
    rules = load_rules(rules_path)
    labels = ("instrumental", "executive", "other")
    confusion = {gold: {pred: 0 for pred in labels} for gold in labels}
    total = 0
    correct = 0
    for line_no, line in enumerate(corpus.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            text, gold = line.split("\t")
        except ValueError:
            raise click.ClickException(f"{corpus}:{line_no}: expected text<TAB>label") from None
        if gold not in labels:
            raise click.ClickException(f"{corpus}:{line_no}: unknown label {gold!r}")
        try:
            predicted = classify_help_seeking(text, rules).label
        except EmptyMessage:
            raise click.ClickException(f"{corpus}:{line_no}: empty message text") from None
        confusion[gold][predicted] += 1
        total += 1
        if predicted == gold:
            correct += 1
    if total == 0:
        raise click.ClickException("corpus is empty")
    accuracy = correct / total
    click.echo(f"accuracy: {accuracy:.4f} ({correct}/{total})")
    header = "gold\\pred".ljust(14) + "".join(label.ljust(14) for label in labels)
    click.echo(header)
    for gold in labels:
        row = gold.ljust(14) + "".join(str(confusion[gold][pred]).ljust(14) for pred in labels)
        click.echo(row)
    if accuracy < 0.9:
        raise SystemExit(1)


def _validate_jsonl_line(doc: dict) -> None:
    kind = doc.get("kind")
    if kind == "telemetry":
        validate_event(doc.get("body"))
    elif kind == "chat":
        validate_chat_message(doc.get("body"))
    elif kind == "llm_failure":
        for key in ("at", "stage", "error", "attempts"):
            if key not in doc:
                raise SchemaViolation.single(key, "missing")
    else:
        raise SchemaViolation.single("kind", f"unknown record kind {kind!r}")


@main.command()
@click.argument("paths", nargs=-1, required=True, type=click.Path(exists=True, path_type=Path))
def validate(paths: tuple[Path, ...]) -> None:
    """Validate event/chat/log files against the schema; exits nonzero on any violation.

    Directories are walked for .jsonl record logs (the only kind the service
    writes); single .json event/message documents must be named explicitly.
    """
    files: list[Path] = []
    for path in paths:
        if path.is_dir():
            files.extend(sorted(path.rglob("*.jsonl")))
        else:
            files.append(path)
    problems = 0
    checked = 0
    for path in files:
        if path.suffix == ".json":
            try:
                doc = json.loads(path.read_text(encoding="utf-8"))
                try:
                    validate_event(doc)
                except (SchemaViolation, UnknownEventType):
                    validate_chat_message(doc)
                checked += 1
            except (ValueError, SchemaViolation, UnknownEventType) as exc:
                problems += 1
                click.echo(f"{path}: {exc}", err=True)
            continue
        for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
            if not line.strip():
                continue
            checked += 1
            try:
                _validate_jsonl_line(json.loads(line))
            except (ValueError, SchemaViolation, UnknownEventType) as exc:
                problems += 1
                click.echo(f"{path}:{line_no}: {exc}", err=True)
    click.echo(f"checked {checked} record(s) in {len(files)} file(s); {problems} problem(s)")
    if problems:
        raise SystemExit(1)


@main.command()
@click.option("--target", required=True, help="base URL of a running middleware")
@click.option("--token", required=True, help="bearer token for the scripted clients")
@click.option("--user", "user_id", required=True, help="user_id matching the token")
@click.option("--users", default=1, show_default=True, type=int)
@click.option("--duration", default=10.0, show_default=True, type=float, help="seconds")
@click.option("--think-time", default=2.0, show_default=True, type=float, help="mean seconds between actions")
@click.option("--script", default="scenarios/basic.json", show_default=True, type=click.Path(exists=True, path_type=Path))
@click.option("--seed", default=1234, show_default=True, type=int)
@click.option("--mock-delay", default=None, type=float, help="informational: mock delay configured server-side")
def loadgen(target: str, token: str, user_id: str, users: int, duration: float, think_time: float, script: Path, seed: int, mock_delay: float | None) -> None:
    """Drive concurrent scripted clients against a running service and report latency stats."""
    from jelai.cli.loadgen import LoadProfile, run_loadgen

    profile = LoadProfile(
        users=users,
        duration_s=duration,
        think_time_s=think_time,
        script=str(script),
        mock_delay_s=mock_delay,
        seed=seed,
    )
    try:
        load_report = asyncio.run(run_loadgen(profile, target, token, user_id))
    except ConnectionError as exc:
        raise click.ClickException(str(exc)) from None
    click.echo(json.dumps(load_report.stats.to_dict(), indent=2))
    for error in load_report.errors[:20]:
        click.echo(f"error: {error}", err=True)
    if load_report.stats.error_count > 0:
        raise SystemExit(1)


if __name__ == "__main__":
    main()
