"""Experiment/deployment configuration: loading, full validation, atomic snapshots.

A config file is validated in one pass that reports *every* violation —
templates are compiled, URLs parsed, policies range-checked, referenced data
files loaded — so an instructor fixes one round of errors, not one error per
round. A loaded AppConfig is immutable; hot reload swaps the whole snapshot
while in-flight requests keep the one they started with.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from jelai.analytics.helpseek import RuleSet, RulesError, load_rules
from jelai.analytics.trace import DEFAULT_TRACE_POLICY, TracePolicy
from jelai.enrich.context import EnrichmentPolicy
from jelai.enrich.prompt import unknown_placeholders
from jelai.gateway.client import DEFAULT_FALLBACK_TEXT, ConfigError as ParamsError, ModelParams


class ConfigError(Exception):
    """Config rejected; carries the full list of violations."""

    def __init__(self, violations: list[str]) -> None:
        self.violations = violations
        super().__init__("\n".join(violations) or "invalid config")


@dataclass(frozen=True, slots=True)
class ExperimentCondition:
    condition_id: str
    display_name: str
    system_prompt_template: str
    scaffold_on_executive: bool
    enrichment_policy: EnrichmentPolicy
    model_params: ModelParams


@dataclass(frozen=True, slots=True)
class Experiment:
    experiment_id: str
    conditions: tuple[ExperimentCondition, ...]
    assignment: str  # "hash" | "fixed:<condition_id>"
    task_objectives: dict[str, str] = field(default_factory=dict)

    def condition(self, condition_id: str) -> ExperimentCondition | None:
        for cond in self.conditions:
            if cond.condition_id == condition_id:
                return cond
        return None


@dataclass(frozen=True, slots=True)
class GlobalDefaults:
    model_params: ModelParams
    enrichment_policy: EnrichmentPolicy
    fallback_text: str = DEFAULT_FALLBACK_TEXT
    max_concurrent_llm: int = 32
    chat_queue_limit: int = 100
    trace_policy: TracePolicy = DEFAULT_TRACE_POLICY


@dataclass(frozen=True, slots=True)
class AppConfig:
    source_path: Path
    defaults: GlobalDefaults
    experiments: dict[str, Experiment]
    default_experiment: str
    notebook_experiments: dict[str, str]
    rules: RuleSet
    tokens: dict[str, dict[str, str]]  # token -> {"user_id": ..., "role": ...}

    def experiment_for_notebook(self, notebook_id: str | None) -> Experiment:
        if notebook_id is not None:
            exp_id = self.notebook_experiments.get(notebook_id)
            if exp_id is not None:
                return self.experiments[exp_id]
        return self.experiments[self.default_experiment]


def _merge_policy(base: EnrichmentPolicy, overrides: Any, where: str, violations: list[str]) -> EnrichmentPolicy:
    if overrides is None:
        return base
    if not isinstance(overrides, dict):
        violations.append(f"{where}: expected object")
        return base
    known = {"n_recent_cells", "history_turns", "traceback_max_chars", "cell_max_chars", "total_budget_chars"}
    values = {name: getattr(base, name) for name in known}
    for key, value in overrides.items():
        if key not in known:
            violations.append(f"{where}.{key}: unknown enrichment policy field")
        else:
            values[key] = value
    try:
        return EnrichmentPolicy(**values)
    except (TypeError, ValueError) as exc:
        violations.append(f"{where}: {exc}")
        return base


def _merge_params(base: ModelParams | None, overrides: Any, where: str, violations: list[str]) -> ModelParams | None:
    known = {"model_name", "endpoint_base_url", "temperature", "max_output_tokens", "api_key", "request_timeout_s"}
    values: dict[str, Any] = (
        {name: getattr(base, name) for name in known} if base is not None else {}
    )
    if overrides is not None:
        if not isinstance(overrides, dict):
            violations.append(f"{where}: expected object")
            return base
        for key, value in overrides.items():
            if key not in known:
                violations.append(f"{where}.{key}: unknown model parameter")
            else:
                values[key] = value
    if "model_name" not in values or "endpoint_base_url" not in values:
        violations.append(f"{where}: model_name and endpoint_base_url are required")
        return base
    try:
        return ModelParams(**values)
    except (TypeError, ParamsError) as exc:
        violations.append(f"{where}: {exc}")
        return base


def _parse_condition(
    raw: Any,
    where: str,
    defaults_policy: EnrichmentPolicy,
    defaults_params: ModelParams | None,
    violations: list[str],
) -> ExperimentCondition | None:
    if not isinstance(raw, dict):
        violations.append(f"{where}: expected object")
        return None
    condition_id = raw.get("condition_id")
    if not isinstance(condition_id, str) or not condition_id:
        violations.append(f"{where}.condition_id: missing or empty")
        return None
    template = raw.get("system_prompt_template")
    if not isinstance(template, str) or not template:
        violations.append(f"{where}.system_prompt_template: missing or empty")
        return None
    bad_names = unknown_placeholders(template)
    if bad_names:
        violations.append(f"{where}.system_prompt_template: unknown placeholder(s) {{{'}, {'.join(bad_names)}}}")
        return None
    scaffold = raw.get("scaffold_on_executive", False)
    if not isinstance(scaffold, bool):
        violations.append(f"{where}.scaffold_on_executive: expected boolean")
        return None
    policy = _merge_policy(defaults_policy, raw.get("enrichment_policy"), f"{where}.enrichment_policy", violations)
    params = _merge_params(defaults_params, raw.get("model_params"), f"{where}.model_params", violations)
    if params is None:
        return None
    return ExperimentCondition(
        condition_id=condition_id,
        display_name=raw.get("display_name") or condition_id,
        system_prompt_template=template,
        scaffold_on_executive=scaffold,
        enrichment_policy=policy,
        model_params=params,
    )


def _parse_experiment(
    raw: Any,
    where: str,
    defaults_policy: EnrichmentPolicy,
    defaults_params: ModelParams | None,
    violations: list[str],
) -> Experiment | None:
    if not isinstance(raw, dict):
        violations.append(f"{where}: expected object")
        return None
    experiment_id = raw.get("experiment_id")
    if not isinstance(experiment_id, str) or not experiment_id:
        violations.append(f"{where}.experiment_id: missing or empty")
        return None
    raw_conditions = raw.get("conditions")
    if not isinstance(raw_conditions, list) or not raw_conditions:
        violations.append(f"{where}.conditions: must be a nonempty list")
        return None
    conditions = []
    seen = set()
    for i, raw_cond in enumerate(raw_conditions):
        cond = _parse_condition(raw_cond, f"{where}.conditions[{i}]", defaults_policy, defaults_params, violations)
        if cond is None:
            continue
        if cond.condition_id in seen:
            violations.append(f"{where}.conditions[{i}].condition_id: duplicate {cond.condition_id!r}")
            continue
        seen.add(cond.condition_id)
        conditions.append(cond)
    if not conditions:
        return None
    assignment = raw.get("assignment", "hash")
    if not isinstance(assignment, str) or (assignment != "hash" and not assignment.startswith("fixed:")):
        violations.append(f"{where}.assignment: expected 'hash' or 'fixed:<condition_id>'")
        return None
    if assignment.startswith("fixed:") and assignment[len("fixed:") :] not in seen:
        violations.append(f"{where}.assignment: fixed target {assignment[len('fixed:'):]!r} is not a condition")
        return None
    objectives = raw.get("task_objectives", {})
    if not isinstance(objectives, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in objectives.items()
    ):
        violations.append(f"{where}.task_objectives: expected object of notebook_id -> objective text")
        objectives = {}
    return Experiment(
        experiment_id=experiment_id,
        conditions=tuple(conditions),
        assignment=assignment,
        task_objectives=dict(objectives),
    )


def _load_tokens(path: Path, violations: list[str]) -> dict[str, dict[str, str]]:
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        violations.append(f"tokens file {path}: {exc}")
        return {}
    if not isinstance(doc, dict):
        violations.append(f"tokens file {path}: expected object of token -> principal")
        return {}
    tokens: dict[str, dict[str, str]] = {}
    for token, principal in doc.items():
        where = f"tokens[{token[:8]}…]" if len(token) > 8 else f"tokens[{token}]"
        if not token:
            violations.append("tokens: empty token")
            continue
        if not isinstance(principal, dict):
            violations.append(f"{where}: expected object")
            continue
        user_id = principal.get("user_id")
        role = principal.get("role")
        if not isinstance(user_id, str) or not user_id:
            violations.append(f"{where}.user_id: missing or empty")
            continue
        if role not in ("student", "instructor"):
            violations.append(f"{where}.role: expected student or instructor, got {role!r}")
            continue
        tokens[token] = {"user_id": user_id, "role": role}
    return tokens


def load_config(path: str | Path) -> AppConfig:
    """Load and validate a config file; raises ConfigError naming every violation."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ConfigError([f"cannot read config {path}: {exc}"]) from exc
    if not isinstance(doc, dict):
        raise ConfigError([f"config {path}: expected a JSON object"])

    violations: list[str] = []
    raw_defaults = doc.get("defaults", {})
    if not isinstance(raw_defaults, dict):
        violations.append("defaults: expected object")
        raw_defaults = {}

    defaults_policy = _merge_policy(
        EnrichmentPolicy(), raw_defaults.get("enrichment_policy"), "defaults.enrichment_policy", violations
    )
    defaults_params = _merge_params(None, raw_defaults.get("model_params"), "defaults.model_params", violations)

    fallback_text = raw_defaults.get("fallback_text", DEFAULT_FALLBACK_TEXT)
    if not isinstance(fallback_text, str) or not fallback_text:
        violations.append("defaults.fallback_text: expected nonempty string")
        fallback_text = DEFAULT_FALLBACK_TEXT
    max_concurrent = raw_defaults.get("max_concurrent_llm", 32)
    if not isinstance(max_concurrent, int) or max_concurrent < 1:
        violations.append("defaults.max_concurrent_llm: expected positive integer")
        max_concurrent = 32
    queue_limit = raw_defaults.get("chat_queue_limit", 100)
    if not isinstance(queue_limit, int) or queue_limit < 0:
        violations.append("defaults.chat_queue_limit: expected nonnegative integer")
        queue_limit = 100

    trace_policy = DEFAULT_TRACE_POLICY
    raw_trace = raw_defaults.get("trace_policy")
    if raw_trace is not None:
        if not isinstance(raw_trace, dict):
            violations.append("defaults.trace_policy: expected object")
        else:
            known_trace = {"gap_threshold_s", "n_exec_keep", "avoidance_min_errors", "avoidance_window_s"}
            values = {name: getattr(DEFAULT_TRACE_POLICY, name) for name in known_trace}
            for key, value in raw_trace.items():
                if key not in known_trace:
                    violations.append(f"defaults.trace_policy.{key}: unknown field")
                elif not isinstance(value, (int, float)) or isinstance(value, bool) or value <= 0:
                    violations.append(f"defaults.trace_policy.{key}: expected positive number")
                else:
                    values[key] = value
            values["n_exec_keep"] = int(values["n_exec_keep"])
            values["avoidance_min_errors"] = int(values["avoidance_min_errors"])
            trace_policy = TracePolicy(**values)

    experiments: dict[str, Experiment] = {}
    declared_ids: set[str] = set()
    raw_experiments = doc.get("experiments")
    if not isinstance(raw_experiments, list) or not raw_experiments:
        violations.append("experiments: must be a nonempty list")
    else:
        for i, raw_exp in enumerate(raw_experiments):
            if isinstance(raw_exp, dict) and isinstance(raw_exp.get("experiment_id"), str):
                declared_ids.add(raw_exp["experiment_id"])
            exp = _parse_experiment(raw_exp, f"experiments[{i}]", defaults_policy, defaults_params, violations)
            if exp is None:
                continue
            if exp.experiment_id in experiments:
                violations.append(f"experiments[{i}].experiment_id: duplicate {exp.experiment_id!r}")
                continue
            experiments[exp.experiment_id] = exp

    default_experiment = doc.get("default_experiment")
    if not isinstance(default_experiment, str) or not default_experiment:
        violations.append("default_experiment: missing or empty")
    elif default_experiment not in declared_ids:
        violations.append(f"default_experiment: {default_experiment!r} is not a defined experiment")

    notebook_experiments = doc.get("notebook_experiments", {})
    if not isinstance(notebook_experiments, dict):
        violations.append("notebook_experiments: expected object of notebook_id -> experiment_id")
        notebook_experiments = {}
    else:
        for nb, exp_id in notebook_experiments.items():
            if exp_id not in declared_ids:
                violations.append(f"notebook_experiments[{nb}]: {exp_id!r} is not a defined experiment")

    rules_name = raw_defaults.get("helpseek_rules", "helpseek_rules.json")
    rules = RuleSet(rules=(), verification_patterns=())
    try:
        rules = load_rules(path.parent / rules_name)
    except RulesError as exc:
        violations.extend(f"helpseek rules: {v}" for v in exc.violations)

    tokens_name = raw_defaults.get("tokens_file", "tokens.json")
    tokens = _load_tokens(path.parent / tokens_name, violations)

    if violations:
        raise ConfigError(violations)
    assert defaults_params is not None  # guaranteed: a violation was recorded otherwise
    return AppConfig(
        source_path=path,
        defaults=GlobalDefaults(
            model_params=defaults_params,
            enrichment_policy=defaults_policy,
            fallback_text=fallback_text,
            max_concurrent_llm=max_concurrent,
            chat_queue_limit=queue_limit,
            trace_policy=trace_policy,
        ),
        experiments=experiments,
        default_experiment=default_experiment,  # type: ignore[arg-type]
        notebook_experiments=dict(notebook_experiments),
        rules=rules,
        tokens=tokens,
    )
