"""Config loading/validation and deterministic A/B assignment."""

from __future__ import annotations

import json
import subprocess
import sys
from collections import Counter

import pytest

from jelai.experiments import (
    ConfigError,
    assign_condition,
    fnv1a64,
    load_config,
    stable_assignment_hash,
)

from .conftest import CONFIG_DIR, write_test_config


class TestFnv1a:
    def test_published_vectors(self):
        assert fnv1a64(b"") == 0xCBF29CE484222325
        assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C
        assert fnv1a64(b"foobar") == 0x85944171F73967E8

    def test_separator_prevents_concatenation_collisions(self):
        assert stable_assignment_hash("ab", "c") != stable_assignment_hash("a", "bc")


class TestAssignment:
    def experiment(self):
        return load_config(CONFIG_DIR / "example.json").experiments["prompt-pilot"]

    def test_single_condition_always_assigned(self, tmp_path):
        config_path = write_test_config(
            tmp_path,
            {
                "experiments": [
                    {
                        "experiment_id": "solo",
                        "assignment": "hash",
                        "conditions": [
                            {"condition_id": "only", "system_prompt_template": "x", "scaffold_on_executive": False}
                        ],
                    }
                ],
                "default_experiment": "solo",
                "notebook_experiments": {},
            },
        )
        experiment = load_config(config_path).experiments["solo"]
        assert all(assign_condition(f"u{i}", experiment) == "only" for i in range(50))

    def test_repeated_calls_identical(self):
        experiment = self.experiment()
        assignments = {assign_condition("alice", experiment) for _ in range(100)}
        assert len(assignments) == 1

    def test_balance_1000_users(self):
        experiment = self.experiment()
        counts = Counter(assign_condition(f"user-{i:04d}", experiment) for i in range(1000))
        assert set(counts) == {"generic", "pedagogical"}
        for condition, count in counts.items():
            assert 450 <= count <= 550, (condition, count)

    def test_fixed_assignment(self, tmp_path):
        config_path = write_test_config(
            tmp_path,
            {
                "experiments": [
                    {
                        "experiment_id": "fixed-exp",
                        "assignment": "fixed:b",
                        "conditions": [
                            {"condition_id": "a", "system_prompt_template": "x", "scaffold_on_executive": False},
                            {"condition_id": "b", "system_prompt_template": "y", "scaffold_on_executive": False},
                        ],
                    }
                ],
                "default_experiment": "fixed-exp",
                "notebook_experiments": {},
            },
        )
        experiment = load_config(config_path).experiments["fixed-exp"]
        assert all(assign_condition(f"u{i}", experiment) == "b" for i in range(20))

    def test_deterministic_across_process_restarts(self):
        script = (
            "from jelai.experiments.assignment import stable_assignment_hash;"
            "print([stable_assignment_hash('prompt-pilot', f'user-{i:04d}') % 2 for i in range(50)])"
        )
        outputs = {
            subprocess.run([sys.executable, "-c", script], capture_output=True, text=True, check=True).stdout
            for _ in range(3)
        }
        assert len(outputs) == 1


class TestLoadConfig:
    def test_example_config(self):
        config = load_config(CONFIG_DIR / "example.json")
        assert list(config.experiments) == ["prompt-pilot"]
        experiment = config.experiments["prompt-pilot"]
        assert [c.condition_id for c in experiment.conditions] == ["generic", "pedagogical"]
        assert experiment.conditions[1].scaffold_on_executive is True
        assert config.defaults.model_params.model_name == "llama3.1:70b"

    def test_unknown_placeholder_named(self, tmp_path):
        config_path = write_test_config(
            tmp_path,
            {
                "experiments": [
                    {
                        "experiment_id": "bad",
                        "conditions": [
                            {"condition_id": "c", "system_prompt_template": "Hello {bogus}", "scaffold_on_executive": False}
                        ],
                    }
                ],
                "default_experiment": "bad",
                "notebook_experiments": {},
            },
        )
        with pytest.raises(ConfigError) as exc:
            load_config(config_path)
        assert any("bogus" in v for v in exc.value.violations)

    def test_empty_conditions_rejected(self, tmp_path):
        config_path = write_test_config(
            tmp_path,
            {
                "experiments": [{"experiment_id": "bad", "conditions": []}],
                "default_experiment": "bad",
                "notebook_experiments": {},
            },
        )
        with pytest.raises(ConfigError) as exc:
            load_config(config_path)
        assert any("conditions" in v for v in exc.value.violations)

    def test_fixed_target_must_exist(self, tmp_path):
        config_path = write_test_config(
            tmp_path,
            {
                "experiments": [
                    {
                        "experiment_id": "bad",
                        "assignment": "fixed:ghost",
                        "conditions": [
                            {"condition_id": "c", "system_prompt_template": "x", "scaffold_on_executive": False}
                        ],
                    }
                ],
                "default_experiment": "bad",
                "notebook_experiments": {},
            },
        )
        with pytest.raises(ConfigError) as exc:
            load_config(config_path)
        assert any("ghost" in v for v in exc.value.violations)

    def test_all_violations_accumulate(self, tmp_path):
        config_path = write_test_config(
            tmp_path,
            {
                "defaults": {"model_params": {"model_name": "m", "endpoint_base_url": "nope"}},
                "experiments": [
                    {
                        "experiment_id": "bad",
                        "conditions": [
                            {"condition_id": "c", "system_prompt_template": "{bogus}", "scaffold_on_executive": False}
                        ],
                    }
                ],
                "default_experiment": "missing-exp",
                "notebook_experiments": {},
            },
        )
        with pytest.raises(ConfigError) as exc:
            load_config(config_path)
        text = "\n".join(exc.value.violations)
        assert "endpoint_base_url" in text
        assert "bogus" in text
        assert "missing-exp" in text

    def test_condition_overrides_merge(self, tmp_path):
        config_path = write_test_config(
            tmp_path,
            {
                "experiments": [
                    {
                        "experiment_id": "e",
                        "conditions": [
                            {
                                "condition_id": "c",
                                "system_prompt_template": "x",
                                "scaffold_on_executive": False,
                                "enrichment_policy": {"n_recent_cells": 7},
                                "model_params": {"temperature": 0.1},
                            }
                        ],
                    }
                ],
                "default_experiment": "e",
                "notebook_experiments": {},
            },
        )
        condition = load_config(config_path).experiments["e"].conditions[0]
        assert condition.enrichment_policy.n_recent_cells == 7
        assert condition.enrichment_policy.history_turns == 10  # default preserved
        assert condition.model_params.temperature == 0.1
        assert condition.model_params.model_name == "llama3.1:70b"  # default preserved

    def test_notebook_binding_must_reference_experiment(self, tmp_path):
        config_path = write_test_config(tmp_path, {"notebook_experiments": {"nb-x": "ghost-exp"}})
        with pytest.raises(ConfigError) as exc:
            load_config(config_path)
        assert any("ghost-exp" in v for v in exc.value.violations)
