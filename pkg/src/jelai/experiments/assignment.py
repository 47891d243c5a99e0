"""Deterministic condition assignment.

64-bit FNV-1a over `experiment_id 0x1F user_id` (UTF-8) indexes the ordered
condition list. The hash is trivially portable, so analysis scripts in any
language can recompute the exact assignment; it depends only on the two ids,
never on call order or process lifetime.
"""

from __future__ import annotations

from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from jelai.experiments.config import Experiment

FNV64_OFFSET_BASIS = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF
_SEPARATOR = b"\x1f"


def fnv1a64(data: bytes) -> int:
    h = FNV64_OFFSET_BASIS
    for byte in data:
        h ^= byte
        h = (h * FNV64_PRIME) & _MASK64
    return h


def stable_assignment_hash(experiment_id: str, user_id: str) -> int:
    return fnv1a64(experiment_id.encode("utf-8") + _SEPARATOR + user_id.encode("utf-8"))


def assign_condition(user_id: str, experiment: "Experiment") -> str:
    """Return the condition_id for this user; stable across processes and restarts."""
    if experiment.assignment.startswith("fixed:"):
        return experiment.assignment[len("fixed:") :]
    index = stable_assignment_hash(experiment.experiment_id, user_id) % len(experiment.conditions)
    return experiment.conditions[index].condition_id
