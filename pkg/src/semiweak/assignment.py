"""Assign instances to class slots once the exact per-class counts are known.

Each class is expanded into one column per counted instance, turning the
constrained labeling into a square min-cost perfect matching on
cost = -log(probability), solved exactly in O(n^3). A brute-force
enumerator over all label sequences with the required histogram serves as
the test oracle, and per-row argmax gives the decoder-off baseline.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import solve_square_assignment
from .core import CountVector, ProbMatrix, ValidationError

__all__ = [
    "InstanceLabeling",
    "assign_labels",
    "assign_array",
    "brute_force_assign",
    "greedy_argmax_labels",
    "PROB_FLOOR",
]

PROB_FLOOR = 1e-12
BRUTE_FORCE_MAX_INSTANCES = 8


@dataclass(frozen=True)
class InstanceLabeling:
    labels: np.ndarray
    objective: float

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        labels.flags.writeable = False
        object.__setattr__(self, "labels", labels)


def _check_compatible(probs: ProbMatrix, counts: CountVector) -> None:
    if counts.n_classes != probs.n_classes:
        raise ValidationError(
            f"counts have {counts.n_classes} classes, probabilities have {probs.n_classes}"
        )
    if counts.bag_size != probs.n_instances:
        raise ValidationError(
            f"counts sum to {counts.bag_size} but there are {probs.n_instances} instances"
        )


def _log_probs(probs: ProbMatrix) -> np.ndarray:
    return np.log(np.maximum(probs.values, PROB_FLOOR))


def assign_array(prob_values: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Array-level core of assign_labels; inputs are assumed already validated."""
    logp = np.log(np.maximum(prob_values, PROB_FLOOR))
    col_class = np.repeat(np.arange(counts.size), counts)
    cost = np.ascontiguousarray(-logp[:, col_class])
    col_of_row = solve_square_assignment(cost)
    labels = col_class[col_of_row]
    assert np.array_equal(np.bincount(labels, minlength=counts.size), counts)
    return labels


def assign_labels(probs: ProbMatrix, counts: CountVector) -> InstanceLabeling:
    """Histogram-constrained labeling maximizing the total log-probability."""
    _check_compatible(probs, counts)
    labels = assign_array(probs.values, counts.counts)
    logp = _log_probs(probs)
    objective = float(logp[np.arange(probs.n_instances), labels].sum())
    return InstanceLabeling(labels=labels, objective=objective)


def _labelings_lex(counts: np.ndarray):
    """All label sequences with the given per-class histogram, lexicographically ascending."""
    n = int(counts.sum())
    k = counts.size
    remaining = counts.copy()
    seq = np.empty(n, dtype=np.int64)

    def rec(pos: int):
        if pos == n:
            yield tuple(seq)
            return
        for c in range(k):
            if remaining[c] > 0:
                remaining[c] -= 1
                seq[pos] = c
                yield from rec(pos + 1)
                remaining[c] += 1

    yield from rec(0)


def brute_force_assign(probs: ProbMatrix, counts: CountVector) -> InstanceLabeling:
    """Exhaustive maximizer over histogram-feasible labelings; oracle for assign_labels.

    Ties resolve to the lexicographically smallest label sequence.
    """
    _check_compatible(probs, counts)
    n = probs.n_instances
    if n > BRUTE_FORCE_MAX_INSTANCES:
        raise ValidationError(
            f"brute force limited to {BRUTE_FORCE_MAX_INSTANCES} instances, got {n}"
        )
    logp = _log_probs(probs)
    candidates = np.array(list(_labelings_lex(counts.counts)), dtype=np.int64).reshape(-1, n)
    objectives = logp[np.arange(n), candidates].sum(axis=1)
    winner = int(np.argmax(objectives))
    return InstanceLabeling(labels=candidates[winner], objective=float(objectives[winner]))


def greedy_argmax_labels(probs: ProbMatrix) -> np.ndarray:
    """Per-row argmax labels, ignoring count constraints (decoder-off baseline)."""
    return probs.values.argmax(axis=1).astype(np.int64)
