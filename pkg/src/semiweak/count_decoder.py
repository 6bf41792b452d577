"""Translate real-valued expected counts into an exact count vector.

The target is the maximizer of the summed Poisson log-pmf over the integer
simplex (entries sum to the bag size). ``greedy_decode`` allocates unit
increments by largest marginal log-pmf gain through a max-heap, which is
exact because those gains are strictly decreasing within a class.
``brute_force_decode`` enumerates the simplex and is the test oracle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ._kernels import greedy_count_fill
from .core import CountVector, ExpectedCounts, ValidationError

__all__ = ["DecodeResult", "greedy_decode", "brute_force_decode", "LAMBDA_FLOOR"]

LAMBDA_FLOOR = 1e-12
BRUTE_FORCE_GUARD = 10**6


@dataclass(frozen=True)
class DecodeResult:
    counts: CountVector
    log_posterior: float
    iterations: int


def _clamped(lambda_hat: ExpectedCounts) -> np.ndarray:
    return np.maximum(lambda_hat.lambdas, LAMBDA_FLOOR)


def _log_pmf_sum(counts: np.ndarray, lam: np.ndarray) -> float:
    lgamma = np.array([math.lgamma(t + 1.0) for t in counts])
    return float((counts * np.log(lam) - lam - lgamma).sum())


def greedy_decode(lambda_hat: ExpectedCounts, bag_size: int, literal: bool = False) -> DecodeResult:
    """Heap-greedy MAP count vector for ``bag_size`` instances.

    ``literal=True`` switches the marginal gain from the log-pmf increment to
    the raw pmf difference; kept only for fidelity experiments, it can be
    suboptimal for the log objective.
    """
    if bag_size <= 0:
        raise ValidationError(f"bag_size must be positive, got {bag_size}")
    lam = _clamped(lambda_hat)
    counts = greedy_count_fill(lam, bag_size, literal)
    return DecodeResult(
        counts=CountVector(counts, bag_size=bag_size),
        log_posterior=_log_pmf_sum(counts, lam),
        iterations=bag_size,
    )


@lru_cache(maxsize=256)
def _compositions(total: int, k: int) -> np.ndarray:
    """All non-negative integer k-vectors summing to total, lexicographically ascending."""

    def rec(rem: int, parts: int):
        if parts == 1:
            yield (rem,)
            return
        for first in range(rem + 1):
            for rest in rec(rem - first, parts - 1):
                yield (first, *rest)

    out = np.array(list(rec(total, k)), dtype=np.int64).reshape(-1, k)
    out.flags.writeable = False
    return out


def brute_force_decode(lambda_hat: ExpectedCounts, bag_size: int) -> DecodeResult:
    """Exhaustive maximizer over the integer simplex; oracle for greedy_decode.

    Ties resolve to the lexicographically largest maximizer, which is the
    vector the greedy produces when it breaks gain ties toward the lowest
    class index.
    """
    if bag_size < 0:
        raise ValidationError(f"bag_size must be non-negative, got {bag_size}")
    k = lambda_hat.n_classes
    n_candidates = math.comb(bag_size + k - 1, k - 1)
    if n_candidates > BRUTE_FORCE_GUARD:
        raise ValidationError(
            f"search space {n_candidates} exceeds brute-force guard {BRUTE_FORCE_GUARD}"
        )
    lam = _clamped(lambda_hat)
    comps = _compositions(bag_size, k)
    lgamma_table = np.array([math.lgamma(t + 1.0) for t in range(bag_size + 1)])
    objectives = comps @ np.log(lam) - lam.sum() - lgamma_table[comps].sum(axis=1)
    best = objectives.max()
    winner = int(np.flatnonzero(objectives == best)[-1])
    counts = comps[winner]
    return DecodeResult(
        counts=CountVector(counts, bag_size=bag_size),
        log_posterior=float(objectives[winner]),
        iterations=comps.shape[0],
    )
