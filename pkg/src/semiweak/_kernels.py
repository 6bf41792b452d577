"""Hot numeric kernels with a numba backend and a pure-Python fallback.

The backend is chosen once at import time from the ``SEMIWEAK_BACKEND``
environment variable: ``numba`` (default when importable) JIT-compiles the
kernels below; ``numpy`` runs the identical source uncompiled. Both paths
execute the same statements on the same float64 arrays, so results are
bit-identical. ``benchmarks/bench_kernels.py`` times the two side by side.
"""
from __future__ import annotations

import math
import os

import numpy as np

BACKEND_ENV = "SEMIWEAK_BACKEND"


def _resolve_backend() -> str:
    choice = os.environ.get(BACKEND_ENV, "").strip().lower()
    if choice not in ("", "numba", "numpy"):
        raise ValueError(f"{BACKEND_ENV} must be 'numba' or 'numpy', got {choice!r}")
    if choice == "numpy":
        return "numpy"
    try:
        import numba  # noqa: F401
    except ImportError:
        if choice == "numba":
            raise
        return "numpy"
    return "numba"


BACKEND = _resolve_backend()


def _maybe_jit(fn):
    if BACKEND == "numba":
        from numba import njit

        return njit(cache=True)(fn)
    return fn


def greedy_count_fill(lam: np.ndarray, bag_size: int, literal: bool) -> np.ndarray:
    """Allocate ``bag_size`` unit increments across classes by max marginal gain.

    ``lam`` must already be clamped strictly positive. With ``literal=False``
    the gain for moving a class from t to t+1 is log(lam) - log(t+1), the
    increment in Poisson log-pmf, which makes the greedy exact for the
    separable discrete-concave objective. With ``literal=True`` the gain is
    the raw pmf difference pmf(t+1) - pmf(t) instead.

    A fixed-size array max-heap holds one (gain, class) entry per class; each
    step replaces the root with the popped class's next gain and sifts down.
    Ties break toward the lowest class index.
    """
    k = lam.shape[0]
    counts = np.zeros(k, dtype=np.int64)
    gains = np.empty(k, dtype=np.float64)
    cls = np.empty(k, dtype=np.int64)
    # pmf[c] tracks Poisson pmf(counts[c]; lam[c]) for the literal gain form.
    pmf = np.empty(k, dtype=np.float64)
    for c in range(k):
        cls[c] = c
        if literal:
            pmf[c] = math.exp(-lam[c])
            gains[c] = pmf[c] * (lam[c] - 1.0)
        else:
            gains[c] = math.log(lam[c])

    # Heapify: max-heap on gain, ties prefer the smaller class index.
    for start in range(k // 2 - 1, -1, -1):
        pos = start
        g = gains[pos]
        c = cls[pos]
        while True:
            child = 2 * pos + 1
            if child >= k:
                break
            right = child + 1
            if right < k and (
                gains[right] > gains[child]
                or (gains[right] == gains[child] and cls[right] < cls[child])
            ):
                child = right
            if gains[child] > g or (gains[child] == g and cls[child] < c):
                gains[pos] = gains[child]
                cls[pos] = cls[child]
                pos = child
            else:
                break
        gains[pos] = g
        cls[pos] = c

    for _ in range(bag_size):
        c = cls[0]
        counts[c] += 1
        t = counts[c]
        if literal:
            nxt = pmf[c] * lam[c] / t
            g = nxt * (lam[c] / (t + 1.0) - 1.0)
            pmf[c] = nxt
        else:
            g = math.log(lam[c]) - math.log(t + 1.0)
        # Replace the root and sift down.
        pos = 0
        while True:
            child = 2 * pos + 1
            if child >= k:
                break
            right = child + 1
            if right < k and (
                gains[right] > gains[child]
                or (gains[right] == gains[child] and cls[right] < cls[child])
            ):
                child = right
            if gains[child] > g or (gains[child] == g and cls[child] < c):
                gains[pos] = gains[child]
                cls[pos] = cls[child]
                pos = child
            else:
                break
        gains[pos] = g
        cls[pos] = c
    return counts


def solve_square_assignment(cost: np.ndarray) -> np.ndarray:
    """Exact min-cost perfect matching on a square cost matrix.

    Shortest-augmenting-path method with row/column potentials, O(n^3).
    Returns ``col_of_row`` such that row i is matched to column
    ``col_of_row[i]``. Deterministic: rows are augmented in order and
    column scans resolve ties toward the lowest column index.
    """
    n = cost.shape[0]
    u = np.zeros(n + 1, dtype=np.float64)
    v = np.zeros(n + 1, dtype=np.float64)
    row_of_col = np.zeros(n + 1, dtype=np.int64)
    way = np.zeros(n + 1, dtype=np.int64)
    minv = np.empty(n + 1, dtype=np.float64)
    used = np.empty(n + 1, dtype=np.bool_)
    for i in range(1, n + 1):
        row_of_col[0] = i
        j0 = 0
        for j in range(n + 1):
            minv[j] = np.inf
            used[j] = False
        while True:
            used[j0] = True
            i0 = row_of_col[j0]
            delta = np.inf
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[row_of_col[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if row_of_col[j0] == 0:
                break
        while True:
            j1 = way[j0]
            row_of_col[j0] = row_of_col[j1]
            j0 = j1
            if j0 == 0:
                break
    col_of_row = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        col_of_row[row_of_col[j] - 1] = j - 1
    return col_of_row


# Uncompiled references kept for backend-equivalence tests and benchmarks.
greedy_count_fill_py = greedy_count_fill
solve_square_assignment_py = solve_square_assignment

greedy_count_fill = _maybe_jit(greedy_count_fill)
solve_square_assignment = _maybe_jit(solve_square_assignment)
