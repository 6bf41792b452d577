import os
import subprocess
import sys

import numpy as np
import pytest

from semiweak import _kernels

RNG = np.random.default_rng(31337)


def test_backend_resolution_reports():
    assert _kernels.BACKEND in ("numba", "numpy")


@pytest.mark.skipif(_kernels.BACKEND != "numba", reason="compiled backend unavailable")
def test_greedy_fill_compiled_matches_python():
    for _ in range(300):
        k = int(RNG.integers(1, 12))
        n = int(RNG.integers(1, 30))
        lam = np.maximum(RNG.uniform(0, 5, size=k), 1e-12)
        for literal in (False, True):
            jit = _kernels.greedy_count_fill(lam, n, literal)
            py = _kernels.greedy_count_fill_py(lam, n, literal)
            assert np.array_equal(jit, py), (lam, n, literal)


@pytest.mark.skipif(_kernels.BACKEND != "numba", reason="compiled backend unavailable")
def test_assignment_compiled_matches_python():
    for _ in range(120):
        n = int(RNG.integers(1, 16))
        cost = RNG.uniform(0, 10, size=(n, n))
        jit = _kernels.solve_square_assignment(cost)
        py = _kernels.solve_square_assignment_py(cost)
        assert np.array_equal(jit, py)
        assert sorted(jit.tolist()) == list(range(n))


def test_numpy_backend_forced_by_env():
    code = (
        "import numpy as np\n"
        "from semiweak import _kernels\n"
        "assert _kernels.BACKEND == 'numpy', _kernels.BACKEND\n"
        "assert _kernels.greedy_count_fill is _kernels.greedy_count_fill_py\n"
        "out = _kernels.greedy_count_fill(np.array([2.0, 1.0, 1.0]), 4, False)\n"
        "assert out.tolist() == [2, 1, 1], out\n"
    )
    env = dict(os.environ, SEMIWEAK_BACKEND="numpy")
    proc = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, env=env)
    assert proc.returncode == 0, proc.stderr


def test_invalid_backend_env_rejected():
    env = dict(os.environ, SEMIWEAK_BACKEND="fortran")
    proc = subprocess.run(
        [sys.executable, "-c", "import semiweak._kernels"], capture_output=True, text=True, env=env
    )
    assert proc.returncode != 0
    assert "SEMIWEAK_BACKEND" in proc.stderr
