"""Compiled and pure-Python kernels must agree bit for bit."""

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment as scipy_lsa

from swguide import _backend, _pykernels

ckernels = pytest.importorskip("swguide._ckernels")


def _problems():
    rng = np.random.default_rng(2024)
    for n in (1, 2, 3, 7, 40, 120):
        yield rng.random((n, n))
        yield rng.integers(0, 3, size=(n, n)).astype(np.float64)
    yield np.zeros((9, 9))
    a = rng.random((200, 3)) * 0.2
    b = rng.random((200, 3)) * 0.2 + 0.7
    yield _pykernels.sqeuclidean_cost(a, b)


def test_default_backend_is_compiled():
    assert _backend.BACKEND == "cython"


@pytest.mark.parametrize("cost", list(_problems()), ids=lambda c: f"n{c.shape[0]}")
def test_assignment_bit_identical_and_optimal(cost):
    fast = ckernels.linear_sum_assignment(np.ascontiguousarray(cost))
    slow = _pykernels.linear_sum_assignment(cost)
    np.testing.assert_array_equal(fast, slow)
    rows, cols = scipy_lsa(cost)
    n = cost.shape[0]
    assert sorted(fast.tolist()) == list(range(n))
    assert cost[np.arange(n), fast].sum() == pytest.approx(cost[rows, cols].sum(), abs=1e-10)


def test_cost_matrix_bit_identical():
    rng = np.random.default_rng(5)
    a, b = rng.normal(size=(50, 3)), rng.normal(size=(70, 3))
    np.testing.assert_array_equal(ckernels.sqeuclidean_cost(a, b), _pykernels.sqeuclidean_cost(a, b))


@pytest.mark.parametrize("bad", [np.inf, np.nan])
def test_non_finite_cost_rejected(bad):
    cost = np.ones((3, 3))
    cost[1, 2] = bad
    for impl in (ckernels.linear_sum_assignment, _pykernels.linear_sum_assignment):
        with pytest.raises(ValueError):
            impl(cost)


def test_non_square_rejected():
    with pytest.raises(ValueError):
        _pykernels.linear_sum_assignment(np.ones((2, 3)))
    with pytest.raises(ValueError):
        ckernels.linear_sum_assignment(np.ones((2, 3)))


def test_forced_python_backend(monkeypatch):
    import importlib

    monkeypatch.setenv("SWGUIDE_BACKEND", "python")
    mod = importlib.reload(_backend)
    try:
        assert mod.BACKEND == "python"
    finally:
        monkeypatch.delenv("SWGUIDE_BACKEND")
        importlib.reload(_backend)
