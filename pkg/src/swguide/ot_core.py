"""Exact one-dimensional Wasserstein distances and an exact W2 oracle.

One-dimensional distances between equal-size empirical measures reduce to
pairing sorted samples. The multidimensional oracle :func:`exact_w2` solves
the equal-weight assignment problem exactly and is meant for evaluation at
desk scale (a few thousand points).
"""

import numpy as np

from . import _backend
from .errors import ConfigError, EmptyDistributionError, InputError, SampleCountError

__all__ = [
    "EXACT_W2_CAP",
    "as_samples",
    "as_cloud",
    "empirical_cdf",
    "w1_1d",
    "wp_1d",
    "exact_w2",
    "match_sizes",
]

EXACT_W2_CAP = 4096


def as_samples(x, name="x"):
    """Validate a one-dimensional sample array (finite, non-empty)."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise InputError(f"{name}: expected a 1-D array, got shape {arr.shape}")
    if arr.size == 0:
        raise EmptyDistributionError(f"{name}: empty distribution")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name}: non-finite values (NaN/Inf) are rejected")
    return arr


def as_cloud(points, name="cloud", unit_cube=False):
    """Validate an ``(n, d)`` point cloud.

    A 1-D input is read as ``n`` points in one dimension. With
    ``unit_cube=True`` every coordinate must lie in [0, 1] (color clouds).
    """
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise InputError(f"{name}: expected an (n, d) array, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise EmptyDistributionError(f"{name}: empty distribution")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name}: non-finite values (NaN/Inf) are rejected")
    if unit_cube and (arr.min() < 0.0 or arr.max() > 1.0):
        raise InputError(f"{name}: color cloud leaves the unit cube [0,1]^d")
    return arr


def _check_pair(x, y):
    x = as_samples(x, "x")
    y = as_samples(y, "y")
    if x.size != y.size:
        raise SampleCountError(f"unequal sample counts: {x.size} vs {y.size}")
    return x, y


def empirical_cdf(x, query):
    """Right-continuous empirical CDF: fraction of samples ``<= query``.

    ``query`` may be a scalar or an array; the result has the same shape.
    """
    x = np.sort(as_samples(x), kind="stable")
    q = np.asarray(query, dtype=np.float64)
    out = np.searchsorted(x, q, side="right") / x.size
    return float(out) if out.ndim == 0 else out


def w1_1d(x, y):
    """1-Wasserstein distance between two equal-size 1D empirical measures.

    Computed by pairing order statistics, ``mean |x_(i) - y_(i)|``, which
    equals the area between the two empirical CDFs.
    """
    x, y = _check_pair(x, y)
    return float(np.mean(np.abs(np.sort(x, kind="stable") - np.sort(y, kind="stable"))))


def wp_1d(x, y, p=2.0):
    """p-Wasserstein distance between equal-size 1D empirical measures."""
    if not p >= 1:
        raise ConfigError(f"p={p} is not a metric order (need p >= 1)")
    if p == 1:
        return w1_1d(x, y)
    x, y = _check_pair(x, y)
    diff = np.abs(np.sort(x, kind="stable") - np.sort(y, kind="stable"))
    return float(np.mean(diff**p) ** (1.0 / p))


def exact_w2(a, b, cap=EXACT_W2_CAP, return_matching=False):
    """Exact 2-Wasserstein distance between equal-size uniform point clouds.

    Solves the assignment problem on squared Euclidean costs and returns the
    root mean squared matched distance.

    Parameters
    ----------
    a, b : array_like, shape (n, d)
        Point clouds with the same ``n`` and ``d``.
    cap : int
        Largest accepted ``n``; above it callers must subsample.
    return_matching : bool
        Also return ``col4row`` (``a[i]`` is matched to ``b[col4row[i]]``).
    """
    a = np.ascontiguousarray(as_cloud(a, "a"))
    b = np.ascontiguousarray(as_cloud(b, "b"))
    if a.shape[1] != b.shape[1]:
        raise InputError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    n = a.shape[0]
    if n != b.shape[0]:
        raise SampleCountError(f"unequal sample counts: {n} vs {b.shape[0]}")
    if n > cap:
        raise ConfigError(
            f"exact_w2 is capped at n={cap} points (got {n}); subsample both clouds first"
        )
    cost = _backend.sqeuclidean_cost(a, b)
    col4row = _backend.linear_sum_assignment(cost)
    value = float(np.sqrt(np.mean(cost[np.arange(n), col4row])))
    if return_matching:
        return value, col4row
    return value


def match_sizes(a, b, rng):
    """Subsample (with replacement) the larger cloud down to the smaller size.

    Clouds that already agree in size are returned unchanged.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape[0] > b.shape[0]:
        a = a[rng.integers(0, a.shape[0], size=b.shape[0])]
    elif b.shape[0] > a.shape[0]:
        b = b[rng.integers(0, b.shape[0], size=a.shape[0])]
    return a, b
