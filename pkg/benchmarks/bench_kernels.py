"""Compiled vs numpy kernels: cost matrix and exact assignment timings.

Usage::

    python benchmarks/bench_kernels.py --sizes 500 1000 3000 --repeat 3

Clouds are color-like (one uniform cloud against a shifted, squashed copy),
the regime where every row competes for the same columns.
"""

import argparse
import time

import numpy as np

from swguide import _pykernels

try:
    from swguide import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def _clouds(n, seed):
    rng = np.random.default_rng(seed)
    return rng.random((n, 3)), 0.3 + 0.5 * rng.random((n, 3)) ** 2


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[250, 500, 1000, 2000, 3000])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    backends = {"python": _pykernels}
    if _ckernels is None:
        print("compiled extension not built; timing the numpy fallback only")
    else:
        backends["cython"] = _ckernels

    header = f"{'n':>6} {'kernel':<12}" + "".join(f"{name:>12}" for name in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for n in args.sizes:
        a, b = _clouds(n, args.seed)
        cost = _pykernels.sqeuclidean_cost(a, b)
        for kernel, call in (
            ("cost", lambda m: m.sqeuclidean_cost(a, b)),
            ("assignment", lambda m: m.linear_sum_assignment(cost)),
        ):
            timings, results = {}, {}
            for name, mod in backends.items():
                timings[name], results[name] = _best(lambda: call(mod), args.repeat)
            row = f"{n:>6} {kernel:<12}" + "".join(f"{timings[k]:>11.4f}s" for k in backends)
            if len(backends) == 2:
                row += f"{timings['python'] / timings['cython']:>9.1f}x"
                same = np.array_equal(results["python"], results["cython"])
                row += "" if same else "  (outputs differ!)"
            print(row)


if __name__ == "__main__":
    main()
