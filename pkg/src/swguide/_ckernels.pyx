# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the exact transport oracle.

Both functions mirror ``_pykernels`` operation for operation so the two
backends return bit-identical results.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()

# eps-scaling schedule for the dual warm start, relative to the cost range
cdef double AUCTION_START = 0.25
cdef double AUCTION_FACTOR = 5.0
cdef double AUCTION_FINAL = 1e-5


def sqeuclidean_cost(const double[:, ::1] a, const double[:, ::1] b):
    """Dense matrix of squared Euclidean distances, summed coordinate by coordinate."""
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0], d = a.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double acc, diff
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] c = out
    with nogil:
        for i in range(n):
            for j in range(m):
                acc = 0.0
                for k in range(d):
                    diff = a[i, k] - b[j, k]
                    acc = acc + diff * diff
                c[i, j] = acc
    return out


cdef void _auction_prices(const double[:, ::1] cost, double[::1] price, double eps,
                          double eps_final, cnp.int64_t[::1] owner,
                          cnp.int64_t[::1] queue) noexcept nogil:
    # forward auction with eps-scaling; only the final prices are used
    cdef Py_ssize_t n = cost.shape[0]
    cdef Py_ssize_t head, count, i, j, j1, old
    cdef double w, w1, w2
    while True:
        if eps < eps_final:
            eps = eps_final
        for j in range(n):
            owner[j] = -1
            queue[j] = j
        head = 0
        count = n
        while count > 0:
            i = queue[head]
            head = (head + 1) % n
            count -= 1
            w1 = INFINITY
            w2 = INFINITY
            j1 = -1
            for j in range(n):
                w = cost[i, j] + price[j]
                if w < w2:
                    if w < w1:
                        w2 = w1
                        w1 = w
                        j1 = j
                    else:
                        w2 = w
            price[j1] = price[j1] + ((w2 - w1) + eps)
            old = owner[j1]
            owner[j1] = i
            if old >= 0:
                queue[(head + count) % n] = old
                count += 1
        if eps <= eps_final:
            break
        eps = eps / AUCTION_FACTOR


def linear_sum_assignment(const double[:, ::1] cost):
    """Minimum-cost perfect matching on a square cost matrix.

    An eps-scaled auction supplies column potentials; rows then claim their
    cheapest reduced-cost column where it is still free, and shortest
    augmenting paths finish the assignment exactly. The auction only warm
    starts the duals, so optimality never depends on its tolerance.
    O(n^3) worst case.

    Returns
    -------
    col4row : ndarray of int64, shape (n,)
        ``col4row[i]`` is the column assigned to row ``i``.
    """
    cdef Py_ssize_t n = cost.shape[0]
    if cost.shape[1] != n:
        raise ValueError("cost matrix must be square")
    if not np.all(np.isfinite(np.asarray(cost))):
        raise ValueError("cost matrix is infeasible (non-finite entries)")
    u_arr = np.zeros(n, dtype=np.float64)
    v_arr = np.zeros(n, dtype=np.float64)
    spc_arr = np.empty(n, dtype=np.float64)
    path_arr = np.full(n, -1, dtype=np.int64)
    col4row_arr = np.full(n, -1, dtype=np.int64)
    row4col_arr = np.full(n, -1, dtype=np.int64)
    sr_arr = np.zeros(n, dtype=np.uint8)
    sc_arr = np.zeros(n, dtype=np.uint8)
    remaining_arr = np.empty(n, dtype=np.int64)
    free_arr = np.empty(n, dtype=np.int64)

    cdef double[::1] u = u_arr
    cdef double[::1] v = v_arr
    cdef double[::1] spc = spc_arr
    cdef cnp.int64_t[::1] path = path_arr
    cdef cnp.int64_t[::1] col4row = col4row_arr
    cdef cnp.int64_t[::1] row4col = row4col_arr
    cdef unsigned char[::1] sr = sr_arr
    cdef unsigned char[::1] sc = sc_arr
    cdef cnp.int64_t[::1] remaining = remaining_arr
    cdef cnp.int64_t[::1] free_rows = free_arr

    cdef Py_ssize_t cur, f, n_free, i, j, it, index, num_remaining, sink, tmp
    cdef double min_val, lowest, r
    cdef bint failed = False
    cdef double span = float(np.max(np.asarray(cost)) - np.min(np.asarray(cost))) if n else 0.0

    if n > 1 and span > 0:
        price_arr = np.zeros(n, dtype=np.float64)
        _auction_prices(cost, price_arr, span * AUCTION_START, span * AUCTION_FINAL,
                        path, remaining)
        v_arr -= price_arr
        path_arr.fill(-1)

    with nogil:
        # greedy claims on the warm-started reduced costs keep the duals feasible
        n_free = 0
        for i in range(n):
            lowest = INFINITY
            index = -1
            for j in range(n):
                r = cost[i, j] - v[j]
                if r < lowest:
                    lowest = r
                    index = j
            u[i] = lowest
            if row4col[index] == -1:
                row4col[index] = i
                col4row[i] = index
            else:
                free_rows[n_free] = i
                n_free += 1

        for f in range(n_free):
            cur = free_rows[f]
            # Dijkstra over reduced costs, rooted at the free row `cur`
            min_val = 0.0
            num_remaining = n
            for it in range(n):
                remaining[it] = n - it - 1
                sr[it] = 0
                sc[it] = 0
                spc[it] = INFINITY
            sink = -1
            i = cur
            while sink == -1:
                index = -1
                lowest = INFINITY
                sr[i] = 1
                for it in range(num_remaining):
                    j = remaining[it]
                    r = min_val + cost[i, j] - u[i] - v[j]
                    if r < spc[j]:
                        path[j] = i
                        spc[j] = r
                    if spc[j] < lowest or (spc[j] == lowest and row4col[j] == -1):
                        lowest = spc[j]
                        index = it
                min_val = lowest
                if index == -1:
                    failed = True
                    break
                j = remaining[index]
                if row4col[j] == -1:
                    sink = j
                else:
                    i = row4col[j]
                sc[j] = 1
                num_remaining -= 1
                remaining[index] = remaining[num_remaining]
            if failed:
                break

            u[cur] = u[cur] + min_val
            for i in range(n):
                if sr[i] and i != cur:
                    u[i] = u[i] + (min_val - spc[col4row[i]])
            for j in range(n):
                if sc[j]:
                    v[j] = v[j] - (min_val - spc[j])

            j = sink
            while True:
                i = path[j]
                row4col[j] = i
                tmp = col4row[i]
                col4row[i] = j
                j = tmp
                if i == cur:
                    break
    if failed:
        raise ValueError("cost matrix is infeasible (non-finite entries)")
    return col4row_arr
