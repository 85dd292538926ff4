"""Pure numpy fallback for the compiled kernels in ``_ckernels.pyx``.

The arithmetic follows the compiled version step for step (same reduction
order, same tie-breaking), so results agree bit for bit; only speed differs.
"""

import numpy as np


def sqeuclidean_cost(a, b):
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    out = np.zeros((a.shape[0], b.shape[0]))
    # accumulate per coordinate in the same order as the compiled loop
    for k in range(a.shape[1]):
        diff = a[:, k][:, None] - b[:, k][None, :]
        out += diff * diff
    return out


AUCTION_START = 0.25
AUCTION_FACTOR = 5.0
AUCTION_FINAL = 1e-5


def _auction_prices(cost, eps, eps_final):
    n = cost.shape[0]
    price = np.zeros(n)
    owner = np.full(n, -1, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    while True:
        if eps < eps_final:
            eps = eps_final
        owner[:] = -1
        queue[:] = np.arange(n)
        head, count = 0, n
        while count > 0:
            i = queue[head]
            head = (head + 1) % n
            count -= 1
            w = cost[i] + price
            j1 = int(np.argmin(w))
            w1 = w[j1]
            w[j1] = np.inf
            w2 = w.min()
            price[j1] = price[j1] + ((w2 - w1) + eps)
            old = owner[j1]
            owner[j1] = i
            if old >= 0:
                queue[(head + count) % n] = old
                count += 1
        if eps <= eps_final:
            break
        eps = eps / AUCTION_FACTOR
    return price


def linear_sum_assignment(cost):
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    n = cost.shape[0]
    if cost.shape[1] != n:
        raise ValueError("cost matrix must be square")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix is infeasible (non-finite entries)")
    u = np.zeros(n)
    v = np.zeros(n)
    path = np.full(n, -1, dtype=np.int64)
    col4row = np.full(n, -1, dtype=np.int64)
    row4col = np.full(n, -1, dtype=np.int64)
    span = float(cost.max() - cost.min()) if n else 0.0
    if n > 1 and span > 0:
        v -= _auction_prices(cost, span * AUCTION_START, span * AUCTION_FINAL)

    free_rows = []
    for i in range(n):
        h = cost[i] - v
        index = int(np.argmin(h))
        u[i] = h[index]
        if row4col[index] == -1:
            row4col[index] = i
            col4row[i] = index
        else:
            free_rows.append(i)

    for cur in free_rows:
        min_val = 0.0
        spc = np.full(n, np.inf)
        sr = np.zeros(n, dtype=bool)
        sc = np.zeros(n, dtype=bool)
        remaining = np.arange(n - 1, -1, -1, dtype=np.int64)
        num_remaining = n
        sink = -1
        i = cur
        while sink == -1:
            sr[i] = True
            cols = remaining[:num_remaining]
            r = min_val + cost[i, cols] - u[i] - v[cols]
            better = r < spc[cols]
            upd = cols[better]
            path[upd] = i
            spc[upd] = r[better]
            vals = spc[cols]
            lowest = vals.min()
            # scan-order tie rule: a later free column overrides the first minimum
            ties = np.flatnonzero(vals == lowest)
            later_free = ties[1:][row4col[cols[ties[1:]]] == -1]
            index = later_free[-1] if later_free.size else ties[0]
            min_val = lowest
            j = remaining[index]
            if row4col[j] == -1:
                sink = j
            else:
                i = row4col[j]
            sc[j] = True
            num_remaining -= 1
            remaining[index] = remaining[num_remaining]

        u[cur] += min_val
        rows = np.flatnonzero(sr)
        rows = rows[rows != cur]
        u[rows] += min_val - spc[col4row[rows]]
        v[sc] -= min_val - spc[sc]

        j = sink
        while True:
            i = path[j]
            row4col[j] = i
            col4row[i], j = j, col4row[i]
            if i == cur:
                break
    return col4row
