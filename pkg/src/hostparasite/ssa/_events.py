"""JIT kernels for the event-by-event simulation of the finite host system.

Rates are grouped into seven classes whose totals depend on the state only
through ``K = sum k_i`` and ``W = sum k_i (N - k_i)``; hosts within a class
are found with Fenwick-tree searches on integer weights, so the result of a
search never depends on summation order.
"""

import numpy as np
from numba import njit

# event kinds, mirrored from trajectory.EventKind
MORAN_UP, MORAN_DOWN, REINF_UP, REINF_DOWN, REPL_1, REPL_0, MUT_AB, MUT_BA = range(8)

ST_DONE, ST_FULL, ST_ABSORBED = 0, 1, 2


@njit(cache=True)
def fen_build(values):
    m = values.shape[0]
    tree = np.zeros(m + 1, dtype=np.int64)
    for i in range(m):
        j = i + 1
        tree[j] += values[i]
        p = j + (j & -j)
        if p <= m:
            tree[p] += tree[j]
    return tree


@njit(cache=True)
def fen_add(tree, i, delta):
    m = tree.shape[0] - 1
    j = i + 1
    while j <= m:
        tree[j] += delta
        j += j & -j


@njit(cache=True)
def _top_bit(m):
    step = 1
    while step * 2 <= m:
        step *= 2
    return step


@njit(cache=True)
def fen_search(tree, target):
    """Smallest 0-based index whose inclusive prefix sum exceeds ``target``."""
    m = tree.shape[0] - 1
    pos = 0
    step = _top_bit(m)
    while step > 0:
        nxt = pos + step
        if nxt <= m and tree[nxt] <= target:
            pos = nxt
            target -= tree[nxt]
        step //= 2
    return pos


@njit(cache=True)
def fen_search_complement(tree, cap, target):
    """As ``fen_search`` but for the weights ``cap - value``."""
    m = tree.shape[0] - 1
    pos = 0
    step = _top_bit(m)
    while step > 0:
        nxt = pos + step
        if nxt <= m:
            val = cap * step - tree[nxt]
            if val <= target:
                pos = nxt
                target -= val
        step //= 2
    return pos


@njit(cache=True)
def class_rates(K, W, N, M, g, rN, u, out):
    xbar = K / (N * M)
    out[0] = 2.0 * g * W / N
    out[1] = rN * xbar * (M - K / N)
    out[2] = rN * (1.0 - xbar) * (K / N)
    out[3] = K / N
    out[4] = M - K / N
    out[5] = u * g * K
    out[6] = u * g * (N * M - K)
    tot = 0.0
    for c in range(7):
        tot += out[c]
    return tot


@njit(cache=True)
def is_absorbed(K, W, N, M, u):
    return W == 0 and u == 0.0 and (K == 0 or K == N * M)


@njit(cache=True)
def _mixed_insert(mixed, nm, i):
    j = nm
    while j > 0 and mixed[j - 1] > i:
        mixed[j] = mixed[j - 1]
        j -= 1
    mixed[j] = i
    return nm + 1


@njit(cache=True)
def _mixed_remove(mixed, nm, i):
    j = 0
    while mixed[j] != i:
        j += 1
    while j < nm - 1:
        mixed[j] = mixed[j + 1]
        j += 1
    return nm - 1


@njit(cache=True)
def _pick_moran_sparse(k, mixed, nm, N, target):
    acc = 0
    for j in range(nm):
        i = mixed[j]
        acc += k[i] * (N - k[i])
        if acc > target:
            return i
    return mixed[nm - 1]


@njit(cache=True)
def _set_k(k, i, new, fw, fk, agg, mixed, nm_arr, N, sparse):
    old = k[i]
    if new == old:
        return
    w_old = old * (N - old)
    w_new = new * (N - new)
    fen_add(fw, i, w_new - w_old)
    fen_add(fk, i, new - old)
    agg[0] += new - old
    agg[1] += w_new - w_old
    k[i] = new
    if sparse:
        if w_old == 0 and w_new > 0:
            nm_arr[0] = _mixed_insert(mixed, nm_arr[0], i)
        elif w_old > 0 and w_new == 0:
            nm_arr[0] = _mixed_remove(mixed, nm_arr[0], i)


@njit(cache=True)
def one_event(k, fw, fk, agg, mixed, nm_arr, N, M, g, s, eta, rN, u, sparse, rates, rng):
    """Apply one event; returns ``(kind, host, source)`` with source -1 if none."""
    K = agg[0]
    W = agg[1]
    tot = class_rates(K, W, N, M, g, rN, u, rates)
    x = rng.random() * tot
    c = 0
    while c < 6 and x >= rates[c]:
        x -= rates[c]
        c += 1
    while rates[c] == 0.0:  # guard against landing on an empty class by rounding
        c -= 1
    src = -1
    if c == 0:
        target = np.int64(rng.random() * W)
        if target >= W:
            target = W - 1
        if sparse:
            i = _pick_moran_sparse(k, mixed, nm_arr[0], N, target)
        else:
            i = fen_search(fw, target)
        xi = k[i] / N
        if rng.random() * 2.0 < 1.0 + s * (eta - xi):
            kind = MORAN_UP
            _set_k(k, i, k[i] + 1, fw, fk, agg, mixed, nm_arr, N, sparse)
        else:
            kind = MORAN_DOWN
            _set_k(k, i, k[i] - 1, fw, fk, agg, mixed, nm_arr, N, sparse)
    elif c == 1:
        i = fen_search_complement(fk, N, np.int64(rng.random() * (N * M - K)))
        src = fen_search(fk, np.int64(rng.random() * K))
        kind = REINF_UP
        _set_k(k, i, k[i] + 1, fw, fk, agg, mixed, nm_arr, N, sparse)
    elif c == 2:
        i = fen_search(fk, np.int64(rng.random() * K))
        src = fen_search_complement(fk, N, np.int64(rng.random() * (N * M - K)))
        kind = REINF_DOWN
        _set_k(k, i, k[i] - 1, fw, fk, agg, mixed, nm_arr, N, sparse)
    elif c == 3:
        i = np.int64(rng.random() * M)
        src = fen_search(fk, np.int64(rng.random() * K))
        kind = REPL_1
        _set_k(k, i, N, fw, fk, agg, mixed, nm_arr, N, sparse)
    elif c == 4:
        i = np.int64(rng.random() * M)
        src = fen_search_complement(fk, N, np.int64(rng.random() * (N * M - K)))
        kind = REPL_0
        _set_k(k, i, 0, fw, fk, agg, mixed, nm_arr, N, sparse)
    elif c == 5:
        i = fen_search(fk, np.int64(rng.random() * K))
        kind = MUT_AB
        _set_k(k, i, k[i] - 1, fw, fk, agg, mixed, nm_arr, N, sparse)
    else:
        i = fen_search_complement(fk, N, np.int64(rng.random() * (N * M - K)))
        kind = MUT_BA
        _set_k(k, i, k[i] + 1, fw, fk, agg, mixed, nm_arr, N, sparse)
    return kind, i, src


@njit(cache=True)
def run_interval(
    k, fw, fk, agg, mixed, nm_arr, N, M, g, s, eta, rN, u, sparse,
    t, t_target, rng, counts, log_t, log_host, log_kind, log_src, log_pos, log_on,
):
    """Advance to ``t_target``; returns ``(t, status, log_pos)``."""
    rates = np.zeros(7)
    cap = log_t.shape[0]
    while True:
        if is_absorbed(agg[0], agg[1], N, M, u):
            return t, ST_ABSORBED, log_pos
        if log_on and log_pos >= cap:
            return t, ST_FULL, log_pos
        tot = class_rates(agg[0], agg[1], N, M, g, rN, u, rates)
        t_next = t + rng.standard_exponential() / tot
        if t_next > t_target:
            return t_target, ST_DONE, log_pos
        t = t_next
        kind, i, src = one_event(k, fw, fk, agg, mixed, nm_arr, N, M, g, s, eta, rN, u, sparse, rates, rng)
        counts[kind] += 1
        if log_on:
            log_t[log_pos] = t
            log_host[log_pos] = i
            log_kind[log_pos] = kind
            log_src[log_pos] = src
            log_pos += 1


@njit(cache=True)
def classify_counts(k, N, klo, khi, out):
    out[:] = 0
    for i in range(k.shape[0]):
        ki = k[i]
        if ki == 0:
            out[0] += 1
        elif ki == N:
            out[2] += 1
        elif klo <= ki <= khi:
            out[1] += 1
        else:
            out[3] += 1
