"""Limit objects of the host system once within-host dynamics are infinitely fast.

* ``simulate_ym``: M hosts with states in {0, eta, 1}.
* ``simulate_zm``: the class proportions of the same process.
* ``simulate_v``: one host driven by a deterministic path of class weights.
* ``sample_tree`` / ``estimate_v_tree``: the backward tree whose root state
  has the law of the mean-field solution.

States are encoded as 0 = Zero, 1 = Eta, 2 = One throughout.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional

import numpy as np
from numba import njit

from .meanfield import OdePath
from .rng import as_generator, seed_stream
from .simplex import TernaryWeights
from .trajectory import Trajectory, time_grid

ZERO, ETA, ONE = 0, 1, 2
HR, PER = 0, 1
DEFAULT_LINE_CAP = 1_000_000

# jump classes of Y^M / Z^M, in the order used for event counts
JUMP_NAMES = ("0->1", "eta->1", "1->0", "eta->0", "0->eta", "1->eta")
_SRC = np.array([ZERO, ETA, ONE, ETA, ZERO, ONE], dtype=np.int64)
_DST = np.array([ONE, ONE, ZERO, ZERO, ETA, ETA], dtype=np.int64)


class HostLabel(IntEnum):
    Zero = ZERO
    Eta = ETA
    One = ONE


@dataclass
class TernaryHostVector:
    labels: np.ndarray
    eta: float

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.labels.size == 0:
            raise ValueError("need at least one host")
        if np.any((self.labels < 0) | (self.labels > 2)):
            raise ValueError("labels must be 0 (Zero), 1 (Eta) or 2 (One)")

    @classmethod
    def from_counts(cls, n0: int, neta: int, n1: int, eta: float) -> "TernaryHostVector":
        return cls(np.repeat([ZERO, ETA, ONE], [n0, neta, n1]), eta)

    @classmethod
    def from_values(cls, y, eta: float) -> "TernaryHostVector":
        y = np.asarray(y, dtype=float)
        lab = np.full(y.shape, -1)
        lab[y == 0.0] = ZERO
        lab[y == 1.0] = ONE
        lab[np.isclose(y, eta, rtol=0, atol=1e-12) & (y != 0) & (y != 1)] = ETA
        return cls(lab, eta)

    @property
    def M(self) -> int:
        return self.labels.size

    @property
    def values(self) -> np.ndarray:
        return np.array([0.0, self.eta, 1.0])[self.labels]

    def counts(self) -> tuple[int, int, int]:
        c = np.bincount(self.labels, minlength=3)
        return int(c[0]), int(c[1]), int(c[2])

    def weights(self) -> TernaryWeights:
        return TernaryWeights.from_counts(*self.counts())


# ---------------------------------------------------------------- Y^M and Z^M


@njit(cache=True)
def _class_rates(n0, ne, n1, M, eta, r, out):
    s1 = (n1 + eta * ne) / M
    s0 = (n0 + (1.0 - eta) * ne) / M
    out[0] = n0 * s1
    out[1] = ne * s1
    out[2] = n1 * s0
    out[3] = ne * s0
    out[4] = n0 * 2.0 * r * eta * s1
    out[5] = n1 * 2.0 * r * (1.0 - eta) * s0
    tot = 0.0
    for c in range(6):
        tot += out[c]
    return tot


@njit(cache=True)
def _pick_class(rates, tot, u):
    x = u * tot
    c = 0
    while c < 5 and x >= rates[c]:
        x -= rates[c]
        c += 1
    while rates[c] == 0.0:
        c -= 1
    return c


@njit(cache=True, nogil=True)
def _ym_run(labels, members, cnt, pos, M, eta, r, t, t_target, rng, counts, src, dst):
    rates = np.zeros(6)
    while True:
        tot = _class_rates(cnt[0], cnt[1], cnt[2], M, eta, r, rates)
        if tot <= 0.0:
            return t_target, True
        t_next = t + rng.standard_exponential() / tot
        if t_next > t_target:
            return t_target, False
        t = t_next
        c = _pick_class(rates, tot, rng.random())
        a = src[c]
        b = dst[c]
        j = np.int64(rng.random() * cnt[a])
        i = members[a, j]
        # move host i from class a to class b
        last = members[a, cnt[a] - 1]
        members[a, j] = last
        pos[last] = j
        cnt[a] -= 1
        members[b, cnt[b]] = i
        pos[i] = cnt[b]
        cnt[b] += 1
        labels[i] = b
        counts[c] += 1


@njit(cache=True, nogil=True)
def _zm_run(cnt, M, eta, r, t, t_target, rng, counts, src, dst):
    rates = np.zeros(6)
    while True:
        tot = _class_rates(cnt[0], cnt[1], cnt[2], M, eta, r, rates)
        if tot <= 0.0:
            return t_target, True
        t_next = t + rng.standard_exponential() / tot
        if t_next > t_target:
            return t_target, False
        t = t_next
        c = _pick_class(rates, tot, rng.random())
        cnt[src[c]] -= 1
        cnt[dst[c]] += 1
        counts[c] += 1


def _resolve(rng):
    if isinstance(rng, (int, np.integer)):
        return seed_stream(int(rng)), int(rng)
    return as_generator(rng), None


def _limit_trajectory(grid, w, counts, terminal, seed, snaps, meta, absorbed_at):
    meta = {"count_names": list(JUMP_NAMES), **meta}
    return Trajectory(grid, w, counts, terminal, seed, snaps, None, absorbed_at, meta)


def simulate_ym(M: int, eta: float, r: float, init: TernaryHostVector, t_end: float, sample_dt: float,
                rng=None, *, snapshots: bool = False) -> Trajectory:
    """Simulate the M-host {0, eta, 1} process on a regular sample grid."""
    if M < 1 or init.M != M:
        raise ValueError("init must have M >= 1 hosts")
    if r < 0:
        raise ValueError("r must be nonnegative")
    rng, seed = _resolve(rng)
    grid = time_grid(t_end, sample_dt)
    labels = init.labels.copy()
    members = np.zeros((3, M), dtype=np.int64)
    cnt = np.zeros(3, dtype=np.int64)
    pos = np.zeros(M, dtype=np.int64)
    for i, lab in enumerate(labels):
        members[lab, cnt[lab]] = i
        pos[i] = cnt[lab]
        cnt[lab] += 1
    w = np.zeros((grid.size, 4))
    counts = np.zeros((grid.size, 6), dtype=np.int64)
    snaps = np.zeros((grid.size, M), dtype=np.int64) if snapshots else None
    t = 0.0
    absorbed_at = None
    for n, tg in enumerate(grid):
        if n > 0 and absorbed_at is None:
            t, frozen = _ym_run(labels, members, cnt, pos, M, eta, r, t, tg, rng, counts[n], _SRC, _DST)
            if frozen:
                absorbed_at = float(tg)
        w[n, :3] = cnt / M
        if snaps is not None:
            snaps[n] = labels
    return _limit_trajectory(grid, w, counts, labels.copy(), seed, snaps,
                             {"process": "Y", "M": M, "eta": eta, "r": r}, absorbed_at)


def simulate_zm(M: int, eta: float, r: float, init: TernaryWeights, t_end: float, sample_dt: float,
                rng=None) -> Trajectory:
    """Simulate the class proportions directly (integer bookkeeping on the 1/M grid)."""
    if M < 1:
        raise ValueError("M must be >= 1")
    cnt = np.array(init.grid_counts(M), dtype=np.int64)
    rng, seed = _resolve(rng)
    grid = time_grid(t_end, sample_dt)
    w = np.zeros((grid.size, 4))
    counts = np.zeros((grid.size, 6), dtype=np.int64)
    t = 0.0
    absorbed_at = None
    for n, tg in enumerate(grid):
        if n > 0 and absorbed_at is None:
            t, frozen = _zm_run(cnt, M, eta, r, t, tg, rng, counts[n], _SRC, _DST)
            if frozen:
                absorbed_at = float(tg)
        w[n, :3] = cnt / M
    return _limit_trajectory(grid, w, counts, cnt.copy(), seed, None,
                             {"process": "Z", "M": M, "eta": eta, "r": r}, absorbed_at)


def zm_rates(z, M: int, eta: float, r: float) -> dict[str, float]:
    """The six jump rates at proportions ``z``, keyed by jump class."""
    z0, ze, z1 = (z.as_array() if isinstance(z, TernaryWeights) else np.asarray(z, float))
    out = np.zeros(6)
    _class_rates(z0 * M, ze * M, z1 * M, M, eta, r, out)
    return dict(zip(JUMP_NAMES, out.tolist()))


# ---------------------------------------------------------------- V process


@njit(cache=True)
def _hermite(tg, y, f, t):
    n = tg.shape[0]
    if n == 1:
        return y[0].copy()
    lo = 0
    hi = n - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if tg[mid] <= t:
            lo = mid
        else:
            hi = mid
    h = tg[hi] - tg[lo]
    s = (t - tg[lo]) / h
    h00 = 2 * s**3 - 3 * s**2 + 1
    h10 = s**3 - 2 * s**2 + s
    h01 = -2 * s**3 + 3 * s**2
    h11 = s**3 - s**2
    return h00 * y[lo] + h10 * h * f[lo] + h01 * y[hi] + h11 * h * f[hi]


@njit(cache=True, nogil=True)
def _v_run(state, t_end, eta, r, tg, y, f, rng, jt, js, record):
    """Thinning with envelope 1 + 2r; returns ``(state, n_jumps, occupation)``."""
    bound = 1.0 + 2.0 * r
    t = 0.0
    n = 0
    occ = np.zeros(3)
    while True:
        dt = rng.standard_exponential() / bound
        if t + dt > t_end:
            occ[state] += t_end - t
            return state, n, occ
        occ[state] += dt
        t += dt
        v = _hermite(tg, y, f, t)
        a0 = v[0] + (1.0 - eta) * v[1]
        a1 = v[2] + eta * v[1]
        x = rng.random() * bound
        new = state
        if x < a0:
            new = ZERO
        elif x < a0 + a1:
            new = ONE
        else:
            x -= a0 + a1
            if state == ZERO and x < 2.0 * r * eta * a1:
                new = ETA
            elif state == ONE and x < 2.0 * r * (1.0 - eta) * a0:
                new = ETA
        if new != state:
            state = new
            if record:
                if n >= jt.shape[0]:
                    return -1, n, occ
                jt[n] = t
                js[n] = state
            n += 1


@dataclass
class VPath:
    """Jump times and post-jump states of one host."""

    init: int
    times: np.ndarray
    states: np.ndarray
    t_end: float
    occupation: np.ndarray

    def state_at(self, t: float) -> int:
        j = np.searchsorted(self.times, t, side="right")
        return int(self.init if j == 0 else self.states[j - 1])


def _path_arrays(v_path, t_end: float):
    if isinstance(v_path, OdePath):
        if v_path.t_end < t_end - 1e-12:
            raise ValueError(f"driving path ends at {v_path.t_end} < {t_end}")
        return v_path.t, v_path.y, v_path.f
    w = v_path.as_array() if isinstance(v_path, TernaryWeights) else np.asarray(v_path, float).reshape(3)
    return np.array([0.0, max(t_end, 1.0)]), np.vstack([w, w]), np.zeros((2, 3))


def simulate_v(eta: float, r: float, v_path, init: int, t_end: float, rng=None, *,
               max_jumps: int = 10_000_000) -> VPath:
    """One path of the single-host process driven by ``v_path``.

    ``v_path`` is an :class:`OdePath` or a constant weight vector.
    """
    rng = as_generator(rng)
    tg, y, f = _path_arrays(v_path, t_end)
    saved = rng.bit_generator.state
    size = 1024
    while True:
        jt = np.zeros(size)
        js = np.zeros(size, dtype=np.int64)
        state, n, occ = _v_run(int(init), t_end, eta, r, tg, y, f, rng, jt, js, True)
        if state >= 0:
            return VPath(int(init), jt[:n].copy(), js[:n].copy(), t_end, occ)
        if size >= max_jumps:
            raise RuntimeError("too many jumps")
        # replay the same randomness with a larger buffer
        rng.bit_generator.state = saved
        size *= 4


@njit(cache=True, nogil=True)
def _v_batch(init, n, t_end, eta, r, tg, y, f, rng, out):
    jt = np.zeros(1)
    js = np.zeros(1, dtype=np.int64)
    for i in range(n):
        s, _, _ = _v_run(init, t_end, eta, r, tg, y, f, rng, jt, js, False)
        out[i] = s


def simulate_v_terminal(eta: float, r: float, v_path, init: int, t_end: float, n: int, rng=None) -> np.ndarray:
    """States at ``t_end`` of ``n`` independent paths (labels 0/1/2)."""
    rng = as_generator(rng)
    tg, y, f = _path_arrays(v_path, t_end)
    out = np.zeros(n, dtype=np.int64)
    _v_batch(int(init), n, t_end, eta, r, tg, y, f, rng, out)
    return out


# ---------------------------------------------------------------- ancestral tree


@njit(cache=True)
def _hr_state(s_in, u, eta):
    if s_in == ETA:
        return ONE if u < eta else ZERO
    return s_in


@njit(cache=True)
def _per_prob(s_cont, s_in, eta):
    """Probability that the continuing branch turns to eta at a PER event."""
    if s_cont == ZERO:
        if s_in == ONE:
            return eta
        if s_in == ETA:
            return eta * eta
    elif s_cont == ONE:
        if s_in == ZERO:
            return 1.0 - eta
        if s_in == ETA:
            return (1.0 - eta) ** 2
    return 0.0


@njit(cache=True)
def _doubled(a):
    b = np.zeros(2 * a.shape[0], dtype=a.dtype)
    b[: a.shape[0]] = a
    return b


@njit(cache=True, nogil=True)
def _grow_tree(t, r, rng, ev_t, ev_kind, ev_line, ev_child, line_cap):
    """Grow the tree backwards from the root at ``t``.

    Line 0 is the distinguished line. ``ev_child`` is the incoming line for
    PER and distinguished HR events and -1 for HR on other lines (which
    only relabel the line as its incoming branch). Returns the event count
    (-1 if the line cap is exceeded), the line count and the possibly
    reallocated event buffers.
    """
    rate_line = 1.0 + 2.0 * r
    p_hr = 1.0 / rate_line
    lines = 1
    n = 0
    s = t
    while True:
        s -= rng.standard_exponential() / (lines * rate_line)
        if s <= 0.0:
            return n, lines, ev_t, ev_kind, ev_line, ev_child
        if n >= ev_t.shape[0]:
            ev_t = _doubled(ev_t)
            ev_kind = _doubled(ev_kind)
            ev_line = _doubled(ev_line)
            ev_child = _doubled(ev_child)
        ln = np.int64(rng.random() * lines)
        kind = HR if rng.random() < p_hr else PER
        ev_t[n] = s
        ev_kind[n] = kind
        ev_line[n] = ln
        if kind == PER or ln == 0:
            if lines >= line_cap:
                return -1, lines, ev_t, ev_kind, ev_line, ev_child
            ev_child[n] = lines
            lines += 1
        else:
            ev_child[n] = -1
        n += 1


@njit(cache=True, nogil=True)
def _draw_leaves(n_lines, cum, rng, state):
    for i in range(n_lines):
        u = rng.random()
        state[i] = ZERO if u < cum[0] else (ETA if u < cum[1] else ONE)


@njit(cache=True, nogil=True)
def _push_up(n_ev, eta, ev_kind, ev_line, ev_child, rng, state, coins):
    """Propagate leaf states to the root in forward time; returns the root state."""
    for e in range(n_ev - 1, -1, -1):
        ln = ev_line[e]
        ch = ev_child[e]
        coins[e] = -1
        if ev_kind[e] == HR:
            s_in = state[ch] if ch >= 0 else state[ln]
            if s_in == ETA:
                u = rng.random()
                coins[e] = 1 if u < eta else 0
            else:
                u = 1.0
            state[ln] = _hr_state(s_in, u, eta)
        else:
            p = _per_prob(state[ln], state[ch], eta)
            if p > 0.0:
                hit = rng.random() < p
                coins[e] = 1 if hit else 0
                if hit:
                    state[ln] = ETA
    return state[0]


@njit(cache=True, nogil=True)
def _tree_batch(t, eta, r, cum, n, rng, out, line_cap):
    """Root states of ``n`` trees; returns the number done before a line-cap overflow."""
    size = 1024
    ev_t = np.zeros(size)
    ev_k = np.zeros(size, dtype=np.int64)
    ev_l = np.zeros(size, dtype=np.int64)
    ev_c = np.zeros(size, dtype=np.int64)
    state = np.zeros(size, dtype=np.int64)
    coins = np.zeros(size, dtype=np.int64)
    for i in range(n):
        n_ev, n_lines, ev_t, ev_k, ev_l, ev_c = _grow_tree(t, r, rng, ev_t, ev_k, ev_l, ev_c, line_cap)
        if n_ev < 0:
            return i
        while state.shape[0] < n_lines:
            state = _doubled(state)
        while coins.shape[0] < n_ev:
            coins = _doubled(coins)
        _draw_leaves(n_lines, cum, rng, state)
        out[i] = _push_up(n_ev, eta, ev_k, ev_l, ev_c, rng, state, coins)
    return n


@njit(cache=True)
def _push(sp, st_s, st_ph, st_c, s):
    sp += 1
    if sp >= st_s.shape[0]:
        st_s = _doubled(st_s)
        st_ph = _doubled(st_ph)
        st_c = _doubled(st_c)
    st_s[sp] = s
    st_ph[sp] = 0
    return sp, st_s, st_ph, st_c


@njit(cache=True, nogil=True)
def _root_pruned(t, eta, r, cum, rng, st_s, st_ph, st_c, leaf_cap):
    """Root state of one tree, exploring only branches that can still matter.

    The marks of every line are independent, so the continuing branch of an
    HR event and the incoming branch of a PER event whose continuing state
    is already eta can be left unsampled without changing the law of the
    root state. Frames: phase 0 = line not yet resolved, 1 = awaiting the
    incoming branch of an HR event, 2 = awaiting the continuing branch of a
    PER event, 3 = awaiting its incoming branch.
    Returns ``(state, stacks...)`` with state -1 if ``leaf_cap`` was hit.
    """
    rate = 1.0 + 2.0 * r
    p_hr = 1.0 / rate
    sp = 0
    st_s[0] = t
    st_ph[0] = 0
    ret = -1
    leaves = 0
    while True:
        ph = st_ph[sp]
        if ph == 0:
            tau = st_s[sp] - rng.standard_exponential() / rate
            if tau <= 0.0:
                leaves += 1
                if leaves > leaf_cap:
                    return -1, st_s, st_ph, st_c
                u = rng.random()
                ret = ZERO if u < cum[0] else (ETA if u < cum[1] else ONE)
                if sp == 0:
                    return ret, st_s, st_ph, st_c
                sp -= 1
                continue
            st_s[sp] = tau
            st_ph[sp] = 1 if rng.random() < p_hr else 2
            sp, st_s, st_ph, st_c = _push(sp, st_s, st_ph, st_c, tau)
            continue
        if ph == 1:
            if ret == ETA:
                ret = ONE if rng.random() < eta else ZERO
        elif ph == 2:
            if ret != ETA:
                st_c[sp] = ret
                st_ph[sp] = 3
                sp, st_s, st_ph, st_c = _push(sp, st_s, st_ph, st_c, st_s[sp])
                continue
        else:
            c = st_c[sp]
            p = _per_prob(c, ret, eta)
            ret = ETA if (p > 0.0 and rng.random() < p) else c
        if sp == 0:
            return ret, st_s, st_ph, st_c
        sp -= 1


@njit(cache=True, nogil=True)
def _pruned_batch(t, eta, r, cum, n, rng, out, leaf_cap):
    st_s = np.zeros(64)
    st_ph = np.zeros(64, dtype=np.int64)
    st_c = np.zeros(64, dtype=np.int64)
    for i in range(n):
        s, st_s, st_ph, st_c = _root_pruned(t, eta, r, cum, rng, st_s, st_ph, st_c, leaf_cap)
        if s < 0:
            return i
        out[i] = s
    return n


@dataclass
class TreeEvent:
    time: float
    kind: str
    line: int
    child: Optional[int]
    coin: Optional[int]


@dataclass
class TreeSampleRecord:
    t: float
    events: list[TreeEvent]
    leaf_states: np.ndarray
    root_state: HostLabel
    line_count: int
    meta: dict = field(default_factory=dict)

    @property
    def coins(self) -> list[int]:
        return [e.coin for e in self.events if e.coin is not None]

    def to_json(self) -> str:
        return json.dumps({
            "t": self.t,
            "root": self.root_state.name,
            "lines": self.line_count,
            "leaves": self.leaf_states.tolist(),
            "events": [[e.time, e.kind, e.line, e.child, e.coin] for e in self.events],
        })


class LineCapExceeded(RuntimeError):
    pass


def _cum(v0) -> np.ndarray:
    w = v0.as_array() if isinstance(v0, TernaryWeights) else np.asarray(v0, float)
    return np.cumsum(w)[:2].copy()


def sample_tree(t: float, eta: float, r: float, v0, rng=None, *, line_cap: int = DEFAULT_LINE_CAP
                ) -> TreeSampleRecord:
    """Draw one tree with its leaf states, coin tosses and root state."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    rng = as_generator(rng)
    z = np.zeros(64)
    zi = np.zeros(64, dtype=np.int64)
    n_ev, n_lines, ev_t, ev_k, ev_l, ev_c = _grow_tree(t, r, rng, z, zi, zi.copy(), zi.copy(), line_cap)
    if n_ev < 0:
        raise LineCapExceeded(f"tree exceeded {line_cap} lines")
    state = np.zeros(n_lines, dtype=np.int64)
    _draw_leaves(n_lines, _cum(v0), rng, state)
    leaves = state.copy()
    coins = np.zeros(max(n_ev, 1), dtype=np.int64)
    root = _push_up(n_ev, eta, ev_k, ev_l, ev_c, rng, state, coins)
    events = [
        TreeEvent(float(ev_t[e]), "HR" if ev_k[e] == HR else "PER", int(ev_l[e]),
                  None if ev_c[e] < 0 else int(ev_c[e]), None if coins[e] < 0 else int(coins[e]))
        for e in range(n_ev)
    ]
    return TreeSampleRecord(float(t), events, leaves, HostLabel(int(root)), int(n_lines))


def estimate_v_tree(t: float, eta: float, r: float, v0, n_samples: int, rng=None, *,
                    line_cap: int = DEFAULT_LINE_CAP, method: str = "pruned"
                    ) -> tuple[TernaryWeights, np.ndarray]:
    """Root-state frequencies over ``n_samples`` trees, with binomial standard errors.

    ``method="full"`` grows every tree completely and propagates all leaves;
    ``"pruned"`` (default) samples only the marks the root state depends on,
    which has the same law and is orders of magnitude cheaper for large
    ``r t``. For the pruned walk the cap applies to leaves actually visited.
    """
    if method not in ("pruned", "full"):
        raise ValueError(f"unknown method {method!r}")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if t < 0:
        raise ValueError("t must be nonnegative")
    rng = as_generator(rng)
    out = np.zeros(n_samples, dtype=np.int64)
    batch = _pruned_batch if method == "pruned" else _tree_batch
    done = batch(t, eta, r, _cum(v0), n_samples, rng, out, line_cap)
    if done < n_samples:
        raise LineCapExceeded(f"tree exceeded {line_cap} lines")
    freq = np.bincount(out, minlength=3) / n_samples
    se = np.sqrt(freq * (1 - freq) / n_samples)
    return TernaryWeights.from_array(freq), se


def expected_line_count(t: float, r: float) -> float:
    """Mean number of lines (= leaves) of a tree of depth ``t``."""
    if r == 0:
        return 1.0 + t
    return 1.0 + (1.0 + 2.0 * r) / (2.0 * r) * np.expm1(2.0 * r * t)
