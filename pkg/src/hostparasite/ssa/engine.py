"""Exact simulation of the finite host system.

Two engines share one driver:

``events``
    the direct method. Every jump, including each within-host Moran jump,
    is drawn from the full rate table. Gives complete event logs.
``kernel``
    only replacement, reinfection and mutation are simulated as events; a
    host's within-host chain is integrated exactly over the gaps between the
    events that touch it (see ``_kernel``). The law of the sampled
    trajectory is the same. Moran event counts are reported as -1
    (untracked).

``auto`` picks ``kernel`` when the expected number of Moran jumps would make
the direct method impractical.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np

from ..params import ModelParams, count_window, derive_scales
from ..rng import as_generator, seed_stream
from ..trajectory import MORAN_KINDS, N_KINDS, EventKind, EventRecord, Trajectory, time_grid
from . import _events as ev
from . import _kernel as kn

LOG_CHUNK = 1 << 16
LOG_LIMIT = 10_000_000
KERNEL_CAP = 100
AUTO_EVENT_BUDGET = 2e7


class Absorbed(RuntimeError):
    """No state-changing event is possible from the current configuration."""


@dataclass
class HostStateVector:
    """Integer parasite counts ``k`` (type A) per host, with cached ``K = sum k``."""

    k: np.ndarray
    N: int

    def __post_init__(self):
        self.k = np.array(self.k, dtype=np.int64).reshape(-1)
        if self.k.size == 0:
            raise ValueError("need at least one host")
        if self.k.min() < 0 or self.k.max() > self.N:
            raise ValueError(f"counts must lie in [0, {self.N}]")
        self.K = int(self.k.sum())

    @classmethod
    def from_frequencies(cls, x, N: int) -> "HostStateVector":
        x = np.asarray(x, dtype=float)
        k = np.rint(x * N).astype(np.int64)
        if np.max(np.abs(k - x * N)) > 1e-9:
            raise ValueError("frequencies are not on the 1/N grid")
        return cls(k, N)

    @classmethod
    def from_classes(cls, n0: int, neta: int, n1: int, N: int, eta: float) -> "HostStateVector":
        """``n0`` empty hosts, ``neta`` hosts at ``round(eta N)``, ``n1`` full hosts."""
        k = np.concatenate([
            np.zeros(n0, dtype=np.int64),
            np.full(neta, int(round(eta * N)), dtype=np.int64),
            np.full(n1, N, dtype=np.int64),
        ])
        return cls(k, N)

    @property
    def M(self) -> int:
        return self.k.size

    @property
    def x(self) -> np.ndarray:
        return self.k / self.N

    @property
    def xbar(self) -> float:
        return self.K / (self.N * self.M)

    def copy(self) -> "HostStateVector":
        return HostStateVector(self.k.copy(), self.N)

    def check(self) -> None:
        if int(self.k.sum()) != self.K:
            raise AssertionError("cached K disagrees with the counts")
        if self.k.min() < 0 or self.k.max() > self.N:
            raise AssertionError("count left [0, N]")


class HostRates(NamedTuple):
    up: float
    down: float
    rep1: float
    rep0: float
    mutAB: float
    mutBA: float


def host_rates(state: HostStateVector, i: int, params: ModelParams) -> HostRates:
    N, g, s, eta = params.N, params.g_N, params.s_N, params.eta
    rN, u = params.r_N, params.u_N
    x = state.k[i] / N
    xbar = state.xbar
    moran = g * N * x * (1.0 - x)
    return HostRates(
        up=moran * (1.0 + s * (eta - x)) + rN * xbar * (1.0 - x),
        down=moran * (1.0 + s * (x - eta)) + rN * (1.0 - xbar) * x,
        rep1=xbar,
        rep0=1.0 - xbar,
        mutAB=u * g * N * x,
        mutBA=u * g * N * (1.0 - x),
    )


def _check_params(params: ModelParams) -> None:
    if params.s_N * max(params.eta, 1.0 - params.eta) > 1.0:
        raise ValueError("selection too strong: some jump rates would be negative")


def _check_state(params: ModelParams, state: HostStateVector) -> None:
    if state.N != params.N or state.M != params.M:
        raise ValueError(f"state shape (N={state.N}, M={state.M}) does not match params")


class _Tables:
    """Mutable engine state for the event method."""

    def __init__(self, k: np.ndarray, N: int, sparse: bool):
        self.k = k
        w = k * (N - k)
        self.fw = ev.fen_build(w)
        self.fk = ev.fen_build(k)
        self.agg = np.array([k.sum(), w.sum()], dtype=np.int64)
        mixed = np.flatnonzero(w > 0).astype(np.int64)
        self.mixed = np.zeros(k.size, dtype=np.int64)
        self.mixed[: mixed.size] = mixed
        self.nm = np.array([mixed.size], dtype=np.int64)
        self.sparse = sparse


def step(state: HostStateVector, params: ModelParams, rng, *, stop_when_absorbed: bool = True
         ) -> tuple[EventRecord, float, HostStateVector]:
    """One jump of the process; returns ``(event, dt, new_state)``.

    With ``stop_when_absorbed`` (default) a configuration from which no
    state-changing jump is possible raises :class:`Absorbed`; otherwise the
    remaining no-op replacements are sampled like any other event.
    """
    _check_params(params)
    _check_state(params, state)
    rng = as_generator(rng)
    N, M = params.N, params.M
    k = state.k.copy()
    tab = _Tables(k, N, sparse=False)
    if stop_when_absorbed and ev.is_absorbed(tab.agg[0], tab.agg[1], N, M, params.u_N):
        raise Absorbed("no state-changing event is possible")
    rates = np.zeros(7)
    tot = ev.class_rates(tab.agg[0], tab.agg[1], N, M, params.g_N, params.r_N, params.u_N, rates)
    dt = float(rng.standard_exponential() / tot)
    kind, i, src = ev.one_event(k, tab.fw, tab.fk, tab.agg, tab.mixed, tab.nm, N, M, params.g_N,
                                params.s_N, params.eta, params.r_N, params.u_N, False, rates, rng)
    record = EventRecord(dt, int(i), EventKind(kind), None if src < 0 else int(src))
    return record, dt, HostStateVector(k, N)


def expected_moran_events(params: ModelParams, t_end: float) -> float:
    """Rough count of Moran jumps if half the hosts sit at eta."""
    x = params.eta
    return params.M * 0.5 * 2 * params.g_N * params.N * x * (1 - x) * t_end


def _pick_method(method: str, params: ModelParams, t_end: float) -> str:
    if method not in ("auto", "events", "kernel"):
        raise ValueError(f"unknown method {method!r}")
    if method == "auto":
        method = "kernel" if expected_moran_events(params, t_end) > AUTO_EVENT_BUDGET else "events"
    if method == "kernel":
        spec = kn.moran_spectrum(params.N, params.g_N, params.s_N, params.eta)
        if not spec.usable:
            raise ValueError("spectral kernel is ill-conditioned for these parameters; use method='events'")
    return method


class _Runner:
    """Shared driver: advances either engine across sample times."""

    def __init__(self, params, init, rng, method, log_events, sparse, kernel_cap):
        self.p = params
        self.rng = rng
        self.method = method
        self.log_on = log_events
        self.k = init.k.copy()
        N = params.N
        self.t = 0.0
        size = LOG_CHUNK if log_events else 1
        self.log = [np.zeros(size)] + [np.zeros(size, np.int64) for _ in range(3)]
        self.log_pos = 0
        self.absorbed_at: Optional[float] = None
        _, _, win = derive_scales(params)
        self.klo, self.khi = count_window(N, win)
        self._cls = np.zeros(4, dtype=np.int64)
        if method == "events":
            self.tab = _Tables(self.k, N, sparse)
        else:
            self.spec = kn.moran_spectrum(N, params.g_N, params.s_N, params.eta)
            self.tlast = np.zeros(self.k.size)
            self.coef = np.zeros(max(1, self.spec.lam.size))
            self.cap = kernel_cap

    def _grow_log(self):
        if 2 * self.log[0].size > LOG_LIMIT:
            raise ValueError(f"event log would exceed {LOG_LIMIT} events; shorten t_end, "
                             "disable logging or use method='kernel' (logs external events only)")
        self.log = [np.concatenate([a, np.zeros_like(a)]) for a in self.log]

    def advance(self, t_target: float, counts: np.ndarray) -> None:
        p = self.p
        while self.absorbed_at is None:
            if self.method == "events":
                t, status, self.log_pos = ev.run_interval(
                    self.k, self.tab.fw, self.tab.fk, self.tab.agg, self.tab.mixed, self.tab.nm,
                    p.N, p.M, p.g_N, p.s_N, p.eta, p.r_N, p.u_N, self.tab.sparse,
                    self.t, t_target, self.rng, counts, *self.log, self.log_pos, self.log_on)
            else:
                sp = self.spec
                t, status, self.log_pos = kn.run_kernel_interval(
                    self.k, self.tlast, p.N, p.M, p.r_N, p.u_N * p.g_N * p.N,
                    sp.birth, sp.death, sp.lam, sp.V, sp.C, sp.H0, sp.h0, sp.sqrtpi, self.coef,
                    self.cap, sp.lam.size > 0, self.t, t_target, self.rng, counts, *self.log,
                    self.log_pos, self.log_on)
            self.t = t
            if status == ev.ST_FULL:
                self._grow_log()
                continue
            if status == ev.ST_ABSORBED:
                self.absorbed_at = t
            break
        if self.method == "kernel":
            sp = self.spec
            kn.materialize(self.k, self.tlast, t_target, sp.birth, sp.death, sp.lam, sp.V, sp.C,
                           sp.H0, sp.h0, sp.sqrtpi, p.N, self.coef, self.cap, sp.lam.size > 0, self.rng)
            K = int(self.k.sum())
            W = int((self.k * (p.N - self.k)).sum())
            if self.absorbed_at is None and ev.is_absorbed(K, W, p.N, p.M, p.u_N):
                self.absorbed_at = t_target
        self.t = max(self.t, t_target)

    def weights(self) -> np.ndarray:
        ev.classify_counts(self.k, self.p.N, self.klo, self.khi, self._cls)
        return self._cls / self.p.M

    def events(self) -> list[EventRecord]:
        t, h, kd, s = (a[: self.log_pos] for a in self.log)
        return [EventRecord(float(t[n]), int(h[n]), EventKind(int(kd[n])), None if s[n] < 0 else int(s[n]))
                for n in range(self.log_pos)]


def _resolve_rng(rng, seed):
    if isinstance(rng, (int, np.integer)) and seed is None:
        seed = int(rng)
        return seed_stream(seed), seed
    return as_generator(rng), seed


def _run(params, init, grid, rng, seed, method, log_events, sparse, snapshots, kernel_cap, stop):
    _check_params(params)
    _check_state(params, init)
    rng, seed = _resolve_rng(rng, seed)
    runner = _Runner(params, init, rng, method, log_events, sparse, kernel_cap)
    n = grid.size
    weights = np.zeros((n, 4))
    counts = np.zeros((n, N_KINDS), dtype=np.int64)
    snaps = np.zeros((n, params.M), dtype=np.int64) if snapshots else None
    hit = None
    last = n
    for idx, t in enumerate(grid):
        if idx > 0:
            runner.advance(t, counts[idx])
        weights[idx] = runner.weights()
        if snaps is not None:
            snaps[idx] = runner.k
        if stop is not None and stop(tuple(weights[idx, :3])):
            hit = float(t)
            last = idx + 1
            break
    if method == "kernel":
        counts[:, list(MORAN_KINDS)] = -1
    traj = Trajectory(
        times=grid[:last].copy(),
        weights=weights[:last],
        event_counts=counts[:last],
        terminal=runner.k.copy(),
        seed=seed,
        snapshots=None if snaps is None else snaps[:last],
        events=runner.events() if log_events else None,
        absorbed_at=runner.absorbed_at,
        meta={"method": method, "params": params.to_dict()},
    )
    return traj, hit


def simulate(params: ModelParams, init: HostStateVector, t_end: float, sample_dt: float, rng=None, *,
             method: str = "auto", log_events: bool = False, sparse: bool = False,
             snapshots: bool = False, kernel_cap: int = KERNEL_CAP, seed: Optional[int] = None) -> Trajectory:
    """Simulate on the grid ``0, sample_dt, ..., t_end``.

    ``rng`` may be a Generator or an int master seed (replicate 0 of
    ``seed_stream``). ``sparse`` selects Moran hosts by scanning the list of
    mixed hosts instead of the Fenwick tree; the event log is identical.
    Once absorbed, the state stays frozen for the remaining samples.
    """
    method = _pick_method(method, params, t_end)
    grid = time_grid(t_end, sample_dt)
    traj, _ = _run(params, init, grid, rng, seed, method, log_events, sparse, snapshots, kernel_cap, None)
    return traj


def simulate_with_stopping(params: ModelParams, init: HostStateVector,
                           stop: Callable[[tuple[float, float, float]], bool], t_max: float,
                           rng=None, *, sample_dt: float = 0.1, method: str = "auto",
                           kernel_cap: int = KERNEL_CAP, seed: Optional[int] = None
                           ) -> tuple[Trajectory, Optional[float]]:
    """Run until ``stop((mu(0), mu(U), mu(1)))`` holds on the sample grid.

    Returns the trajectory up to the hit and the hit time, or ``None`` when
    the predicate never held up to ``t_max``.
    """
    method = _pick_method(method, params, t_max)
    grid = time_grid(t_max, sample_dt)
    return _run(params, init, grid, rng, seed, method, False, False, False, kernel_cap, stop)


def monomorphic(w: tuple[float, float, float]) -> bool:
    """Stopping predicate: every host is pure and of the same type."""
    return w[0] == 1.0 or w[2] == 1.0


def in_box(u, delta: float) -> Callable[[tuple[float, float, float]], bool]:
    """Stopping predicate for the open box of half-width ``delta`` around ``u``."""
    u = tuple(float(v) for v in u)

    def pred(w):
        return all(abs(a - b) < delta for a, b in zip(w, u))

    return pred


def total_rate(state: HostStateVector, params: ModelParams) -> float:
    """Sum of all jump rates (including no-op replacements)."""
    N = params.N
    K = int(state.k.sum())
    W = int((state.k * (N - state.k)).sum())
    return float(ev.class_rates(K, W, N, params.M, params.g_N, params.r_N, params.u_N, np.zeros(7)))


def is_absorbed(state: HostStateVector, params: ModelParams) -> bool:
    N = params.N
    K = int(state.k.sum())
    W = int((state.k * (N - state.k)).sum())
    return bool(ev.is_absorbed(K, W, N, params.M, params.u_N))


__all__ = [
    "Absorbed", "HostRates", "HostStateVector", "host_rates", "step", "simulate",
    "simulate_with_stopping", "monomorphic", "in_box", "total_rate", "is_absorbed",
    "expected_moran_events",
]
