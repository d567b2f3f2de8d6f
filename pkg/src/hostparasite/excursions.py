"""Single-host hitting probabilities and hitting times.

The within-host frequency of one parasite type is a birth-death chain on
``0..N``. This module gives exact hitting probabilities (ruin formula and
the product formula in log space) and Monte Carlo estimators for hitting
times, excursion lengths, escape from the balance window and random-walk
exit moments.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit
from scipy.special import logsumexp

from .params import ModelParams, count_window, windows_for
from .rng import as_generator
from .ssa import _kernel as kn
from .trajectory import write_header

QUANTILE_LEVELS = (0.05, 0.50, 0.95, 0.99)


@dataclass(frozen=True)
class BirthDeathSpec:
    """Birth rate ``g (k(N-k)/N (1 + s(eta - k/N)) + r1)``, death rate with ``-s`` and ``r2``."""

    N: int
    g: float
    s: float
    eta: float
    r1: float = 0.0
    r2: float = 0.0
    r_N: Optional[float] = None

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("N must be >= 2")
        if self.g <= 0:
            raise ValueError("g must be positive")
        if self.s < 0 or self.s * max(self.eta, 1 - self.eta) > 1:
            raise ValueError("s out of range: rates would become negative")
        if self.r1 < 0 or self.r2 < 0:
            raise ValueError("r1, r2 must be nonnegative")
        if self.r_N is not None and max(self.r1, self.r2) > self.r_N / self.g + 1e-15:
            raise ValueError("r1, r2 must not exceed r_N / g_N")

    @classmethod
    def from_params(cls, params: ModelParams, r1: float = 0.0, r2: float = 0.0) -> "BirthDeathSpec":
        return cls(params.N, params.g_N, params.s_N, params.eta, r1, r2, params.r_N)

    def rates(self) -> tuple[np.ndarray, np.ndarray]:
        N = self.N
        k = np.arange(N + 1, dtype=float)
        base = k * (N - k) / N
        sel = self.s * (self.eta - k / N)
        return self.g * (base * (1 + sel) + self.r1), self.g * (base * (1 - sel) + self.r2)

    def scaled(self, factor: float) -> "BirthDeathSpec":
        """Same chain with all rates multiplied by ``factor`` (via ``g``)."""
        r_N = None if self.r_N is None else self.r_N * factor
        return BirthDeathSpec(self.N, self.g * factor, self.s, self.eta, self.r1, self.r2, r_N)


@dataclass
class HittingStats:
    probability: float
    std_error: Optional[float]
    quantiles: np.ndarray
    n_samples: int
    bound: Optional[float] = None
    frac_below_bound: Optional[float] = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError("probability outside [0, 1]")
        q = np.asarray(self.quantiles, dtype=float)
        if np.all(np.isfinite(q)) and np.any(np.diff(q) < 0):
            raise ValueError("quantiles must be nondecreasing")
        self.quantiles = q

    def quantile(self, level: float) -> float:
        return float(self.quantiles[QUANTILE_LEVELS.index(level)])


def _quantiles(x: np.ndarray) -> np.ndarray:
    if x.size == 0:
        return np.full(len(QUANTILE_LEVELS), np.nan)
    return np.quantile(x, QUANTILE_LEVELS)


# ---------------------------------------------------------------- exact formulas


def gamblers_ruin(p: float, N1: int, N2: int) -> float:
    """P(walk with up-probability ``p`` from 0 hits ``+N1`` before ``-N2``)."""
    if not 0 < p < 1:
        raise ValueError("p must lie in (0, 1)")
    if N1 < 1 or N2 < 1:
        raise ValueError("N1, N2 must be positive")
    L = math.log1p(-p) - math.log(p)  # log(q/p)
    if L == 0.0:
        return N2 / (N1 + N2)
    if L < 0:
        return math.expm1(N2 * L) / math.expm1((N1 + N2) * L)
    # rho > 1: divide through by rho^(N1+N2) to avoid overflow
    return math.exp(-N1 * L) * (-math.expm1(-N2 * L)) / (-math.expm1(-(N1 + N2) * L))


def _log_chain_weights(birth: np.ndarray, death: np.ndarray, lo: int, hi: int) -> np.ndarray:
    """log pi_k for k = lo..hi-1, with pi_lo = 1 and pi_k = prod_{lo<j<=k} death_j / birth_j."""
    j = np.arange(lo + 1, hi)
    if np.any(birth[j] <= 0):
        raise ValueError("zero birth rate on the path to the target")
    steps = np.log(death[j]) - np.log(birth[j])
    return np.concatenate([[0.0], np.cumsum(steps)])


def hitting_probability(birth: np.ndarray, death: np.ndarray, start: int, target: int, absorb: int) -> float:
    """P(hit ``target`` before ``absorb``) for a birth-death chain, either orientation."""
    if absorb < start < target:
        lw = _log_chain_weights(birth, death, absorb, target)
        return float(np.exp(logsumexp(lw[: start - absorb]) - logsumexp(lw)))
    if target < start < absorb:
        n = birth.shape[0] - 1
        return hitting_probability(death[::-1].copy(), birth[::-1].copy(), n - start, n - target, n - absorb)
    if start == target:
        return 1.0
    if start == absorb:
        return 0.0
    raise ValueError("need absorb < start < target or target < start < absorb")


def balance_prob_exact(spec: BirthDeathSpec, start: int, target: int, absorb: int) -> float:
    birth, death = spec.rates()
    if birth[start] <= 0 and start < target:
        raise ValueError("zero birth rate at the start")
    return hitting_probability(birth, death, start, target, absorb)


def balance_prob_asymptotic(eta: float, s_N: float, side: str = "from-zero") -> float:
    if not 0 < s_N < 1:
        raise ValueError("s_N must lie in (0, 1)")
    if side == "from-zero":
        return 2 * eta * s_N
    if side == "from-one":
        return 2 * (1 - eta) * s_N
    raise ValueError(f"unknown side {side!r}")


def balance_target(N: int, eta: float) -> int:
    return int(math.ceil(eta * N - 1e-9))


def d_entry_count(N: int, b: float, a: float, eps1: float, eta: float) -> int:
    """First count of the inner window reached from below."""
    w = windows_for(N, b, a, eps1, eta)
    return int(math.ceil(w.d_lo * N - 1e-9))


def rw_exit_moments(h: float, N: int) -> tuple[float, float, float]:
    """Mean, second moment and variance of the exit time from ``(-h, h)`` of ``S_[N^2 t]/N``.

    The walk exits at the first step with ``|S| >= hN``; with ``n = ceil(hN)``
    the moments are ``(n/N)^2`` and ``(5 n^4 - 2 n^2) / (3 N^4)``, which
    reduce to the closed forms in ``h`` when ``hN`` is an integer.
    """
    if N < 1:
        raise ValueError("N must be positive")
    n = math.ceil(h * N - 1e-9)
    if n < 1 or h * N < 1 - 1e-9:
        raise ValueError("need h >= 1/N")
    if abs(n - h * N) < 1e-9:
        mean = h * h
        second = 5 * h**4 / 3 - 2 * h**2 / (3 * N**2)
        var = (2.0 / 3.0) * (h * h / (N * N)) * (n * n - 1)
        return mean, second, var
    mean = (n / N) ** 2
    second = (5 * n**4 - 2 * n**2) / (3 * N**4)
    return mean, second, second - mean * mean


# ---------------------------------------------------------------- Monte Carlo


@njit(cache=True, nogil=True)
def _paths(start, a, b, rate, p_up, n, horizon, rng, t_out, end_out, max_out):
    """Run ``n`` paths from ``start`` until they hit ``a`` or ``b`` or reach ``horizon``."""
    for r in range(n):
        k = start
        t = 0.0
        kmax = k
        while a < k < b:
            dt = rng.standard_exponential() / rate[k]
            if t + dt > horizon:
                t = horizon
                break
            t += dt
            if rng.random() < p_up[k]:
                k += 1
                if k > kmax:
                    kmax = k
            else:
                k -= 1
        t_out[r] = t
        end_out[r] = k
        max_out[r] = kmax


def _run_paths(birth, death, start, a, b, n, rng, p_up=None, horizon=np.inf):
    rate = birth + death
    if p_up is None:
        with np.errstate(invalid="ignore", divide="ignore"):
            p_up = np.where(rate > 0, birth / np.where(rate > 0, rate, 1.0), 0.0)
    t = np.zeros(n)
    end = np.zeros(n, dtype=np.int64)
    kmax = np.zeros(n, dtype=np.int64)
    _paths(start, a, b, rate, p_up, n, horizon, rng, t, end, kmax)
    return t, end, kmax


def _h_transform_up(birth, death, target, absorb) -> np.ndarray:
    """Jump-up probabilities of the chain conditioned to hit ``target`` before ``absorb < target``."""
    lw = _log_chain_weights(birth, death, absorb, target)
    logS = np.logaddexp.accumulate(lw)  # log sum_{i<=k} pi_i, k = absorb..target-1
    p_up = np.zeros(birth.shape[0])
    for k in range(absorb + 1, target):
        # h(k) proportional to S(k-1) (sum up to k-1 in absolute index)
        h_k = logS[k - 1 - absorb]
        h_up = logS[k - absorb] if k + 1 < target else logS[-1]
        p_up[k] = birth[k] / (birth[k] + death[k]) * math.exp(h_up - h_k)
    return p_up


def time_to_balance_mc(spec: BirthDeathSpec, start: int, target: int, n_reps: int, rng=None, *,
                       absorb: int = 0, bound: Optional[float] = None, method: str = "auto",
                       batch: int = 4096) -> HittingStats:
    """Hitting times of ``target`` for paths from ``start`` that hit it before ``absorb``.

    ``rejection`` runs plain paths and keeps the successful ones;
    ``htransform`` runs the chain conditioned on success directly. ``auto``
    uses the latter for ``N >= 10^4``.
    """
    if n_reps < 1:
        raise ValueError("n_reps must be >= 1")
    if not absorb < start < target:
        raise ValueError("need absorb < start < target")
    rng = as_generator(rng)
    birth, death = spec.rates()
    p_exact = hitting_probability(birth, death, start, target, absorb)
    if method == "auto":
        method = "htransform" if spec.N >= 10_000 else "rejection"
    if method == "htransform":
        p_up = _h_transform_up(birth, death, target, absorb)
        t, end, _ = _run_paths(birth, death, start, absorb, target, n_reps, rng, p_up=p_up)
        assert np.all(end == target)
        times = t
        prob, se, attempts = p_exact, 0.0, n_reps
    elif method == "rejection":
        if p_exact < 1e-6:
            raise ValueError(f"success probability {p_exact:.3g} too small for rejection sampling")
        chunks, got, attempts = [], 0, 0
        while got < n_reps:
            t, end, _ = _run_paths(birth, death, start, absorb, target, batch, rng)
            ok = t[end == target]
            chunks.append(ok)
            got += ok.size
            attempts += batch
        times = np.concatenate(chunks)[:n_reps]
        prob = got / attempts
        se = math.sqrt(prob * (1 - prob) / attempts)
    else:
        raise ValueError(f"unknown method {method!r}")
    frac = None if bound is None else float(np.mean(times < bound))
    return HittingStats(prob, se, _quantiles(times), int(times.size), bound, frac,
                        {"method": method, "attempts": attempts, "exact_probability": p_exact,
                         "mean_time": float(times.mean())})


def excursion_length_mc(spec: BirthDeathSpec, n_reps: int, rng=None, *, target: Optional[int] = None,
                        bound: Optional[float] = None) -> HittingStats:
    """Lengths of excursions from one mutant that die out before reaching ``floor(eta N)``."""
    rng = as_generator(rng)
    N = spec.N
    if target is None:
        target = max(2, int(math.floor(spec.eta * N + 1e-9)))
    birth, death = spec.rates()
    t, end, kmax = _run_paths(birth, death, 1, 0, target, n_reps, rng)
    dead = end == 0
    times = t[dead]
    prob = float(dead.mean())
    se = math.sqrt(prob * (1 - prob) / n_reps)
    frac = None if bound is None else float(np.mean(times < bound)) if times.size else float("nan")
    heights = kmax[dead]
    return HittingStats(prob, se, _quantiles(times), int(times.size), bound, frac,
                        {"height_quantiles": _quantiles(heights.astype(float)),
                         "max_height": int(heights.max()) if heights.size else 0,
                         "target": target})


def escape_prob_exact(spec: BirthDeathSpec, start: int, lo: int, hi: int, horizon: float) -> float:
    """P(the chain from ``start`` leaves ``lo..hi`` by ``horizon``), via the spectral kernel."""
    if not lo <= start <= hi:
        raise ValueError("start must lie in the window")
    if horizon <= 0:
        return 0.0
    sub = _killed_spectrum(spec, lo, hi)
    row = kn.transition_matrix(sub, start - lo + 1, horizon)
    return float(np.clip(row[0] + row[-1], 0.0, 1.0))


def _killed_spectrum(spec: BirthDeathSpec, lo: int, hi: int) -> kn.MoranSpectrum:
    birth, death = spec.rates()
    # states lo-1 .. hi+1, the outer two absorbing
    return kn.bd_spectrum(birth[lo - 1: hi + 2].copy(), death[lo - 1: hi + 2].copy())


@njit(cache=True, nogil=True)
def _kernel_escapes(start, horizon, n, lam, V, C, H0, h0, sqrtpi, nn, coef, rng, out):
    for r in range(n):
        k = kn.kernel_sample(start, horizon, lam, V, C, H0, h0, sqrtpi, nn, coef, rng.random())
        out[r] = k == 0 or k == nn


def eta_escape_mc(spec: BirthDeathSpec, start: int, window: tuple[int, int], horizon: float,
                  n_reps: int, rng=None, *, method: str = "auto") -> HittingStats:
    """Fraction of paths from ``start`` that leave the count window ``lo..hi`` by ``horizon``.

    ``paths`` simulates every jump; ``kernel`` draws the state of the chain
    killed outside the window directly at ``horizon`` (same law, cost
    independent of the jump rate). ``auto`` chooses by expected jump count.
    """
    lo, hi = window
    if not lo <= start <= hi:
        raise ValueError("start must lie in the window")
    rng = as_generator(rng)
    if horizon <= 0:
        return HittingStats(0.0, 0.0, _quantiles(np.zeros(0)), n_reps, extra={"method": "trivial"})
    birth, death = spec.rates()
    if method == "auto":
        steps = (birth[start] + death[start]) * horizon * n_reps
        method = "paths" if steps < 2e8 else "kernel"
    if method == "paths":
        t, end, _ = _run_paths(birth, death, start, lo - 1, hi + 1, n_reps, rng, horizon=horizon)
        esc = (end < lo) | (end > hi)
        times = t[esc]
    elif method == "kernel":
        sub = _killed_spectrum(spec, lo, hi)
        esc = np.zeros(n_reps, dtype=np.bool_)
        _kernel_escapes(start - lo + 1, horizon, n_reps, sub.lam, sub.V, sub.C, sub.H0, sub.h0,
                        sub.sqrtpi, sub.N, np.zeros(max(1, sub.lam.size)), rng, esc)
        times = np.zeros(0)
    else:
        raise ValueError(f"unknown method {method!r}")
    prob = float(esc.mean())
    return HittingStats(prob, math.sqrt(prob * (1 - prob) / n_reps), _quantiles(times), n_reps,
                        extra={"method": method})


def window_counts(params: ModelParams) -> tuple[int, int]:
    """Count bounds of the open balance window U."""
    return count_window(params.N, windows_for(params.N, params.b, params.a, params.eps1, params.eta))


@njit(cache=True, nogil=True)
def _rw_exit(n, reps, rng, out):
    for r in range(reps):
        s = 0
        j = 0
        while -n < s < n:
            s += 1 if rng.random() < 0.5 else -1
            j += 1
        out[r] = j


def rw_exit_mc(h: float, N: int, n_reps: int, rng=None) -> dict:
    """Monte Carlo moments of the exit time, with standard errors."""
    rng = as_generator(rng)
    n = math.ceil(h * N - 1e-9)
    steps = np.zeros(n_reps, dtype=np.int64)
    _rw_exit(n, n_reps, rng, steps)
    T = steps / float(N) ** 2
    T2 = T * T
    return {
        "mean": float(T.mean()), "se_mean": float(T.std(ddof=1) / math.sqrt(n_reps)),
        "second": float(T2.mean()), "se_second": float(T2.std(ddof=1) / math.sqrt(n_reps)),
        "variance": float(T.var(ddof=1)),
    }


# ---------------------------------------------------------------- CSV output


def probability_sweep(Ns, b: float, etas) -> list[dict]:
    rows = []
    for eta in etas:
        for N in Ns:
            s = float(N) ** (-b)
            spec = BirthDeathSpec(int(N), 1.0, s, eta)
            exact = balance_prob_exact(spec, 1, balance_target(int(N), eta), 0)
            asym = balance_prob_asymptotic(eta, s)
            rows.append({"N": int(N), "b": b, "eta": eta, "exact": exact, "asymptotic": asym,
                         "ratio": exact / asym})
    return rows


def probability_csv(rows: list[dict], header: Optional[dict] = None) -> str:
    buf = io.StringIO()
    write_header(buf, header)
    buf.write("N,b,eta,exact,asymptotic,ratio\n")
    for r in rows:
        buf.write(f"{r['N']},{r['b']:.10g},{r['eta']:.10g},{r['exact']:.12g},"
                  f"{r['asymptotic']:.12g},{r['ratio']:.12g}\n")
    return buf.getvalue()


def timing_csv(rows: list[tuple[int, HittingStats]], header: Optional[dict] = None) -> str:
    buf = io.StringIO()
    write_header(buf, header)
    buf.write("N,quantile05,quantile50,quantile95,quantile99,bound,frac_below_bound\n")
    for N, st in rows:
        q = st.quantiles
        buf.write(f"{N},{q[0]:.10g},{q[1]:.10g},{q[2]:.10g},{q[3]:.10g},"
                  f"{st.bound:.10g},{st.frac_below_bound:.10g}\n")
    return buf.getvalue()
