"""Exact host-level transition kernel for the within-host Moran chain.

Between two external events (replacement, reinfection, mutation) every host
evolves independently as a birth-death chain on {0, ..., N} with absorbing
ends, and external events hit each host at the constant rate
``1 + r_N + u_N g_N N``. The engine therefore only touches a host when an
external event involves it, and draws its current count from the transition
law ``P_tau(k, .)`` of the chain. That law is computed from the spectral
decomposition of the symmetrised generator on the transient states, so the
simulation is exact in law; nothing is approximated beyond discarding modes
with ``exp(lambda tau) < exp(-40)``.

Short gaps are simulated event by event (cheaper than the spectral sum when
few jumps are expected); after ``cap`` jumps the kernel takes over for the
rest of the gap, which is exact by the strong Markov property.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numba import njit
from scipy.linalg import eigh_tridiagonal

from ._events import MUT_AB, MUT_BA, REINF_DOWN, REINF_UP, REPL_0, REPL_1, ST_DONE, ST_FULL

MODE_CUTOFF = -40.0
MAX_AMPLIFICATION = 1e8


def moran_rates(N: int, g: float, s: float, eta: float) -> tuple[np.ndarray, np.ndarray]:
    """Birth and death rates of the within-host chain, indexed by k = 0..N."""
    k = np.arange(N + 1, dtype=float)
    x = k / N
    base = g * k * (N - k) / N
    return base * (1.0 + s * (eta - x)), base * (1.0 + s * (x - eta))


def absorption_at_zero(lam: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """Probability of absorption at 0 from each k, by the ruin-sum formula."""
    N = lam.shape[0] - 1
    out = np.zeros(N + 1)
    out[0] = 1.0
    if N == 1:
        return out
    # log rho_i = sum_{j=1}^{i} log(mu_j / lam_j), rho_0 = 1
    log_rho = np.concatenate([[0.0], np.cumsum(np.log(mu[1:N]) - np.log(lam[1:N]))])
    tail = np.logaddexp.accumulate(log_rho[::-1])[::-1]  # log sum_{i >= k} rho_i
    out[1:N] = np.exp(tail[1:N] - tail[0])
    return out


@dataclass(frozen=True)
class MoranSpectrum:
    N: int
    lam: np.ndarray       # eigenvalues, slowest (closest to 0) first
    V: np.ndarray         # (N-1, n) orthonormal eigenvectors, row = state k-1
    C: np.ndarray         # (N-1, n) cumulative sum_{j <= J} sqrt(pi_j) V[j, m]
    H0: np.ndarray        # sum_j sqrt(pi_j) V[j, m] h0(j)
    h0: np.ndarray        # absorption-at-0 probabilities, k = 0..N
    sqrtpi: np.ndarray    # normalised square-root reversible weights
    birth: np.ndarray
    death: np.ndarray
    amplification: float

    @property
    def usable(self) -> bool:
        return self.amplification < MAX_AMPLIFICATION


def bd_spectrum(birth: np.ndarray, death: np.ndarray) -> MoranSpectrum:
    """Spectral data for a birth-death chain on 0..n absorbed at 0 and n."""
    N = birth.shape[0] - 1
    n = N - 1
    if n == 0:
        empty = np.zeros((0, 0))
        return MoranSpectrum(N, np.zeros(0), empty, empty, np.zeros(0),
                             absorption_at_zero(birth, death), np.zeros(0), birth, death, 1.0)
    idx = np.arange(1, N)
    # reversible weights on the transient block: pi_{k+1} / pi_k = birth_k / death_{k+1}
    log_pi = np.concatenate([[0.0], np.cumsum(np.log(birth[idx[:-1]]) - np.log(death[idx[1:]]))])
    log_sqrtpi = 0.5 * (log_pi - log_pi.max())
    sqrtpi = np.exp(log_sqrtpi)
    amp = float(np.exp(log_sqrtpi.max() - log_sqrtpi.min()))
    diag = -(birth[idx] + death[idx])
    off = np.sqrt(birth[idx[:-1]] * death[idx[1:]])
    w, vecs = eigh_tridiagonal(diag, off)
    order = np.argsort(-w)
    lam = np.ascontiguousarray(w[order])
    V = np.ascontiguousarray(vecs[:, order])
    h0 = absorption_at_zero(birth, death)
    weighted = sqrtpi[:, None] * V
    C = np.ascontiguousarray(np.cumsum(weighted, axis=0))
    H0 = weighted.T @ h0[1:N]
    return MoranSpectrum(N, lam, V, C, H0, h0, sqrtpi, birth, death, amp)


@lru_cache(maxsize=16)
def moran_spectrum(N: int, g: float, s: float, eta: float) -> MoranSpectrum:
    birth, death = moran_rates(N, g, s, eta)
    return bd_spectrum(birth, death)


def transition_matrix(spec: MoranSpectrum, k: int, tau: float) -> np.ndarray:
    """Full row ``P_tau(k, .)`` on 0..N (used in tests and diagnostics)."""
    N = spec.N
    out = np.zeros(N + 1)
    if k in (0, N):
        out[k] = 1.0
        return out
    coef = spec.V[k - 1] * np.exp(spec.lam * tau) / spec.sqrtpi[k - 1]
    out[1:N] = spec.sqrtpi * (spec.V @ coef)
    out[0] = spec.h0[k] - coef @ spec.H0
    out[N] = 1.0 - out[0] - out[1:N].sum()
    return out


@njit(cache=True, nogil=True)
def kernel_sample(k, tau, lam, V, C, H0, h0, sqrtpi, N, coef, u):
    """Draw the count at time ``tau`` for a chain started at ``k`` in 1..N-1."""
    nm = 0
    while nm < lam.shape[0] and lam[nm] * tau > MODE_CUTOFF:
        nm += 1
    row = k - 1
    inv = 1.0 / sqrtpi[row]
    a0 = h0[k]
    for m in range(nm):
        coef[m] = V[row, m] * np.exp(lam[m] * tau) * inv
        a0 -= coef[m] * H0[m]
    if u < a0:
        return 0
    last = N - 2
    trans = 0.0
    for m in range(nm):
        trans += coef[m] * C[last, m]
    if u >= a0 + trans:
        return N
    lo = 1
    hi = N - 1
    while lo < hi:
        mid = (lo + hi) // 2
        f = a0
        for m in range(nm):
            f += coef[m] * C[mid - 1, m]
        if f > u:
            hi = mid
        else:
            lo = mid + 1
    return lo


@njit(cache=True, nogil=True)
def advance_host(k, tau, birth, death, lam, V, C, H0, h0, sqrtpi, N, coef, cap, use_kernel, rng):
    """Evolve one host by ``tau`` under the within-host chain alone."""
    if k == 0 or k == N or tau <= 0.0:
        return k
    rate = birth[k] + death[k]
    if use_kernel and rate * tau >= cap:
        return kernel_sample(k, tau, lam, V, C, H0, h0, sqrtpi, N, coef, rng.random())
    n = 0
    while True:
        dt = rng.standard_exponential() / rate
        if dt >= tau:
            return k
        tau -= dt
        if rng.random() * rate < birth[k]:
            k += 1
        else:
            k -= 1
        if k == 0 or k == N:
            return k
        rate = birth[k] + death[k]
        n += 1
        if use_kernel and n >= cap:
            return kernel_sample(k, tau, lam, V, C, H0, h0, sqrtpi, N, coef, rng.random())


@njit(cache=True, nogil=True)
def materialize(k, tlast, t, birth, death, lam, V, C, H0, h0, sqrtpi, N, coef, cap, use_kernel, rng):
    for i in range(k.shape[0]):
        if tlast[i] < t:
            k[i] = advance_host(k[i], t - tlast[i], birth, death, lam, V, C, H0, h0, sqrtpi,
                                N, coef, cap, use_kernel, rng)
            tlast[i] = t


@njit(cache=True, nogil=True)
def run_kernel_interval(
    k, tlast, N, M, rN, mutN, birth, death, lam, V, C, H0, h0, sqrtpi, coef, cap, use_kernel,
    t, t_target, rng, counts, log_t, log_host, log_kind, log_src, log_pos, log_on,
):
    """Advance the external-event clock to ``t_target``; returns ``(t, status, log_pos)``.

    Host counts are only brought up to date when touched; callers use
    ``materialize`` before reading the full state.
    """
    r_host = 1.0 + rN + mutN
    r_tot = M * r_host
    cap_log = log_t.shape[0]
    while True:
        if log_on and log_pos >= cap_log:
            return t, ST_FULL, log_pos
        t_next = t + rng.standard_exponential() / r_tot
        if t_next > t_target:
            return t_target, ST_DONE, log_pos
        t = t_next
        i = np.int64(rng.random() * M)
        k[i] = advance_host(k[i], t - tlast[i], birth, death, lam, V, C, H0, h0, sqrtpi,
                            N, coef, cap, use_kernel, rng)
        tlast[i] = t
        x = rng.random() * r_host
        src = -1
        if x < 1.0 + rN:
            j = np.int64(rng.random() * M)
            k[j] = advance_host(k[j], t - tlast[j], birth, death, lam, V, C, H0, h0, sqrtpi,
                                N, coef, cap, use_kernel, rng)
            tlast[j] = t
            src = j
            donor_a = rng.random() * N < k[j]
            if x < 1.0:
                if donor_a:
                    k[i] = N
                    kind = REPL_1
                else:
                    k[i] = 0
                    kind = REPL_0
            else:
                resident_a = rng.random() * N < k[i]
                if donor_a == resident_a:
                    continue
                if donor_a:
                    k[i] += 1
                    kind = REINF_UP
                else:
                    k[i] -= 1
                    kind = REINF_DOWN
        else:
            if rng.random() * N < k[i]:
                k[i] -= 1
                kind = MUT_AB
            else:
                k[i] += 1
                kind = MUT_BA
        counts[kind] += 1
        if log_on:
            log_t[log_pos] = t
            log_host[log_pos] = i
            log_kind[log_pos] = kind
            log_src[log_pos] = src
            log_pos += 1
