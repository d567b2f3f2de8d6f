"""The deterministic mean-field system for the host-class weights (v0, veta, v1).

Includes the vector field, an adaptive Dormand-Prince integrator with dense
output, the closed-form equilibria with their existence threshold, the
projected Jacobian and an eigenvalue-based classification.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .simplex import TernaryWeights
from .trajectory import write_header

SIMPLEX_TOL = 1e-9
RENORM_TOL = 1e-12
EIG_TOL = 1e-9


def _as_vec(v) -> np.ndarray:
    if isinstance(v, TernaryWeights):
        return v.as_array()
    return np.asarray(v, dtype=float).reshape(3)


def rhs(v, eta: float, r: float) -> np.ndarray:
    """Time derivative ``(dv0, dveta, dv1)`` at ``v``."""
    v0, ve, v1 = _as_vec(v)
    d0 = (1 - eta) * ve - 2 * r * eta * v0 * (v1 + eta * ve)
    de = -ve + 2 * r * (eta**2 * v0 * ve + (1 - eta) ** 2 * v1 * ve + v0 * v1)
    d1 = eta * ve - 2 * r * (1 - eta) * v1 * (v0 + (1 - eta) * ve)
    return np.array([d0, de, d1])


def _check_simplex(v: np.ndarray) -> None:
    if v.min() < -SIMPLEX_TOL or abs(v.sum() - 1.0) > SIMPLEX_TOL:
        raise ValueError(f"{v} is not on the simplex")


class StepSizeUnderflow(RuntimeError):
    pass


# Dormand-Prince 5(4) tableau
_C = np.array([0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1, 1])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
_B4 = np.array([5179 / 57600, 0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


@dataclass(frozen=True)
class OdePath:
    """Accepted steps of an integration, queryable at any time in range."""

    t: np.ndarray
    y: np.ndarray
    f: np.ndarray
    eta: float
    r: float
    max_sum_drift: float = 0.0
    min_component: float = 0.0
    n_renormalized: int = 0

    @property
    def t_end(self) -> float:
        return float(self.t[-1])

    @property
    def terminal(self) -> np.ndarray:
        return self.y[-1].copy()

    def __call__(self, t) -> np.ndarray:
        """Cubic Hermite interpolation; vectorised over ``t``."""
        tq = np.asarray(t, dtype=float)
        if np.any(tq < self.t[0] - 1e-12) or np.any(tq > self.t[-1] + 1e-12):
            raise ValueError(f"query time outside [{self.t[0]}, {self.t[-1]}]")
        scalar = tq.ndim == 0
        tq = np.atleast_1d(tq)
        j = np.clip(np.searchsorted(self.t, tq, side="right") - 1, 0, len(self.t) - 2)
        t0, t1 = self.t[j], self.t[j + 1]
        h = (t1 - t0)[:, None]
        s = ((tq - t0) / (t1 - t0))[:, None]
        y0, y1, f0, f1 = self.y[j], self.y[j + 1], self.f[j], self.f[j + 1]
        h00 = 2 * s**3 - 3 * s**2 + 1
        h10 = s**3 - 2 * s**2 + s
        h01 = -2 * s**3 + 3 * s**2
        h11 = s**3 - s**2
        out = h00 * y0 + h10 * h * f0 + h01 * y1 + h11 * h * f1
        return out[0] if scalar else out

    def weights(self, t: float) -> TernaryWeights:
        return TernaryWeights.from_array(self(t), renormalize=True)


def integrate(v0, eta: float, r: float, t_end: float, reltol: float = 1e-10,
              abstol: Optional[float] = None, h0: Optional[float] = None,
              min_step: float = 1e-14) -> OdePath:
    """Adaptive Dormand-Prince integration from ``v0`` up to ``t_end``."""
    y = _as_vec(v0).copy()
    _check_simplex(y)
    if t_end < 0:
        raise ValueError("t_end must be nonnegative")
    atol = reltol * 1e-2 if abstol is None else abstol
    ts, ys = [0.0], [y.copy()]
    f = rhs(y, eta, r)
    fs = [f.copy()]
    t = 0.0
    h = h0 if h0 is not None else min(0.1, max(t_end, 1e-3))
    drift = 0.0
    vmin = float(y.min())
    n_renorm = 0
    k = np.zeros((7, 3))
    while t < t_end:
        h = min(h, t_end - t)
        if h < min_step * max(1.0, t):
            raise StepSizeUnderflow(f"step size {h} underflow at t={t}")
        k[0] = f
        for i in range(1, 7):
            k[i] = rhs(y + h * (np.asarray(_A[i]) @ k[:i]), eta, r)
        y_new = y + h * (_B5 @ k)
        err_vec = h * (_E @ k)
        scale = atol + reltol * np.maximum(np.abs(y), np.abs(y_new))
        err = float(np.max(np.abs(err_vec) / scale))
        if err <= 1.0:
            t += h
            if t_end - t < 1e-13 * max(1.0, t_end):
                t = t_end
            drift = max(drift, abs(y_new.sum() - 1.0))
            vmin = min(vmin, float(y_new.min()))
            if abs(y_new.sum() - 1.0) > RENORM_TOL or y_new.min() < 0:
                y_new = np.clip(y_new, 0.0, None)
                y_new /= y_new.sum()
                n_renorm += 1
            y = y_new
            f = rhs(y, eta, r)
            ts.append(t)
            ys.append(y.copy())
            fs.append(f.copy())
        fac = 0.9 * (1.0 / max(err, 1e-10)) ** 0.2
        h *= min(5.0, max(0.2, fac))
    return OdePath(np.array(ts), np.array(ys), np.array(fs), eta, r, drift, vmin, n_renorm)


def existence_threshold(eta: float) -> float:
    """Smallest r for which the interior equilibrium lies in the simplex."""
    _check_eta(eta)
    a = (2 * eta - 1) / (2 * eta * (1 - eta) ** 2)
    b = (1 - 2 * eta) / (2 * (1 - eta) * eta**2)
    return max(a, b, 0.0)


def coupling_threshold(eta: float) -> float:
    _check_eta(eta)
    return max(eta / (2 * (1 - eta) ** 2), (1 - eta) / (2 * eta**2))


def _check_eta(eta: float) -> None:
    if not 0 < eta < 1:
        raise ValueError(f"eta must lie in (0, 1), got {eta}")


def interior_equilibrium_raw(eta: float, r: float) -> np.ndarray:
    """The three closed-form coordinates, whether or not they lie in the simplex."""
    e, q = eta, 1 - eta
    u0 = (2 * r * e * q**2 - (2 * e - 1)) / (2 * r * e**2 + 4 * r**2 * e**3 * q)
    ue = (4 * r**2 * e**3 * q**3 - (2 * e - 1) ** 2 * (2 * r * e * q + 1)) / (
        2 * r * e**2 * q**2 * (1 + 2 * r * e * q)
    )
    u1 = (2 * r * q * e**2 + 2 * e - 1) / (2 * r * q**2 + 4 * r**2 * e * q**3)
    return np.array([u0, ue, u1])


def interior_equilibrium(eta: float, r: float) -> Optional[TernaryWeights]:
    """The interior equilibrium, or ``None`` when it lies outside the simplex.

    At ``eta = 1/2, r = 0`` the closed forms are 0/0; the continuous limit
    ``(1/2, 0, 1/2)`` is returned.
    """
    _check_eta(eta)
    if r < 0:
        raise ValueError("r must be nonnegative")
    if r < existence_threshold(eta):
        return None
    if r == 0:
        return TernaryWeights(0.5, 0.0, 0.5)
    u = interior_equilibrium_raw(eta, r)
    # at r = r* one coordinate may come out as -1e-17
    u = np.where(np.abs(u) < 1e-15, 0.0, u)
    return TernaryWeights(*u)


def jacobian_projected(v0: float, v1: float, eta: float, r: float) -> np.ndarray:
    """Jacobian of ``(dv0, dv1)`` in the coordinates ``(v0, v1)``, ``veta = 1 - v0 - v1``."""
    e, q = eta, 1 - eta
    return np.array([
        [-q - 2 * r * e * (v1 * q + e) + 4 * r * e**2 * v0, -q - 2 * r * e * v0 * q],
        [-e - 2 * r * q * e * v1, -e - 2 * r * q * (v0 * e + q) + 4 * r * q**2 * v1],
    ])


def boundary_quadratic(eta: float, r: float) -> tuple[float, float, float]:
    """Coefficients ``(1, b, c)`` of the eigenvalue equation at ``(v0, v1) = (0, 1)``."""
    e, q = eta, 1 - eta
    b = 1 + 2 * r * (e - q**2)
    c = 2 * r * (e**2 - q**3 - q**2 * e) - 4 * r**2 * e * q**2
    return 1.0, b, c


def classify_point(eigs: np.ndarray, tol: float = EIG_TOL) -> str:
    re = np.real(eigs)
    if np.any(np.abs(re) <= tol):
        return "non-classified"
    if np.all(re < 0):
        return "stable"
    if np.all(re > 0):
        return "unstable"
    return "saddle"


@dataclass
class EquilibriumReport:
    eta: float
    r: float
    rstar: float
    interior: Optional[TernaryWeights]
    classification: dict = field(default_factory=dict)
    eigenvalues: dict = field(default_factory=dict)
    attracting: Optional[bool] = None

    def label(self) -> str:
        parts = [f"{k}={v}" for k, v in self.classification.items()]
        return "|".join(parts)


BOUNDARY_POINTS = {"100": (1.0, 0.0), "001": (0.0, 1.0)}


def classify_equilibria(eta: float, r: float, check_attraction: bool = False,
                        n_starts: int = 20, seed: int = 0) -> EquilibriumReport:
    """Classify the boundary equilibria and the interior point (if present).

    With ``check_attraction`` the interior point is additionally tested for
    attraction by integrating from random interior starts.
    """
    rstar = existence_threshold(eta)
    u = interior_equilibrium(eta, r)
    rep = EquilibriumReport(eta, r, rstar, u)
    for name, (a, b) in BOUNDARY_POINTS.items():
        eigs = np.linalg.eigvals(jacobian_projected(a, b, eta, r))
        rep.eigenvalues[name] = eigs
        rep.classification[name] = classify_point(eigs)
    if u is not None and 0 < u.veta:
        eigs = np.linalg.eigvals(jacobian_projected(u.v0, u.v1, eta, r))
        rep.eigenvalues["u"] = eigs
        rep.classification["u"] = classify_point(eigs)
        if check_attraction and rep.classification["u"] == "stable":
            rng = np.random.default_rng(seed)
            target = u.as_array()
            ok = True
            for _ in range(n_starts):
                start = rng.dirichlet(np.ones(3))
                end = integrate(start, eta, r, 500.0, reltol=1e-9).terminal
                ok &= bool(np.max(np.abs(end - target)) < 1e-6)
            rep.attracting = ok
    return rep


def equilibrium_sweep(etas: Sequence[float], rs: Sequence[float]) -> list[dict]:
    rows = []
    for eta in etas:
        for r in rs:
            rep = classify_equilibria(eta, r)
            u = rep.interior
            rows.append({
                "eta": eta, "r": r,
                "u0": np.nan if u is None else u.v0,
                "ueta": np.nan if u is None else u.veta,
                "u1": np.nan if u is None else u.v1,
                "rstar": rep.rstar,
                "classification": rep.label(),
            })
    return rows


def sweep_csv(rows: list[dict], header: Optional[dict] = None) -> str:
    buf = io.StringIO()
    write_header(buf, header)
    buf.write("eta,r,u0,ueta,u1,rstar,classification\n")
    for row in rows:
        buf.write(
            f"{row['eta']:.10g},{row['r']:.10g},{row['u0']:.12g},{row['ueta']:.12g},"
            f"{row['u1']:.12g},{row['rstar']:.12g},{row['classification']}\n"
        )
    return buf.getvalue()


def phase_portrait(eta: float, r: float, n: int = 21) -> np.ndarray:
    """Rows ``(v0, v1, dv0, dv1)`` on a triangular mesh of the projected simplex."""
    rows = []
    for i in range(n):
        for j in range(n - i):
            v0, v1 = i / (n - 1), j / (n - 1)
            d = rhs((v0, max(0.0, 1 - v0 - v1), v1), eta, r)
            rows.append((v0, v1, d[0], d[2]))
    return np.array(rows)


def phase_portrait_csv(eta: float, r: float, n: int = 21, header: Optional[dict] = None) -> str:
    buf = io.StringIO()
    write_header(buf, header)
    buf.write("v0,v1,dv0,dv1\n")
    for row in phase_portrait(eta, r, n):
        buf.write(",".join(f"{x:.12g}" for x in row) + "\n")
    return buf.getvalue()
