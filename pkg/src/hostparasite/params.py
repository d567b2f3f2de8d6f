"""Model parameters, scaling-regime checks and state classification windows."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional

import numpy as np

CONFIG_KEYS = ("N", "M", "eta", "b", "r", "g_N", "a", "eps", "eps1", "u_N", "seed")


def default_g_N(N: int, b: float, a: float, eps: float) -> float:
    """Reproduction speed-up that clears the strengthened lower bound at finite N."""
    return float(N) ** (b * max(3.0, 2.0 + a) + 2.0 * eps)


@dataclass(frozen=True)
class ModelParams:
    N: int
    M: int
    eta: float
    b: float
    r: float
    g_N: Optional[float] = None
    a: float = 0.4
    eps: float = 0.2
    eps1: float = 0.1
    u_N: float = 0.0

    def __post_init__(self):
        if self.g_N is None:
            object.__setattr__(self, "g_N", default_g_N(self.N, self.b, self.a, self.eps))
        if int(self.N) != self.N or self.N < 2:
            raise ValueError(f"N must be an integer >= 2, got {self.N}")
        if int(self.M) != self.M or self.M < 1:
            raise ValueError(f"M must be an integer >= 1, got {self.M}")
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "M", int(self.M))
        if not 0.0 < self.eta < 1.0:
            raise ValueError(f"eta must lie in (0, 1), got {self.eta}")
        if not 0.0 < self.b < 1.0:
            raise ValueError(f"b must lie in (0, 1), got {self.b}")
        if self.r < 0:
            raise ValueError(f"r must be nonnegative, got {self.r}")
        if not self.g_N > 0:
            raise ValueError(f"g_N must be positive, got {self.g_N}")
        if not self.a > 0:
            raise ValueError(f"a must be positive, got {self.a}")
        if not (self.eps > 0 and self.eps1 > 0):
            raise ValueError("eps and eps1 must be positive")
        if not self.eps1 < self.eps:
            raise ValueError(f"eps1 must be smaller than eps ({self.eps1} >= {self.eps})")
        if self.u_N < 0:
            raise ValueError(f"u_N must be nonnegative, got {self.u_N}")

    @property
    def s_N(self) -> float:
        return float(self.N) ** (-self.b)

    @property
    def r_N(self) -> float:
        return self.r * float(self.N) ** self.b

    @property
    def theta_N(self) -> float:
        """Population mutation rate on the host time scale."""
        return self.u_N * self.N * self.M * self.g_N

    def replace(self, **changes) -> "ModelParams":
        d = asdict(self)
        d.update(changes)
        if "g_N" not in changes and any(k in changes for k in ("N", "b", "a", "eps")):
            # keep a user-supplied g_N, but recompute a generated one
            if self.g_N == default_g_N(self.N, self.b, self.a, self.eps):
                d["g_N"] = None
        return ModelParams(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ClassificationWindows:
    u_lo: float
    u_hi: float
    d_lo: float
    d_hi: float

    def contains_u(self, x: float) -> bool:
        return self.u_lo < x < self.u_hi

    def contains_d(self, x: float) -> bool:
        return self.d_lo <= x <= self.d_hi


def windows_for(N: int, b: float, a: float, eps1: float, eta: float) -> ClassificationWindows:
    s = float(N) ** (-b)
    wu = s**a
    wd = s ** (a + eps1)
    u_lo, u_hi = max(0.0, eta - wu), min(1.0, eta + wu)
    d_lo, d_hi = eta - wd, eta + wd
    # D must stay strictly inside the open interval U after clipping
    if d_lo <= u_lo:
        d_lo = 0.5 * (u_lo + eta)
    if d_hi >= u_hi:
        d_hi = 0.5 * (u_hi + eta)
    return ClassificationWindows(u_lo, u_hi, d_lo, d_hi)


def derive_scales(params: ModelParams) -> tuple[float, float, ClassificationWindows]:
    """Return ``(s_N, r_N, windows)`` for the given parameters."""
    w = windows_for(params.N, params.b, params.a, params.eps1, params.eta)
    return params.s_N, params.r_N, w


class HostClass(Enum):
    Zero = 0
    EtaWindow = 1
    One = 2
    Transient = 3


def classify_state(x: float, windows: ClassificationWindows) -> HostClass:
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"frequency out of range: {x}")
    if x == 0.0:
        return HostClass.Zero
    if x == 1.0:
        return HostClass.One
    if windows.u_lo < x < windows.u_hi:
        return HostClass.EtaWindow
    return HostClass.Transient


def count_window(N: int, windows: ClassificationWindows) -> tuple[int, int]:
    """Integer counts ``(lo, hi)`` with ``lo <= k <= hi`` exactly the k in U (k/N)."""
    x = np.arange(N + 1) / N
    inside = np.flatnonzero((x > windows.u_lo) & (x < windows.u_hi) & (x > 0) & (x < 1))
    if inside.size == 0:
        return 1, 0
    return int(inside[0]), int(inside[-1])


@dataclass
class AssumptionEntry:
    name: str
    satisfied: bool
    margin: float
    note: str = ""


@dataclass
class AssumptionReport:
    entries: list[AssumptionEntry] = field(default_factory=list)

    def __getitem__(self, name: str) -> AssumptionEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    @property
    def all_satisfied(self) -> bool:
        return all(e.satisfied for e in self.entries)

    def summary(self) -> str:
        lines = []
        for e in self.entries:
            mark = "ok  " if e.satisfied else "FAIL"
            lines.append(f"{mark} {e.name:<8} margin={e.margin:+.4g}  {e.note}")
        return "\n".join(lines)


_PROXY_NOTE = "finite-N proxy, o()/O() constants set to 1"


def validate_assumptions(params: ModelParams) -> AssumptionReport:
    """Evaluate the scaling assumptions at finite N.

    Margins are natural-log ratios between ``g_N`` and the relevant bound,
    signed so that a positive margin means the inequality holds. The report
    is informational only and never blocks a simulation.
    """
    N, b, a, eps = params.N, params.b, params.a, params.eps
    logN = math.log(N)
    log_g = math.log(params.g_N)
    entries = [
        AssumptionEntry("A1", True, 0.0, "s_N = N^-b holds by construction"),
        AssumptionEntry("A2", True, 0.0, "r_N = r N^b, so r_N s_N = r exactly"),
    ]

    m = log_g - (3 * b + eps) * logN
    entries.append(AssumptionEntry("A3i", m > 0, m, f"g_N > N^(3b+eps); {_PROXY_NOTE}"))

    m = N ** (1 - b * (1 + eps)) - log_g
    entries.append(AssumptionEntry("A3ii", m > 0, m, f"g_N < exp(N^(1-b(1+eps))); {_PROXY_NOTE}"))

    m = log_g - (b * max(3.0, 2.0 + a) + eps) * logN
    entries.append(
        AssumptionEntry("A3'i", m > 0, m, f"g_N > N^(b max(3, 2+a) + eps); {_PROXY_NOTE}")
    )

    m = N ** (1 - b * (2 * a + 1 + eps)) - log_g
    entries.append(
        AssumptionEntry("A3'ii", m > 0, m, f"g_N < exp(N^(1-b(2a+1+eps))); {_PROXY_NOTE}")
    )

    bound = (1 - b) / (2 * b)
    entries.append(AssumptionEntry("a-range", a < bound, bound - a, f"a < (1-b)/(2b) = {bound:.4g}"))
    return AssumptionReport(entries)


def load_config(path: str | Path) -> tuple[ModelParams, Optional[int], dict]:
    """Read model parameters from a JSON or YAML file.

    Returns the parameters, the seed (or ``None``) and any extra keys, which
    the experiment layer interprets as preset knobs.
    """
    path = Path(path)
    text = path.read_text()
    if path.suffix in (".yaml", ".yml"):
        import yaml

        raw = yaml.safe_load(text) or {}
    else:
        raw = json.loads(text)
    required = ("N", "M", "eta", "b", "r", "a", "eps", "eps1")
    missing = [k for k in required if k not in raw]
    if missing:
        raise ValueError(f"config {path} is missing keys: {', '.join(missing)}")
    kw = {k: raw[k] for k in CONFIG_KEYS if k in raw and k != "seed"}
    kw.setdefault("u_N", 0.0)
    params = ModelParams(**kw)
    seed = raw.get("seed")
    extra = {k: v for k, v in raw.items() if k not in CONFIG_KEYS}
    return params, (None if seed is None else int(seed)), extra
