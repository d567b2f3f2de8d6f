"""Points of the probability simplex over the host classes {0, eta, 1}."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SUM_TOL = 1e-12


@dataclass(frozen=True)
class TernaryWeights:
    v0: float
    veta: float
    v1: float

    def __post_init__(self):
        for name in ("v0", "veta", "v1"):
            val = float(getattr(self, name))
            if not -SUM_TOL <= val <= 1.0 + SUM_TOL:
                raise ValueError(f"{name}={val} outside [0, 1]")
            object.__setattr__(self, name, val)
        total = self.v0 + self.veta + self.v1
        if abs(total - 1.0) > SUM_TOL:
            raise ValueError(f"weights sum to {total!r}, not 1")

    @classmethod
    def from_array(cls, arr, renormalize: bool = False) -> "TernaryWeights":
        a = np.asarray(arr, dtype=float).reshape(3)
        if renormalize:
            a = np.clip(a, 0.0, None)
            a = a / a.sum()
        return cls(*a)

    @classmethod
    def from_counts(cls, n0: int, neta: int, n1: int) -> "TernaryWeights":
        m = n0 + neta + n1
        if m <= 0:
            raise ValueError("empty population")
        return cls(n0 / m, neta / m, n1 / m)

    def as_array(self) -> np.ndarray:
        return np.array([self.v0, self.veta, self.v1])

    def grid_counts(self, M: int, tol: float = 1e-9) -> tuple[int, int, int]:
        """Integer host counts for a point of the 1/M grid; raises otherwise."""
        scaled = self.as_array() * M
        counts = np.rint(scaled).astype(int)
        if np.max(np.abs(scaled - counts)) > tol or counts.sum() != M:
            raise ValueError(f"{self} is not on the 1/{M} grid")
        return int(counts[0]), int(counts[1]), int(counts[2])

    def __iter__(self):
        return iter((self.v0, self.veta, self.v1))
