"""Exact simulation of the finite host system."""

from .engine import (
    Absorbed,
    HostRates,
    HostStateVector,
    host_rates,
    in_box,
    is_absorbed,
    monomorphic,
    simulate,
    simulate_with_stopping,
    step,
    total_rate,
)
from ._kernel import moran_spectrum, transition_matrix

__all__ = [
    "Absorbed", "HostRates", "HostStateVector", "host_rates", "in_box", "is_absorbed",
    "monomorphic", "simulate", "simulate_with_stopping", "step", "total_rate",
    "moran_spectrum", "transition_matrix",
]
