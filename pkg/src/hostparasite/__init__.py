"""Two-type parasites in a population of hosts: finite model, limit processes and analytics."""

from .params import ModelParams, classify_state, derive_scales, validate_assumptions, windows_for
from .rng import seed_stream
from .simplex import TernaryWeights

__version__ = "0.1.0"

__all__ = [
    "ModelParams", "TernaryWeights", "classify_state", "derive_scales", "seed_stream",
    "validate_assumptions", "windows_for",
]
