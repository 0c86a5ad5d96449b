"""Minimal autonomous quantum detector as an open quantum system.

Builds the Lindblad Liouvillian of a two-qubit absorption machine driving a
three-level gain medium coupled to a target qubit, and computes detection
efficiency, dark counts, jitter, dead time and entropy production from its
spectrum.
"""

from __future__ import annotations

from .errors import (
    DegenerateSteadyState,
    EfficiencyTooSmall,
    IllConditioned,
    NonConvergedEigensolve,
    RegimeError,
    SpectralError,
)
from .liouville import Liouvillian, SpectralData, assemble_liouvillian, spectral_decompose
from .metrics import MetricsReport, compute_metrics, initial_state
from .model import DetectorParams, appendix_e_params, build_rates, load_params, parse_params

__version__ = "0.1.0"

__all__ = [
    "DegenerateSteadyState",
    "DetectorParams",
    "EfficiencyTooSmall",
    "IllConditioned",
    "Liouvillian",
    "MetricsReport",
    "NonConvergedEigensolve",
    "RegimeError",
    "SpectralData",
    "SpectralError",
    "appendix_e_params",
    "assemble_liouvillian",
    "build_rates",
    "compute_metrics",
    "initial_state",
    "load_params",
    "parse_params",
    "spectral_decompose",
]
