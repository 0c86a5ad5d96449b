"""Exception types raised by the detector pipeline."""

from __future__ import annotations


class RegimeError(ValueError):
    """Parameter point lies outside the physical/engine regime.

    ``reason`` is a short machine-readable tag that ends up in the
    ``status`` column of sweep records.
    """

    def __init__(self, reason: str, message: str | None = None):
        super().__init__(message or reason)
        self.reason = reason


class SpectralError(RuntimeError):
    reason = "spectral-failure"


class DegenerateSteadyState(SpectralError):
    reason = "degenerate-steady-state"


class NonConvergedEigensolve(SpectralError):
    reason = "eigensolve-failed"


class IllConditioned(SpectralError):
    reason = "ill-conditioned"


class EfficiencyTooSmall(ValueError):
    """Jitter is undefined when the excess detection current integrates to ~0."""

    reason = "efficiency-too-small"
