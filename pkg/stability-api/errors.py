"""Exception hierarchy shared by the stability library, CLI and service.

Every error raised on purpose derives from ``StabilityError``. The CLI maps
``ConfigError`` to exit code 2 and ``NumericalFailure`` to exit code 3; the
HTTP service maps them to 400 and 422.
"""
from __future__ import annotations

from typing import Any


class StabilityError(Exception):
    """Base for all library errors."""


class ConfigError(StabilityError, ValueError):
    """Invalid parameters, configs or environment values."""


class DimensionMismatchError(StabilityError, ValueError):
    def __init__(self, expected: int, got: int):
        super().__init__(f"dimension mismatch: expected {expected}, got {got}")
        self.expected = expected
        self.got = got


class NumericalFailure(StabilityError, RuntimeError):
    """A computation ran but could not produce a trustworthy result."""


class BlowUpError(NumericalFailure):
    """State left the blow-up guard or became non-finite.

    ``partial`` holds whatever was computed before the abort (a Trajectory
    for integrators, None when nothing is available).
    """

    def __init__(self, message: str, partial: Any = None, time: float | None = None):
        super().__init__(message)
        self.partial = partial
        self.time = time


class UnstableMatrixError(NumericalFailure):
    def __init__(self, max_real: float):
        super().__init__(f"unstable matrix: max Re(eig) = {max_real:.6g} >= 0")
        self.max_real = max_real


class SingularSystemError(NumericalFailure):
    pass


class DegenerateDiffusionError(NumericalFailure):
    def __init__(self, cond: float):
        super().__init__(f"degenerate diffusion: cond(a) = {cond:.3g}")
        self.cond = cond


class InconclusiveProbeError(NumericalFailure):
    def __init__(self, message: str, probe: Any = None):
        super().__init__(f"inconclusive: {message}")
        self.probe = probe


class EscapePathError(NumericalFailure):
    pass


class NoHopfPointError(ConfigError):
    def __init__(self, m: float, threshold: float):
        super().__init__(f"no Hopf point: m={m:g} is not above the threshold {threshold:.6g}")
        self.m = m
        self.threshold = threshold


class DegeneratePathError(ConfigError):
    def __init__(self) -> None:
        super().__init__("degenerate LIF: endpoints coincide")
