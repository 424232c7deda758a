"""Exception types shared across the package.

Every failure mode that callers are expected to branch on gets its own
class; the CLI maps them onto its exit-code contract.
"""

from __future__ import annotations


class SwitchstabError(Exception):
    """Base class for all package-specific errors."""


class DimensionMismatch(SwitchstabError):
    """Inputs have inconsistent or invalid shapes."""


class NegativeRate(SwitchstabError):
    """A generator matrix has a negative off-diagonal transition rate."""


class RowSumViolation(SwitchstabError):
    """A generator row sum deviates from zero beyond tolerance."""


class NotIrreducible(SwitchstabError):
    """The chain's rate graph is not a single communicating class."""


class NotHurwitz(SwitchstabError):
    """A matrix required to be Hurwitz has an eigenvalue with Re >= 0."""


class NoStabilizingInit(SwitchstabError):
    """No stabilizing initial gain could be constructed for a mode."""


class MaxIterations(SwitchstabError):
    """Iteration budget exhausted before reaching the residual tolerance."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class NonFiniteUpdate(SwitchstabError):
    """A state update produced NaN or infinity (step size too large)."""


class Explosion(SwitchstabError):
    """The joint state norm crossed the explosion radius."""

    def __init__(self, message: str, time: float, norm: float):
        super().__init__(message)
        self.time = time
        self.norm = norm


class AllCensored(SwitchstabError):
    """No simulated path entered the target ball within the horizon."""


class ParseError(SwitchstabError):
    """A model file failed to parse; carries the offending field path."""

    def __init__(self, field_path: str, message: str):
        super().__init__(f"{field_path}: {message}")
        self.field_path = field_path


class EnsemblePathError(SwitchstabError):
    """One or more ensemble paths failed; carries per-path details."""

    def __init__(self, failures: list[tuple[int, int, Exception]]):
        lines = ", ".join(f"path {i} (seed {s}): {e}" for i, s, e in failures)
        super().__init__(f"{len(failures)} path(s) failed: {lines}")
        self.failures = failures
