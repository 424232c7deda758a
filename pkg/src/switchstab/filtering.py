"""Wonham filter for the hidden mode: conditional law updates driven by
the observed state increment, with simplex repair after each Euler step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NonFiniteUpdate
from .markov import GeneratorMatrix, _frozen

SIMPLEX_TOL = 1e-12


@dataclass(frozen=True)
class FilterState:
    """Conditional mode distribution: entries >= 0, summing to 1."""

    phi: np.ndarray

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=float)
        if phi.ndim != 1 or phi.size < 1:
            raise DimensionMismatch(f"phi must be a 1-d vector, got shape {phi.shape}")
        if not np.all(np.isfinite(phi)):
            raise ValueError("phi has non-finite entries")
        if phi.min() < 0.0 or abs(phi.sum() - 1.0) > SIMPLEX_TOL:
            raise ValueError(
                f"phi is not a probability vector (min {phi.min():.3e}, sum {phi.sum()!r})")
        object.__setattr__(self, "phi", _frozen(phi))

    @property
    def m(self) -> int:
        return self.phi.size


@dataclass(frozen=True)
class DriftStack:
    """n x m matrix whose column i is A_i x + B_i u for the current (x, u)."""

    C: np.ndarray


def build_C(modes, x: np.ndarray, u: np.ndarray) -> DriftStack:
    """Stack the per-mode drifts A_i x + B_i u as columns."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape != (modes.n,):
        raise DimensionMismatch(f"x must have shape ({modes.n},), got {x.shape}")
    if u.shape != (modes.d,):
        raise DimensionMismatch(f"u must have shape ({modes.d},), got {u.shape}")
    C = (modes.A @ x + modes.B @ u).T
    return DriftStack(C=_frozen(C))


def build_D(phi: FilterState) -> np.ndarray:
    """D(phi) = diag(phi) - phi phi'; symmetric PSD, annihilates 1."""
    p = phi.phi
    return np.diag(p) - np.outer(p, p)


def project_simplex(v: np.ndarray) -> FilterState:
    """Euclidean projection onto the probability simplex (sort-and-threshold).

    Points already on the simplex pass through unchanged, which makes the
    projection exactly idempotent.
    """
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size < 1:
        raise DimensionMismatch(f"expected a 1-d vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("cannot project a vector with non-finite entries")
    if v.min() >= 0.0 and abs(v.sum() - 1.0) <= SIMPLEX_TOL:
        return FilterState(phi=v)
    u = np.sort(v)[::-1]
    cumulative = np.cumsum(u)
    counts = np.arange(1, v.size + 1)
    rho = int(np.nonzero(u + (1.0 - cumulative) / counts > 0.0)[0][-1])
    tau = (1.0 - cumulative[rho]) / (rho + 1)
    return FilterState(phi=np.maximum(v + tau, 0.0))


def _raw_filter_update(phi: FilterState, C: DriftStack, dx: np.ndarray,
                       dt: float, gen: GeneratorMatrix) -> np.ndarray:
    """One Euler step of the filter before simplex repair.

    innovation dv = dx - C phi dt; update phi + Pi' phi dt + D(phi) C' dv.
    """
    p = phi.phi
    dv = dx - (C.C @ p) * dt
    w = C.C.T @ dv
    return p + (gen.rates.T @ p) * dt + (p * w - p * (p @ w))


def filter_step(phi: FilterState, C: DriftStack, dx: np.ndarray, dt: float,
                gen: GeneratorMatrix) -> FilterState:
    """Advance the filter by one observed increment and re-project.

    The raw Euler update can leave the simplex; the returned state is its
    Euclidean projection back onto it. The generator is a required input
    because the predictable part of the update is Pi' phi dt.
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    dx = np.asarray(dx, dtype=float)
    if dx.shape != (C.C.shape[0],):
        raise DimensionMismatch(f"dx must have shape ({C.C.shape[0]},), got {dx.shape}")
    raw = _raw_filter_update(phi, C, dx, dt, gen)
    if not np.all(np.isfinite(raw)):
        raise NonFiniteUpdate(
            "filter update overflowed; the step size is too large for the current state")
    return project_simplex(raw)
