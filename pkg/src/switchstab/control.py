"""Certainty-equivalent feedback law and infinitesimal-generator evaluation.

The feedback substitutes the filtered mode distribution into the
mode-dependent LQ gains: u = -R^{-1} sum_i phi_i B_i' P_i x. The generator
of the joint (state, filter) diffusion is evaluated two ways: the closed
form for the logarithmic Lyapunov function, and a finite-difference
assembly of the operator for arbitrary smooth test functions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DimensionMismatch
from .filtering import FilterState, build_C, build_D
from .markov import GeneratorMatrix, _frozen
from .riccati import CostSpec, ModeSet, RiccatiSolution


@dataclass(frozen=True)
class ControlLaw:
    """Feedback data: Riccati stack P (m,n,n), R^{-1}, per-mode B.

    ``gains[i] = R^{-1} B_i' P_i`` is precomputed so that evaluating the
    law is a single contraction against phi.
    """

    P: np.ndarray
    R_inv: np.ndarray
    B: np.ndarray
    gains: np.ndarray

    @property
    def m(self) -> int:
        return self.P.shape[0]

    @property
    def n(self) -> int:
        return self.P.shape[1]

    @property
    def d(self) -> int:
        return self.B.shape[2]


def make_control_law(sol: RiccatiSolution, modes: ModeSet, cost: CostSpec) -> ControlLaw:
    """Assemble the feedback law from a Riccati solution."""
    if sol.P.shape != (modes.m, modes.n, modes.n):
        raise DimensionMismatch(
            f"solution stack {sol.P.shape} does not match modes {(modes.m, modes.n, modes.n)}")
    R_inv = np.linalg.inv(cost.R)
    if np.max(np.abs(cost.R @ R_inv - np.eye(modes.d))) > 1e-12:
        raise ValueError("R is too ill-conditioned to invert at the required accuracy")
    gains = np.stack([R_inv @ modes.B[i].T @ sol.P[i] for i in range(modes.m)])
    return ControlLaw(P=_frozen(sol.P), R_inv=_frozen(R_inv), B=_frozen(modes.B),
                      gains=_frozen(gains))


def feedback_control(law: ControlLaw, phi: FilterState, x: np.ndarray) -> np.ndarray:
    """u = -R^{-1} sum_i phi_i B_i' P_i x; linear in x for fixed phi."""
    x = np.asarray(x, dtype=float)
    return -np.einsum("i,idn,n->d", phi.phi, law.gains, x)


@dataclass(frozen=True)
class LyapunovSpec:
    """Parameters of V_theta(x, phi) = log(theta + x' P(phi) x)."""

    theta: float
    P: np.ndarray

    def __post_init__(self):
        if self.theta <= 0.0:
            raise ValueError(f"theta must be positive, got {self.theta}")
        object.__setattr__(self, "P", _frozen(self.P))


def lyapunov_value(spec: LyapunovSpec, x: np.ndarray, phi: FilterState) -> float:
    """log(theta + x' P(phi) x) with P(phi) = sum_i phi_i P_i."""
    x = np.asarray(x, dtype=float)
    P_phi = np.tensordot(phi.phi, spec.P, axes=1)
    return float(np.log(spec.theta + x @ P_phi @ x))


def lyapunov_field(spec: LyapunovSpec) -> Callable[[np.ndarray, np.ndarray], float]:
    """The same function on ambient (x, phi), as needed for differencing."""

    def h(x: np.ndarray, p: np.ndarray) -> float:
        return float(np.log(spec.theta + x @ np.tensordot(p, spec.P, axes=1) @ x))

    return h


def generator_apply_closed_form(spec: LyapunovSpec, modes: ModeSet,
                                gen: GeneratorMatrix, law: ControlLaw,
                                x: np.ndarray, phi: FilterState) -> float:
    """Closed-form generator value for the logarithmic Lyapunov function.

    With g = theta + x'P(phi)x, q the stacked quadratic forms (x'P_i x)_i,
    and CD = C(x) D(phi), the three contributions are

        (2 x'P(phi) C(x) phi + q' Pi' phi) / g
      + tr(P(phi) + 2 CD q-row-stack) / g
      - |2 P(phi) x + CD q|^2 / (2 g^2),

    where C(x) is built with u from the feedback law.
    """
    x = np.asarray(x, dtype=float)
    p = phi.phi
    u = feedback_control(law, phi, x)
    C = build_C(modes, x, u).C
    D = build_D(phi)
    P_phi = np.tensordot(p, spec.P, axes=1)
    g = spec.theta + x @ P_phi @ x
    quad = np.einsum("ijk,j,k->i", spec.P, x, x)      # (x' P_i x)_i
    xP = np.einsum("ijk,k->ij", spec.P, x)            # row i is x' P_i
    CD = C @ D                                        # C(x) D(phi)', D symmetric
    first = (2.0 * x @ P_phi @ C @ p + quad @ (gen.rates.T @ p)) / g
    trace = (np.trace(P_phi) + 2.0 * np.trace(CD @ xP)) / g
    grad_vec = 2.0 * P_phi @ x + CD @ quad
    correction = -(grad_vec @ grad_vec) / (2.0 * g * g)
    return float(first + trace + correction)


def _numeric_gradient_hessian(f: Callable[[np.ndarray], float], y: np.ndarray,
                              step: float) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference gradient and Hessian with per-coordinate steps."""
    k = y.size
    h = step * (1.0 + np.abs(y))
    grad = np.empty(k)
    hess = np.empty((k, k))
    f0 = f(y)
    for a in range(k):
        ya, yb = y.copy(), y.copy()
        ya[a] += h[a]
        yb[a] -= h[a]
        fa, fb = f(ya), f(yb)
        grad[a] = (fa - fb) / (2.0 * h[a])
        hess[a, a] = (fa - 2.0 * f0 + fb) / (h[a] * h[a])
    for a in range(k):
        for b in range(a + 1, k):
            ypp, ypm, ymp, ymm = y.copy(), y.copy(), y.copy(), y.copy()
            ypp[[a, b]] += [h[a], h[b]]
            ypm[a] += h[a]
            ypm[b] -= h[b]
            ymp[a] -= h[a]
            ymp[b] += h[b]
            ymm[[a, b]] -= [h[a], h[b]]
            hess[a, b] = hess[b, a] = (f(ypp) - f(ypm) - f(ymp) + f(ymm)) / (4.0 * h[a] * h[b])
    return grad, hess


def generator_apply_numeric(h: Callable[[np.ndarray, np.ndarray], float],
                            modes: ModeSet, gen: GeneratorMatrix, law: ControlLaw,
                            x: np.ndarray, phi: FilterState,
                            step: float = 1e-5) -> float:
    """Finite-difference evaluation of the generator on a scalar field h(x, phi).

    The drift is (C(x) phi, Pi' phi) and the diffusion square is assembled
    from C(x) and D(phi) exactly as in the closed-loop dynamics, with the
    coefficients frozen at the evaluation point; only h is differenced.
    phi-derivatives are taken in the ambient space, so callers should keep
    evaluation points strictly inside the simplex.
    """
    x = np.asarray(x, dtype=float)
    p = phi.phi
    n, m = x.size, p.size
    u = feedback_control(law, phi, x)
    C = build_C(modes, x, u).C
    D = build_D(phi)
    drift = np.concatenate((C @ p, gen.rates.T @ p))
    DC = D @ C.T                                      # m x n diffusion block
    sigma = np.vstack((np.eye(n), DC))                # (n+m) x n
    diffusion_sq = sigma @ sigma.T

    def field(y: np.ndarray) -> float:
        return float(h(y[:n], y[n:]))

    grad, hess = _numeric_gradient_hessian(field, np.concatenate((x, p)), step)
    return float(grad @ drift + 0.5 * np.sum(hess * diffusion_sq))


def gains_to_dict(law: ControlLaw) -> dict:
    """JSON-ready export of the per-mode feedback gains -R^{-1} B_i' P_i."""
    return {"feedback_gains": [(-law.gains[i]).tolist() for i in range(law.m)]}
