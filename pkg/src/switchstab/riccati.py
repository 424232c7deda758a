"""Coupled algebraic Riccati equations for the mode-switching LQ synthesis.

The m equations

    A_i' P_i + P_i A_i - P_i B_i R^{-1} B_i' P_i + sum_j pi_ij P_j + Q = 0

are solved by an outer fixed point on the coupling term with an inner
Newton-Kleinman iteration per mode, plus the pairwise positive-definiteness
check that certifies the stabilization bound.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, MaxIterations, NoStabilizingInit, NotHurwitz
from .markov import GeneratorMatrix, _frozen

SYM_TOL = 1e-12


def _spectral_norm(M: np.ndarray) -> float:
    return float(np.linalg.norm(M, 2))


def _sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def _check_symmetric(M: np.ndarray, name: str) -> np.ndarray:
    scale = max(1.0, float(np.max(np.abs(M))) if M.size else 1.0)
    if np.max(np.abs(M - M.T)) > SYM_TOL * scale:
        raise ValueError(f"{name} is not symmetric within {SYM_TOL:g}")
    return _sym(M)


@dataclass(frozen=True)
class ModeSet:
    """Per-mode system matrices, stacked: A is (m, n, n), B is (m, n, d)."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        B = np.asarray(self.B, dtype=float)
        if A.ndim != 3 or A.shape[1] != A.shape[2]:
            raise DimensionMismatch(f"A must be (m, n, n), got {A.shape}")
        if B.ndim != 3 or B.shape[0] != A.shape[0] or B.shape[1] != A.shape[1]:
            raise DimensionMismatch(f"B must be (m, n, d) matching A {A.shape}, got {B.shape}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
            raise ValueError("mode matrices must be finite")
        object.__setattr__(self, "A", _frozen(A))
        object.__setattr__(self, "B", _frozen(B))

    @classmethod
    def from_matrices(cls, A_list, B_list) -> "ModeSet":
        if len(A_list) != len(B_list) or len(A_list) == 0:
            raise DimensionMismatch("need equal, nonzero counts of A and B matrices")
        return cls(A=np.stack([np.asarray(a, dtype=float) for a in A_list]),
                   B=np.stack([np.asarray(b, dtype=float) for b in B_list]))

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @property
    def d(self) -> int:
        return self.B.shape[2]


@dataclass(frozen=True)
class CostSpec:
    """Common weights: Q symmetric PSD (n x n), R symmetric PD (d x d)."""

    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        Q = _check_symmetric(np.asarray(self.Q, dtype=float), "Q")
        R = _check_symmetric(np.asarray(self.R, dtype=float), "R")
        q_eigs = np.linalg.eigvalsh(Q)
        if q_eigs[0] < -1e-10 * max(1.0, q_eigs[-1]):
            raise ValueError(f"Q must be positive semi-definite (min eig {q_eigs[0]:.3e})")
        r_eigs = np.linalg.eigvalsh(R)
        if r_eigs[0] <= 0.0:
            raise ValueError(f"R must be positive definite (min eig {r_eigs[0]:.3e})")
        object.__setattr__(self, "Q", _frozen(Q))
        object.__setattr__(self, "R", _frozen(R))


@dataclass(frozen=True)
class RiccatiSolution:
    """Stacked solutions P (m, n, n), per-mode residual spectral norms,
    and the outer iteration count that produced them."""

    P: np.ndarray
    residuals: np.ndarray
    iterations: int


@dataclass(frozen=True)
class ConditionReport:
    """Pairwise positive-definiteness check underpinning the generator bound.

    ``pairwise_min_eig[i, j]`` is the smallest eigenvalue of
    Q - 0.5 (P_i B_i - P_j B_j) R^{-1} (P_i B_i - P_j B_j)'; the condition
    holds when all entries are positive. ``gamma`` is sum_i tr(P_i), the
    constant in the bound L V_theta <= gamma / theta.
    """

    pairwise_min_eig: np.ndarray
    satisfied: bool
    gamma: float


def _is_hurwitz(A: np.ndarray) -> bool:
    return bool(np.max(np.linalg.eigvals(A).real) < 0.0)


def solve_lyapunov(A: np.ndarray, S: np.ndarray) -> np.ndarray:
    """Solve A'X + XA + S = 0 for Hurwitz A by a vectorized Kronecker solve.

    Column-stacking vec gives (I (x) A' + A' (x) I) vec(X) = -vec(S); the
    dense solve is fine at desk scale (n <= 10). The result is symmetrized
    and its residual checked against 1e-10 * (1 + |S|).
    """
    A = np.asarray(A, dtype=float)
    S = np.asarray(S, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n) or S.shape != (n, n):
        raise DimensionMismatch(f"A and S must both be square, got {A.shape} and {S.shape}")
    if not _is_hurwitz(A):
        raise NotHurwitz(f"max Re eig(A) = {np.max(np.linalg.eigvals(A).real):.3e} >= 0")
    eye = np.eye(n)
    L = np.kron(eye, A.T) + np.kron(A.T, eye)
    x = np.linalg.solve(L, -S.flatten(order="F"))
    X = _sym(x.reshape((n, n), order="F"))
    residual = _spectral_norm(A.T @ X + X @ A + S)
    if residual > 1e-10 * (1.0 + _spectral_norm(S)):
        raise ArithmeticError(f"Lyapunov residual {residual:.3e} exceeds tolerance")
    return X


def _stabilizing_gain(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Gain K with A - B K Hurwitz, via the shifted-Lyapunov construction.

    For beta > |A|, Z solving (A + beta I) Z + Z (A + beta I)' = 2 B B' is
    positive definite when (A, B) is controllable, and K = B' Z^{-1}
    relocates all closed-loop poles into the left half plane.
    """
    n, d = B.shape
    if _is_hurwitz(A):
        return np.zeros((d, n))
    beta = _spectral_norm(A) + 1.0
    M = -(A + beta * np.eye(n))
    try:
        Z = solve_lyapunov(M.T, 2.0 * B @ B.T)
        K = np.linalg.solve(Z, B).T
    except (np.linalg.LinAlgError, ArithmeticError) as exc:
        raise NoStabilizingInit(f"shifted Lyapunov init failed: {exc}") from exc
    if not _is_hurwitz(A - B @ K):
        raise NoStabilizingInit("pole-relocation gain did not stabilize the mode")
    return K


def _are_residual(A, B, Q, R_inv, P) -> float:
    return _spectral_norm(A.T @ P + P @ A - P @ B @ R_inv @ B.T @ P + Q)


def _solve_single_are(A, B, Q, R, R_inv, tol: float, max_iter: int = 60) -> np.ndarray:
    """Newton-Kleinman for A'P + PA - P B R^{-1} B' P + Q = 0."""
    K = _stabilizing_gain(A, B)
    P = None
    for _ in range(max_iter):
        try:
            P = solve_lyapunov(A - B @ K, Q + K.T @ R @ K)
        except NotHurwitz as exc:
            raise NoStabilizingInit(f"Newton-Kleinman iterate lost stabilizability: {exc}") from exc
        K = R_inv @ B.T @ P
        if _are_residual(A, B, Q, R_inv, P) <= tol:
            return P
    raise MaxIterations(
        "inner Newton-Kleinman did not converge",
        residual=_are_residual(A, B, Q, R_inv, P),
        iterations=max_iter,
    )


def _check_dims(modes: ModeSet, cost: CostSpec, gen: GeneratorMatrix) -> None:
    if cost.Q.shape != (modes.n, modes.n):
        raise DimensionMismatch(f"Q shape {cost.Q.shape} does not match n={modes.n}")
    if cost.R.shape != (modes.d, modes.d):
        raise DimensionMismatch(f"R shape {cost.R.shape} does not match d={modes.d}")
    if gen.m != modes.m:
        raise DimensionMismatch(f"generator has m={gen.m} but modes have m={modes.m}")


def coupled_residuals(modes: ModeSet, cost: CostSpec, gen: GeneratorMatrix,
                      P: np.ndarray) -> np.ndarray:
    """Spectral norm of each coupled-equation left side at the candidate P."""
    R_inv = np.linalg.inv(cost.R)
    out = np.empty(modes.m)
    for i in range(modes.m):
        lhs = (modes.A[i].T @ P[i] + P[i] @ modes.A[i]
               - P[i] @ modes.B[i] @ R_inv @ modes.B[i].T @ P[i]
               + np.tensordot(gen.rates[i], P, axes=1) + cost.Q)
        out[i] = _spectral_norm(lhs)
    return out


def solve_coupled_riccati(modes: ModeSet, cost: CostSpec, gen: GeneratorMatrix,
                          tol: float = 1e-10, max_outer: int = 200) -> RiccatiSolution:
    """Outer fixed point on the coupling, inner Newton-Kleinman per mode.

    Each sweep folds the diagonal coupling into the drift
    (A_i + pi_ii/2 I) and the off-diagonal coupling into the state weight
    (Q + sum_{j != i} pi_ij P_j), then solves the resulting single-mode
    equations. Convergence is declared on the true coupled residual; the
    system may genuinely have no solution, in which case MaxIterations
    reports the best residual reached.
    """
    _check_dims(modes, cost, gen)
    m, n = modes.m, modes.n
    R_inv = np.linalg.inv(cost.R)
    eye = np.eye(n)
    inner_tol = min(tol * 1e-2, 1e-12) * (1.0 + _spectral_norm(cost.Q))
    P = np.zeros((m, n, n))
    best = np.inf
    for outer in range(1, max_outer + 1):
        new_P = np.empty_like(P)
        for i in range(m):
            A_shift = modes.A[i] + 0.5 * gen.rates[i, i] * eye
            Q_fold = cost.Q + sum(gen.rates[i, j] * P[j] for j in range(m) if j != i)
            new_P[i] = _sym(_solve_single_are(A_shift, modes.B[i], _sym(Q_fold),
                                              cost.R, R_inv, inner_tol))
        P = new_P
        residuals = coupled_residuals(modes, cost, gen, P)
        best = min(best, float(residuals.max()))
        if residuals.max() <= tol:
            return RiccatiSolution(P=_frozen(P), residuals=_frozen(residuals),
                                   iterations=outer)
    raise MaxIterations(
        f"coupled Riccati iteration did not reach tol={tol:g} in {max_outer} sweeps",
        residual=best,
        iterations=max_outer,
    )


def verify_candidate(modes: ModeSet, cost: CostSpec, gen: GeneratorMatrix,
                     Pbar, tol: float = 1e-9) -> tuple[bool, float]:
    """Check the solvability inequality: each coupled left side is <= 0.

    Returns (satisfied, slack) where slack is the largest eigenvalue over
    all modes of the symmetrized left-side matrices; satisfied means
    slack <= tol.
    """
    Pbar = np.asarray(Pbar, dtype=float)
    if Pbar.shape != (modes.m, modes.n, modes.n):
        raise DimensionMismatch(
            f"candidate stack must be {(modes.m, modes.n, modes.n)}, got {Pbar.shape}")
    _check_dims(modes, cost, gen)
    R_inv = np.linalg.inv(cost.R)
    slack = -np.inf
    for i in range(modes.m):
        lhs = (modes.A[i].T @ Pbar[i] + Pbar[i] @ modes.A[i]
               - Pbar[i] @ modes.B[i] @ R_inv @ modes.B[i].T @ Pbar[i]
               + np.tensordot(gen.rates[i], Pbar, axes=1) + cost.Q)
        slack = max(slack, float(np.linalg.eigvalsh(_sym(lhs))[-1]))
    return slack <= tol, slack


def check_pairwise_condition(sol: RiccatiSolution, modes: ModeSet,
                             cost: CostSpec) -> ConditionReport:
    """Evaluate min eig of Q - 0.5 (P_i B_i - P_j B_j) R^{-1} (...)' per pair."""
    m = modes.m
    R_inv = np.linalg.inv(cost.R)
    PB = np.stack([sol.P[i] @ modes.B[i] for i in range(m)])
    min_eig = np.empty((m, m))
    for i in range(m):
        for j in range(m):
            diff = PB[i] - PB[j]
            G = cost.Q - 0.5 * diff @ R_inv @ diff.T
            min_eig[i, j] = np.linalg.eigvalsh(_sym(G))[0]
    gamma = float(sum(np.trace(sol.P[i]) for i in range(m)))
    return ConditionReport(pairwise_min_eig=_frozen(min_eig),
                           satisfied=bool(np.all(min_eig > 0.0)),
                           gamma=gamma)


def solution_to_dict(sol: RiccatiSolution) -> dict:
    """JSON-ready export: row-major matrices plus residuals."""
    return {
        "P": [Pi.tolist() for Pi in sol.P],
        "residuals": sol.residuals.tolist(),
        "iterations": sol.iterations,
    }


def solution_from_dict(data: dict) -> RiccatiSolution:
    return RiccatiSolution(
        P=_frozen(np.asarray(data["P"], dtype=float)),
        residuals=_frozen(np.asarray(data["residuals"], dtype=float)),
        iterations=int(data["iterations"]),
    )
