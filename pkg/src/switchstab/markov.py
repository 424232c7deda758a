"""Hidden continuous-time Markov chain: generator validation, stationary
law, transition semigroup, exact path sampling, and mixing-rate estimates.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DimensionMismatch, NegativeRate, NotIrreducible, RowSumViolation

# Diagonal entries may disagree with the negative off-diagonal row sum by
# this much before the row is rejected instead of repaired.
DIAG_REPAIR_TOL = 1e-9


def _frozen(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class GeneratorMatrix:
    """Validated m x m transition-rate matrix of the hidden chain.

    Off-diagonal entries are nonnegative rates (1/time); each diagonal
    entry equals the negative sum of its row's off-diagonal entries, so
    rows sum to zero up to roundoff.
    """

    rates: np.ndarray

    @property
    def m(self) -> int:
        return self.rates.shape[0]


@dataclass(frozen=True)
class StationaryDistribution:
    """Unique probability vector nu with Pi' nu = 0 (irreducible chain)."""

    nu: np.ndarray


@dataclass(frozen=True)
class ChainPath:
    """One sampled chain trajectory on [0, horizon].

    ``states`` has one more entry than ``jump_times``: states[k] holds on
    [jump_times[k-1], jump_times[k]) with jump_times[-1] := 0. Paths are
    right-continuous at jumps.
    """

    jump_times: np.ndarray
    states: np.ndarray
    horizon: float

    def states_at(self, times: np.ndarray) -> np.ndarray:
        """Right-continuous state lookup for an array of times."""
        idx = np.searchsorted(self.jump_times, np.asarray(times, dtype=float), side="right")
        return self.states[idx]

    def state_at(self, t: float) -> int:
        return int(self.states_at(np.asarray([t]))[0])

    def occupation_fractions(self, m: int) -> np.ndarray:
        """Fraction of [0, horizon] spent in each of the m states."""
        edges = np.concatenate(([0.0], self.jump_times, [self.horizon]))
        durations = np.diff(edges)
        frac = np.zeros(m)
        np.add.at(frac, self.states, durations)
        return frac / self.horizon


@dataclass(frozen=True)
class MixingEstimate:
    """Exponential decay certificate: sup|M(t) - 1 nu'| <= K exp(-lam t).

    ``lam`` is the spectral gap (smallest -Re over nonzero generator
    eigenvalues); ``K`` is fitted so the inequality holds on the sampled
    time grid used by :func:`estimate_mixing`.
    """

    lam: float
    K: float


def validate_generator(raw) -> GeneratorMatrix:
    """Validate a raw square matrix as a transition-rate matrix.

    Off-diagonal entries must be nonnegative. Each diagonal entry is
    recomputed as the negative off-diagonal row sum when the stored value
    is within ``DIAG_REPAIR_TOL`` of that; larger deviations are rejected.
    """
    rates = np.array(raw, dtype=float)
    if rates.ndim != 2 or rates.shape[0] != rates.shape[1] or rates.shape[0] < 1:
        raise DimensionMismatch(f"generator must be a square matrix, got shape {rates.shape}")
    if not np.all(np.isfinite(rates)):
        raise RowSumViolation("generator contains non-finite entries")
    m = rates.shape[0]
    off = rates.copy()
    np.fill_diagonal(off, 0.0)
    if np.any(off < 0.0):
        i, j = np.argwhere(off < 0.0)[0]
        raise NegativeRate(f"rate[{i},{j}] = {rates[i, j]} is negative off-diagonal")
    expected_diag = -off.sum(axis=1)
    gap = np.abs(np.diag(rates) - expected_diag)
    if np.any(gap > DIAG_REPAIR_TOL):
        i = int(np.argmax(gap))
        raise RowSumViolation(
            f"row {i} sums to {rates[i].sum():.3e} (diagonal off by {gap[i]:.3e}, "
            f"tolerance {DIAG_REPAIR_TOL:g})"
        )
    repaired = off
    repaired[np.diag_indices(m)] = expected_diag
    return GeneratorMatrix(rates=_frozen(repaired))


def _is_irreducible(gen: GeneratorMatrix) -> bool:
    """Strong connectivity of the directed graph on positive rates."""
    m = gen.m
    if m == 1:
        return True
    support = gen.rates > 0.0

    def reachable(adj):
        seen = np.zeros(m, dtype=bool)
        seen[0] = True
        frontier = [0]
        while frontier:
            i = frontier.pop()
            for j in np.nonzero(adj[i])[0]:
                if not seen[j]:
                    seen[j] = True
                    frontier.append(int(j))
        return seen

    return bool(reachable(support).all() and reachable(support.T).all())


def stationary_distribution(gen: GeneratorMatrix) -> StationaryDistribution:
    """Solve Pi' nu = 0 with the normalization sum(nu) = 1."""
    if not _is_irreducible(gen):
        raise NotIrreducible("rate graph is not a single communicating class")
    m = gen.m
    if m == 1:
        return StationaryDistribution(nu=_frozen([1.0]))
    A = gen.rates.T.copy()
    A[-1, :] = 1.0
    b = np.zeros(m)
    b[-1] = 1.0
    nu = np.linalg.solve(A, b)
    nu = np.maximum(nu, 0.0)
    nu /= nu.sum()
    return StationaryDistribution(nu=_frozen(nu))


def transition_matrix(gen: GeneratorMatrix, t: float) -> np.ndarray:
    """M(t) = expm(t Pi), so M(t)[i, j] = P(alpha(t)=j | alpha(0)=i)."""
    if t < 0.0:
        raise ValueError(f"t must be nonnegative, got {t}")
    M = scipy.linalg.expm(gen.rates * t)
    if not np.all(np.isfinite(M)):
        raise OverflowError(f"matrix exponential overflowed at t={t} (t*|Pi| too large)")
    return M


def sample_path(gen: GeneratorMatrix, i0: int, horizon: float, rng: np.random.Generator) -> ChainPath:
    """Exact chain sample: exponential holding times, rate-proportional jumps.

    Deterministic given the generator state of ``rng``. Absorbing states
    (zero exit rate) hold forever.
    """
    m = gen.m
    if not 0 <= i0 < m:
        raise DimensionMismatch(f"initial mode {i0} out of range for m={m}")
    if horizon <= 0.0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    jump_times = []
    states = [int(i0)]
    t = 0.0
    i = int(i0)
    while True:
        exit_rate = -gen.rates[i, i]
        if exit_rate <= 0.0:
            break
        t += rng.exponential(1.0 / exit_rate)
        if t >= horizon:
            break
        weights = gen.rates[i].copy()
        weights[i] = 0.0
        i = int(rng.choice(m, p=weights / weights.sum()))
        jump_times.append(t)
        states.append(i)
    return ChainPath(
        jump_times=_frozen(jump_times),
        states=np.asarray(states, dtype=np.int64),
        horizon=float(horizon),
    )


def estimate_mixing(gen: GeneratorMatrix, grid_points: int = 48) -> MixingEstimate:
    """Fit the decay certificate |M(t) - 1 nu'| <= K exp(-lam t).

    lam is read off the generator spectrum; K is the maximum of
    |M(t) - 1 nu'|_sup * exp(lam t) over a geometric time grid (plus t=0),
    and the inequality is re-verified on that grid before returning.
    """
    nu = stationary_distribution(gen).nu
    if gen.m == 1:
        return MixingEstimate(lam=math.inf, K=1.0)
    eigs = np.linalg.eigvals(gen.rates)
    scale = max(1.0, float(np.max(np.abs(eigs))))
    nonzero = eigs[np.abs(eigs) > 1e-12 * scale]
    if nonzero.size == 0:
        raise NotIrreducible("generator spectrum is identically zero")
    lam = float(np.min(-nonzero.real))
    if lam <= 1e-12 * scale:
        raise NotIrreducible(f"zero spectral gap (lam = {lam:.3e})")
    limit = np.outer(np.ones(gen.m), nu)
    ts = np.concatenate(([0.0], np.geomspace(0.01 / lam, 30.0 / lam, grid_points)))
    K = 0.0
    gaps = np.empty_like(ts)
    for k, t in enumerate(ts):
        gaps[k] = np.max(np.abs(transition_matrix(gen, t) - limit))
        K = max(K, gaps[k] * math.exp(lam * t))
    if np.any(gaps > K * np.exp(-lam * ts) * (1.0 + 1e-9) + 1e-300):
        raise ArithmeticError("mixing certificate failed re-verification on its own grid")
    return MixingEstimate(lam=lam, K=K)


def write_chain_csv(path: ChainPath, file) -> None:
    """Write a chain path as CSV rows (jump_time, state), starting at t=0."""
    writer = csv.writer(file, lineterminator="\n")
    writer.writerow(["jump_time", "state"])
    writer.writerow([repr(0.0), int(path.states[0])])
    for t, s in zip(path.jump_times, path.states[1:]):
        writer.writerow([repr(float(t)), int(s)])
