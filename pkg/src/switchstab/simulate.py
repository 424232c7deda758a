"""Closed-loop simulation of the hidden-mode LQ system plus the stability,
martingale, and recurrence diagnostics evaluated on the resulting paths.

The truth dynamics use the exact sampled chain; the filter and controller
see only the observed state increments. Paths are deterministic given the
config seed, and ensembles derive per-path seeds by a counter-based split
so results do not depend on scheduling or worker count.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import _kernel
from .control import ControlLaw, feedback_control, make_control_law
from .errors import (AllCensored, DimensionMismatch, EnsemblePathError, Explosion,
                     NonFiniteUpdate, SwitchstabError)
from .filtering import FilterState, build_C, filter_step
from .markov import GeneratorMatrix, _frozen, sample_path, transition_matrix
from .riccati import CostSpec, ModeSet, solve_coupled_riccati

SAMPLE_ALPHA0 = "sample-from-phi0"
_LOG_CLAMP = 1e-300


@dataclass(frozen=True)
class SimConfig:
    """Everything needed to reproduce one closed-loop path."""

    modes: ModeSet
    cost: CostSpec
    gen: GeneratorMatrix
    x0: np.ndarray
    phi0: FilterState
    T: float
    dt: float
    seed: int
    alpha0: int | str = SAMPLE_ALPHA0
    explosion_radius: float = 1e9

    def __post_init__(self):
        x0 = np.asarray(self.x0, dtype=float)
        if x0.shape != (self.modes.n,):
            raise DimensionMismatch(f"x0 must have shape ({self.modes.n},), got {x0.shape}")
        if self.phi0.m != self.modes.m or self.gen.m != self.modes.m:
            raise DimensionMismatch("phi0, generator, and modes disagree on m")
        if self.dt <= 0.0 or self.T < self.dt:
            raise ValueError(f"need 0 < dt <= T, got dt={self.dt}, T={self.T}")
        if self.explosion_radius <= 0.0:
            raise ValueError("explosion_radius must be positive")
        if isinstance(self.alpha0, str):
            if self.alpha0 != SAMPLE_ALPHA0:
                raise ValueError(f"alpha0 must be a mode index or {SAMPLE_ALPHA0!r}")
        elif not 0 <= int(self.alpha0) < self.modes.m:
            raise ValueError(f"alpha0={self.alpha0} out of range for m={self.modes.m}")
        object.__setattr__(self, "x0", _frozen(x0))


@dataclass(frozen=True)
class Trajectory:
    """One simulated path on its jump-refined grid.

    ``alpha`` is the hidden mode (right-continuous), ``N`` the filter
    martingale reconstructed from the filter path, ``qv_running`` its
    realized quadratic variation, and ``Ynorm`` the joint norm |(X, phi)|.
    """

    grid: np.ndarray
    alpha: np.ndarray
    X: np.ndarray
    phi: np.ndarray
    U: np.ndarray
    dV: np.ndarray
    N: np.ndarray
    qv_running: np.ndarray
    Ynorm: np.ndarray

    @property
    def N_norm(self) -> np.ndarray:
        return np.sqrt(np.sum(self.N * self.N, axis=1))

    @property
    def horizon(self) -> float:
        return float(self.grid[-1])


@dataclass(frozen=True)
class MartingaleDiagnostics:
    """Pathwise checks of the filter-martingale bounds."""

    max_bound_slack: float
    qv_slope: float
    N_over_t: float


@dataclass(frozen=True)
class ReturnTimeStats:
    """First-entrance times into the target ball, censored at the horizon."""

    times: np.ndarray
    censored: int
    num_paths: int
    mean: float
    stderr: float
    radius: float
    horizon: float


@dataclass(frozen=True)
class EnsembleReport:
    """Per-path statistics and their aggregates for one ensemble run."""

    num_paths: int
    checkpoints: np.ndarray
    path_seeds: np.ndarray
    terminal_exponents: np.ndarray
    tail_sup_exponents: np.ndarray
    N_over_t: np.ndarray
    N_sq_over_t: np.ndarray
    second_moment_N: np.ndarray
    phi_checkpoint: np.ndarray
    phi_mean: np.ndarray
    phi_se: np.ndarray
    phi_target: np.ndarray
    mean_phi_error: np.ndarray
    max_bound_slack: float
    return_times: np.ndarray
    return_censored: int
    return_radius: float | None
    config: SimConfig


def path_seed(master_seed: int, index: int) -> int:
    """Counter-based per-path seed: independent of order and worker count."""
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(index,))
    return int(ss.generate_state(1, np.uint64)[0])


def _build_grid(T: float, dt: float, jump_times: np.ndarray) -> np.ndarray:
    num = int(math.ceil(T / dt - 1e-9))
    base = np.minimum(np.arange(num + 1) * dt, T)
    base[-1] = T
    return np.unique(np.concatenate((base, jump_times)))


def _synthesize_law(cfg: SimConfig) -> ControlLaw:
    sol = solve_coupled_riccati(cfg.modes, cfg.cost, cfg.gen)
    return make_control_law(sol, cfg.modes, cfg.cost)


def _draw_path_randomness(cfg: SimConfig, rng: np.random.Generator):
    """Fixed draw order: initial mode, chain path, Gaussian increments."""
    if cfg.alpha0 == SAMPLE_ALPHA0:
        i0 = int(rng.choice(cfg.modes.m, p=cfg.phi0.phi))
    else:
        i0 = int(cfg.alpha0)
    chain = sample_path(cfg.gen, i0, cfg.T, rng)
    grid = _build_grid(cfg.T, cfg.dt, chain.jump_times)
    alpha = chain.states_at(grid)
    z = rng.standard_normal((grid.size - 1, cfg.modes.n))
    return grid, alpha, z


def simulate_closed_loop(cfg: SimConfig, law: ControlLaw | None = None,
                         engine: str = "fast",
                         _stop_radius: float = 0.0) -> Trajectory:
    """Run one closed-loop path; deterministic given ``cfg.seed``.

    ``engine="fast"`` uses the compiled kernel; ``engine="reference"``
    replays the same increments through the module-level filter and
    controller operations (slow, used for cross-validation).
    """
    if law is None:
        law = _synthesize_law(cfg)
    rng = np.random.default_rng(cfg.seed)
    grid, alpha, z = _draw_path_randomness(cfg, rng)
    if engine == "fast":
        status, last, X, PHI, U, DV, N, QV, YN = _kernel.run_closed_loop(
            grid, alpha, cfg.modes.A, cfg.modes.B, law.gains, cfg.gen.rates.T.copy(),
            cfg.x0, cfg.phi0.phi, z, cfg.explosion_radius, _stop_radius)
    elif engine == "reference":
        status, last, X, PHI, U, DV, N, QV, YN = _reference_loop(
            cfg, law, grid, alpha, z, _stop_radius)
    else:
        raise ValueError(f"unknown engine {engine!r}")
    end = last + 1
    alpha_out = alpha[:end].copy()
    alpha_out.setflags(write=False)
    traj = Trajectory(grid=_frozen(grid[:end]), alpha=alpha_out,
                      X=_frozen(X[:end]), phi=_frozen(PHI[:end]), U=_frozen(U[:end]),
                      dV=_frozen(DV[:last]), N=_frozen(N[:end]),
                      qv_running=_frozen(QV[:end]), Ynorm=_frozen(YN[:end]))
    if status == _kernel.STATUS_EXPLOSION:
        raise Explosion(
            f"|Y| crossed {cfg.explosion_radius:g} at t={grid[last]:.6f}",
            time=float(grid[last]), norm=float(YN[last]))
    if status == _kernel.STATUS_NONFINITE:
        raise NonFiniteUpdate(
            f"non-finite update advancing from t={grid[last]:.6f}; reduce dt")
    return traj


def _reference_loop(cfg: SimConfig, law: ControlLaw, grid, alpha, z, stop_radius):
    """Step-by-step loop through the public filter/controller operations."""
    L1 = grid.size
    n, m, d = cfg.modes.n, cfg.modes.m, cfg.modes.d
    X = np.zeros((L1, n))
    PHI = np.zeros((L1, m))
    U = np.zeros((L1, d))
    DV = np.zeros((L1 - 1, n))
    N = np.zeros((L1, m))
    QV = np.zeros(L1)
    YN = np.zeros(L1)
    x = cfg.x0.copy()
    state = cfg.phi0
    X[0] = x
    PHI[0] = state.phi
    YN[0] = math.hypot(np.linalg.norm(x), np.linalg.norm(state.phi))
    pift = cfg.gen.rates.T @ state.phi
    integ = np.zeros(m)
    status, last = _kernel.STATUS_OK, L1 - 1
    for k in range(L1 - 1):
        h = grid[k + 1] - grid[k]
        u = feedback_control(law, state, x)
        U[k] = u
        C = build_C(cfg.modes, x, u)
        dx = C.C[:, alpha[k]] * h + math.sqrt(h) * z[k]
        DV[k] = dx - (C.C @ state.phi) * h
        try:
            state = filter_step(state, C, dx, h, cfg.gen)
        except NonFiniteUpdate:
            status, last = _kernel.STATUS_NONFINITE, k
            break
        x = x + dx
        pift_new = cfg.gen.rates.T @ state.phi
        integ += 0.5 * (pift + pift_new) * h
        pift = pift_new
        N[k + 1] = state.phi - cfg.phi0.phi - integ
        dn = N[k + 1] - N[k]
        QV[k + 1] = QV[k] + dn @ dn
        X[k + 1] = x
        PHI[k + 1] = state.phi
        yn = math.hypot(np.linalg.norm(x), np.linalg.norm(state.phi))
        YN[k + 1] = yn
        if np.isnan(yn):
            status, last = _kernel.STATUS_NONFINITE, k
            break
        if yn > cfg.explosion_radius:
            status, last = _kernel.STATUS_EXPLOSION, k + 1
            break
        if stop_radius > 0.0 and yn <= stop_radius:
            status, last = _kernel.STATUS_STOPPED, k + 1
            break
    U[last] = feedback_control(law, FilterState(phi=PHI[last]), X[last])
    return status, last, X, PHI, U, DV, N, QV, YN


def lyapunov_exponent(traj: Trajectory, tail_fraction: float = 0.25) -> tuple[float, float]:
    """(terminal, tail_sup) sample exponents of |X(t)|.

    terminal = log|X(T)|/T; tail_sup is the worst (1/t) log|X(t)| over the
    trailing ``tail_fraction`` of the grid. Norms are clamped away from
    zero before taking logs.
    """
    if traj.grid.size <= 10:
        raise ValueError("trajectory too short for exponent estimation")
    if not 0.0 < tail_fraction <= 1.0:
        raise ValueError("tail_fraction must lie in (0, 1]")
    norms = np.maximum(np.sqrt(np.sum(traj.X * traj.X, axis=1)), _LOG_CLAMP)
    T = traj.horizon
    terminal = float(np.log(norms[-1]) / T)
    mask = (traj.grid >= (1.0 - tail_fraction) * T) & (traj.grid > 0.0)
    tail_sup = float(np.max(np.log(norms[mask]) / traj.grid[mask]))
    return terminal, tail_sup


def martingale_diagnostics(traj: Trajectory) -> MartingaleDiagnostics:
    """Pathwise bound slack, realized-variation slope, and |N(T)|/T."""
    n_norm = traj.N_norm
    slack = float(np.max(n_norm - (1.0 + traj.grid)))
    T = traj.horizon
    return MartingaleDiagnostics(
        max_bound_slack=slack,
        qv_slope=float(traj.qv_running[-1] / T),
        N_over_t=float(n_norm[-1] / T),
    )


def _resolve_threads(threads: int | None) -> int:
    if threads is None:
        env = os.environ.get("SWITCHSTAB_THREADS")
        if env:
            threads = int(env)
        else:
            threads = min(os.cpu_count() or 1, 4)
    return max(1, int(threads))


def _run_indexed(worker, num_paths: int, threads: int):
    if threads == 1:
        return [worker(k) for k in range(num_paths)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(worker, range(num_paths)))


def recurrence_stats(cfg: SimConfig, radius: float, num_paths: int,
                     law: ControlLaw | None = None,
                     threads: int | None = None) -> ReturnTimeStats:
    """First-entrance times of |(X, phi)| into the ball of given radius.

    Paths start outside the ball (|x0| > radius required) and stop at the
    first grid point inside it; paths that never enter are censored at T.
    """
    if np.linalg.norm(cfg.x0) <= radius:
        raise ValueError(f"|x0|={np.linalg.norm(cfg.x0):g} must exceed radius={radius:g}")
    if law is None:
        law = _synthesize_law(cfg)
    threads = _resolve_threads(threads)

    def worker(k: int):
        sub = replace(cfg, seed=path_seed(cfg.seed, k))
        traj = simulate_closed_loop(sub, law, _stop_radius=radius)
        if traj.Ynorm[-1] <= radius:
            return float(traj.grid[-1])
        return None

    results = _run_indexed(worker, num_paths, threads)
    times = np.asarray([t for t in results if t is not None])
    censored = num_paths - times.size
    if times.size == 0:
        raise AllCensored(
            f"no path of {num_paths} entered radius {radius:g} within T={cfg.T:g}")
    stderr = float(times.std(ddof=1) / math.sqrt(times.size)) if times.size > 1 else math.inf
    return ReturnTimeStats(times=_frozen(np.sort(times)), censored=censored,
                           num_paths=num_paths, mean=float(times.mean()),
                           stderr=stderr, radius=radius, horizon=cfg.T)


def run_ensemble(cfg: SimConfig, num_paths: int, checkpoints,
                 law: ControlLaw | None = None,
                 return_radius: float | None = None,
                 threads: int | None = None) -> EnsembleReport:
    """Simulate ``num_paths`` independent paths and aggregate diagnostics.

    Per-path seeds come from :func:`path_seed`, so the report is identical
    for any worker count. Checkpoint statistics are read at the first grid
    point at or after each requested time. Path failures are collected and
    re-raised together with their indices and seeds.
    """
    if num_paths < 2:
        raise ValueError("need num_paths >= 2")
    checkpoints = np.sort(np.asarray(checkpoints, dtype=float))
    if checkpoints.size == 0 or checkpoints[0] <= 0.0 or checkpoints[-1] > cfg.T:
        raise ValueError("checkpoints must lie in (0, T]")
    if law is None:
        law = _synthesize_law(cfg)
    threads = _resolve_threads(threads)
    m = cfg.modes.m
    n_checks = checkpoints.size

    if cfg.alpha0 == SAMPLE_ALPHA0:
        p0 = cfg.phi0.phi
    else:
        p0 = np.zeros(m)
        p0[int(cfg.alpha0)] = 1.0

    def worker(k: int):
        seed = path_seed(cfg.seed, k)
        sub = replace(cfg, seed=seed)
        try:
            traj = simulate_closed_loop(sub, law)
        except SwitchstabError as exc:
            return ("error", k, seed, exc)
        terminal, tail_sup = lyapunov_exponent(traj)
        diag = martingale_diagnostics(traj)
        idx = np.searchsorted(traj.grid, checkpoints - 1e-12)
        t_at = traj.grid[idx]
        n_at = np.sqrt(np.sum(traj.N[idx] * traj.N[idx], axis=1))
        phi_at = traj.phi[idx]
        ret = None
        if return_radius is not None:
            inside = np.nonzero(traj.Ynorm <= return_radius)[0]
            ret = float(traj.grid[inside[0]]) if inside.size else None
        return ("ok", k, seed, terminal, tail_sup, diag, t_at, n_at, phi_at, ret)

    results = _run_indexed(worker, num_paths, threads)
    failures = [(r[1], r[2], r[3]) for r in results if r[0] == "error"]
    if failures:
        raise EnsemblePathError(failures)

    seeds = np.asarray([r[2] for r in results], dtype=np.uint64)
    terminal = np.asarray([r[3] for r in results])
    tail_sup = np.asarray([r[4] for r in results])
    n_over_t = np.asarray([r[5].N_over_t for r in results])
    slack = max(r[5].max_bound_slack for r in results)
    t_at = results[0][6]
    n_sq_over_t = np.stack([r[7] ** 2 / r[6] for r in results])
    phi_at = np.stack([r[8] for r in results])

    phi_mean = phi_at.mean(axis=0)
    phi_se = phi_at.std(axis=0, ddof=1) / math.sqrt(num_paths)
    phi_target = np.stack([transition_matrix(cfg.gen, t).T @ p0 for t in t_at])
    mean_phi_error = np.max(np.abs(phi_mean - phi_target), axis=1)

    ret_times = np.asarray(sorted(r[9] for r in results if r[9] is not None)) \
        if return_radius is not None else np.empty(0)
    ret_censored = (num_paths - ret_times.size) if return_radius is not None else 0

    return EnsembleReport(
        num_paths=num_paths, checkpoints=_frozen(t_at), path_seeds=seeds,
        terminal_exponents=_frozen(terminal), tail_sup_exponents=_frozen(tail_sup),
        N_over_t=_frozen(n_over_t), N_sq_over_t=_frozen(n_sq_over_t),
        second_moment_N=_frozen(n_sq_over_t.mean(axis=0)),
        phi_checkpoint=_frozen(phi_at), phi_mean=_frozen(phi_mean),
        phi_se=_frozen(phi_se), phi_target=_frozen(phi_target),
        mean_phi_error=_frozen(mean_phi_error), max_bound_slack=float(slack),
        return_times=_frozen(ret_times), return_censored=ret_censored,
        return_radius=return_radius, config=cfg,
    )


def trajectory_to_frame(traj: Trajectory):
    """Time-series export: t, alpha, x_*, phi_*, u_*, N_norm, qv, Ynorm."""
    import pandas as pd

    data = {"t": traj.grid, "alpha": traj.alpha}
    for j in range(traj.X.shape[1]):
        data[f"x_{j + 1}"] = traj.X[:, j]
    for j in range(traj.phi.shape[1]):
        data[f"phi_{j + 1}"] = traj.phi[:, j]
    for j in range(traj.U.shape[1]):
        data[f"u_{j + 1}"] = traj.U[:, j]
    data["N_norm"] = traj.N_norm
    data["qv"] = traj.qv_running
    data["Ynorm"] = traj.Ynorm
    return pd.DataFrame(data)


def config_to_dict(cfg: SimConfig) -> dict:
    """JSON-ready echo of a simulation config."""
    return {
        "generator": cfg.gen.rates.tolist(),
        "modes": [{"A": cfg.modes.A[i].tolist(), "B": cfg.modes.B[i].tolist()}
                  for i in range(cfg.modes.m)],
        "cost": {"Q": cfg.cost.Q.tolist(), "R": cfg.cost.R.tolist()},
        "x0": cfg.x0.tolist(),
        "phi0": cfg.phi0.phi.tolist(),
        "alpha0": cfg.alpha0,
        "T": cfg.T,
        "dt": cfg.dt,
        "seed": cfg.seed,
        "explosion_radius": cfg.explosion_radius,
    }


def report_to_dict(report: EnsembleReport) -> dict:
    """JSON-ready ensemble report with summary fields and config echo."""
    q = np.quantile(report.terminal_exponents, [0.05, 0.25, 0.5, 0.75, 0.95])
    out = {
        "num_paths": report.num_paths,
        "checkpoints": report.checkpoints.tolist(),
        "path_seeds": [int(s) for s in report.path_seeds],
        "terminal_exponents": report.terminal_exponents.tolist(),
        "tail_sup_exponents": report.tail_sup_exponents.tolist(),
        "terminal_exponent_quantiles": {
            "q05": q[0], "q25": q[1], "median": q[2], "q75": q[3], "q95": q[4]},
        "N_over_t": report.N_over_t.tolist(),
        "N_sq_over_t": report.N_sq_over_t.tolist(),
        "second_moment_N": report.second_moment_N.tolist(),
        "phi_mean": report.phi_mean.tolist(),
        "phi_se": report.phi_se.tolist(),
        "phi_target": report.phi_target.tolist(),
        "mean_phi_error": report.mean_phi_error.tolist(),
        "max_bound_slack": report.max_bound_slack,
        "return_radius": report.return_radius,
        "return_times": report.return_times.tolist(),
        "return_censored": report.return_censored,
        "config": config_to_dict(report.config),
    }
    return out
