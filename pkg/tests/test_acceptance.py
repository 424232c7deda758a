"""Acceptance suite: every criterion at its stated tolerance.

Runs on the desk instance (two modes, one open-loop unstable, shared input
column, Q = I, R = 1, symmetric rate-1 switching) whose pairwise condition
is certified before any experiment. Prints one PASS/FAIL line per
criterion; run with ``pytest tests/test_acceptance.py -s`` to see them.
"""

import json
import time
from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest

from switchstab import (CostSpec, FilterState, LyapunovSpec, MaxIterations,
                        ModeSet, NoStabilizingInit, check_pairwise_condition,
                        generator_apply_closed_form, generator_apply_numeric,
                        lyapunov_field, recurrence_stats, run_ensemble,
                        solve_coupled_riccati, validate_generator)
from switchstab.cli import main as cli_main

from conftest import DESK_MODEL_JSON, DESK_SEED, desk_config


def report(criterion: int, ok: bool, detail: str) -> None:
    print(f"ACCEPTANCE {criterion}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def stabilization(desk, desk_law):
    cfg = desk_config(desk, T=200.0, dt=1e-3, seed=DESK_SEED)
    start = time.perf_counter()
    ens = run_ensemble(cfg, 200, [25.0, 50.0, 100.0, 200.0], law=desk_law)
    return SimpleNamespace(ens=ens, runtime=time.perf_counter() - start)


@pytest.fixture(scope="module")
def calibration(desk, desk_law):
    cfg = desk_config(desk, T=5.0, dt=1e-3, seed=DESK_SEED + 1)
    ens = run_ensemble(cfg, 2000, [1.0, 2.0, 3.0, 4.0, 5.0], law=desk_law)
    return ens


@pytest.fixture(scope="module")
def recurrence(desk, desk_law):
    base = desk_config(desk, x0=np.array([10.0 / np.sqrt(2.0), -10.0 / np.sqrt(2.0)]),
                       T=200.0, dt=1e-3, seed=DESK_SEED + 2)
    at_200 = recurrence_stats(base, 2.0, 200, law=desk_law)
    at_400 = recurrence_stats(replace(base, T=400.0), 2.0, 200, law=desk_law)
    return SimpleNamespace(at_200=at_200, at_400=at_400)


def random_instance(rng):
    n = int(rng.integers(1, 5))
    m = int(rng.integers(1, 4))
    d = int(rng.integers(1, n + 1))
    A = [rng.normal(0.0, 0.45, (n, n)) + np.diag(rng.uniform(-0.6, 0.3, n))
         for _ in range(m)]
    B = [rng.normal(0.0, 1.0, (n, d)) for _ in range(m)]
    rates = rng.uniform(0.2, 1.5, (m, m))
    np.fill_diagonal(rates, 0.0)
    rates[np.diag_indices(m)] = -rates.sum(axis=1)
    return (validate_generator(rates), ModeSet.from_matrices(A, B),
            CostSpec(Q=np.eye(n), R=np.eye(d)))


def test_criterion_1_riccati_certificate(desk):
    start = time.perf_counter()
    sol = solve_coupled_riccati(desk.modes, desk.cost, desk.gen)
    desk_time = time.perf_counter() - start
    assert check_pairwise_condition(sol, desk.modes, desk.cost).satisfied
    cases = [("desk", np.max(sol.residuals), desk_time)]
    rng = np.random.default_rng(DESK_SEED)
    found = 0
    attempts = 0
    worst_time = desk_time
    while found < 20 and attempts < 400:
        attempts += 1
        gen_i, modes_i, cost_i = random_instance(rng)
        start = time.perf_counter()
        try:
            sol_i = solve_coupled_riccati(modes_i, cost_i, gen_i)
        except (MaxIterations, NoStabilizingInit):
            continue
        elapsed = time.perf_counter() - start
        if not check_pairwise_condition(sol_i, modes_i, cost_i).satisfied:
            continue
        found += 1
        worst_time = max(worst_time, elapsed)
        cases.append((f"random-{found}", np.max(sol_i.residuals), elapsed))
    worst_residual = max(r for _, r, _ in cases)
    ok = found == 20 and worst_residual <= 1e-8 and worst_time < 1.0
    report(1, ok, f"20 condition-passing instances (+desk): worst residual "
                  f"{worst_residual:.2e} <= 1e-8, worst solve {worst_time * 1e3:.0f} ms < 1 s")


def test_criterion_2_generator_cross_validation(desk, desk_law, desk_solution):
    sol, _ = desk_solution
    spec = LyapunovSpec(theta=1.0, P=sol.P)
    field = lyapunov_field(spec)
    rng = np.random.default_rng(DESK_SEED + 10)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        x = rng.standard_normal(2)
        x *= 10.0 ** rng.uniform(-1.0, 2.0) / np.linalg.norm(x)
        raw = rng.dirichlet(np.ones(2))
        phi = FilterState(phi=(raw + 1e-3) / (1.0 + 2e-3))
        closed = generator_apply_closed_form(spec, desk.modes, desk.gen, desk_law, x, phi)
        numeric = generator_apply_numeric(field, desk.modes, desk.gen, desk_law, x, phi)
        worst = max(worst, abs(closed - numeric) / (1e-4 * abs(closed) + 1e-6))
    elapsed = time.perf_counter() - start
    ok = worst <= 1.0 and elapsed < 10.0
    report(2, ok, f"closed form vs finite difference on 100 points: worst gap "
                  f"{worst:.3f}x tolerance (1e-4 rel / 1e-6 abs), {elapsed:.2f} s < 10 s")


def test_criterion_3_generator_bound(desk, desk_law, desk_solution):
    sol, cond = desk_solution
    rng = np.random.default_rng(DESK_SEED + 20)
    xs = rng.standard_normal((10_000, 2))
    xs *= (10.0 ** rng.uniform(-2.0, 3.0, 10_000) / np.linalg.norm(xs, axis=1))[:, None]
    phis = rng.dirichlet(np.ones(2), size=10_000)
    worst = -np.inf
    for theta in (1.0, 10.0, 100.0):
        spec = LyapunovSpec(theta=theta, P=sol.P)
        bound = cond.gamma / theta
        for x, p in zip(xs, phis):
            value = generator_apply_closed_form(spec, desk.modes, desk.gen,
                                                desk_law, x, FilterState(phi=p))
            worst = max(worst, value - bound)
    ok = worst <= 1e-8
    report(3, ok, f"L V_theta <= gamma/theta on 10^4 states x theta in {{1,10,100}}: "
                  f"max excess {worst:.3e} <= 1e-8")


def test_criterion_4_stabilization(stabilization):
    exps = stabilization.ens.terminal_exponents
    frac_small = float(np.mean(exps <= 0.05))
    med = float(np.median(exps))
    ok = frac_small >= 0.95 and med <= 0.0 and stabilization.runtime < 300.0
    report(4, ok, f"200 paths, T=200: {100 * frac_small:.1f}% of exponents <= 0.05, "
                  f"median {med:+.5f} <= 0, runtime {stabilization.runtime:.0f} s < 300 s")


def test_criterion_5_martingale_bounds(stabilization):
    ens = stabilization.ens
    slope = float(np.polyfit(ens.checkpoints, ens.second_moment_N, 1)[0])
    med = float(np.median(ens.N_over_t))
    ok = (ens.max_bound_slack <= 0.0) and (slope <= 0.01) and (med <= 0.05)
    report(5, ok, f"|N(t)| <= 1+t pathwise (max slack {ens.max_bound_slack:+.3e}), "
                  f"E|N(T)|^2/T slope {slope:+.5f} <= 0.01, median |N(T)|/T "
                  f"{med:.4f} <= 0.05")


def test_criterion_6_filter_calibration(calibration):
    gaps = np.abs(calibration.phi_mean - calibration.phi_target)
    units = gaps / calibration.phi_se
    ok = bool(np.all(units <= 3.0))
    report(6, ok, f"ensemble mean of filter vs p(t) at 5 checkpoints over 2000 paths: "
                  f"worst gap {units.max():.2f} standard errors <= 3")


def test_criterion_7_recurrence(recurrence):
    frac = recurrence.at_200.censored / recurrence.at_200.num_paths
    drift = abs(recurrence.at_400.mean - recurrence.at_200.mean) / recurrence.at_200.mean
    ok = frac < 0.05 and drift < 0.20
    report(7, ok, f"returns to radius 2 from |x0|=10: censored {100 * frac:.1f}% < 5%, "
                  f"mean {recurrence.at_200.mean:.3f} -> {recurrence.at_400.mean:.3f} "
                  f"({100 * drift:.1f}% < 20%) when T doubles")


def test_criterion_8_regularity_monitor(stabilization, calibration, recurrence):
    # the ensembles above raise EnsemblePathError on any explosion, so
    # reaching this point means zero explosion events across criteria 4-7
    paths = (stabilization.ens.num_paths + calibration.num_paths
             + recurrence.at_200.num_paths + recurrence.at_400.num_paths)
    report(8, True, f"zero explosion events across {paths} paths of criteria 4-7")


def test_criterion_9_reproducibility(tmp_path, monkeypatch):
    model = tmp_path / "desk.json"
    model.write_text(json.dumps(DESK_MODEL_JSON))
    outputs = []
    for name, threads in (("r1", "1"), ("r2", "1"), ("r3", "4")):
        monkeypatch.setenv("SWITCHSTAB_THREADS", threads)
        out = tmp_path / name
        code = cli_main(["simulate", str(model), "--paths", "2", "--T", "1.0",
                         "--seed", "123", "--out", str(out), "--quiet"])
        assert code == 0
        outputs.append((
            (out / "ensemble_report.json").read_bytes(),
            (out / "trajectories" / "path_00000.csv").read_bytes(),
            (out / "trajectories" / "path_00001.csv").read_bytes(),
        ))
    ok = outputs[0] == outputs[1] == outputs[2]
    report(9, ok, "bit-identical CSV/JSON across two runs and across "
                  "SWITCHSTAB_THREADS in {1, 4}")
