"""Command-line interface: validate model files, synthesize gains, run
closed-loop ensembles, and emit the diagnostic reports.

Exit codes (exhaustive):
  0   success (for ``solve``/``simulate``: converged and condition satisfied)
  1   invalid input, solver non-convergence, or simulation failure
  2   Riccati solve converged but the pairwise condition failed
  64  usage error (bad flags or inconsistent overrides)
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import control, simulate
from .errors import (EnsemblePathError, Explosion, MaxIterations,
                     NoStabilizingInit, NonFiniteUpdate, NotIrreducible,
                     SwitchstabError)
from .filtering import FilterState
from .markov import estimate_mixing
from .modelfile import load_model, model_issues
from .riccati import check_pairwise_condition, solution_to_dict, solve_coupled_riccati

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONDITION_FAILED = 2
EXIT_USAGE = 64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="switchstab", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p_validate = sub.add_parser("validate", help="check a model file against all invariants")
    p_validate.add_argument("model")

    p_solve = sub.add_parser("solve", help="solve the coupled Riccati system and "
                                           "check the pairwise condition")
    p_solve.add_argument("model")
    p_solve.add_argument("--tol", type=float, default=1e-10)
    p_solve.add_argument("--max-iter", type=int, default=200)
    p_solve.add_argument("--out", default=".")

    p_sim = sub.add_parser("simulate", help="run a closed-loop ensemble")
    p_sim.add_argument("model")
    p_sim.add_argument("--T", type=float, default=None)
    p_sim.add_argument("--dt", type=float, default=None)
    p_sim.add_argument("--seed", type=int, default=None)
    p_sim.add_argument("--paths", type=int, default=100)
    p_sim.add_argument("--out", default=".")
    p_sim.add_argument("--max-csv-paths", type=int, default=10,
                       help="write per-path trajectory CSVs for at most this many paths")
    p_sim.add_argument("--return-radius", type=float, default=None,
                       help="ball radius for first-entrance statistics "
                            "(default: model file value, if any)")

    p_diag = sub.add_parser("diagnose", help="mixing estimate, filter calibration, "
                                             "and generator cross-check")
    p_diag.add_argument("model")
    p_diag.add_argument("--out", default=".")
    p_diag.add_argument("--seed", type=int, default=None)
    p_diag.add_argument("--paths", type=int, default=400,
                        help="ensemble size for the calibration check")

    for p in (p_validate, p_solve, p_sim, p_diag):
        p.add_argument("--quiet", action="store_true")
    return parser


def _say(args, *message):
    if not args.quiet:
        print(*message)


def _write_json(payload: dict, path: str) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_validate(args) -> int:
    issues = model_issues(args.model)
    if issues:
        for issue in issues:
            print(f"INVALID  {issue}")
        return EXIT_ERROR
    _say(args, f"OK  {args.model} is a valid model file")
    return EXIT_OK


def _solve_model(model, tol: float, max_iter: int):
    sol = solve_coupled_riccati(model.modes, model.cost, model.gen,
                                tol=tol, max_outer=max_iter)
    report = check_pairwise_condition(sol, model.modes, model.cost)
    return sol, report


def cmd_solve(args) -> int:
    try:
        model = load_model(args.model)
    except SwitchstabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    try:
        sol, report = _solve_model(model, args.tol, args.max_iter)
    except (MaxIterations, NoStabilizingInit) as exc:
        print(f"error: {exc}", file=sys.stderr)
        if isinstance(exc, MaxIterations):
            print(f"achieved residual: {exc.residual:.3e}", file=sys.stderr)
        return EXIT_ERROR
    law = control.make_control_law(sol, model.modes, model.cost)
    _write_json(solution_to_dict(sol), os.path.join(args.out, "riccati_solution.json"))
    _write_json({
        "pairwise_min_eig": report.pairwise_min_eig.tolist(),
        "satisfied": report.satisfied,
        "gamma": report.gamma,
    }, os.path.join(args.out, "condition_report.json"))
    _write_json(control.gains_to_dict(law), os.path.join(args.out, "control_gains.json"))
    _say(args, f"residuals: {[f'{r:.2e}' for r in sol.residuals]}"
               f" in {sol.iterations} sweeps; gamma = {report.gamma:.6g}")
    if not report.satisfied:
        _say(args, "pairwise condition FAILED; min-eigenvalue table:")
        _say(args, np.array2string(report.pairwise_min_eig, precision=4))
        return EXIT_CONDITION_FAILED
    _say(args, "pairwise condition satisfied")
    return EXIT_OK


def cmd_simulate(args) -> int:
    try:
        model = load_model(args.model)
    except SwitchstabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    cfg = model.sim
    overrides = {}
    if args.T is not None:
        overrides["T"] = args.T
    if args.dt is not None:
        overrides["dt"] = args.dt
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        try:
            cfg = replace(cfg, **overrides)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    if args.paths < 1:
        raise UsageError("--paths must be at least 1")
    return_radius = args.return_radius if args.return_radius is not None \
        else model.return_radius

    try:
        sol, report = _solve_model(model, 1e-10, 200)
    except (MaxIterations, NoStabilizingInit) as exc:
        print(f"error: gain synthesis failed: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if not report.satisfied:
        print("error: pairwise condition failed; not simulating", file=sys.stderr)
        return EXIT_CONDITION_FAILED
    law = control.make_control_law(sol, model.modes, model.cost)

    if args.paths == 1:
        return _simulate_single_path(args, cfg, law)

    checkpoints = np.asarray([cfg.T / 8, cfg.T / 4, cfg.T / 2, cfg.T])
    try:
        ens = simulate.run_ensemble(cfg, args.paths, checkpoints, law=law,
                                    return_radius=return_radius)
    except EnsemblePathError as exc:
        detail = [{"path": i, "seed": s, "error": str(e)} for i, s, e in exc.failures]
        _write_json({"failures": detail}, os.path.join(args.out, "path_failures.json"))
        print(f"error: {len(exc.failures)} path(s) failed; "
              f"details in path_failures.json", file=sys.stderr)
        return EXIT_ERROR

    _write_csv_paths(args, cfg, law, args.paths)
    _write_json(simulate.report_to_dict(ens), os.path.join(args.out, "ensemble_report.json"))

    q = np.quantile(ens.terminal_exponents, [0.05, 0.5, 0.95])
    _say(args, f"paths: {ens.num_paths}  T={cfg.T}  dt={cfg.dt}  seed={cfg.seed}")
    _say(args, f"terminal exponent quantiles: 5% {q[0]:+.4f}  median {q[1]:+.4f}  "
               f"95% {q[2]:+.4f}")
    _say(args, f"martingale: max bound slack {ens.max_bound_slack:+.3e}, "
               f"median |N(T)|/T {np.median(ens.N_over_t):.3e}")
    if return_radius is not None:
        frac = ens.return_censored / ens.num_paths
        _say(args, f"returns to radius {return_radius:g}: censored fraction {frac:.3f}")
    return EXIT_OK


def _write_csv_paths(args, cfg, law, num_paths: int) -> None:
    traj_dir = os.path.join(args.out, "trajectories")
    for k in range(min(num_paths, max(args.max_csv_paths, 0))):
        sub = replace(cfg, seed=simulate.path_seed(cfg.seed, k))
        traj = simulate.simulate_closed_loop(sub, law)
        frame = simulate.trajectory_to_frame(traj)
        os.makedirs(traj_dir, exist_ok=True)
        frame.to_csv(os.path.join(traj_dir, f"path_{k:05d}.csv"), index=False)


def _simulate_single_path(args, cfg, law) -> int:
    sub = replace(cfg, seed=simulate.path_seed(cfg.seed, 0))
    try:
        traj = simulate.simulate_closed_loop(sub, law)
    except (Explosion, NonFiniteUpdate) as exc:
        _write_json({"failures": [{"path": 0, "seed": sub.seed, "error": str(exc)}]},
                    os.path.join(args.out, "path_failures.json"))
        print(f"error: path failed: {exc}", file=sys.stderr)
        return EXIT_ERROR
    _write_csv_paths(args, cfg, law, 1)
    terminal, tail_sup = simulate.lyapunov_exponent(traj)
    diag = simulate.martingale_diagnostics(traj)
    _write_json({
        "num_paths": 1,
        "path_seeds": [sub.seed],
        "terminal_exponents": [terminal],
        "tail_sup_exponents": [tail_sup],
        "N_over_t": [diag.N_over_t],
        "max_bound_slack": diag.max_bound_slack,
        "qv_slope": diag.qv_slope,
        "config": simulate.config_to_dict(cfg),
    }, os.path.join(args.out, "ensemble_report.json"))
    _say(args, f"single path: terminal exponent {terminal:+.4f}, "
               f"|N(T)|/T {diag.N_over_t:.3e}")
    return EXIT_OK


def _interior_phi(rng: np.random.Generator, m: int) -> FilterState:
    raw = rng.dirichlet(np.ones(m))
    eps = 1e-3
    return FilterState(phi=(raw + eps) / (1.0 + m * eps))


def cmd_diagnose(args) -> int:
    try:
        model = load_model(args.model)
    except SwitchstabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    seed = args.seed if args.seed is not None else model.sim.seed
    report: dict = {}

    try:
        mix = estimate_mixing(model.gen)
        report["mixing"] = {"available": True, "lam": mix.lam, "K": mix.K}
        _say(args, f"mixing: lam = {mix.lam:.6g}, K = {mix.K:.6g}")
    except NotIrreducible as exc:
        report["mixing"] = {"available": False, "reason": str(exc)}
        print(f"warning: mixing unavailable: {exc}", file=sys.stderr)

    sol = None
    try:
        sol, cond = _solve_model(model, 1e-10, 200)
    except (MaxIterations, NoStabilizingInit) as exc:
        report["synthesis"] = {"available": False, "reason": str(exc)}
        print(f"warning: gain synthesis failed: {exc}", file=sys.stderr)

    if sol is not None:
        law = control.make_control_law(sol, model.modes, model.cost)
        report["synthesis"] = {"available": True, "gamma": cond.gamma,
                               "condition_satisfied": cond.satisfied}

        cal_T = min(model.sim.T, 10.0)
        cal_cfg = replace(model.sim, T=cal_T, seed=seed)
        checkpoints = np.linspace(cal_T / 5, cal_T, 5)
        ens = simulate.run_ensemble(cal_cfg, args.paths, checkpoints, law=law)
        within = np.abs(ens.phi_mean - ens.phi_target) <= 3.0 * ens.phi_se
        report["calibration"] = {
            "paths": args.paths,
            "checkpoints": ens.checkpoints.tolist(),
            "phi_mean": ens.phi_mean.tolist(),
            "phi_target": ens.phi_target.tolist(),
            "phi_se": ens.phi_se.tolist(),
            "within_3se": bool(within.all()),
        }
        _say(args, f"calibration over {args.paths} paths: "
                   f"{'within' if within.all() else 'OUTSIDE'} 3 standard errors")

        rng = np.random.default_rng(seed)
        spec = control.LyapunovSpec(theta=1.0, P=sol.P)
        field = control.lyapunov_field(spec)
        rows = []
        worst = 0.0
        for _ in range(100):
            x = rng.standard_normal(model.modes.n)
            x *= 10.0 ** rng.uniform(-1.0, 2.0) / max(np.linalg.norm(x), 1e-12)
            phi = _interior_phi(rng, model.modes.m)
            closed = control.generator_apply_closed_form(spec, model.modes, model.gen,
                                                         law, x, phi)
            numeric = control.generator_apply_numeric(field, model.modes, model.gen,
                                                      law, x, phi)
            gap = abs(closed - numeric)
            scaled = gap / (1e-4 * abs(closed) + 1e-6)
            worst = max(worst, scaled)
            rows.append({"closed_form": closed, "numeric": numeric, "abs_gap": gap})
        report["generator_check"] = {
            "points": rows,
            "max_scaled_gap": worst,
            "within_tolerance": worst <= 1.0,
        }
        _say(args, f"generator cross-check: max scaled gap {worst:.3f} "
                   f"({'OK' if worst <= 1.0 else 'EXCEEDS tolerance'})")

    _write_json(report, os.path.join(args.out, "diagnose_report.json"))
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        handler = {
            "validate": cmd_validate,
            "solve": cmd_solve,
            "simulate": cmd_simulate,
            "diagnose": cmd_diagnose,
        }[args.command]
        return handler(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
