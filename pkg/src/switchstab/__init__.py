"""Adaptive stabilization of regime-switching LQ systems with a hidden
Markov chain: Wonham filtering, coupled Riccati synthesis,
certainty-equivalent feedback, and almost-sure stability diagnostics.
"""

from .control import (ControlLaw, LyapunovSpec, feedback_control,
                      generator_apply_closed_form, generator_apply_numeric,
                      lyapunov_field, lyapunov_value, make_control_law)
from .errors import (AllCensored, DimensionMismatch, EnsemblePathError, Explosion,
                     MaxIterations, NegativeRate, NoStabilizingInit, NonFiniteUpdate,
                     NotHurwitz, NotIrreducible, ParseError, RowSumViolation,
                     SwitchstabError)
from .filtering import (DriftStack, FilterState, build_C, build_D, filter_step,
                        project_simplex)
from .markov import (ChainPath, GeneratorMatrix, MixingEstimate,
                     StationaryDistribution, estimate_mixing, sample_path,
                     stationary_distribution, transition_matrix, validate_generator)
from .modelfile import ModelFile, load_model, model_issues
from .riccati import (ConditionReport, CostSpec, ModeSet, RiccatiSolution,
                      check_pairwise_condition, coupled_residuals, solve_coupled_riccati,
                      solve_lyapunov, verify_candidate)
from .simulate import (EnsembleReport, MartingaleDiagnostics, ReturnTimeStats,
                       SimConfig, Trajectory, lyapunov_exponent,
                       martingale_diagnostics, path_seed, recurrence_stats,
                       run_ensemble, simulate_closed_loop, trajectory_to_frame)

__version__ = "0.1.0"

__all__ = [
    "AllCensored", "ChainPath", "ConditionReport", "ControlLaw", "CostSpec",
    "DimensionMismatch", "DriftStack", "EnsemblePathError", "EnsembleReport",
    "Explosion", "FilterState", "GeneratorMatrix", "LyapunovSpec",
    "MartingaleDiagnostics", "MaxIterations", "MixingEstimate", "ModeSet",
    "ModelFile", "NegativeRate", "NoStabilizingInit", "NonFiniteUpdate",
    "NotHurwitz", "NotIrreducible", "ParseError", "ReturnTimeStats",
    "RiccatiSolution", "RowSumViolation", "SimConfig", "StationaryDistribution",
    "SwitchstabError", "Trajectory", "build_C", "build_D",
    "check_pairwise_condition", "coupled_residuals", "estimate_mixing",
    "feedback_control", "filter_step", "generator_apply_closed_form",
    "generator_apply_numeric", "load_model", "lyapunov_exponent", "lyapunov_field",
    "lyapunov_value", "make_control_law", "martingale_diagnostics", "model_issues",
    "path_seed", "project_simplex", "recurrence_stats", "run_ensemble",
    "sample_path", "simulate_closed_loop", "solve_coupled_riccati",
    "solve_lyapunov", "stationary_distribution", "trajectory_to_frame",
    "transition_matrix", "validate_generator", "verify_candidate",
]
