"""Shared fixtures: the reference desk instance used across the suite.

Desk instance: two modes (one open-loop unstable with an eigenvalue at
+0.5, one Hurwitz), shared input column (0, 1)', Q = I, R = 1, and the
symmetric rate-1 switching generator. The pairwise condition is satisfied,
so the stabilization experiments are run on certified ground.
"""

from types import SimpleNamespace

import numpy as np
import pytest

from switchstab import (CostSpec, FilterState, ModeSet, SimConfig,
                        check_pairwise_condition, make_control_law,
                        solve_coupled_riccati, validate_generator)

DESK_A1 = np.array([[0.5, 1.0], [0.0, -1.0]])
DESK_A2 = np.array([[-1.0, 0.5], [0.0, -2.0]])
DESK_B = np.array([[0.0], [1.0]])
DESK_PI = np.array([[-1.0, 1.0], [1.0, -1.0]])
DESK_SEED = 20240809


@pytest.fixture(scope="session")
def desk():
    gen = validate_generator(DESK_PI)
    modes = ModeSet.from_matrices([DESK_A1, DESK_A2], [DESK_B, DESK_B])
    cost = CostSpec(Q=np.eye(2), R=np.array([[1.0]]))
    return SimpleNamespace(gen=gen, modes=modes, cost=cost)


@pytest.fixture(scope="session")
def desk_solution(desk):
    sol = solve_coupled_riccati(desk.modes, desk.cost, desk.gen)
    report = check_pairwise_condition(sol, desk.modes, desk.cost)
    assert report.satisfied, "desk instance must pass the pairwise condition"
    return sol, report


@pytest.fixture(scope="session")
def desk_law(desk, desk_solution):
    sol, _ = desk_solution
    return make_control_law(sol, desk.modes, desk.cost)


def desk_config(desk, **overrides) -> SimConfig:
    defaults = dict(modes=desk.modes, cost=desk.cost, gen=desk.gen,
                    x0=np.array([1.0, -0.5]),
                    phi0=FilterState(phi=np.array([0.5, 0.5])),
                    T=2.0, dt=1e-3, seed=DESK_SEED)
    defaults.update(overrides)
    return SimConfig(**defaults)


DESK_MODEL_JSON = {
    "schema_version": "1",
    "generator": DESK_PI.tolist(),
    "modes": [
        {"A": DESK_A1.tolist(), "B": DESK_B.tolist()},
        {"A": DESK_A2.tolist(), "B": DESK_B.tolist()},
    ],
    "cost": {"Q": np.eye(2).tolist(), "R": [[1.0]]},
    "simulation": {
        "T": 2.0,
        "dt": 1e-3,
        "seed": DESK_SEED,
        "x0": [1.0, -0.5],
        "phi0": [0.5, 0.5],
        "alpha0": "sample-from-phi0",
        "return_radius": 2.0,
    },
}
