"""Self-describing model files: one JSON bundle holds the generator, the
per-mode system matrices, the cost weights, and simulation defaults.

Structural problems raise :class:`ParseError` carrying the field path
(e.g. ``modes[1].B``); domain invariant violations raise the domain
errors (``NegativeRate``, ``RowSumViolation``, ...).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ParseError, SwitchstabError
from .filtering import FilterState
from .markov import GeneratorMatrix, validate_generator
from .riccati import CostSpec, ModeSet
from .simulate import SAMPLE_ALPHA0, SimConfig

SCHEMA_VERSION = "1"


@dataclass(frozen=True)
class ModelFile:
    schema_version: str
    gen: GeneratorMatrix
    modes: ModeSet
    cost: CostSpec
    sim: SimConfig
    return_radius: float | None


def _require(obj: dict, key: str, path: str):
    if not isinstance(obj, dict):
        raise ParseError(path or "<root>", f"expected an object, got {type(obj).__name__}")
    if key not in obj:
        raise ParseError(f"{path}.{key}" if path else key, "missing required field")
    return obj[key]


def _number(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParseError(path, f"expected a number, got {type(value).__name__}")
    return float(value)


def _integer(value, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ParseError(path, f"expected an integer, got {type(value).__name__}")
    return value


def _vector(value, path: str) -> np.ndarray:
    if not isinstance(value, list) or not value:
        raise ParseError(path, "expected a nonempty array of numbers")
    return np.asarray([_number(v, f"{path}[{i}]") for i, v in enumerate(value)])


def _matrix(value, path: str) -> np.ndarray:
    if not isinstance(value, list) or not value:
        raise ParseError(path, "expected a nonempty array of rows")
    rows = [_vector(r, f"{path}[{i}]") for i, r in enumerate(value)]
    width = rows[0].size
    for i, r in enumerate(rows):
        if r.size != width:
            raise ParseError(f"{path}[{i}]", f"row length {r.size} != {width} of row 0")
    return np.stack(rows)


def _parse_generator(data: dict) -> GeneratorMatrix:
    return validate_generator(_matrix(_require(data, "generator", ""), "generator"))


def _parse_modes(data: dict) -> ModeSet:
    raw = _require(data, "modes", "")
    if not isinstance(raw, list) or not raw:
        raise ParseError("modes", "expected a nonempty array of mode objects")
    A_list, B_list = [], []
    for i, entry in enumerate(raw):
        A_list.append(_matrix(_require(entry, "A", f"modes[{i}]"), f"modes[{i}].A"))
        B_list.append(_matrix(_require(entry, "B", f"modes[{i}]"), f"modes[{i}].B"))
    return ModeSet.from_matrices(A_list, B_list)


def _parse_cost(data: dict) -> CostSpec:
    raw = _require(data, "cost", "")
    return CostSpec(Q=_matrix(_require(raw, "Q", "cost"), "cost.Q"),
                    R=_matrix(_require(raw, "R", "cost"), "cost.R"))


def _parse_simulation(data: dict, gen: GeneratorMatrix, modes: ModeSet,
                      cost: CostSpec) -> tuple[SimConfig, float | None]:
    raw = _require(data, "simulation", "")
    path = "simulation"
    T = _number(_require(raw, "T", path), f"{path}.T")
    dt = _number(_require(raw, "dt", path), f"{path}.dt")
    seed = _integer(_require(raw, "seed", path), f"{path}.seed")
    x0 = _vector(_require(raw, "x0", path), f"{path}.x0")
    phi0 = _vector(_require(raw, "phi0", path), f"{path}.phi0")
    alpha0 = raw.get("alpha0", SAMPLE_ALPHA0)
    if isinstance(alpha0, str):
        if alpha0 != SAMPLE_ALPHA0:
            raise ParseError(f"{path}.alpha0", f"must be a mode index or {SAMPLE_ALPHA0!r}")
    else:
        alpha0 = _integer(alpha0, f"{path}.alpha0")
    kwargs = {}
    if "explosion_radius" in raw:
        kwargs["explosion_radius"] = _number(raw["explosion_radius"], f"{path}.explosion_radius")
    return_radius = None
    if "return_radius" in raw:
        return_radius = _number(raw["return_radius"], f"{path}.return_radius")
    try:
        phi_state = FilterState(phi=phi0)
    except ValueError as exc:
        raise ParseError(f"{path}.phi0", str(exc)) from None
    try:
        cfg = SimConfig(modes=modes, cost=cost, gen=gen, x0=x0, phi0=phi_state,
                        T=T, dt=dt, seed=seed, alpha0=alpha0, **kwargs)
    except (ValueError, SwitchstabError) as exc:
        raise ParseError(path, str(exc)) from None
    return cfg, return_radius


def load_model(filename) -> ModelFile:
    """Parse and validate a model file; raises on the first problem found."""
    try:
        with open(filename, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ParseError("<file>", str(exc)) from None
    except json.JSONDecodeError as exc:
        raise ParseError("<file>", f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ParseError("<root>", "model file must be a JSON object")
    version = _require(data, "schema_version", "")
    if version != SCHEMA_VERSION:
        raise ParseError("schema_version", f"unsupported version {version!r}")
    gen = _parse_generator(data)
    modes = _parse_modes(data)
    if gen.m != modes.m:
        raise ParseError("modes", f"{modes.m} mode entries but generator has m={gen.m}")
    cost = _parse_cost(data)
    sim, return_radius = _parse_simulation(data, gen, modes, cost)
    return ModelFile(schema_version=version, gen=gen, modes=modes, cost=cost,
                     sim=sim, return_radius=return_radius)


def model_issues(filename) -> list[str]:
    """Collect validation problems section by section (empty when valid)."""
    issues: list[str] = []
    try:
        with open(filename, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        return [f"<file>: {exc}"]
    except json.JSONDecodeError as exc:
        return [f"<file>: invalid JSON at line {exc.lineno}: {exc.msg}"]
    if not isinstance(data, dict):
        return ["<root>: model file must be a JSON object"]

    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        issues.append(f"schema_version: unsupported version {version!r}")

    gen = modes = cost = None
    try:
        gen = _parse_generator(data)
    except SwitchstabError as exc:
        issues.append(f"generator: {exc}")
    try:
        modes = _parse_modes(data)
    except (SwitchstabError, ValueError) as exc:
        issues.append(str(exc) if isinstance(exc, ParseError) else f"modes: {exc}")
    try:
        cost = _parse_cost(data)
    except (SwitchstabError, ValueError) as exc:
        issues.append(str(exc) if isinstance(exc, ParseError) else f"cost: {exc}")
    if gen is not None and modes is not None and gen.m != modes.m:
        issues.append(f"modes: {modes.m} mode entries but generator has m={gen.m}")
    if gen is not None and modes is not None and cost is not None:
        try:
            _parse_simulation(data, gen, modes, cost)
        except (SwitchstabError, ValueError) as exc:
            issues.append(str(exc) if isinstance(exc, ParseError) else f"simulation: {exc}")
    return issues


def model_to_dict(model: ModelFile) -> dict:
    """Round-trippable JSON form of a parsed model."""
    out = {
        "schema_version": model.schema_version,
        "generator": model.gen.rates.tolist(),
        "modes": [{"A": model.modes.A[i].tolist(), "B": model.modes.B[i].tolist()}
                  for i in range(model.modes.m)],
        "cost": {"Q": model.cost.Q.tolist(), "R": model.cost.R.tolist()},
        "simulation": {
            "T": model.sim.T,
            "dt": model.sim.dt,
            "seed": model.sim.seed,
            "x0": model.sim.x0.tolist(),
            "phi0": model.sim.phi0.phi.tolist(),
            "alpha0": model.sim.alpha0,
            "explosion_radius": model.sim.explosion_radius,
        },
    }
    if model.return_radius is not None:
        out["simulation"]["return_radius"] = model.return_radius
    return out
