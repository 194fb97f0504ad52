"""Run configuration: JSON schema, validation, shipped fixtures.

A run config is a single JSON object:

    {
      "total_rate": 2.0,
      "processes": [
        {"A": [[...], ...], "Q": [[...], ...], "C": [[...], ...],
         "R": [[...], ...], "Pi0": [[...], ...]},           # C, R, Pi0 optional
        ...
      ],
      "solver": {"eps0": 0.1, "eta": 0.001, "eps_r": 1e-6,
                 "max_inner_iters": 200000, "max_outer_iters": 25,
                 "projection_tol": 1e-9},                    # optional, defaults shown
      "simulation": {"horizon": 1000000, "seed": 0},         # optional
      "distributed": {"graph": [[1,4],[0,2],[1,3],[2,4],[3,0]],
                      "step_a": 25.0, "step_c": 10.0,
                      "eps_r": 1e-6, "max_iters": 200000,
                      "dual_mode": "mixing"},                # optional section
      "output_dir": "out"                                    # optional
    }

All matrices are row-major nested lists. ``C`` and ``R`` default to identity.
``distributed.graph`` is an adjacency list (neighbors per node). Every process
is fully validated at load time (shapes, definiteness, observability and
controllability), with errors naming the offending process.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .allocation import SolverConfig
from .sensors import ProcessModel

__all__ = ["ConfigError", "SimulationSettings", "DistributedSettings", "RunConfig", "load_config", "fixture_path"]


class ConfigError(ValueError):
    """A run configuration failed to parse or validate."""


@dataclass
class SimulationSettings:
    horizon: int = 1_000_000
    seed: int = 0


@dataclass
class DistributedSettings:
    adjacency: list
    step_a: float = 0.5
    step_c: float = 10.0
    eps_r: float = 1e-6
    max_iters: int = 200_000
    dual_mode: str = "mixing"


@dataclass
class RunConfig:
    processes: list
    total_rate: float
    solver: SolverConfig = field(default_factory=SolverConfig)
    simulation: SimulationSettings = field(default_factory=SimulationSettings)
    distributed: DistributedSettings | None = None
    output_dir: Path | None = None


def _require(condition, message):
    if not condition:
        raise ConfigError(message)


def _matrix(entry, key, idx, optional=False):
    if key not in entry:
        if optional:
            return None
        raise ConfigError(f"processes[{idx}]: missing required matrix '{key}'")
    value = entry[key]
    _require(isinstance(value, list) and value and all(isinstance(row, list) for row in value),
             f"processes[{idx}]: '{key}' must be a non-empty row-major nested list")
    return value


def _build_process(entry, idx) -> ProcessModel:
    _require(isinstance(entry, dict), f"processes[{idx}] must be an object")
    try:
        model = ProcessModel(
            A=_matrix(entry, "A", idx),
            Q=_matrix(entry, "Q", idx),
            C=_matrix(entry, "C", idx, optional=True),
            R_meas=_matrix(entry, "R", idx, optional=True),
            Pi0=_matrix(entry, "Pi0", idx, optional=True),
        )
        model.validate()
    except ValueError as exc:
        raise ConfigError(f"processes[{idx}]: {exc}") from exc
    return model


def load_config(path) -> RunConfig:
    """Parse and fully validate a run configuration file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    _require(isinstance(raw, dict), "config root must be a JSON object")

    _require("processes" in raw, "config is missing 'processes'")
    _require(isinstance(raw["processes"], list) and raw["processes"], "'processes' must be a non-empty list")
    processes = [_build_process(entry, i) for i, entry in enumerate(raw["processes"])]

    _require("total_rate" in raw, "config is missing 'total_rate'")
    total = raw["total_rate"]
    _require(isinstance(total, (int, float)) and total > 0, f"'total_rate' must be positive, got {total!r}")

    try:
        solver = SolverConfig(**raw.get("solver", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"solver section: {exc}") from exc

    try:
        simulation = SimulationSettings(**raw.get("simulation", {}))
    except TypeError as exc:
        raise ConfigError(f"simulation section: {exc}") from exc
    _require(simulation.horizon >= 1, "simulation.horizon must be at least 1")

    distributed = None
    if "distributed" in raw:
        section = dict(raw["distributed"])
        _require("graph" in section, "distributed section needs a 'graph' adjacency list")
        adjacency = section.pop("graph")
        _require(isinstance(adjacency, list) and len(adjacency) == len(processes),
                 "distributed.graph must list the neighbors of every process")
        try:
            distributed = DistributedSettings(adjacency=adjacency, **section)
        except TypeError as exc:
            raise ConfigError(f"distributed section: {exc}") from exc

    output_dir = Path(raw["output_dir"]) if "output_dir" in raw else None
    return RunConfig(
        processes=processes,
        total_rate=float(total),
        solver=solver,
        simulation=simulation,
        distributed=distributed,
        output_dir=output_dir,
    )


def fixture_path(name: str) -> Path:
    """Path of a fixture config shipped with the package (e.g. ``paper_sec4``)."""
    ref = resources.files("fairsched") / "fixtures" / f"{name}.json"
    with resources.as_file(ref) as concrete:
        return Path(concrete)
