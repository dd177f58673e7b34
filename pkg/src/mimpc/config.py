"""Experiment configuration: nested YAML with a default for every benchmark constant."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .convexification import COST_KINDS, ControlSet, CostVariant
from .dynamics import GridSpec, get_model
from .errors import ConfigError, ContractError, MpcError
from .nlp import SolverSettings
from .ocp import OcpProblem, build_terminal


@dataclass
class ModelConfig:
    name: str = "vanderpol"
    params: dict = field(default_factory=dict)


@dataclass
class ControlsConfig:
    values: list = field(default_factory=lambda: [[-1.0], [1.0]])
    weight: list = field(default_factory=lambda: [[1.0]])


@dataclass
class CostConfig:
    variant: str = "quadratic"
    Q: list = field(default_factory=lambda: [[1.0, 0.0], [0.0, 1.0]])
    u_ref: list | None = None  # None means the uniform multiplier


@dataclass
class GridConfig:
    coarse_step: float = 0.15
    horizon: int = 20
    integration_step: float = 0.005


@dataclass
class TerminalConfig:
    pi: float = 0.3
    rho: float = 1.001


@dataclass
class ExperimentSection:
    x0: list = field(default_factory=lambda: [0.5, 0.0])
    steps: int = 120
    divisors: list = field(default_factory=lambda: [1, 2, 5, 10, 30])
    dt_divisor: int = 10
    mode: str = "relaxed"
    rounding: str = "sur"
    carry_deficit: bool = False
    repeats: int = 5
    seed: int = 0
    gamma: float = 0.05
    bound_samples: int = 10_000


@dataclass
class SolverConfig:
    max_outer: int = 20
    max_inner: int = 500
    stationarity_tol: float = 1e-6
    constraint_tol: float = 1e-8
    penalty_init: float = 10.0
    penalty_growth: float = 10.0
    armijo_c: float = 1e-4
    armijo_shrink: float = 0.5
    fd_check: bool = False


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    controls: ControlsConfig = field(default_factory=ControlsConfig)
    cost: CostConfig = field(default_factory=CostConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    terminal: TerminalConfig = field(default_factory=TerminalConfig)
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    solver: SolverConfig = field(default_factory=SolverConfig)
    output_dir: str = "runs"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dump(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))
        return path

    def solver_settings(self) -> SolverSettings:
        return SolverSettings(**dataclasses.asdict(self.solver))


def _coerce(value: Any, default: Any, path: str):
    """Check ``value`` against the type of the dataclass default it replaces."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    if isinstance(default, dict) and not isinstance(value, dict):
        raise ConfigError(path, f"expected a mapping, got {value!r}")
    if isinstance(default, list) and not isinstance(value, list):
        raise ConfigError(path, f"expected a list, got {value!r}")
    return value


def _build(cls, data: dict, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(prefix or "<root>", f"expected a mapping, got {data!r}")
    obj = cls()
    names = {f.name: f for f in dataclasses.fields(cls)}
    for key, value in data.items():
        path = f"{prefix}.{key}" if prefix else key
        if key not in names:
            raise ConfigError(path, "unknown key")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current):
            setattr(obj, key, _build(type(current), value, path))
        else:
            setattr(obj, key, _coerce(value, current, path))
    return obj


def from_dict(data: dict | None) -> ExperimentConfig:
    cfg = _build(ExperimentConfig, data or {}, "")
    validate(cfg)
    return cfg


def load_config(path=None, overrides: list[str] | None = None) -> ExperimentConfig:
    """Defaults, then the YAML file at ``path``, then ``key.sub=value`` overrides."""
    data: dict = {}
    if path is not None:
        try:
            data = yaml.safe_load(Path(path).read_text()) or {}
        except OSError as exc:
            raise ConfigError("<file>", f"cannot read {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError("<file>", f"invalid YAML: {exc}") from exc
    for item in overrides or []:
        apply_override(data, item)
    return from_dict(data)


def apply_override(data: dict, item: str) -> None:
    key, sep, raw = item.partition("=")
    if not sep or not key.strip():
        raise ConfigError(item, "override must look like section.key=value")
    parts = key.strip().split(".")
    node = data
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(key, "cannot descend into a non-mapping")
    value = yaml.safe_load(raw)
    if isinstance(value, str):
        # YAML 1.1 reads "1e-9" as a string
        try:
            value = float(value)
        except ValueError:
            pass
    node[parts[-1]] = value


def validate(cfg: ExperimentConfig) -> None:
    """Cross-field checks; every error names the offending field."""
    try:
        model = get_model(cfg.model.name, **cfg.model.params)
    except ContractError as exc:
        raise ConfigError("model.name", str(exc)) from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError("model.params", str(exc)) from exc
    try:
        ctrl = ControlSet(cfg.controls.values, cfg.controls.weight)
    except (MpcError, ValueError) as exc:
        raise ConfigError("controls", str(exc)) from exc
    if ctrl.input_dim != model.input_dim:
        raise ConfigError("controls.values", f"controls must have {model.input_dim} component(s)")
    if cfg.cost.variant not in COST_KINDS:
        raise ConfigError("cost.variant", f"must be one of {COST_KINDS}")
    Q = np.asarray(cfg.cost.Q, dtype=float)
    if Q.shape != (model.state_dim, model.state_dim):
        raise ConfigError("cost.Q", f"must be {model.state_dim}x{model.state_dim}")
    if not np.allclose(Q, Q.T) or np.linalg.eigvalsh(Q).min() <= 0:
        raise ConfigError("cost.Q", "must be symmetric positive definite")
    if cfg.cost.u_ref is not None:
        u = np.asarray(cfg.cost.u_ref, dtype=float)
        if u.shape != (ctrl.cardinality,) or np.any(u < 0) or abs(u.sum() - 1) > 1e-9:
            raise ConfigError("cost.u_ref", "must be a simplex vector with one entry per control")
    g = cfg.grid
    if g.horizon < 0:
        raise ConfigError("grid.horizon", "must be nonnegative")
    try:
        GridSpec(g.coarse_step, g.horizon, 1, g.integration_step)
    except (MpcError, ValueError) as exc:
        raise ConfigError("grid", str(exc)) from exc
    if cfg.terminal.pi <= 0:
        raise ConfigError("terminal.pi", "must be positive")
    if cfg.terminal.rho < 1:
        raise ConfigError("terminal.rho", "must be at least 1")
    e = cfg.experiment
    if len(e.x0) != model.state_dim:
        raise ConfigError("experiment.x0", f"must have {model.state_dim} entries")
    if e.steps < 0:
        raise ConfigError("experiment.steps", "must be nonnegative")
    for i, d in enumerate(e.divisors):
        if isinstance(d, bool) or not isinstance(d, int) or d < 1:
            raise ConfigError(f"experiment.divisors[{i}]", "must be a positive integer")
    if not e.divisors:
        raise ConfigError("experiment.divisors", "must not be empty")
    if e.dt_divisor < 1:
        raise ConfigError("experiment.dt_divisor", "must be a positive integer")
    if e.mode not in ("relaxed", "rounded"):
        raise ConfigError("experiment.mode", "must be 'relaxed' or 'rounded'")
    if e.rounding not in ("sr", "sur"):
        raise ConfigError("experiment.rounding", "must be 'sr' or 'sur'")
    if e.repeats < 1:
        raise ConfigError("experiment.repeats", "must be at least 1")
    if e.gamma <= 0:
        raise ConfigError("experiment.gamma", "must be positive")
    if e.bound_samples < 100:
        raise ConfigError("experiment.bound_samples", "must be at least 100")
    for d in [e.dt_divisor, *e.divisors]:
        try:
            GridSpec(g.coarse_step, g.horizon, d, g.integration_step).fine_substeps
        except (MpcError, ValueError) as exc:
            raise ConfigError("experiment.divisors", f"divisor {d}: {exc}") from exc
    try:
        cfg.solver_settings()
    except (MpcError, ValueError) as exc:
        raise ConfigError("solver", str(exc)) from exc


def build_problem(cfg: ExperimentConfig) -> OcpProblem:
    model = get_model(cfg.model.name, **cfg.model.params)
    ctrl = ControlSet(cfg.controls.values, cfg.controls.weight)
    u_ref = (np.full(ctrl.cardinality, 1.0 / ctrl.cardinality) if cfg.cost.u_ref is None
             else np.asarray(cfg.cost.u_ref, dtype=float))
    Q = np.asarray(cfg.cost.Q, dtype=float)
    grid = GridSpec(cfg.grid.coarse_step, cfg.grid.horizon, 1, cfg.grid.integration_step)
    terminal = build_terminal(model, ctrl, Q, u_ref, grid, cfg.terminal.pi, cfg.terminal.rho)
    return OcpProblem(model, ctrl, CostVariant(cfg.cost.variant, u_ref), Q, terminal, grid)
