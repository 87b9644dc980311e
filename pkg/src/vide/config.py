"""Problem configuration files.

Configs are TOML documents::

    name = "sin_oracle"
    dim = 1
    grid_n = 200

    [kernel]
    builtin = "linear_scaled"
    params = [1.0]

    [rhs]
    builtin = "constant"
    params = [1.0]

    [controls.u]
    kind = "constant"
    value = 0.0

    [controls.v]
    kind = "sine"
    amplitude = 0.5
    frequency = 3.0

    [solver]
    k = "auto"
    tol = 1e-10
    max_iter = 500

Controls are either a named generator (``constant``, ``sine``) or inline
samples ``{kind = "nodes", values = [...]}`` with one entry (or row of
``dim`` entries) per grid node.
"""

from __future__ import annotations

import copy
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
import tomli
import tomli_w

from .errors import (
    ConfigError,
    ConfigParseError,
    DimensionMismatch,
    InvalidConfig,
    InvalidParameter,
    UnknownBuiltin,
)
from .grid import TimeGrid
from .picard import SolverConfig
from .problem import Controls, ProblemInstance
from .registry import KERNELS, RHS, exact_solution, make_control, make_kernel, make_rhs, resolve_params

__all__ = [
    "ProblemConfig",
    "PRESETS",
    "preset",
    "parse_config",
    "load_config",
    "load_problem",
    "dump_config",
    "save_config",
    "set_param",
    "sweepable_params",
]

_TOP_KEYS = {"name", "dim", "grid_n", "seed", "kernel", "rhs", "controls", "solver"}


@dataclass
class ProblemConfig:
    name: str = "problem"
    dim: int = 1
    grid_n: int = 200
    kernel: str = "zero"
    kernel_params: list = field(default_factory=list)
    rhs: str = "constant"
    rhs_params: list = field(default_factory=lambda: [0.0])
    u: dict = field(default_factory=lambda: {"kind": "constant", "value": 0.0})
    v: dict = field(default_factory=lambda: {"kind": "constant", "value": 0.0})
    k: Optional[float] = None
    tol: float = 1e-10
    max_iter: int = 500
    seed: int = 0

    def validate(self) -> "ProblemConfig":
        if not isinstance(self.name, str):
            raise InvalidConfig("name must be a string")
        for key in ("dim", "grid_n", "max_iter", "seed"):
            val = getattr(self, key)
            if isinstance(val, bool) or not isinstance(val, int):
                raise InvalidConfig(f"{key} must be an integer, got {val!r}")
        if self.dim < 1:
            raise InvalidConfig("dim must be >= 1")
        if self.grid_n < 2:
            raise InvalidConfig(f"grid_n must be >= 2 (got {self.grid_n})")
        if self.max_iter < 1:
            raise InvalidConfig("solver.max_iter must be >= 1")
        if not (isinstance(self.tol, (int, float)) and self.tol > 0):
            raise InvalidConfig("solver.tol must be a positive number")
        if self.k is not None and not (isinstance(self.k, (int, float)) and self.k > 0):
            raise InvalidConfig("solver.k must be 'auto' or a positive number")
        if self.kernel not in KERNELS:
            raise UnknownBuiltin(f"unknown kernel builtin {self.kernel!r}; known: {sorted(KERNELS)}")
        if self.rhs not in RHS:
            raise UnknownBuiltin(f"unknown rhs builtin {self.rhs!r}; known: {sorted(RHS)}")
        resolve_params(KERNELS[self.kernel], self.kernel, self.kernel_params)
        resolve_params(RHS[self.rhs], self.rhs, self.rhs_params)
        for label, spec in (("u", self.u), ("v", self.v)):
            if not isinstance(spec, dict):
                raise InvalidConfig(f"controls.{label} must be a table")
            if spec.get("kind", "constant") == "nodes":
                vals = np.asarray(spec.get("values", []), dtype=float)
                expect_rows = self.grid_n + 1
                if vals.ndim == 1:
                    ok = vals.shape[0] == expect_rows and self.dim == 1
                else:
                    ok = vals.ndim == 2 and vals.shape == (expect_rows, self.dim)
                if not ok:
                    raise DimensionMismatch(
                        f"controls.{label} has shape {vals.shape}; expected "
                        f"({expect_rows},) or ({expect_rows}, {self.dim})"
                    )
        return self

    def solver_config(self) -> SolverConfig:
        return SolverConfig(k=self.k, tol=self.tol, max_iter=self.max_iter)

    def build(self) -> ProblemInstance:
        self.validate()
        grid = TimeGrid(self.grid_n)
        try:
            kernel = make_kernel(self.kernel, self.kernel_params, self.dim)
            rhs = make_rhs(self.rhs, self.rhs_params, self.dim)
        except InvalidParameter as exc:
            raise InvalidConfig(str(exc)) from None
        u = make_control(self.u, grid.nodes, self.dim)
        v = make_control(self.v, grid.nodes, self.dim)
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise InvalidConfig("controls must be finite")
        controls = Controls.from_samples(grid, u, v, kernel.bounds.omega, rhs.bounds.kappa)
        exact = exact_solution(
            self.kernel, self.kernel_params, self.rhs, self.rhs_params, not np.any(u)
        )
        return ProblemInstance(kernel, rhs, controls, grid, self.name, exact, copy.deepcopy(self))

    # -- dict form ---------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "dim": self.dim,
            "grid_n": self.grid_n,
            "seed": self.seed,
            "kernel": {"builtin": self.kernel, "params": [float(q) for q in self.kernel_params]},
            "rhs": {"builtin": self.rhs, "params": [float(q) for q in self.rhs_params]},
            "controls": {"u": _plain(self.u), "v": _plain(self.v)},
            "solver": {
                "k": "auto" if self.k is None else float(self.k),
                "tol": float(self.tol),
                "max_iter": self.max_iter,
            },
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ProblemConfig":
        unknown = set(data) - _TOP_KEYS
        if unknown:
            raise InvalidConfig(f"unknown top-level keys: {sorted(unknown)}")
        kernel = _table(data, "kernel")
        rhs = _table(data, "rhs")
        controls = _table(data, "controls")
        solver = _table(data, "solver")
        for label, tab, allowed in (
            ("kernel", kernel, {"builtin", "params"}),
            ("rhs", rhs, {"builtin", "params"}),
            ("controls", controls, {"u", "v"}),
            ("solver", solver, {"k", "tol", "max_iter"}),
        ):
            extra = set(tab) - allowed
            if extra:
                raise InvalidConfig(f"unknown keys in [{label}]: {sorted(extra)}")
        k = solver.get("k", "auto")
        if k == "auto":
            k = None
        elif isinstance(k, str):
            raise InvalidConfig("solver.k must be 'auto' or a positive number")
        defaults = cls()
        cfg = cls(
            name=data.get("name", defaults.name),
            dim=data.get("dim", defaults.dim),
            grid_n=data.get("grid_n", defaults.grid_n),
            kernel=kernel.get("builtin", defaults.kernel),
            kernel_params=list(kernel.get("params", [])),
            rhs=rhs.get("builtin", defaults.rhs),
            rhs_params=list(rhs.get("params", defaults.rhs_params)),
            u=dict(controls.get("u", defaults.u)),
            v=dict(controls.get("v", defaults.v)),
            k=k,
            tol=solver.get("tol", defaults.tol),
            max_iter=solver.get("max_iter", defaults.max_iter),
            seed=data.get("seed", defaults.seed),
        )
        for label in ("kernel_params", "rhs_params"):
            vals = getattr(cfg, label)
            if not all(isinstance(q, (int, float)) and not isinstance(q, bool) for q in vals):
                raise InvalidConfig(f"{label.replace('_', '.')} must be a list of numbers")
        return cfg.validate()


def _table(data, key):
    tab = data.get(key, {})
    if not isinstance(tab, dict):
        raise InvalidConfig(f"[{key}] must be a table")
    return tab


def _plain(spec: dict) -> dict:
    out = {}
    for key, val in spec.items():
        if isinstance(val, np.ndarray):
            val = val.tolist()
        if isinstance(val, (list, tuple)):
            val = [[float(a) for a in q] if isinstance(q, (list, tuple)) else float(q) for q in val]
        elif isinstance(val, (int, float)) and not isinstance(val, bool):
            val = float(val)
        out[key] = val
    return out


_LINE_RE = re.compile(r"line (\d+), column (\d+)")


def parse_config(text: str) -> ProblemConfig:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", None)
        col = getattr(exc, "colno", None)
        if line is None:
            match = _LINE_RE.search(str(exc))
            if match:
                line, col = int(match.group(1)), int(match.group(2))
        msg = getattr(exc, "msg", None) or str(exc)
        raise ConfigParseError(msg, line=line, column=col) from None
    return ProblemConfig.from_dict(data)


def load_config(path: Union[str, Path]) -> ProblemConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror or exc}") from None
    return parse_config(text)


def load_problem(path: Union[str, Path]) -> ProblemInstance:
    return load_config(path).build()


def dump_config(cfg: Union[ProblemConfig, ProblemInstance]) -> str:
    if isinstance(cfg, ProblemInstance):
        if cfg.config is None:
            raise ConfigError("problem instance was not built from a config")
        cfg = cfg.config
    return tomli_w.dumps(cfg.to_dict())


def save_config(cfg, path: Union[str, Path]) -> None:
    Path(path).write_text(dump_config(cfg))


# -- presets -----------------------------------------------------------------

_R2 = math.sqrt(2.0)

PRESETS: dict[str, dict] = {
    "zero": dict(kernel="zero", rhs="constant", rhs_params=[0.0]),
    "passthrough": dict(
        kernel="zero", rhs="control_passthrough", rhs_params=[1.0],
        v={"kind": "constant", "value": 1.0},
    ),
    "sin_oracle": dict(kernel="linear_scaled", kernel_params=[1.0], rhs="constant", rhs_params=[1.0]),
    "sensitivity_oracle": dict(
        kernel="linear_scaled", kernel_params=[1.0], rhs="control_passthrough",
        rhs_params=[1.0], v={"kind": "constant", "value": 1.0},
    ),
    # ||a|| = 0.3 and s_f = 0.1
    "linear_coercive": dict(
        kernel="linear_scaled", kernel_params=[0.3 * _R2, 0.2],
        rhs="control_passthrough", rhs_params=[1.0, 0.1 * _R2],
        u={"kind": "sine", "amplitude": 0.5, "frequency": 3.0},
        v={"kind": "constant", "value": 1.0},
    ),
    # ||a|| = 0.8: violates the coercivity condition
    "linear_violating": dict(
        kernel="linear_scaled", kernel_params=[0.8 * _R2], rhs="constant", rhs_params=[1.0],
    ),
    "nonlinear_exp": dict(
        kernel="exp_nonconv", kernel_params=[0.5, 1.0, 0.3],
        rhs="saturating", rhs_params=[0.5, 0.4],
        u={"kind": "sine", "amplitude": 0.5, "frequency": 3.0},
        v={"kind": "sine", "amplitude": 1.0, "frequency": 2.0, "offset": 0.5},
    ),
}


def preset(name: str, **overrides) -> ProblemConfig:
    """A fresh copy of a named preset config, with field overrides."""
    try:
        base = copy.deepcopy(PRESETS[name])
    except KeyError:
        raise UnknownBuiltin(f"unknown preset {name!r}; known: {sorted(PRESETS)}") from None
    base.update(overrides)
    return ProblemConfig(name=name, **base).validate()


# -- parameter paths ----------------------------------------------------------


def sweepable_params(cfg: ProblemConfig) -> list[str]:
    out = ["grid_n", "solver.tol", "solver.k", "solver.max_iter"]
    out += [f"kernel.{q}" for q in KERNELS[cfg.kernel].params]
    out += [f"rhs.{q}" for q in RHS[cfg.rhs].params]
    for label in ("u", "v"):
        spec = getattr(cfg, label)
        if spec.get("kind", "constant") != "nodes":
            out += [f"controls.{label}.{key}" for key in spec if key != "kind"]
    return out


def set_param(cfg: ProblemConfig, path: str, value: Any) -> ProblemConfig:
    """Copy of ``cfg`` with the scalar at ``path`` replaced."""
    new = copy.deepcopy(cfg)
    parts = path.split(".")
    if path in ("grid_n", "solver.max_iter"):
        if float(value) != int(float(value)):
            raise InvalidConfig(f"{path} must be an integer")
        setattr(new, path.split(".")[-1], int(float(value)))
    elif path == "solver.tol":
        new.tol = float(value)
    elif path == "solver.k":
        new.k = None if value == "auto" else float(value)
    elif len(parts) == 2 and parts[0] in ("kernel", "rhs"):
        table, names = (KERNELS, "kernel_params") if parts[0] == "kernel" else (RHS, "rhs_params")
        builtin = getattr(new, parts[0])
        entry = table[builtin]
        params = resolve_params(entry, builtin, getattr(new, names))
        if parts[1] in entry.params:
            idx = entry.params.index(parts[1])
        elif parts[1].isdigit() and int(parts[1]) < len(params):
            idx = int(parts[1])
        else:
            raise InvalidConfig(f"{parts[0]} builtin {builtin!r} has no parameter {parts[1]!r}")
        params[idx] = float(value)
        setattr(new, names, params)
    elif len(parts) == 3 and parts[0] == "controls" and parts[1] in ("u", "v"):
        spec = getattr(new, parts[1])
        if spec.get("kind", "constant") == "nodes" or parts[2] == "kind":
            raise InvalidConfig(f"{path} is not a scalar parameter")
        spec[parts[2]] = float(value)
    else:
        raise InvalidConfig(f"{path!r} is not a sweepable parameter; try one of {sweepable_params(cfg)}")
    return new.validate()
