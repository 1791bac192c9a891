"""JSON run configuration: parsing, validation and object construction.

Every validation failure raises :class:`ConfigError` carrying the dotted
key of the offending entry, e.g. ``fields.p``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Optional

from .expr import ExprError, compile_expr
from .fields import AuxExponentField, DomainError, ExponentField, WeightField, evaluate
from .grid import GridError, ProductMeasureGrid, build_grid
from .operator import custom_problem, kernel_variables, make_g, p_laplacian_problem
from .solver import SolveConfig

__all__ = ["ConfigError", "RunConfig", "load_config", "parse_config"]

SECTIONS = {
    "grid": {"dim", "bounds", "n", "samples", "probs"},
    "fields": {"u", "p", "s", "theta", "f", "gamma", "k", "g"},
    "problem": {"kind", "alpha", "beta", "flux", "lower"},
    "solver": {
        "eps_reg", "max_outer", "damping", "lin_tol", "outer_tol", "residual_panel_size",
        "max_halvings",
    },
    "suite": {
        "draws", "calibration", "holdout", "safety", "k_max", "sequence", "limit", "duals",
        "indices", "pairing_tol",
    },
    "probe": {"n_draws", "scales", "u0", "pairs"},
    "refine": {"levels", "exact"},
}

FIELD_DEFAULTS = {"p": 2.0, "s": 1.0, "theta": 1.0, "f": 1.0, "gamma": 0.0, "k": 0.0, "g": 0.0}


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"config error at '{key}': {message}")
        self.key = key


@dataclass
class RunConfig:
    """Validated configuration; sections are plain dictionaries."""

    grid: dict
    fields: dict
    problem: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    suite: dict = field(default_factory=dict)
    probe: dict = field(default_factory=dict)
    refine: dict = field(default_factory=dict)

    def build_grid(self, n=None) -> ProductMeasureGrid:
        g = self.grid
        try:
            dim = int(g.get("dim", 1))
            bounds = g.get("bounds", [[0.0, 1.0]] * dim)
            return build_grid(
                dim, bounds, g.get("n", 101) if n is None else n, g.get("samples", [0.0]),
                g.get("probs"),
            )
        except (GridError, TypeError, ValueError) as exc:
            raise ConfigError("grid", str(exc)) from None

    def field_spec(self, name):
        return self.fields.get(name, FIELD_DEFAULTS.get(name))

    def field_values(self, name, m, kind=None):
        """Evaluate field ``name`` on ``m``, wrapped in its typed container."""
        spec = self.field_spec(name)
        if spec is None:
            raise ConfigError(f"fields.{name}", "field is required for this command")
        try:
            values, source = evaluate(spec, m)
            if kind is not None:
                return kind(values, source)
            return values
        except (ExprError, DomainError, GridError, TypeError, ValueError) as exc:
            raise ConfigError(f"fields.{name}", str(exc)) from None

    def exponent(self, m):
        return self.field_values("p", m, ExponentField)

    def aux_exponent(self, m):
        return self.field_values("s", m, AuxExponentField)

    def weight(self, m):
        return self.field_values("theta", m, WeightField)

    def problem_spec(self, m):
        pr = self.problem
        kind = pr.get("kind", "p_laplacian_with_g")
        args = {}
        for name in ("f", "gamma", "k"):
            args[name] = self.field_values(name, m)
        try:
            alpha = float(pr.get("alpha", 1.0))
            beta = float(pr.get("beta", 1.0))
        except (TypeError, ValueError) as exc:
            raise ConfigError("problem", str(exc)) from None
        g = self.field_spec("g")
        try:
            make_g(g)
        except (ExprError, TypeError, ValueError) as exc:
            raise ConfigError("fields.g", str(exc)) from None
        if kind == "custom":
            self._check_kernels(m.dim)
        elif kind != "p_laplacian_with_g":
            raise ConfigError("problem.kind", f"unknown kind {kind!r}")
        try:
            if kind == "custom":
                return custom_problem(
                    m, args["f"], pr["flux"], pr["lower"], g, args["gamma"], args["k"], alpha, beta
                )
            return p_laplacian_problem(m, args["f"], g, args["gamma"], args["k"], alpha, beta)
        except ValueError as exc:
            raise ConfigError("problem", str(exc)) from None

    def _check_kernels(self, dim):
        pr = self.problem
        flux = pr.get("flux")
        if not isinstance(flux, list) or len(flux) != dim:
            raise ConfigError("problem.flux", f"expected a list of {dim} formulas")
        if "lower" not in pr:
            raise ConfigError("problem.lower", "custom kernels need a lower-order formula")
        names = kernel_variables(dim)
        for key, src in [(f"problem.flux[{i}]", f) for i, f in enumerate(flux)] + [
            ("problem.lower", pr["lower"])
        ]:
            try:
                compile_expr(str(src), names)
            except ExprError as exc:
                raise ConfigError(key, str(exc)) from None

    def solve_config(self) -> SolveConfig:
        try:
            return SolveConfig(**self.solver)
        except (TypeError, ValueError) as exc:
            raise ConfigError("solver", str(exc)) from None


def parse_config(data: Any) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("<root>", "configuration must be a JSON object")
    for key in data:
        if key not in SECTIONS:
            raise ConfigError(key, "unknown section")
    sections = {}
    for name, allowed in SECTIONS.items():
        sec = data.get(name, {})
        if not isinstance(sec, dict):
            raise ConfigError(name, "section must be an object")
        for key in sec:
            if key not in allowed:
                raise ConfigError(f"{name}.{key}", "unknown key")
        sections[name] = dict(sec)
    return RunConfig(**sections)


def load_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return parse_config({})
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError("--config", f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("--config", f"malformed JSON in {path}: {exc.msg} (line {exc.lineno})") from None
    return parse_config(data)
