"""Command-line entry point.

Subcommands: ``norm``, ``check --suite NAME``, ``probe --check NAME``,
``solve`` and ``refine --levels N``. Exit status is 0 on success, 1 when a
suite fails or a solve does not converge, 2 on configuration errors.
Reports contain no timestamps, so equal inputs give byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile

import numpy as np

from .config import ConfigError, load_config
from .embeddings import HypothesisViolation, critical_exponents
from .expr import ExprError, compile_expr
from .fields import DomainError, StochasticField, evaluate
from .norms import NotInSpaceError, luxemburg_norm, modular
from .operator import check_growth, coercivity_probe, monotonicity_bracket
from .random_fields import smooth_field
from .solver import SolverError, refine_study, solve_ensemble
from .suites import (
    SUITES,
    chain_suite,
    holder_suite,
    poincare_suite,
    prop2_suite,
    weakconv_suite,
)

__all__ = ["run", "main"]

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


# --- output helpers ---------------------------------------------------------------


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def to_json(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def to_csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(x) for x in row])
    return buf.getvalue()


def write_atomic(path, text):
    """Write ``text`` to ``path`` via a temporary file and rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class Output:
    """Collects named reports; prints the main one and writes all to ``--out``."""

    def __init__(self, out_dir, stdout):
        self.out_dir = out_dir
        self.stdout = stdout

    def emit(self, files: dict, main: str):
        if self.out_dir:
            for name, text in files.items():
                write_atomic(os.path.join(self.out_dir, name), text)
        self.stdout.write(files[main])


# --- subcommands ----------------------------------------------------------------


def cmd_norm(cfg, args, out):
    m = cfg.build_grid()
    p = cfg.exponent(m)
    v = cfg.weight(m)
    u = cfg.field_values("u", m)
    res = luxemburg_norm(u, p, v, m)
    report = {
        "value": res.value,
        "modular_at_unit": res.modular_at_unit,
        "iterations": res.iterations,
        "modular": modular(u, p, v, m),
        "bracket": list(res.bracket),
    }
    out.emit({"norm.json": to_json(report)}, "norm.json")
    return EXIT_OK


def _suite_int(cfg, key, default):
    try:
        value = int(cfg.suite.get(key, default))
    except (TypeError, ValueError):
        raise ConfigError(f"suite.{key}", "expected an integer") from None
    if value < 1:
        raise ConfigError(f"suite.{key}", "must be positive")
    return value


def cmd_check(cfg, args, out):
    m = cfg.build_grid()
    name = args.suite
    seed = args.seed
    su = cfg.suite
    if name == "holder":
        res = holder_suite(m, _suite_int(cfg, "draws", 1000), seed)
    elif name == "prop2":
        res = prop2_suite(m, _suite_int(cfg, "draws", 1000), seed)
    elif name == "poincare":
        res = poincare_suite(m, cfg.exponent(m), cfg.weight(m), _suite_int(cfg, "k_max", 6))
    elif name == "chain":
        p, s, v = cfg.exponent(m), cfg.aux_exponent(m), cfg.weight(m)
        ex = critical_exponents(p, s, m.dim)
        res = chain_suite(
            m, p, s, v, _suite_int(cfg, "calibration", 100), _suite_int(cfg, "holdout", 200),
            seed, float(su.get("safety", 2.0)),
        )
        res.summary["exponent_ranges"] = {
            k: [float(np.min(val)), float(np.max(val))]
            for k, val in (("p_star", ex.p_star), ("p_s", ex.p_s), ("p_s_star", ex.p_s_star))
        }
    else:
        kwargs = {}
        for key in ("sequence", "limit"):
            if key in su:
                kwargs[key] = str(su[key])
        if "duals" in su:
            kwargs["duals"] = tuple(str(d) for d in su["duals"])
        if "indices" in su:
            kwargs["indices"] = [int(k) for k in su["indices"]]
        if "pairing_tol" in su:
            kwargs["pairing_tol"] = float(su["pairing_tol"])
        try:
            res = weakconv_suite(m, cfg.exponent(m), cfg.weight(m), **kwargs)
        except ExprError as exc:
            raise ConfigError("suite.sequence", str(exc)) from None
    rows = [(r.suite, r.case_id, r.lhs, r.rhs, r.passed) for r in res.rows]
    summary = {
        "suite": name,
        "seed": seed,
        "cases": len(res.rows),
        "failed": res.n_failed,
        "passed": res.passed,
        "details": res.summary,
    }
    files = {
        f"check_{name}.csv": to_csv(("suite", "case_id", "lhs", "rhs", "pass"), rows),
        f"check_{name}.json": to_json(summary),
    }
    out.emit(files, f"check_{name}.csv")
    return EXIT_OK if res.passed else EXIT_FAIL


def _probe_field(cfg, m, spec, key):
    try:
        values, _ = evaluate(spec, m)
        return StochasticField(values, zero_boundary=True)
    except (ExprError, DomainError, ValueError) as exc:
        raise ConfigError(key, str(exc)) from None


def cmd_probe(cfg, args, out):
    m = cfg.build_grid()
    p, v = cfg.exponent(m), cfg.weight(m)
    spec = cfg.problem_spec(m)
    pr = cfg.probe
    if args.check == "growth":
        rep = check_growth(spec, p, v, m, int(pr.get("n_draws", 10_000)), args.seed)
        report = {
            "check": "growth",
            "seed": rep.seed,
            "n_draws": rep.n_draws,
            "passed": rep.passed,
            "conditions": {
                k: {
                    "worst_slack": c.worst_slack,
                    "checked": c.checked,
                    "failed": c.failed,
                    "passed": c.passed,
                    "witness": c.witness,
                }
                for k, c in rep.conditions.items()
            },
        }
        passed = rep.passed
    elif args.check == "coercivity":
        default_u0 = " * ".join(
            f"sin(pi*({n}-({lo}))/({hi}-({lo})))"
            for n, (lo, hi) in zip(("x", "y"), m.grid.bounds)
        )
        u0 = _probe_field(cfg, m, pr.get("u0", default_u0), "probe.u0")
        scales = [float(c) for c in pr.get("scales", [1, 2, 4, 8, 16])]
        try:
            rep = coercivity_probe(spec, p, v, m, u0, scales)
        except ValueError as exc:
            raise ConfigError("probe.scales", str(exc)) from None
        report = {
            "check": "coercivity",
            "scales": rep.scales,
            "grad_norms": rep.grad_norms,
            "ratios": rep.ratios,
            "fitted_r": rep.fitted_r,
            "increasing": rep.increasing,
            "passed": rep.passed,
        }
        passed = rep.passed
    else:
        rng = np.random.default_rng(args.seed)
        brackets = []
        for _ in range(int(pr.get("pairs", 100))):
            u1 = smooth_field(rng, m, zero_boundary=True)
            u2 = smooth_field(rng, m, zero_boundary=True)
            brackets.append(monotonicity_bracket(spec, u1, u2, p, v, m))
        passed = bool(min(brackets) > 0)
        report = {
            "check": "monotone",
            "seed": args.seed,
            "pairs": len(brackets),
            "min_bracket": min(brackets),
            "brackets": brackets,
            "passed": passed,
        }
    name = f"probe_{args.check}.json"
    out.emit({name: to_json(report)}, name)
    return EXIT_OK if passed else EXIT_FAIL


def cmd_solve(cfg, args, out):
    m = cfg.build_grid()
    p, v = cfg.exponent(m), cfg.weight(m)
    spec = cfg.problem_spec(m)
    scfg = cfg.solve_config()
    rep = solve_ensemble(spec, p, v, m, scfg)
    coords = [np.asarray(c).ravel() for c in m.grid.mesh]
    names = ("x", "y")[: m.dim]
    sample_rows = []
    samples = []
    for t, s in enumerate(rep.samples):
        if s is None:
            err = rep.failures[t]
            s = err.diagnostics
            entry = {"sample": t, "converged": False, "error": str(err)}
        else:
            entry = {"sample": t, "converged": True}
        if s is not None:
            entry.update(
                iterations=s.iterations,
                residual=s.residual,
                energy_history=s.energy_history,
                damping=s.damping,
                outer_tol=s.outer_tol,
                eps_reg=s.eps_reg,
                linear_fallbacks=s.linear_fallbacks,
                halvings=s.halvings,
                max_u=float(np.max(s.u)),
            )
            vals = s.u.ravel()
            for i in range(vals.size):
                sample_rows.append((t,) + tuple(c[i] for c in coords) + (vals[i],))
        samples.append(entry)
    diagnostics = {
        "passed": rep.passed,
        "residual_max": rep.residual_max,
        "samples": samples,
        "max_mean": None if rep.mean is None else float(np.max(rep.mean)),
    }
    files = {
        "solution.csv": to_csv(("sample",) + names + ("value",), sample_rows),
        "diagnostics.json": to_json(diagnostics),
    }
    if rep.mean is not None:
        mean, std = rep.mean.ravel(), rep.std.ravel()
        files["ensemble.csv"] = to_csv(
            ("node", "mean", "std"), [(i, mean[i], std[i]) for i in range(mean.size)]
        )
    out.emit(files, "diagnostics.json")
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_refine(cfg, args, out):
    levels = args.levels if args.levels is not None else int(cfg.refine.get("levels", 3))
    if levels < 2:
        raise ConfigError("--levels", "a refinement study needs at least two levels")
    base = cfg.build_grid()
    base_n = base.grid.n[0]
    if len(set(base.grid.n)) != 1:
        raise ConfigError("grid.n", "refinement needs the same node count on every axis")
    scfg = cfg.solve_config()

    def factory(m):
        return cfg.problem_spec(m), cfg.exponent(m), cfg.weight(m)

    exact = None
    if cfg.refine.get("exact") is not None:
        names = ("x", "y")[: base.dim] + ("t",)
        try:
            ex = compile_expr(str(cfg.refine["exact"]), names)
        except ExprError as exc:
            raise ConfigError("refine.exact", str(exc)) from None

        def exact(m):
            env = {names[i]: m.x[i] for i in range(m.dim)}
            return np.broadcast_to(ex(**env, t=m.t), m.field_shape)

    g = cfg.grid
    study = refine_study(
        factory, base_n, levels, scfg, exact, base.dim, g.get("bounds"),
        g.get("samples", [0.0]), g.get("probs"),
    )
    report = {
        "n": study.n,
        "h": study.h,
        "differences": study.differences,
        "differences_decreasing": study.differences_decreasing,
        "errors": study.errors,
        "orders": study.orders,
        "fitted_order": study.fitted_order,
        "exact_discrete": study.exact_discrete,
        "residuals": study.residuals,
    }
    out.emit({"refine.json": to_json(report)}, "refine.json")
    return EXIT_OK


COMMANDS = {
    "norm": cmd_norm,
    "check": cmd_check,
    "probe": cmd_probe,
    "solve": cmd_solve,
    "refine": cmd_refine,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="varex", description="Variable-exponent weighted Sobolev toolkit."
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--seed", type=int, default=42, help="random seed (default 42)")
    common.add_argument("--out", help="directory for report files")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("norm", parents=[common], help="Luxemburg norm of fields.u")
    p_check = sub.add_parser("check", parents=[common], help="run an inequality suite")
    p_check.add_argument("--suite", choices=SUITES, required=True)
    p_probe = sub.add_parser("probe", parents=[common], help="probe the operator")
    p_probe.add_argument("--check", choices=("growth", "coercivity", "monotone"), required=True)
    sub.add_parser("solve", parents=[common], help="solve the boundary value problem")
    p_ref = sub.add_parser("refine", parents=[common], help="grid refinement study")
    p_ref.add_argument("--levels", type=int)
    return parser


def run(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](cfg, args, Output(args.out, stdout))
    except ConfigError as exc:
        stderr.write(f"{exc}\n")
        return EXIT_CONFIG
    except (SolverError, HypothesisViolation, NotInSpaceError) as exc:
        stderr.write(f"error: {exc}\n")
        return EXIT_FAIL


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
