"""Command-line interface.

Exit codes: 0 success, 1 input error, 2 solver did not converge, 3 the
coercivity condition fails (``check`` only).

If ``--out`` is omitted, results go to ``$VIDE_OUTPUT_DIR/<name>-<command>.<fmt>``
when that variable is set and to stdout otherwise.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import PRESETS, dump_config, load_config, preset, set_param, sweepable_params
from .errors import ConfigError, DivergenceError, VideError
from .grid import l2_norm
from .picard import picard_solve
from .problem import apply_Fuv, apply_Fx
from .registry import make_control
from .sensitivity import Perturbation, fd_directional, sensitivity_solve
from .variational import (
    SQRT2_2,
    check_condition,
    coercivity_coefficients,
    coercivity_probe,
    condition_lhs,
    descent_solve,
    phi,
)

log = logging.getLogger("vide")

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NONCONVERGED = 2
EXIT_CONDITION = 3

OUTPUT_DIR_ENV = "VIDE_OUTPUT_DIR"


class InputError(Exception):
    pass


def fmt(val) -> str:
    if isinstance(val, (bool, np.bool_)):
        return "true" if val else "false"
    if isinstance(val, (int, np.integer)):
        return str(int(val))
    if isinstance(val, (float, np.floating)):
        return format(float(val), ".17g")
    if val is None:
        return ""
    return str(val)


def _json_value(val):
    if isinstance(val, (np.bool_,)):
        return bool(val)
    if isinstance(val, np.integer):
        return int(val)
    if isinstance(val, (float, np.floating)):
        val = float(val)
        return val if math.isfinite(val) else None
    return val


def render(columns, rows, meta, fmt_name) -> str:
    """CSV (meta flattened into constant trailing columns) or JSON ``{meta, rows}``."""
    if fmt_name == "json":
        doc = {
            "meta": {k: _json_value(v) for k, v in meta.items()},
            "rows": [{c: _json_value(v) for c, v in zip(columns, row)} for row in rows],
        }
        return json.dumps(doc, indent=2) + "\n"
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    mkeys = list(meta)
    writer.writerow(list(columns) + mkeys)
    mvals = [fmt(meta[k]) for k in mkeys]
    for row in rows:
        writer.writerow([fmt(v) for v in row] + mvals)
    return buf.getvalue()


def emit(text, args, name, command):
    out = args.out
    if out is None and os.environ.get(OUTPUT_DIR_ENV):
        out = Path(os.environ[OUTPUT_DIR_ENV]) / f"{name}-{command}.{args.format}"
    if out is None:
        sys.stdout.write(text)
        return
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)
    log.info("wrote %s", out)


def _load(path):
    try:
        return load_config(path)
    except ConfigError as exc:
        raise InputError(f"{path}: [{exc.code}] {exc}") from None


def _build(cfg):
    try:
        return cfg.build()
    except VideError as exc:
        raise InputError(f"[{exc.code}] {exc}") from None


def _state_columns(prefix, n):
    return [f"{prefix}{c}" for c in range(n)] if n > 1 else [prefix]


# -- solve --------------------------------------------------------------------


def cmd_solve(args) -> int:
    cfg = _load(args.config)
    p = _build(cfg)
    scfg = cfg.solver_config()
    meta = {"name": cfg.name, "solver": args.solver, "grid_n": cfg.grid_n}
    converged = True
    x = None
    if args.solver in ("picard", "both"):
        x, rep = picard_solve(p, scfg)
        converged &= rep.converged
        meta.update(
            converged=rep.converged, iterations=rep.iterations, k_used=rep.k_used,
            final_residual_l2=rep.final_residual_l2, max_ratio=rep.max_ratio,
            ratio_bound=rep.ratio_bound,
        )
    if args.solver in ("descent", "both"):
        xd, drep = descent_solve(p, scfg)
        converged &= drep.converged
        if x is None:
            x = xd
            meta.update(converged=drep.converged, iterations=drep.iterations)
        else:
            meta.update(
                descent_converged=drep.converged, descent_iterations=drep.iterations,
                discrepancy=float(np.max(np.abs(x.x - xd.x))),
            )
    meta["phi"] = phi(x, p)
    meta["condition_margin"] = check_condition(p.growth)[1]
    t = p.grid.nodes
    if p.exact is not None:
        meta["exact_max_error"] = float(np.max(np.abs(x.x - p.exact(t)[:, None])))
    n = p.dim_n
    columns = ["t"] + _state_columns("x", n) + _state_columns("l", n)
    rows = [[t[i], *x.x[i], *x.l[i]] for i in range(p.grid.n_nodes)]
    emit(render(columns, rows, meta, args.format), args, cfg.name, "solve")
    return EXIT_OK if converged else EXIT_NONCONVERGED


# -- check --------------------------------------------------------------------


def cmd_check(args) -> int:
    cfg = _load(args.config)
    p = _build(cfg)
    g = p.growth
    passed, margin = check_condition(g)
    bound = coercivity_coefficients(g, p.controls.A, p.controls.B)
    lines = [
        ("lhs", condition_lhs(g)),
        ("threshold", SQRT2_2),
        ("margin", margin),
        ("result", "pass" if passed else "fail"),
        ("C2", bound.C2),
        ("C1", bound.C1),
        ("C0", bound.C0),
        ("A", p.controls.A),
        ("B", p.controls.B),
    ]
    if args.probe:
        seed = cfg.seed if args.seed is None else args.seed
        ok = coercivity_probe(p, samples=args.probe, radius=args.radius, seed=seed)
        lines.append(("probe", "pass" if ok else "fail"))
    sys.stdout.write("".join(f"{k}: {fmt(v)}\n" for k, v in lines))
    return EXIT_OK if passed else EXIT_CONDITION


# -- sensitivity ---------------------------------------------------------------


def parse_direction(text, t, dim):
    """``kind:arg,...`` with positional or ``key=value`` arguments, e.g.
    ``constant:1`` or ``sine:amplitude=0.5,frequency=3``."""
    if text is None:
        return np.zeros((t.shape[0], dim))
    kind, _, rest = text.partition(":")
    spec = {"kind": kind.strip()}
    positional = {"constant": ["value"], "sine": ["amplitude", "frequency", "phase", "offset"]}
    names = positional.get(spec["kind"], [])
    for pos, item in enumerate(filter(None, (s.strip() for s in rest.split(",")))):
        key, eq, val = item.partition("=")
        try:
            if eq:
                spec[key.strip()] = float(val)
            elif pos < len(names):
                spec[names[pos]] = float(key)
            else:
                raise InputError(f"too many arguments in direction {text!r}")
        except ValueError:
            raise InputError(f"bad number in direction {text!r}") from None
    try:
        return make_control(spec, t, dim)
    except VideError as exc:
        raise InputError(f"direction {text!r}: {exc}") from None


def cmd_sensitivity(args) -> int:
    cfg = _load(args.config)
    p = _build(cfg)
    scfg = cfg.solver_config()
    t = p.grid.nodes
    pert = Perturbation(
        parse_direction(args.du, t, p.dim_m), parse_direction(args.dv, t, p.dim_r)
    )
    x, rep = picard_solve(p, scfg)
    if not rep.converged:
        log.error("forward solve did not converge in %d iterations", rep.iterations)
        return EXIT_NONCONVERGED
    res = sensitivity_solve(p, x, pert, scfg)
    z = res.z
    lin_res = l2_norm(apply_Fx(p, x, z) + apply_Fuv(p, x, pert.du, pert.dv), p.grid)
    meta = {
        "name": cfg.name,
        "converged": res.solve_report.converged,
        "iterations": res.solve_report.iterations,
        "k_used": res.solve_report.k_used,
        "linearized_residual_l2": lin_res,
    }
    n = p.dim_n
    columns = ["t"] + _state_columns("z", n) + _state_columns("dz", n)
    rows = [[t[i], *z.x[i], *z.l[i]] for i in range(p.grid.n_nodes)]
    if args.eps is not None:
        try:
            fd = fd_directional(p, pert, args.eps, scfg, base=None)
        except VideError as exc:
            log.error("%s", exc)
            return EXIT_NONCONVERGED
        err = np.abs(fd.x - z.x)
        columns += _state_columns("fd_error", n)
        rows = [row + list(err[i]) for i, row in enumerate(rows)]
        meta["eps"] = args.eps
        meta["max_fd_error"] = float(np.max(err))
    emit(render(columns, rows, meta, args.format), args, cfg.name, "sensitivity")
    return EXIT_OK if res.solve_report.converged else EXIT_NONCONVERGED


# -- sweep --------------------------------------------------------------------

SWEEP_COLUMNS = [
    "value", "converged", "iterations", "phi", "max_ratio", "ratio_bound",
    "k_used", "condition_margin", "error", "message",
]


def _sweep_row(base, param, value):
    try:
        cfg = set_param(base, param, value)
        p = cfg.build()
        x, rep = picard_solve(p, cfg.solver_config())
        err = float(np.max(np.abs(x.x - p.exact(p.grid.nodes)[:, None]))) if p.exact else float("nan")
        return [
            value, rep.converged, rep.iterations, phi(x, p), rep.max_ratio, rep.ratio_bound,
            rep.k_used, check_condition(p.growth)[1], err, "",
        ]
    except (VideError, ArithmeticError, ValueError) as exc:
        nan = float("nan")
        return [value, False, 0, nan, nan, nan, nan, nan, nan, str(exc)]


def cmd_sweep(args) -> int:
    cfg = _load(args.config)
    raw = [s.strip() for s in (args.values or "").split(",") if s.strip()]
    if not raw:
        raise InputError("--values must list at least one value")
    try:
        values = [float(s) for s in raw]
    except ValueError:
        raise InputError(f"--values must be numbers, got {args.values!r}") from None
    known = sweepable_params(cfg)
    if args.param not in known:
        raise InputError(f"{args.param!r} is not a sweepable parameter; try one of {known}")
    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        rows = list(pool.map(lambda v: _sweep_row(cfg, args.param, v), values))
    meta = {"name": cfg.name, "param": args.param}
    emit(render(SWEEP_COLUMNS, rows, meta, args.format), args, cfg.name, "sweep")
    return EXIT_OK


# -- preset -------------------------------------------------------------------


def cmd_preset(args) -> int:
    try:
        cfg = preset(args.name)
    except VideError as exc:
        raise InputError(str(exc)) from None
    if args.grid_n is not None:
        cfg.grid_n = args.grid_n
        try:
            cfg.validate()
        except VideError as exc:
            raise InputError(str(exc)) from None
    text = dump_config(cfg)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vide",
        description="Solve and analyse Volterra integro-differential control systems.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def output_opts(sp):
        sp.add_argument("--out", help="output file (default: stdout or $%s)" % OUTPUT_DIR_ENV)
        sp.add_argument("--format", choices=["csv", "json"], default="csv")

    sp = sub.add_parser("solve", help="solve a configured problem")
    sp.add_argument("config")
    sp.add_argument("--solver", choices=["picard", "descent", "both"], default="picard")
    output_opts(sp)
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("check", help="check the coercivity condition")
    sp.add_argument("config")
    sp.add_argument("--probe", type=int, default=0, help="also probe the bound on N random trajectories")
    sp.add_argument("--radius", type=float, default=10.0)
    sp.add_argument("--seed", type=int, help="probe seed (default: the config's seed, 0 if unset)")
    sp.set_defaults(func=cmd_check)

    sp = sub.add_parser("sensitivity", help="directional derivative of the solution map")
    sp.add_argument("config")
    sp.add_argument("--du", help="kernel-control direction, e.g. 'constant:1' or 'sine:0.5,3'")
    sp.add_argument("--dv", help="rhs-control direction, same syntax as --du")
    sp.add_argument("--eps", type=float, help="compare with a finite difference of this step")
    output_opts(sp)
    sp.set_defaults(func=cmd_sensitivity)

    sp = sub.add_parser("sweep", help="solve over a list of values of one parameter")
    sp.add_argument("config")
    sp.add_argument("--param", required=True, help="e.g. grid_n, kernel.alpha, solver.tol")
    sp.add_argument("--values", required=True, help="comma-separated values")
    sp.add_argument("--jobs", type=int, default=1)
    output_opts(sp)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("preset", help="print a builtin example config")
    sp.add_argument("name", choices=sorted(PRESETS))
    sp.add_argument("--grid-n", type=int, dest="grid_n")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_preset)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s: %(message)s",
    )
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED


if __name__ == "__main__":
    sys.exit(main())
