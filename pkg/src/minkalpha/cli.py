"""Command-line front end.

Every subcommand prints one JSON document on stdout and writes artifacts
only where asked. Exit codes: 0 success, 2 invalid input or failed
precondition, 3 solver non-convergence.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from minkalpha import __version__
from minkalpha.alphafun import (
    AlphaConcaveFunction,
    DiscreteMeasure,
    domain_integral,
    euclidean_sam,
    first_variation_formula,
    first_variation_numeric,
    self_variation_formula,
    spherical_sam,
)
from minkalpha.extgrid import ExtendedGridFunction, Grid
from minkalpha.legendre import conjugate, default_dual_grid
from minkalpha.minkowski import PreconditionError, SolveConfig, save_solution, solve
from minkalpha.transport import ConvergenceError, max_correlation
from minkalpha.verify import check_gradient_balance, check_integrability_trend, check_necessary_conditions

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NONCONVERGED = 3
THREADS_ENV = "MINKALPHA_THREADS"


class InputError(ValueError):
    """Bad command-line input."""


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dumps(obj) -> str:
    """Deterministic JSON: sorted keys, repr floats, non-finite as null."""
    return json.dumps(_jsonable(obj), sort_keys=True, indent=1, allow_nan=False)


def parse_grid_spec(spec: str) -> Grid:
    """``lo:hi:count`` per axis, comma separated, or a path to a grid JSON."""
    p = Path(spec)
    if p.suffix == ".json" and p.exists():
        return Grid.from_dict(json.loads(p.read_text()))
    try:
        parts = [tuple(s.split(":")) for s in spec.split(",")]
        mins = tuple(float(a) for a, _, _ in parts)
        maxs = tuple(float(b) for _, b, _ in parts)
        counts = tuple(int(c) for _, _, c in parts)
    except ValueError as exc:
        raise InputError(f"bad grid spec {spec!r}; expected lo:hi:count[,lo:hi:count]") from exc
    return Grid(mins, maxs, counts)


def _load_function(path, alpha: float) -> AlphaConcaveFunction:
    return AlphaConcaveFunction(alpha, ExtendedGridFunction.load(path))


# ---------------------------------------------------------------------------
# subcommands


def cmd_legendre(args) -> tuple:
    phi = ExtendedGridFunction.load(args.fn)
    dual = parse_grid_spec(args.dual_grid) if args.dual_grid else default_dual_grid(phi)
    star = conjugate(phi, dual)
    if args.output:
        star.save(args.output)
    fin = star.finite
    out = {
        "dualGrid": dual.to_dict(),
        "finiteNodes": int(fin.sum()),
        "min": float(star.values[fin].min()) if fin.any() else None,
        "max": float(star.values[fin].max()) if fin.any() else None,
        "output": args.output,
    }
    return out, EXIT_OK


def cmd_mass(args) -> tuple:
    f = _load_function(args.fn, args.alpha)
    q = domain_integral(f)
    return {"J": q.value, "error": q.error, "deltaSelf": self_variation_formula(f), "alpha": args.alpha}, EXIT_OK


def cmd_variation(args) -> tuple:
    f = _load_function(args.f, args.alpha)
    g = _load_function(args.g, args.alpha)
    mode = args.mode or "both"
    out = {"alpha": args.alpha, "mode": mode}
    if mode in ("numeric", "both"):
        ts = tuple(args.ts) if args.ts else None
        res = first_variation_numeric(f, g) if ts is None else first_variation_numeric(f, g, ts)
        out["numeric"] = {"value": res.value, "quotients": list(res.quotients), "ts": list(res.ts)}
    if mode in ("formula", "both"):
        res = first_variation_formula(f, g)
        out["formula"] = {
            "value": res.value,
            "interior": res.interior,
            "boundary": res.boundary,
            "beta1": res.beta1,
            "beta2": res.beta2,
            "kinkFraction": res.kink_fraction,
        }
    if mode == "both":
        a, b = out["numeric"]["value"], out["formula"]["value"]
        out["relativeGap"] = abs(a - b) / (1.0 + abs(b))
    return out, EXIT_OK


def cmd_sam(args) -> tuple:
    f = _load_function(args.fn, args.alpha)
    m = spherical_sam(f) if args.spherical else euclidean_sam(f, merge=args.merge)
    if args.output:
        m.save_csv(args.output)
    out = {
        "kind": "spherical" if args.spherical else "euclidean",
        "atoms": len(m),
        "total": m.total,
        "barycenter": m.barycenter() if m.total > 0 else None,
        "meta": {k: v for k, v in sorted(m.meta.items())},
        "output": args.output,
    }
    return out, EXIT_OK


def cmd_ot(args) -> tuple:
    rho = DiscreteMeasure.load_csv(args.rho)
    mu = DiscreteMeasure.load_csv(args.mu)
    T, plan, pot = max_correlation(rho, mu, args.backend, args.epsilon)
    if args.output:
        plan.save_csv(args.output)
    out = {
        "T": T,
        "gap": pot.duality_gap,
        "backend": args.backend,
        "marginalViolation": plan.marginal_violation(),
        "planEntries": len(plan.weights),
        "output": args.output,
    }
    if args.backend == "entropic":
        out["epsilon"] = args.epsilon
        out["bound"] = args.epsilon * math.log(len(rho) * len(mu))
    return out, EXIT_OK


def cmd_solve(args) -> tuple:
    mu = DiscreteMeasure.load_csv(args.mu)
    cfg_dict = json.loads(Path(args.config).read_text()) if args.config else {}
    if "alpha" in cfg_dict and args.alpha is not None and float(cfg_dict["alpha"]) != args.alpha:
        raise InputError("--alpha disagrees with the config alpha")
    if args.alpha is not None:
        cfg_dict["alpha"] = args.alpha
    if "alpha" not in cfg_dict:
        raise InputError("alpha is required")
    if args.seed is not None:
        cfg_dict["seed"] = args.seed
    cfg = SolveConfig.from_dict(cfg_dict)
    out, report = solve(mu, cfg.alpha, cfg)
    if args.output:
        save_solution(out, report, args.output)
    res = {"config": cfg.to_dict(), "report": report.to_dict(), "output": args.output}
    return res, EXIT_OK if report.converged else EXIT_NONCONVERGED


def cmd_verify(args) -> tuple:
    name = args.check
    if name == "necessary":
        mu = DiscreteMeasure.load_csv(args.target)
        rep = check_necessary_conditions(mu, tol=args.tol if args.tol is not None else 1e-6)
    elif name == "integrability":
        f = _load_function(args.target, _need_alpha(args))
        rep = check_integrability_trend(f, p=args.p, l=args.l)
    elif name == "gradient-balance":
        f = _load_function(args.target, _need_alpha(args))
        rep = check_gradient_balance(f, tol=args.tol if args.tol is not None else 1e-3, seed=args.seed or 0)
    else:
        raise InputError(f"unknown check {name!r}")
    rep = dict(rep, check=name)
    if not rep["pass"]:
        reason = rep.get("reason") or f"{name} check failed"
        print(reason, file=sys.stderr)
        return rep, EXIT_INPUT
    return rep, EXIT_OK


def _need_alpha(args) -> float:
    if args.alpha is None:
        raise InputError("--alpha is required for this check")
    return args.alpha


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="seed for randomized choices")
    common.add_argument("--threads", type=int, default=None, help="cap on internal threads")

    p = argparse.ArgumentParser(prog="minkalpha", description="Alpha-concave functions and their Minkowski problem.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("legendre", parents=[common], help="discrete convex conjugate")
    s.add_argument("fn")
    s.add_argument("--dual-grid", default=None, help="lo:hi:count[,lo:hi:count] or grid JSON")
    s.add_argument("-o", "--output", default=None)
    s.set_defaults(func=cmd_legendre)

    s = sub.add_parser("mass", parents=[common], help="total mass and self variation")
    s.add_argument("fn")
    s.add_argument("--alpha", type=float, required=True)
    s.set_defaults(func=cmd_mass)

    s = sub.add_parser("variation", parents=[common], help="first variation of the total mass")
    s.add_argument("f")
    s.add_argument("g")
    s.add_argument("--alpha", type=float, required=True)
    grp = s.add_mutually_exclusive_group()
    grp.add_argument("--numeric", dest="mode", action="store_const", const="numeric")
    grp.add_argument("--formula", dest="mode", action="store_const", const="formula")
    grp.add_argument("--both", dest="mode", action="store_const", const="both")
    s.add_argument("--ts", type=float, nargs="+", default=None)
    s.set_defaults(func=cmd_variation)

    s = sub.add_parser("sam", parents=[common], help="surface-area measures")
    s.add_argument("fn")
    s.add_argument("--alpha", type=float, required=True)
    s.add_argument("--spherical", action="store_true")
    s.add_argument("--merge", action="store_true", help="merge coincident atoms")
    s.add_argument("-o", "--output", default=None)
    s.set_defaults(func=cmd_sam)

    s = sub.add_parser("ot", parents=[common], help="maximal correlation")
    s.add_argument("rho")
    s.add_argument("mu")
    s.add_argument("--backend", choices=("exact", "entropic"), default="exact")
    s.add_argument("--epsilon", type=float, default=1e-2)
    s.add_argument("-o", "--output", default=None, help="plan CSV")
    s.set_defaults(func=cmd_ot)

    s = sub.add_parser("solve", parents=[common], help="solve the Minkowski problem")
    s.add_argument("mu")
    s.add_argument("--alpha", type=float, default=None)
    s.add_argument("--config", default=None)
    s.add_argument("-o", "--output", default=None, help="solution directory")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("verify", parents=[common], help="run a diagnostic check")
    s.add_argument("target")
    s.add_argument("--check", required=True, choices=("necessary", "integrability", "gradient-balance"))
    s.add_argument("--alpha", type=float, default=None)
    s.add_argument("--p", type=float, default=0.0)
    s.add_argument("--l", type=int, default=0)
    s.add_argument("--tol", type=float, default=None)
    s.set_defaults(func=cmd_verify)
    return p


def run(argv=None) -> int:
    """Run the CLI and return the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    threads = args.threads
    if threads is None and os.environ.get(THREADS_ENV):
        threads = int(os.environ[THREADS_ENV])
    try:
        with threadpool_limits(limits=threads):
            result, code = args.func(args)
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except (PreconditionError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    sys.stdout.write(dumps(result) + "\n")
    return code


def main() -> None:
    sys.exit(run())
