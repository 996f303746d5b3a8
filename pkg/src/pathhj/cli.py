"""Command-line entry point: ``pathhj <command> [options]``.

Exit codes: 0 when every asserted invariant holds, 1 on an assertion failure
(a JSON pointer into the report is printed), 2 on invalid input (a JSON pointer
into the offending input file is printed).
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import sys
from importlib import resources
from pathlib import Path

import numpy as np
import jsonschema

from . import __version__
from ._parallel import child_rng, set_default_workers
from .bp_lab import DiscreteSet, PreconditionError, bp_minimize, subgradient_search
from .ci_calculus import DirectionSet, Functional
from .delay_control import (BudgetExceeded, bellman_hamiltonian, dpp_residual, integrator_problem,
                            integrator_value_closed_form, linear_delay_problem, regularity_report, value)
from .gauge import check_V_bounds, counterexample_probe, grad_V_margin
from .path_core import (GridError, GridSpec, PathPoint, constant_path, random_piecewise_affine,
                        rho_inf)
from .solution_checkers import CRITERIA, LOWER, UPPER, cross_validate, default_s_grid

LIP_TAGS = {"continuous", "rho1_lsc", "rho1_usc", "locally_lipschitz"}


class InputError(Exception):
    def __init__(self, pointer: str, message: str):
        super().__init__(message)
        self.pointer = pointer


class AssertionFailure(Exception):
    def __init__(self, pointer: str, message: str, report: dict | None = None):
        super().__init__(message)
        self.pointer = pointer
        self.report = report


# --- input handling ------------------------------------------------------------------

def _schema(name: str) -> dict:
    text = resources.files("pathhj").joinpath("schemas", name).read_text()
    return _inline(json.loads(text))


def _inline(obj):
    if isinstance(obj, dict):
        if set(obj) == {"$ref"} and obj["$ref"].endswith(".json"):
            return _schema(obj["$ref"])
        return {k: _inline(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_inline(v) for v in obj]
    return obj


def _pointer(path) -> str:
    return "/" + "/".join(str(p) for p in path) if len(path) else ""


def load_input(path: str, schema: str) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise InputError("", f"cannot read {path}")
    except json.JSONDecodeError as e:
        raise InputError("", f"{path}: invalid JSON ({e.msg})")
    validator = jsonschema.Draft7Validator(_schema(schema))
    errors = sorted(validator.iter_errors(data), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        e = errors[0]
        raise InputError(_pointer(e.absolute_path), f"{path}: {e.message}")
    return data


def parse_grid(obj: dict, where: str, dt: float | None = None) -> GridSpec:
    d = dict(obj)
    if dt is not None:
        d["dt"] = dt
    try:
        return GridSpec(float(d["h"]), float(d["T"]), float(d["dt"]), int(d.get("n", 1)))
    except GridError as e:
        msg = str(e)
        field = msg.split()[0]
        if field not in ("h", "T", "dt", "n"):
            field = "dt"  # divisibility failures point at the step
        raise InputError(f"{where}/{field}", msg)


def parse_point(obj: dict, grid: GridSpec, where: str) -> PathPoint:
    t = float(obj["t"])
    try:
        if "constant" in obj:
            c = np.asarray(obj["constant"], dtype=float)
            if c.shape != (grid.n,):
                raise InputError(f"{where}/constant", "constant must have n entries")
            return constant_path(grid, t, c)
        return PathPoint.from_values(grid, t, np.asarray(obj["values"], dtype=float))
    except (GridError, ValueError) as e:
        if isinstance(e, InputError):
            raise
        raise InputError(f"{where}/values" if "values" in obj else f"{where}/t", str(e))


def parse_problem(obj: dict, dt: float | None):
    grid = parse_grid(obj["grid"], "/grid", dt)
    sigma = obj.get("sigma", "norm")
    U = obj.get("U", [-1.0, 0.0, 1.0])
    try:
        if obj["kind"] == "integrator":
            return integrator_problem(grid, U, sigma)
        return linear_delay_problem(grid, obj["A0"], obj["A1"], obj["B"], U, sigma)
    except ValueError as e:
        raise InputError("/U", str(e))


def parse_L(spec: str, n: int) -> DirectionSet:
    try:
        kind, _, rest = spec.partition(":")
        if kind == "ball":
            return DirectionSet.ball(n, float(rest))
        if kind == "polytope":
            verts = [[float(v) for v in row.split(",")] for row in rest.split(";")]
            return DirectionSet.polytope(verts)
    except ValueError as e:
        raise InputError("", f"--L: {e}")
    raise InputError("", "--L must be ball:<r> or polytope:<v1>;<v2>;...")


def value_functional(prob, spec: str, budget: int, mode: str = "exhaustive") -> Functional:
    """``builtin:value`` or ``builtin:value+<eps>`` (adds ``eps (T - t)``)."""
    if not spec.startswith("builtin:value"):
        raise InputError("", f"unknown functional {spec!r}")
    rest = spec[len("builtin:value"):]
    try:
        eps = float(rest) if rest else 0.0
    except ValueError:
        raise InputError("", f"bad perturbation in {spec!r}")
    if prob.name == "integrator" and len(prob.U) == 3 and prob.grid.n == 1:
        base = integrator_value_closed_form
    else:
        def base(p):
            return value(prob, p, mode, budget, workers=1).value
    T = prob.grid.T
    tags = LIP_TAGS if prob.name == "integrator" else {"continuous"}
    return Functional(lambda p: base(p) + eps * (T - p.t), frozenset(tags), spec)


def analytic_functional(spec: str, n: int) -> Functional:
    """``builtin:t``, ``builtin:neg_t`` or ``builtin:affine:<a1,..,an>:<M>``."""
    tags = frozenset(LIP_TAGS)
    if spec == "builtin:t":
        return Functional(lambda p: p.t, tags, "t")
    if spec == "builtin:neg_t":
        return Functional(lambda p: -p.t, tags, "-t")
    if spec.startswith("builtin:affine:"):
        try:
            _, _, a, M = spec.split(":")
            a = np.array([float(v) for v in a.split(",")])
            M = float(M)
        except ValueError:
            raise InputError("", f"bad affine functional {spec!r}")
        if a.shape != (n,):
            raise InputError("", "affine coefficient must have n entries")
        return Functional(lambda p: float(a @ p.x) + M * p.t, tags, "affine")
    raise InputError("", f"unknown functional {spec!r}")


def load_points(obj: dict, grid: GridSpec, seed: int) -> list[PathPoint]:
    if "points" in obj:
        return [parse_point(q, grid, f"/points/{i}") for i, q in enumerate(obj["points"])]
    r = obj["random"]
    rng = child_rng(r.get("seed", seed), 101)
    out = []
    for _ in range(r["count"]):
        t = grid.time(int(rng.integers(grid.m, grid.size - 1)))
        out.append(random_piecewise_affine(grid, t, rng, scale=r.get("scale", 1.0)))
    return out


# --- output ------------------------------------------------------------------------------

def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def emit_json(report: dict, args) -> str:
    report = dict(report)
    report["version"] = __version__
    report["seed"] = args.seed
    if not args.no_timestamp:
        report["timestamp"] = _dt.datetime.now(_dt.timezone.utc).isoformat()
    text = json.dumps(_clean(report), indent=2, sort_keys=True) + "\n"
    _write(text, args.out)
    return text


def emit_csv(header, rows, out) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    _write(buf.getvalue(), out)
    return buf.getvalue()


def _write(text: str, out: str | None):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# --- commands ----------------------------------------------------------------------------

def cmd_gauge_check(args):
    if args.paths:
        obj = load_input(args.paths, "points.json")
        grid = parse_grid(obj.get("grid", {"h": 1.0, "T": 1.0, "dt": 1 / 64}), "/grid", args.dt)
        pts = load_points(obj, grid, args.seed)
    else:
        grid = GridSpec(1.0, 1.0, args.dt or 1 / 64, args.n)
        pts = load_points({"random": {"count": args.budget or 1000}}, grid, args.seed)
    rows = []
    for i, p in enumerate(pts):
        lo, hi = check_V_bounds(p)
        gm = grad_V_margin(p) if p.in_G0 else 0.0
        rows.append([i, float(p.t), lo, hi, gm])
    emit_csv(["index", "t", "lower_margin", "upper_margin", "grad_margin"], rows, args.out)
    tol = 1e-12 if args.tol is None else args.tol
    for i, r in enumerate(rows):
        for j, name in ((2, "lower_margin"), (3, "upper_margin"), (4, "grad_margin")):
            if r[j] < -tol:
                raise AssertionFailure(f"/rows/{i}/{name}", f"gauge bound violated by {-r[j]:.3g}")


def cmd_counterexample(args):
    tol = 1e-3 if args.tol is None else args.tol
    res = counterexample_probe(args.l, tol=tol, dt=args.dt or 2.0 ** -12)
    rows = [[float(t), float(q), float(e) if i > 0 else float("nan")]
            for i, (t, q, e) in enumerate(zip(res.taus, res.quotients, np.r_[np.nan, res.extrapolated]))]
    rows.append(["limit", float("nan"), res.estimate])
    emit_csv(["tau", "quotient_over_l", "extrapolated"], rows, args.out)
    expected = 2 * (args.l - 1) / args.l
    if not res.converged:
        raise AssertionFailure("/rows/-1", "probe did not converge")
    if abs(res.estimate - expected) > tol:
        raise AssertionFailure("/rows/-1", f"limit {res.estimate} differs from {expected}")


def _problem_and_point(args):
    prob = parse_problem(load_input(args.problem, "problem.json"), args.dt)
    p = parse_point(load_input(args.point, "point.json"), prob.grid, "")
    return prob, p


def cmd_value(args):
    prob, p = _problem_and_point(args)
    budget = args.budget or 3 ** 10
    try:
        res = value(prob, p, args.mode, budget, workers=args.workers, seed=args.seed)
    except BudgetExceeded as e:
        raise InputError("/grid/dt", str(e))
    report = {"command": "value", "mode": args.mode, "t": p.t, "x_t": p.x, "budget": budget,
              "tolerance": 1e-9 if args.tol is None else args.tol, **res.to_dict(), "checks": {}}
    check = None
    if prob.name == "integrator" and prob.grid.n == 1 and len(prob.U) == 3 and args.mode == "exhaustive":
        cf = integrator_value_closed_form(p)
        lattice = abs(p.x[0] / prob.grid.dt - round(p.x[0] / prob.grid.dt)) < 1e-9
        if lattice or abs(p.x[0]) >= prob.grid.T - p.t:
            check = abs(cf - res.value)
            report["checks"]["closed_form"] = {"expected": cf, "error": check}
    emit_json(report, args)
    if check is not None and check > report["tolerance"]:
        raise AssertionFailure("/checks/closed_form/error", f"value differs from closed form by {check}")


def cmd_dpp(args):
    prob, p = _problem_and_point(args)
    budget = args.budget or 3 ** 10
    g = prob.grid
    taus = [args.tau] if args.tau is not None else [g.time(k) for k in range(g.index(p.t) + 1, g.size)]
    res = []
    try:
        for tau in taus:
            res.append({"tau": tau, "residual": dpp_residual(prob, p, tau, budget, args.workers)})
    except BudgetExceeded as e:
        raise InputError("/grid/dt", str(e))
    except GridError as e:
        raise InputError("", f"--tau: {e}")
    tol = 1e-9 if args.tol is None else args.tol
    emit_json({"command": "dpp", "t": p.t, "budget": budget, "tolerance": tol, "one_sided": False,
               "residuals": res}, args)
    for i, r in enumerate(res):
        if r["residual"] > tol:
            raise AssertionFailure(f"/residuals/{i}/residual", "dynamic programming residual above tolerance")


def _checks_setup(args):
    prob = parse_problem(load_input(args.problem, "problem.json"), args.dt)
    pobj = load_input(args.points, "points.json")
    pts = load_points(pobj, prob.grid, args.seed)
    H = bellman_hamiltonian(prob)
    phi = value_functional(prob, args.phi, args.budget or 3 ** 10)
    S = np.asarray(pobj["s"], dtype=float) if "s" in pobj else default_s_grid(prob.grid.n, H.c_H, seed=args.seed)
    return prob, pts, H, phi, S


def _ordering_failures(rows, tol):
    for i, r in enumerate(rows):
        res = r["results"]
        if "UM_MULTI" not in res:
            continue
        m = res["UM_MULTI"]["margin"]
        for c in ("UM_D0", "UV_INFEXT"):
            if c in res and res[c]["margin"] > m + tol:
                return f"/rows/{i}/results/{c}/margin"
    return None


def cmd_check_solution(args):
    prob, pts, H, phi, S = _checks_setup(args)
    crit = tuple(c.strip() for c in args.criteria.split(",")) if args.criteria else CRITERIA
    bad = [c for c in crit if c not in CRITERIA]
    if bad:
        raise InputError("", f"unknown criteria {bad}")
    tol = 1e-2 if args.tol is None else args.tol
    pairs = [(i, i % len(S)) for i in range(len(pts))]
    cv = cross_validate(phi, H, pts, S, None, crit, args.budget_search, args.seed, tol, pairs, args.workers)
    report = {"command": "check-solution", "phi": args.phi, "problem": prob.name, **cv.to_dict()}
    emit_json(report, args)
    ptr = _ordering_failures(cv.rows, 1e-9)
    if ptr:
        raise AssertionFailure(ptr, "margin ordering violated")
    if args.expect == "pass":
        for i, r in enumerate(cv.rows):
            for c, rr in r["results"].items():
                if rr["verdict"] == "FAIL":
                    raise AssertionFailure(f"/rows/{i}/results/{c}/verdict", "criterion failed")


def cmd_cross_validate(args):
    prob, pts, H, phi, S = _checks_setup(args)
    tol = 1e-2 if args.tol is None else args.tol
    pairs = [(i, i % len(S)) for i in range(len(pts))]
    cv = cross_validate(phi, H, pts, S, None, CRITERIA, args.budget_search, args.seed, tol, pairs, args.workers)
    up = {c: v for c, v in cv.verdicts.items() if c in UPPER}
    lo = {c: v for c, v in cv.verdicts.items() if c in LOWER}
    agree = len(set(up.values())) <= 1 and len(set(lo.values())) <= 1
    report = {"command": "cross-validate", "phi": args.phi, "problem": prob.name, "agreement": agree,
              **cv.to_dict()}
    emit_json(report, args)
    ptr = _ordering_failures(cv.rows, 1e-9)
    if ptr:
        raise AssertionFailure(ptr, "margin ordering violated")
    if not agree:
        raise AssertionFailure("/verdicts", "criteria disagree")


def cmd_bp_demo(args):
    if args.set:
        obj = load_input(args.set, "points.json")
        grid = parse_grid(obj.get("grid", {"h": 0.5, "T": 1.0, "dt": 1 / 64}), "/grid", args.dt)
        pts = load_points(obj, grid, args.seed)
        target = parse_point(obj["target"], grid, "/target") if "target" in obj else None
    else:
        grid = GridSpec(0.5, 1.0, args.dt or 1 / 64, args.n)
        pts = load_points({"random": {"count": args.budget or 200, "scale": args.alpha / 2}}, grid, args.seed)
        target = None
    alpha = args.alpha
    pts = [q for q in pts if q.in_G(alpha) and q.in_G0]
    if not pts:
        raise InputError("/points", "no point of the set lies in G(alpha) with t < T")
    X = DiscreteSet(pts, alpha)
    if target is None:
        target = constant_path(grid, 0.0, np.zeros(grid.n))
    phi = Functional(lambda q: rho_inf(q, target) ** 2, frozenset({"continuous", "rho1_lsc"}), "rho_inf^2")
    res = bp_minimize(phi, X, args.kappa, start=args.start, workers=args.workers)
    report = {"command": "bp-demo", "alpha": alpha, "kappa": args.kappa, "size": len(X),
              "tolerance": 1e-12, "one_sided": False, "budget": len(X), **res.to_dict()}
    emit_json(report, args)
    for name in ("psi_nonneg", "psi_upper", "exact_min", "anchor_bounds", "anchor_order", "dt_bound",
                 "grad_bound"):
        if not res.checks.get(name, False):
            raise AssertionFailure(f"/checks/{name}", f"{name} failed")


def cmd_subgrad_search(args):
    obj = load_input(args.point, "point.json")
    if "grid" not in obj:
        raise InputError("/grid", "the point needs a grid")
    grid = parse_grid(obj["grid"], "/grid", args.dt)
    p = parse_point(obj, grid, "")
    phi = analytic_functional(args.phi, grid.n)
    L = parse_L(args.L, grid.n)
    try:
        res = subgradient_search(phi, p, L, args.eta, seed=args.seed, workers=args.workers)
    except PreconditionError as e:
        emit_json({"command": "subgrad-search", "refused": True, "d0": e.d0, "reason": str(e),
                   "tolerance": 0.0, "one_sided": True, "budget": 0}, args)
        raise AssertionFailure("/d0", str(e))
    report = {"command": "subgrad-search", "refused": False, "eta": args.eta, "tolerance": 0.0,
              "one_sided": True, "budget": res.sizes["X"] * res.sizes["Y"], **res.to_dict()}
    if res.success:
        report["rho_inf"] = rho_inf(res.point, p)
    emit_json(report, args)
    if not res.success:
        raise AssertionFailure("/success", "no k met the thresholds")
    if report["rho_inf"] > args.eta:
        raise AssertionFailure("/rho_inf", "returned point outside the neighbourhood")


def cmd_regularity(args):
    prob = parse_problem(load_input(args.problem, "problem.json"), args.dt)
    rep = regularity_report(prob, args.alpha, args.budget or 20, args.seed, workers=args.workers)
    report = {"command": "regularity", "tolerance": 0.0, "one_sided": True, "budget": args.budget or 20,
              **rep.to_dict()}
    emit_json(report, args)
    if rep.outliers:
        raise AssertionFailure("/outliers", "pairs exceed the fitted Lipschitz bound")


COMMANDS = {
    "gauge-check": cmd_gauge_check, "counterexample": cmd_counterexample, "value": cmd_value,
    "dpp": cmd_dpp, "check-solution": cmd_check_solution, "cross-validate": cmd_cross_validate,
    "bp-demo": cmd_bp_demo, "subgrad-search": cmd_subgrad_search, "regularity": cmd_regularity,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--dt", type=float, default=None, help="grid step override")
    common.add_argument("--tol", type=float, default=None, help="tolerance override")
    common.add_argument("--budget", type=int, default=None)
    common.add_argument("--out", default=None, help="output file (stdout when omitted)")
    common.add_argument("--no-timestamp", action="store_true")
    common.add_argument("--workers", type=int, default=1)

    ap = argparse.ArgumentParser(prog="pathhj", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gauge-check", parents=[common])
    s.add_argument("--paths")
    s.add_argument("--n", type=int, default=1)
    s = sub.add_parser("counterexample", parents=[common])
    s.add_argument("--l", type=float, required=True)
    for name in ("value", "dpp"):
        s = sub.add_parser(name, parents=[common])
        s.add_argument("--problem", required=True)
        s.add_argument("--point", required=True)
        if name == "value":
            s.add_argument("--mode", choices=("exhaustive", "beam"), default="exhaustive")
        else:
            s.add_argument("--tau", type=float, default=None)
    for name in ("check-solution", "cross-validate"):
        s = sub.add_parser(name, parents=[common])
        s.add_argument("--problem", required=True)
        s.add_argument("--points", required=True)
        s.add_argument("--phi", default="builtin:value")
        s.add_argument("--budget-search", type=int, default=32)
        if name == "check-solution":
            s.add_argument("--criteria", default=None)
            s.add_argument("--expect", choices=("none", "pass"), default="none")
    s = sub.add_parser("bp-demo", parents=[common])
    s.add_argument("--alpha", type=float, default=1.0)
    s.add_argument("--kappa", type=float, default=0.25)
    s.add_argument("--set")
    s.add_argument("--start", choices=("min", "near"), default="near")
    s.add_argument("--n", type=int, default=1)
    s = sub.add_parser("subgrad-search", parents=[common])
    s.add_argument("--phi", required=True)
    s.add_argument("--point", required=True)
    s.add_argument("--L", default="ball:1")
    s.add_argument("--eta", type=float, default=0.1)
    s = sub.add_parser("regularity", parents=[common])
    s.add_argument("--problem", required=True)
    s.add_argument("--alpha", type=float, default=1.0)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    set_default_workers(args.workers)
    try:
        COMMANDS[args.command](args)
    except InputError as e:
        print(f"input error at {e.pointer or '/'}: {e}", file=sys.stderr)
        return 2
    except AssertionFailure as e:
        print(f"assertion failed at {e.pointer}: {e}", file=sys.stderr)
        return 1
    finally:
        set_default_workers(1)
    return 0
