"""Margin checks for the minimax and viscosity solution criteria, and their cross-validation.

Upper-type criteria pass when ``margin <= tol``; the lower ones (``LM``, ``LV``)
pass when ``margin >= -tol``.  The conditions quantify over all points,
directions, extensions and ``s``; here they are evaluated on finite grids with
seeded sampling, so a PASS is evidence and a FAIL is a certificate up to the
derivative-estimation error.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from ._parallel import child_rng, pmap
from .ci_calculus import (DirectionSet, Functional, Polyhedron, _omega_path, approx_subdifferential,
                          approx_superdifferential, default_l_grid, dir_deriv_d0, dir_deriv_multi,
                          lower_right_derivative, shift_by_s, single_values)
from .hj_model import HamiltonianSpec, char_ball_radius, extend_with_feedback, sample_characteristics
from .path_core import PathPoint, SampledPath, point_at, straight_extension

CRITERIA = ("UM", "LM", "UV", "LV", "UM_MULTI", "UV_INFEXT", "UM_LIP", "UM_D0")
UPPER = ("UM", "UV", "UM_MULTI", "UV_INFEXT", "UM_LIP", "UM_D0")
LOWER = ("LM", "LV")
DEFAULT_TOL = 1e-2


@dataclass
class CriterionReport:
    criterion: str
    t: float
    x_t: list
    params: dict
    margin: float
    tol: float
    one_sided: bool
    vacuous: bool = False
    trace: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.criterion not in CRITERIA:
            raise ValueError(f"unknown criterion {self.criterion}")
        if not np.isfinite(self.margin):
            raise ValueError("margin must be finite")

    @property
    def passed(self) -> bool:
        if self.criterion in LOWER:
            return self.margin >= -self.tol
        return self.margin <= self.tol

    @property
    def verdict(self) -> str:
        if self.vacuous:
            return "vacuous"
        return "PASS" if self.passed else "FAIL"

    def to_dict(self) -> dict:
        return {"criterion": self.criterion, "t": self.t, "x_t": self.x_t, "params": self.params,
                "estimate": float(self.margin), "margin": float(self.margin), "tolerance": self.tol,
                "one_sided": self.one_sided, "verdict": self.verdict, "trace": self.trace}


def _report(crit, p, params, margin, tol, one_sided, vacuous=False, trace=None):
    return CriterionReport(crit, float(p.t), [float(v) for v in p.x], params, float(margin), tol,
                           one_sided, vacuous, trace or {})


def _s_params(s) -> list:
    return [float(v) for v in np.atleast_1d(s)]


# --- integral (minimax) criteria -----------------------------------------------------

def _minimax_values(phi, H: HamiltonianSpec, p: PathPoint, tau: float, s, paths: Sequence[SampledPath]):
    g = p.grid
    if not tau > p.t:
        raise ValueError("tau must exceed t")
    k0, k1 = g.index(p.t), g.index(tau)
    s = np.asarray(s, dtype=float)
    phi_s = shift_by_s(phi, s)
    base = phi_s(p)
    out = np.empty(len(paths))
    for i, z in enumerate(paths):
        hv = np.array([H(PathPoint._trusted(g, z.values[: k + 1]), s) for k in range(k0, k1 + 1)])
        integral = g.dt * (hv.sum() - 0.5 * (hv[0] + hv[-1]))
        out[i] = phi_s(point_at(z, tau)) + integral
    return out - base


def _characteristics(p, H, budget, seed, extra):
    paths = sample_characteristics(p, H.c_H, budget, seed)
    return paths + list(extra)


def _refine_line(phi, H, p, tau, s, v0, sign):
    """Nelder-Mead over constant-velocity characteristics, clipped to the admissible ball."""
    c_H = H.c_H

    def path(v):
        return extend_with_feedback(p, c_H, lambda j, z, r: v)[0]

    def obj(v):
        return sign * _minimax_values(phi, H, p, tau, s, [path(v)])[0]

    res = minimize(obj, np.asarray(v0, dtype=float), method="Nelder-Mead",
                   options={"xatol": 1e-10, "fatol": 1e-12, "maxfev": 60 * p.grid.n + 40})
    return path(res.x)


def _minimax(crit, phi, H, p, tau, s, budget, seed, tol, extra_paths, refine):
    sign = 1.0 if crit == "UM" else -1.0
    paths = _characteristics(p, H, budget, seed, extra_paths)
    vals = _minimax_values(phi, H, p, tau, s, paths)
    if refine:
        r = char_ball_radius(p, H.c_H)
        eye = np.eye(p.grid.n)
        starts = [np.zeros(p.grid.n)] + [c * r * e for e in np.vstack([eye, -eye]) for c in (0.5, 1.0)]
        sv = _minimax_values(phi, H, p, tau, s, [straight_extension(p, v) for v in starts])
        v0 = starts[int(np.argmin(sign * sv))]
        paths.append(_refine_line(phi, H, p, tau, s, v0, sign))
        vals = np.append(vals, _minimax_values(phi, H, p, tau, s, paths[-1:]))
    j = int(np.argmin(sign * vals))
    return _report(crit, p, {"s": _s_params(s), "tau": float(tau), "budget": budget, "seed": seed},
                   vals[j], tol, True, trace={"witness": j, "candidates": len(paths)})


def check_upper_minimax(phi, H: HamiltonianSpec, p: PathPoint, tau: float, s, budget: int = 32,
                        seed: int = 0, tol: float = DEFAULT_TOL,
                        extra_paths: Sequence[SampledPath] = (), refine: bool = True) -> CriterionReport:
    """``min_z [phi_s(tau, z_tau) + int_t^tau H(., z, s)] - phi_s(t, x)`` over sampled characteristics.

    The sample is :func:`sample_characteristics` plus ``extra_paths`` (for
    instance optimal trajectories of a control problem) plus, with ``refine``,
    a constant-velocity characteristic tuned by Nelder-Mead.  The witness index
    points into that list.
    """
    return _minimax("UM", phi, H, p, tau, s, budget, seed, tol, extra_paths, refine)


def check_lower_minimax(phi, H: HamiltonianSpec, p: PathPoint, tau: float, s, budget: int = 32,
                        seed: int = 0, tol: float = DEFAULT_TOL,
                        extra_paths: Sequence[SampledPath] = (), refine: bool = True) -> CriterionReport:
    """Mirror of :func:`check_upper_minimax` with a maximum over the sampled characteristics."""
    return _minimax("LM", phi, H, p, tau, s, budget, seed, tol, extra_paths, refine)


# --- subgradient (viscosity) criteria ------------------------------------------------

def _p_box(poly: Polyhedron) -> float:
    L, d = poly.l_grid, poly.d
    nz = np.linalg.norm(L, axis=1) > 0
    d0 = d[~nz][0] if (~nz).any() else float(np.median(d))
    slopes = np.abs(d[nz] - d0) / np.linalg.norm(L[nz], axis=1) if nz.any() else np.ones(1)
    return 2.0 * float(slopes.max()) + 1.0


def subgradient_candidates(poly: Polyhedron, H: HamiltonianSpec, p: PathPoint, grid_pts: int = 41,
                           n_random: int = 64, seed: int = 0):
    """Candidates ``(p0, p)`` of the finite-constraint set that are extreme for ``p0 + H(p)``.

    For every ``p`` on a box lattice (random samples when ``n > 2``) the
    extreme admissible ``p0`` is taken (largest for sub-, smallest for
    superdifferentials), then the best one is refined by Nelder-Mead.  All
    returned pairs satisfy the constraints exactly.
    """
    n = p.grid.n
    R = _p_box(poly)
    if n <= 2:
        axis = np.linspace(-R, R, grid_pts)
        P = np.stack(np.meshgrid(*([axis] * n), indexing="ij"), axis=-1).reshape(-1, n)
    else:
        P = child_rng(seed, 5).uniform(-R, R, size=(n_random * n, n))
    P = np.vstack([np.zeros((1, n)), P])
    sign = 1.0 if poly.sense == "sub" else -1.0

    def score(q):
        return poly.best_p0(q) + H(p, q)

    vals = np.array([score(q) for q in P])
    j = int(np.argmax(sign * vals))
    res = minimize(lambda q: -sign * score(np.clip(q, -R, R)), P[j], method="Nelder-Mead",
                   options={"xatol": 1e-8, "fatol": 1e-12, "maxfev": 400})
    q_best = np.clip(res.x, -R, R)
    cands = [(poly.best_p0(q), q) for q in P]
    cands.append((poly.best_p0(q_best), q_best))
    return cands


def _viscosity(crit, phi, H, p, candidates, l_grid, tol, sense, seed):
    if l_grid is None:
        l_grid = default_l_grid(p, H.c_H, seed=seed)
    build = approx_subdifferential if sense == "sub" else approx_superdifferential
    poly = build(phi, p, l_grid)
    if candidates is None:
        candidates = subgradient_candidates(poly, H, p, seed=seed)
    accepted = [(float(a), np.asarray(b, dtype=float)) for a, b in candidates if poly.contains(a, b, 1e-9)]
    params = {"l_grid_size": int(len(poly.l_grid)), "candidates": len(candidates), "seed": seed}
    if not accepted:
        return _report(crit, p, params, 0.0, tol, False, vacuous=True)
    vals = np.array([a + H(p, b) for a, b in accepted])
    j = int(np.argmax(vals)) if sense == "sub" else int(np.argmin(vals))
    trace = {"p0": accepted[j][0], "p": [float(v) for v in accepted[j][1]], "accepted": len(accepted)}
    return _report(crit, p, params, vals[j], tol, False, trace=trace)


def check_upper_viscosity(phi: Functional, H: HamiltonianSpec, p: PathPoint, candidates=None,
                          l_grid=None, tol: float = DEFAULT_TOL, seed: int = 0) -> CriterionReport:
    """``max (p0 + H(p))`` over accepted members of the finite-direction subdifferential."""
    return _viscosity("UV", phi, H, p, candidates, l_grid, tol, "sub", seed)


def check_lower_viscosity(phi: Functional, H: HamiltonianSpec, p: PathPoint, candidates=None,
                          l_grid=None, tol: float = DEFAULT_TOL, seed: int = 0) -> CriterionReport:
    """``min (q0 + H(q))`` over accepted members of the finite-direction superdifferential."""
    return _viscosity("LV", phi, H, p, candidates, l_grid, tol, "super", seed)


# --- infinitesimal criteria ----------------------------------------------------------

def _ball(p, H) -> DirectionSet:
    return DirectionSet.ball(p.grid.n, char_ball_radius(p, H.c_H))


def check_um_multi(phi, H: HamiltonianSpec, p: PathPoint, s, budget: int = 32, seed: int = 0,
                   tol: float = DEFAULT_TOL, **kw) -> CriterionReport:
    """Lower derivative of ``phi_s`` in the multi-valued direction ``B_cH(p)`` plus ``H(p, s)``."""
    d = dir_deriv_multi(shift_by_s(phi, s), p, _ball(p, H), budget=budget, seed=seed, **kw)
    return _report("UM_MULTI", p, {"s": _s_params(s), "budget": budget, "seed": seed},
                   d.estimate + H(p, s), tol, True,
                   trace={"derivative": d.estimate, "eps_trace": [[float(a), float(b)] for a, b in d.trace]})


def check_uv_infext(phi, H: HamiltonianSpec, p: PathPoint, s, budget: int = 32, seed: int = 0,
                    tol: float = DEFAULT_TOL, speed_factors: Sequence[float] = (2.0, 4.0),
                    include_multi_witness: bool = True, **kw) -> CriterionReport:
    """Infimum over sampled Lipschitz extensions of the lower right derivative of ``phi_s``, plus ``H``.

    The sample holds the characteristics, straight lines at several multiples
    of the characteristic speed (the infimum runs over all Lipschitz
    extensions) and, by default, the witness of the multi-valued estimate, so
    the margin never exceeds the ``UM_MULTI`` one.
    """
    phi_s = shift_by_s(phi, s)
    paths = list(sample_characteristics(p, H.c_H, budget, seed))
    r = char_ball_radius(p, H.c_H)
    eye = np.eye(p.grid.n)
    for f in speed_factors:
        for l in np.vstack([eye, -eye]):
            paths.append(straight_extension(p, f * r * l))
    if include_multi_witness:
        d = dir_deriv_multi(phi_s, p, _ball(p, H), budget=budget, seed=seed, **kw)
        paths.append(_omega_path(p, d.witness))
    tail = kw.get("tail", 2)
    sched = kw.get("schedule", None)
    vals = np.array([lower_right_derivative(phi_s, p, z, sched, tail).estimate for z in paths])
    j = int(np.argmin(vals))
    return _report("UV_INFEXT", p, {"s": _s_params(s), "budget": budget, "seed": seed},
                   vals[j] + H(p, s), tol, True, trace={"witness": j, "candidates": len(paths)})


def check_um_lip(phi: Functional, H: HamiltonianSpec, p: PathPoint, s, l_grid=None,
                 tol: float = DEFAULT_TOL, seed: int = 0) -> CriterionReport:
    """``min_l [lower derivative along l - <s, l>] + H(p, s)`` over a finite direction grid."""
    if "locally_lipschitz" not in phi.tags:
        raise ValueError("the finite-direction criterion needs a locally Lipschitz functional")
    if l_grid is None:
        l_grid = default_l_grid(p, H.c_H, seed=seed)
    L = np.atleast_2d(l_grid)
    s = np.asarray(s, dtype=float)
    vals = single_values(phi, p, L) - L @ s
    j = int(np.argmin(vals))
    return _report("UM_LIP", p, {"s": _s_params(s), "l_grid_size": len(L), "seed": seed},
                   vals[j] + H(p, s), tol, True, trace={"l": [float(v) for v in L[j]]})


def check_um_d0(phi, H: HamiltonianSpec, p: PathPoint, s, budget: int = 32, seed: int = 0,
                tol: float = DEFAULT_TOL, **kw) -> CriterionReport:
    """The joint-infimum derivative of ``phi_s`` over ``B_cH(p)`` plus ``H(p, s)``."""
    d = dir_deriv_d0(shift_by_s(phi, s), p, _ball(p, H), budget=budget, seed=seed, **kw)
    return _report("UM_D0", p, {"s": _s_params(s), "budget": budget, "seed": seed},
                   d.estimate + H(p, s), tol, True,
                   trace={"derivative": d.estimate, "multi": d.extra["multi"]})


# --- cross-validation ----------------------------------------------------------------

def default_s_grid(n: int, c_H: float, n_random: int = 2, seed: int = 0) -> np.ndarray:
    eye = np.eye(n)
    g = child_rng(seed, 3).normal(size=(n_random, n))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return np.vstack([np.zeros((1, n)), eye, -eye, 2 * eye, -2 * eye, max(1.0, c_H) * g])


def default_tau_grid(p: PathPoint) -> list[float]:
    """One step ahead and the dyadic fractions 1/8, 1/4, 1/2, 1 of the remaining horizon."""
    g = p.grid
    k0 = g.index(p.t)
    left = g.size - 1 - k0
    ks = sorted({1} | {max(1, left >> k) for k in range(4)})
    return [g.time(k0 + k) for k in ks]


@dataclass
class CrossValidation:
    rows: list
    verdicts: dict
    tol: float

    def to_dict(self) -> dict:
        return {"rows": self.rows, "verdicts": self.verdicts, "tolerance": self.tol}


def run_criteria(phi, H, p: PathPoint, s, taus: Sequence[float], criteria=CRITERIA, budget: int = 32,
                 seed: int = 0, tol: float = DEFAULT_TOL, l_grid=None) -> dict:
    """Every requested criterion at one ``(p, s)``; minimax margins take the worst ``tau``."""
    out = {}
    lip = "locally_lipschitz" in getattr(phi, "tags", ())
    for c in criteria:
        if c == "UM":
            reps = [check_upper_minimax(phi, H, p, tau, s, budget, seed, tol) for tau in taus]
            out[c] = max(reps, key=lambda r: r.margin)
        elif c == "LM":
            reps = [check_lower_minimax(phi, H, p, tau, s, budget, seed, tol) for tau in taus]
            out[c] = min(reps, key=lambda r: r.margin)
        elif c == "UV" and lip:
            out[c] = check_upper_viscosity(phi, H, p, l_grid=l_grid, tol=tol, seed=seed)
        elif c == "LV" and lip:
            out[c] = check_lower_viscosity(phi, H, p, l_grid=l_grid, tol=tol, seed=seed)
        elif c == "UM_MULTI":
            out[c] = check_um_multi(phi, H, p, s, budget, seed, tol)
        elif c == "UV_INFEXT":
            out[c] = check_uv_infext(phi, H, p, s, budget, seed, tol)
        elif c == "UM_LIP" and lip:
            out[c] = check_um_lip(phi, H, p, s, l_grid, tol, seed)
        elif c == "UM_D0":
            out[c] = check_um_d0(phi, H, p, s, budget, seed, tol)
    return out


def cross_validate(phi, H: HamiltonianSpec, points: Sequence[PathPoint], s_grid=None, tau_grid=None,
                   criteria=CRITERIA, budget: int = 32, seed: int = 0, tol: float = DEFAULT_TOL,
                   pairs: Sequence[tuple[int, int]] | None = None, workers: int | None = None
                   ) -> CrossValidation:
    """Run the applicable criteria over ``points x s_grid`` (or the given index ``pairs``).

    The viscosity-type criteria on a single point do not depend on ``s``; they
    are still reported per row.  A criterion's overall verdict is PASS when it
    passes on every row.
    """
    if s_grid is None:
        s_grid = default_s_grid(points[0].grid.n, H.c_H, seed=seed)
    s_grid = np.atleast_2d(np.asarray(s_grid, dtype=float))
    if pairs is None:
        pairs = [(i, j) for i in range(len(points)) for j in range(len(s_grid))]

    def job(ij):
        i, j = ij
        p = points[i]
        taus = tau_grid if tau_grid is not None else default_tau_grid(p)
        reps = run_criteria(phi, H, p, s_grid[j], taus, criteria, budget, seed + 7919 * i, tol)
        return {"point": i, "s": [float(v) for v in s_grid[j]],
                "results": {c: r.to_dict() for c, r in reps.items()}}

    rows = pmap(job, pairs, workers)
    verdicts = {}
    for c in criteria:
        vs = [r["results"][c]["verdict"] for r in rows if c in r["results"]]
        if vs:
            verdicts[c] = "FAIL" if "FAIL" in vs else "PASS"
    return CrossValidation(rows, verdicts, tol)
