"""Hamiltonians, the characteristic ball, and sampled characteristic extensions."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ._parallel import child_rng
from .path_core import (GridSpec, PathPoint, SampledPath, make_extension, random_piecewise_affine,
                        rho_1, sup_norm)


@dataclass(frozen=True)
class HamiltonianSpec:
    """``H(t, x, s)`` together with its declared growth constant ``c_H``."""

    fn: Callable[[PathPoint, np.ndarray], float]
    c_H: float
    name: str = "H"
    path_independent: bool = False

    def __post_init__(self):
        if not (np.isfinite(self.c_H) and self.c_H > 0):
            raise ValueError("c_H must be positive and finite")

    def __call__(self, p: PathPoint, s) -> float:
        return float(self.fn(p, np.asarray(s, dtype=float)))


def linear_hamiltonian(b, c_H: float | None = None) -> HamiltonianSpec:
    """``H(t, x, s) = <s, b>``."""
    b = np.asarray(b, dtype=float)
    return HamiltonianSpec(lambda p, s: float(np.dot(s, b)), c_H or max(float(np.linalg.norm(b)), 1e-12),
                           "linear", True)


def norm_scaled_hamiltonian(c_H: float) -> HamiltonianSpec:
    """``H(t, x, s) = c_H (1 + |x|) |s|``; the growth bound holds with equality."""
    return HamiltonianSpec(lambda p, s: c_H * (1 + sup_norm(p)) * float(np.linalg.norm(s)), c_H,
                           "norm_scaled")


def zero_hamiltonian(c_H: float = 1.0) -> HamiltonianSpec:
    return HamiltonianSpec(lambda p, s: 0.0, c_H, "zero", True)


@dataclass
class ValidationReport:
    checked: int
    violations: int
    worst_excess: float
    worst_cases: list = field(default_factory=list)
    modulus_table: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.violations == 0

    def to_dict(self) -> dict:
        return {"checked": self.checked, "violations": self.violations,
                "worst_excess": self.worst_excess, "worst_cases": self.worst_cases,
                "modulus_table": self.modulus_table, "ok": self.ok}


def validate_assumption_H(H: HamiltonianSpec, grid: GridSpec, budget: int = 200, seed: int = 0,
                          alpha: float = 2.0, tol: float = 1e-9, keep: int = 5) -> ValidationReport:
    """Sampled check of ``|H(p, s) - H(p, r)| <= c_H (1 + |x|) |s - r|``.

    Also tabulates ``|H(p, s) - H(q, s)|`` against ``rho_1(p, q)`` at fixed ``s`` for
    nearby pairs (a sampled modulus of continuity).
    """
    rng = child_rng(seed, 11)
    cases = []
    table = []
    for i in range(budget):
        t = grid.time(int(rng.integers(grid.m, grid.size - 1)))
        p = random_piecewise_affine(grid, t, rng, scale=alpha / 2)
        s = rng.normal(size=grid.n) * rng.choice([0.1, 1.0, 5.0])
        r = rng.normal(size=grid.n) * rng.choice([0.1, 1.0, 5.0])
        lhs = abs(H(p, s) - H(p, r))
        rhs = H.c_H * (1 + sup_norm(p)) * float(np.linalg.norm(s - r))
        cases.append((lhs - rhs, i, float(t)))
        if i < min(budget, 50):
            q = PathPoint.from_values(grid, t, p.values + 0.01 * rng.normal(size=p.values.shape))
            table.append([rho_1(p, q), abs(H(p, s) - H(q, s))])
    excess = np.array([c[0] for c in cases])
    order = np.argsort(-excess, kind="stable")[:keep]
    worst = [{"excess": float(cases[j][0]), "sample": int(cases[j][1]), "t": cases[j][2]} for j in order]
    return ValidationReport(budget, int(np.sum(excess > tol)), float(excess.max()), worst, table)


def char_ball_radius(p, c_H: float) -> float:
    """``c_H (1 + |x|)``, the radius of the admissible derivative ball at ``p``."""
    return c_H * (1 + sup_norm(p))


def _clip(v: np.ndarray, r: float) -> np.ndarray:
    nv = np.linalg.norm(v)
    return v if nv <= r else v * (r / nv)


def extend_with_feedback(p: PathPoint, c_H: float, rule: Callable[[int, np.ndarray, float], np.ndarray]
                         ) -> tuple[SampledPath, np.ndarray]:
    """Build an extension step by step, clipping each derivative to the left-node ball radius.

    ``rule(j, z_left, running_sup)`` proposes the derivative on step ``j``.
    """
    g = p.grid
    steps = g.size - len(p.values)
    z = p.x.copy()
    sup = sup_norm(p)
    d = np.empty((steps, g.n))
    for j in range(steps):
        r = c_H * (1 + sup)
        d[j] = _clip(np.asarray(rule(j, z, r), dtype=float), r)
        z = z + g.dt * d[j]
        sup = max(sup, float(np.linalg.norm(z)))
    return make_extension(p, d), d


def sample_characteristics(p: PathPoint, c_H: float, count: int = 32, seed: int = 0,
                           directions: np.ndarray | None = None) -> list[SampledPath]:
    """Extensions with ``|z'| <= c_H (1 + |z_tau|)`` on every step (left-node radius).

    The list starts with the frozen extension, then straight lines through the
    coordinate directions (at the initial radius and at unit length) and any
    extra ``directions``, then the same lines stopped at each dyadic fraction
    of the horizon, and finally seeded random piecewise-constant selections.
    """
    if count <= 0:
        raise ValueError("count must be positive")
    if not p.in_G0:
        raise ValueError("characteristics start from t < T")
    g = p.grid
    n = g.n
    r0 = char_ball_radius(p, c_H)
    eye = np.eye(n)
    lines = [r0 * eye, -r0 * eye, eye, -eye, 0.5 * r0 * eye, -0.5 * r0 * eye]
    if directions is not None:
        lines.append(np.atleast_2d(directions))
    L = np.unique(np.vstack(lines), axis=0)
    out = [extend_with_feedback(p, c_H, lambda j, z, r: np.zeros(n))[0]]
    for l in L:
        out.append(extend_with_feedback(p, c_H, lambda j, z, r, l=l: l)[0])
    steps = g.size - len(p.values)
    stops = sorted({max(1, steps >> k) for k in range(1, 6)} - {steps})
    for l in L:
        for st in stops:
            out.append(extend_with_feedback(p, c_H, lambda j, z, r, l=l, st=st: l if j < st else 0 * l)[0])
    rng = child_rng(seed, 23)
    for _ in range(count):
        switches = np.sort(rng.integers(0, steps, size=int(rng.integers(1, 4))))
        dirs = rng.normal(size=(len(switches) + 1, n))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        scales = rng.random(len(switches) + 1)

        def rule(j, z, r, switches=switches, dirs=dirs, scales=scales):
            seg = int(np.searchsorted(switches, j, side="right"))
            return dirs[seg] * scales[seg] * r

        out.append(extend_with_feedback(p, c_H, rule)[0])
    return out


def gronwall_bound(p, c_H: float, T: float | None = None) -> float:
    """Envelope ``(1 + |x|) e^{c_H (T - t)} - 1`` for the sup-norm along characteristics."""
    T = p.grid.T if T is None else T
    return (1 + sup_norm(p)) * float(np.exp(c_H * (T - p.t))) - 1
