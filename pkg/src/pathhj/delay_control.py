"""Optimal control of time-delay systems with piecewise-constant controls.

Motions are integrated by explicit Euler with the history taken at the left
node of each step.  The value functional is computed either by exhaustive
enumeration of all control signals (the reference) or by beam search.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ._parallel import child_rng, pmap
from .hj_model import HamiltonianSpec
from .path_core import GridSpec, PathPoint, SampledPath, random_piecewise_affine, rho_1, sup_norm


@dataclass(frozen=True)
class DelayControlProblem:
    """Dynamics ``z' = f(tau, z_tau, u)``, running cost ``chi``, terminal cost ``sigma``.

    ``f`` and ``chi`` receive the current point ``(tau, z_tau)`` and a control
    vector; ``sigma`` receives the full path on ``[-h, T]``.  ``sigma_lower`` is
    an optional declared lower bound for ``sigma`` (makes beam pruning
    admissible when ``chi >= 0``).
    """

    f: Callable[[PathPoint, np.ndarray], np.ndarray]
    chi: Callable[[PathPoint, np.ndarray], float]
    sigma: Callable[[SampledPath], float]
    U: tuple
    grid: GridSpec
    c_fchi: float = 1.0
    sigma_lower: float | None = None
    chi_nonneg: bool = False
    chi_zero: bool = False
    name: str = "problem"
    f_batch: Callable | None = None
    chi_batch: Callable | None = None
    sigma_batch: Callable | None = None

    def __post_init__(self):
        U = np.atleast_2d(np.asarray(self.U, dtype=float))
        if U.size == 0:
            raise ValueError("control set must be non-empty")
        if U.shape[0] == 1 and U.shape[1] > 1 and not isinstance(self.U[0], (list, tuple, np.ndarray)):
            U = U.reshape(-1, 1)
        object.__setattr__(self, "U", tuple(map(tuple, U)))

    @property
    def controls(self) -> np.ndarray:
        return np.asarray(self.U, dtype=float)


@dataclass
class ControlSignal:
    """One control index per grid step of ``[t, T]``."""

    indices: tuple

    def __post_init__(self):
        self.indices = tuple(int(i) for i in self.indices)

    def __len__(self):
        return len(self.indices)


def _steps_left(p: PathPoint) -> int:
    return p.grid.size - len(p.values)


def integrate_motion(prob: DelayControlProblem, p: PathPoint, u: ControlSignal | Sequence[int]) -> SampledPath:
    """Explicit Euler on ``[t, T]`` starting from the history ``p``."""
    g = p.grid
    idx = u.indices if isinstance(u, ControlSignal) else tuple(u)
    steps = _steps_left(p)
    if len(idx) != steps:
        raise ValueError(f"expected {steps} control indices, got {len(idx)}")
    U = prob.controls
    vals = np.empty((g.size, g.n))
    k0 = len(p.values)
    vals[:k0] = p.values
    for j in range(steps):
        k = k0 - 1 + j
        cur = PathPoint._trusted(g, vals[: k + 1])
        vals[k + 1] = vals[k] + g.dt * np.asarray(prob.f(cur, U[idx[j]]), dtype=float)
    return SampledPath(g, g.T, vals)


def _running_cost_samples(prob, z: SampledPath, k0: int, idx) -> np.ndarray:
    """``chi`` at the nodes ``k0 .. end``; the control on the final node repeats the last step's."""
    g = z.grid
    U = prob.controls
    out = np.empty(g.size - k0)
    for j in range(len(out)):
        k = k0 + j
        uj = idx[min(j, len(idx) - 1)]
        out[j] = prob.chi(PathPoint._trusted(g, z.values[: k + 1]), U[uj])
    return out


def cost(prob: DelayControlProblem, p: PathPoint, u) -> float:
    """``sigma(z) + int_t^T chi`` (trapezoid) along the Euler motion."""
    idx = u.indices if isinstance(u, ControlSignal) else tuple(u)
    z = integrate_motion(prob, p, idx)
    if prob.chi_zero or len(idx) == 0:
        run = 0.0
    else:
        f = _running_cost_samples(prob, z, len(p.values) - 1, idx)
        run = float(z.grid.dt * (f.sum() - 0.5 * (f[0] + f[-1])))
    return float(prob.sigma(z)) + run


@dataclass
class ValueResult:
    value: float
    witness: ControlSignal
    mode: str
    evaluated: int
    one_sided: bool
    budget: int

    def to_dict(self) -> dict:
        return {"estimate": self.value, "witness": list(self.witness.indices), "mode": self.mode,
                "evaluated": self.evaluated, "one_sided": self.one_sided, "budget": self.budget}


class BudgetExceeded(ValueError):
    pass


def _tree_min(prob, g: GridSpec, vals: np.ndarray, k: int, k_end: int, run: float, prev_chi):
    """Exhaustive minimum of ``cost`` over all signals on steps ``k .. k_end - 1``.

    ``vals`` holds the motion up to node ``k`` (it is overwritten beyond it);
    ``run`` is the running cost accumulated so far and ``prev_chi`` the
    integrand sample at node ``k`` for the control of the previous step (or
    ``None`` at the very first node).
    """
    U = prob.controls
    if k == k_end:
        return float(prob.sigma(SampledPath._trusted(g, vals[: k + 1]))) + run, ()
    cur = PathPoint._trusted(g, vals[: k + 1])
    best = (np.inf, ())
    for i in range(len(U)):
        nxt = vals[k] + g.dt * np.asarray(prob.f(cur, U[i]), dtype=float)
        vals[k + 1] = nxt
        if prob.chi_zero:
            add = 0.0
            chi_next = None
        else:
            c_here = prob.chi(cur, U[i])
            nxt_pt = PathPoint._trusted(g, vals[: k + 2])
            chi_next = prob.chi(nxt_pt, U[i])
            add = 0.5 * g.dt * (c_here + chi_next)
        v, tail = _tree_min(prob, g, vals, k + 1, k_end, run + add, chi_next)
        if v < best[0]:
            best = (v, (i,) + tail)
    return best


def value(prob: DelayControlProblem, p: PathPoint, mode: str = "exhaustive", budget: int = 3 ** 10,
          beam_width: int = 64, workers: int | None = None, seed: int = 0) -> ValueResult:
    """``min_u cost(p, u)`` over piecewise-constant signals.

    ``exhaustive`` enumerates the whole control tree (raises when
    ``|U|^steps > budget``); ``beam`` keeps the ``beam_width`` best prefixes by
    accumulated cost and refines the winner by coordinate descent.  The beam
    value is an upper bound of the exhaustive one.
    """
    g = p.grid
    steps = _steps_left(p)
    nU = len(prob.U)
    if steps == 0:
        return ValueResult(float(prob.sigma(p.path)), ControlSignal(()), mode, 1, False, budget)
    if mode == "exhaustive":
        total = nU ** steps
        if total > budget:
            raise BudgetExceeded(f"{nU}^{steps} = {total} signals exceed budget {budget}")
        if _batched(prob):
            v, idx = _batch_min(prob, p)
            return ValueResult(v, ControlSignal(idx), "exhaustive", total, False, budget)
        k0 = len(p.values) - 1

        def branch(i):
            vals = np.empty((g.size, g.n))
            vals[: k0 + 1] = p.values
            cur = PathPoint._trusted(g, vals[: k0 + 1])
            vals[k0 + 1] = vals[k0] + g.dt * np.asarray(prob.f(cur, prob.controls[i]), dtype=float)
            if prob.chi_zero:
                add, cn = 0.0, None
            else:
                nxt = PathPoint._trusted(g, vals[: k0 + 2])
                cn = prob.chi(nxt, prob.controls[i])
                add = 0.5 * g.dt * (prob.chi(cur, prob.controls[i]) + cn)
            v, tail = _tree_min(prob, g, vals, k0 + 1, g.size - 1, add, cn)
            return v, (i,) + tail

        results = pmap(branch, range(nU), workers)
        best = min(range(nU), key=lambda i: (results[i][0], i))
        return ValueResult(results[best][0], ControlSignal(results[best][1]), "exhaustive", total, False, budget)
    if mode == "beam":
        return _beam(prob, p, beam_width, budget)
    raise ValueError("mode must be 'exhaustive' or 'beam'")


def _batched(prob) -> bool:
    return prob.f_batch is not None and prob.sigma_batch is not None and (
        prob.chi_zero or prob.chi_batch is not None)


def _batch_min(prob, p: PathPoint):
    """Level-synchronous enumeration of the whole control tree with batched callables.

    ``f_batch(k, V, U)`` maps histories ``V`` of shape ``(B, k + 1, n)`` and the
    control array ``U`` to derivatives of shape ``(B, |U|, n)``; ``chi_batch``
    likewise returns ``(B, |U|)`` at the left node and is also called on the
    right node with the same control (``chi_batch(k + 1, V_next, U)`` restricted
    to the matching control); ``sigma_batch`` maps ``(B, size, n)`` to ``(B,)``.
    Children are ordered control-major inside each parent, so ``argmin`` returns
    the lexicographically smallest optimal signal.
    """
    g = p.grid
    U = prob.controls
    nU = len(U)
    k0 = len(p.values) - 1
    V = p.values[None, :, :].copy()
    run = np.zeros(1)
    for k in range(k0, g.size - 1):
        D = np.asarray(prob.f_batch(k, V, U), dtype=float)
        B = V.shape[0]
        nxt = V[:, None, -1:, :] + g.dt * D.reshape(B, nU, 1, g.n)
        Vn = np.concatenate([np.repeat(V[:, None, :, :], nU, axis=1), nxt], axis=2)
        Vn = Vn.reshape(B * nU, k + 2, g.n)
        if not prob.chi_zero:
            left = np.asarray(prob.chi_batch(k, V, U), dtype=float).reshape(B * nU)
            right_all = np.asarray(prob.chi_batch(k + 1, Vn, U), dtype=float).reshape(B * nU, nU)
            right = right_all[np.arange(B * nU), np.tile(np.arange(nU), B)]
            run = np.repeat(run, nU) + 0.5 * g.dt * (left + right)
        else:
            run = np.repeat(run, nU)
        V = Vn
    total = np.asarray(prob.sigma_batch(V), dtype=float) + run
    j = int(np.argmin(total))
    steps = g.size - 1 - k0
    idx = []
    for _ in range(steps):
        idx.append(j % nU)
        j //= nU
    return float(total.min()), tuple(reversed(idx))


def _beam(prob, p: PathPoint, width: int, budget: int) -> ValueResult:
    g = p.grid
    steps = _steps_left(p)
    nU = len(prob.U)
    # each entry: (accumulated running cost, indices, values array)
    beam = [(0.0, (), p.values.copy())]
    evaluated = 0
    for j in range(steps):
        cand = []
        for acc, idx, vals in beam:
            cur = PathPoint._trusted(g, vals)
            for i in range(nU):
                nxt = vals[-1] + g.dt * np.asarray(prob.f(cur, prob.controls[i]), dtype=float)
                nv = np.vstack([vals, nxt])
                add = 0.0
                if not prob.chi_zero:
                    add = 0.5 * g.dt * (prob.chi(cur, prob.controls[i])
                                        + prob.chi(PathPoint._trusted(g, nv), prob.controls[i]))
                cand.append((acc + add, idx + (i,), nv))
                evaluated += 1
        if j == steps - 1:
            scored = [(a + float(prob.sigma(SampledPath(g, g.T, v))), ix, v) for a, ix, v in cand]
        else:
            scored = cand
        scored.sort(key=lambda c: (c[0], c[1]))
        beam = scored[:width]
    best_v, best_idx = beam[0][0], beam[0][1]
    # coordinate-descent refinement
    improved = True
    while improved:
        improved = False
        for j in range(steps):
            for i in range(nU):
                if i == best_idx[j]:
                    continue
                trial = best_idx[:j] + (i,) + best_idx[j + 1 :]
                v = cost(prob, p, trial)
                evaluated += 1
                if v < best_v - 1e-15:
                    best_v, best_idx, improved = v, trial, True
    return ValueResult(best_v, ControlSignal(best_idx), "beam", evaluated, True, budget)


def bellman_H(prob: DelayControlProblem, p: PathPoint, s) -> float:
    """``min_u <s, f(p, u)> + chi(p, u)`` over the finite control set."""
    s = np.asarray(s, dtype=float)
    return float(min(np.dot(s, np.asarray(prob.f(p, u), dtype=float)) + prob.chi(p, u) for u in prob.controls))


def bellman_hamiltonian(prob: DelayControlProblem, c_H: float | None = None):
    return HamiltonianSpec(lambda p, s: bellman_H(prob, p, s), c_H or prob.c_fchi, f"bellman:{prob.name}")


def dpp_residual(prob: DelayControlProblem, p: PathPoint, tau: float, budget: int = 3 ** 10,
                 workers: int | None = None) -> float:
    """``|value(p) - min_u [int_t^tau chi + value(tau, z_tau)]|`` with exhaustive enumeration."""
    g = p.grid
    if not tau > p.t:
        raise ValueError("tau must exceed t")
    k_tau = g.index(tau)
    k0 = len(p.values) - 1
    v0 = value(prob, p, "exhaustive", budget, workers=workers).value
    U = prob.controls
    vals = np.empty((k_tau + 1, g.n))
    vals[: k0 + 1] = p.values

    # depth-first over the prefixes on [t, tau]; each node is integrated once
    def walk(k, run):
        if k == k_tau:
            q = PathPoint._trusted(g, vals.copy())
            return run + value(prob, q, "exhaustive", budget, workers=1).value
        cur = PathPoint._trusted(g, vals[: k + 1])
        out = np.inf
        for u in U:
            vals[k + 1] = vals[k] + g.dt * np.asarray(prob.f(cur, u), dtype=float)
            add = 0.0
            if not prob.chi_zero:
                add = 0.5 * g.dt * (prob.chi(cur, u) + prob.chi(PathPoint._trusted(g, vals[: k + 2]), u))
            out = min(out, walk(k + 1, run + add))
        return out

    best = walk(k0, 0.0)
    return abs(v0 - best)


# --- builtin problems ----------------------------------------------------------------

def integrator_problem(grid: GridSpec, U=(-1.0, 0.0, 1.0), sigma: str = "norm") -> DelayControlProblem:
    """``z' = u`` with ``chi = 0`` and ``sigma = |z(T)|`` (or ``|z(T)|^2``)."""
    sig = terminal_cost(sigma)
    U = np.asarray(U, dtype=float).reshape(-1, grid.n)
    return DelayControlProblem(lambda p, u: u, lambda p, u: 0.0, sig, tuple(map(tuple, U)), grid,
                               c_fchi=float(np.max(np.linalg.norm(U, axis=1))) or 1.0,
                               sigma_lower=0.0, chi_nonneg=True, chi_zero=True, name="integrator",
                               f_batch=lambda k, V, U: np.broadcast_to(U, (V.shape[0],) + U.shape),
                               sigma_batch=terminal_cost_batch(sigma))


def linear_delay_problem(grid: GridSpec, A0, A1, B, U, sigma: str = "norm",
                         chi: Callable | None = None, c_fchi: float | None = None) -> DelayControlProblem:
    """``z'(tau) = A0 z(tau) + A1 z(tau - h) + B u``."""
    n = grid.n
    A0 = np.asarray(A0, dtype=float).reshape(n, n)
    A1 = np.asarray(A1, dtype=float).reshape(n, n)
    U = np.atleast_2d(np.asarray(U, dtype=float))
    B = np.asarray(B, dtype=float).reshape(n, U.shape[1])
    m = grid.m

    def f(p, u):
        v = p.values
        return A0 @ v[-1] + A1 @ v[-1 - m] + B @ u

    if c_fchi is None:
        c_fchi = float(max(np.linalg.norm(A0, 2) + np.linalg.norm(A1, 2),
                           max(np.linalg.norm(B @ u) for u in U), 1e-12))
    def f_batch(k, V, Uarr):
        drift = V[:, -1, :] @ A0.T + V[:, -1 - m, :] @ A1.T
        return drift[:, None, :] + (Uarr @ B.T)[None, :, :]

    chi_fn = chi or (lambda p, u: 0.0)
    return DelayControlProblem(f, chi_fn, terminal_cost(sigma), tuple(map(tuple, U)), grid, c_fchi,
                               sigma_lower=0.0, chi_nonneg=chi is None, chi_zero=chi is None,
                               name="linear_delay", f_batch=f_batch if chi is None else None,
                               sigma_batch=terminal_cost_batch(sigma))


def terminal_cost(kind: str):
    if kind == "norm":
        return lambda z: float(np.linalg.norm(z.values[-1]))
    if kind == "quadratic":
        return lambda z: float(np.dot(z.values[-1], z.values[-1]))
    if kind == "zero":
        return lambda z: 0.0
    raise ValueError(f"unknown terminal cost {kind!r}")


def terminal_cost_batch(kind: str):
    if kind == "norm":
        return lambda V: np.linalg.norm(V[:, -1, :], axis=1)
    if kind == "quadratic":
        return lambda V: np.einsum("bi,bi->b", V[:, -1, :], V[:, -1, :])
    if kind == "zero":
        return lambda V: np.zeros(V.shape[0])
    raise ValueError(f"unknown terminal cost {kind!r}")


def integrator_value_closed_form(p: PathPoint) -> float:
    """``max(0, |x(t)| - (T - t))`` for the scalar integrator with ``U = {-1, 0, 1}``."""
    return max(0.0, float(np.linalg.norm(p.x)) - (p.grid.T - p.t))


def method_of_steps_solution(tau, h: float):
    """Solution of ``z'(tau) = -z(tau - h)`` with ``z = 1`` on ``[-h, 0]``, valid on ``[0, 2h]``."""
    tau = np.asarray(tau, dtype=float)
    first = 1 - tau
    s = tau - h
    # on [h, 2h]: z' = -(1 - (tau - h)); integrate from h where z(h) = 1 - h
    second = (1 - h) - s + 0.5 * s ** 2
    return np.where(tau <= h, first, second)


# --- regularity diagnostics ----------------------------------------------------------

@dataclass
class RegularityReport:
    alpha: float
    alpha_star: float
    gronwall: float
    pairs: list = field(default_factory=list)
    lam: float | None = None
    outliers: int = 0
    residual_max: float = 0.0
    modulus: list = field(default_factory=list)
    small_scale_jump: float = 0.0

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "alpha_star": self.alpha_star, "gronwall": self.gronwall,
                "pairs": self.pairs, "lambda": self.lam, "outliers": self.outliers,
                "residual_max": self.residual_max, "modulus": self.modulus,
                "small_scale_jump": self.small_scale_jump}


def _clip_to_ball(p: PathPoint, alpha: float) -> PathPoint:
    s = sup_norm(p)
    return p if s <= alpha else PathPoint.from_values(p.grid, p.t, p.values * (alpha / s))


def regularity_report(prob: DelayControlProblem, alpha: float, budget: int = 20, seed: int = 0,
                      sigma_lipschitz: bool = True, value_budget: int = 3 ** 10,
                      t_choices: Sequence[float] | None = None, outlier_factor: float = 1.5,
                      pairs: Sequence[tuple] | None = None, small_scale: float = 1e-2,
                      workers: int | None = None) -> RegularityReport:
    """Empirical growth radius, ``|dvalue|`` vs ``rho_1`` scatter, and a fitted Lipschitz constant.

    Same-time pairs are sampled from ``G(alpha)`` (or passed in ``pairs``).
    The Lipschitz constant is fitted as the largest ratio on the first half of
    the pairs; the second half counts as outliers when it exceeds
    ``outlier_factor`` times that.  ``modulus`` bins the largest ``|dvalue|`` by
    ``rho_1`` scale and ``small_scale_jump`` is the largest ``|dvalue|`` among
    pairs closer than ``small_scale``; it stays large when the value has no
    modulus of continuity.
    """
    g = prob.grid
    rng = child_rng(seed, 31)
    if t_choices is None:
        t_choices = [g.time(k) for k in range(g.size - 1) if g.time(k) >= 0]
        t_choices = t_choices[-max(1, min(len(t_choices), 6)):]
    if pairs is None:
        pairs = []
        for _ in range(budget):
            t = float(t_choices[int(rng.integers(0, len(t_choices)))])
            p = _clip_to_ball(random_piecewise_affine(g, t, rng, scale=alpha / 2), alpha)
            q = PathPoint.from_values(g, t, p.values + rng.choice([0.01, 0.05, 0.2])
                                      * rng.normal(size=p.values.shape))
            pairs.append((p, _clip_to_ball(q, alpha)))

    def job(pq):
        p, q = pq
        vp = value(prob, p, "exhaustive", value_budget, workers=1)
        vq = value(prob, q, "exhaustive", value_budget, workers=1)
        reach = max(sup_norm(integrate_motion(prob, p, vp.witness)),
                    sup_norm(integrate_motion(prob, q, vq.witness)))
        for start in (p, q):
            for ui in range(len(prob.U)):
                reach = max(reach, sup_norm(integrate_motion(prob, start, (ui,) * _steps_left(start))))
        return rho_1(p, q), abs(vp.value - vq.value), reach, p.t

    rows = pmap(job, pairs, workers)
    alpha_star = max([alpha] + [r[2] for r in rows])
    grw = max((1 + alpha) * float(np.exp(prob.c_fchi * (g.T - r[3]))) - 1 for r in rows)
    arr = np.array([[r[0], r[1]] for r in rows])
    ratios = arr[:, 1] / np.maximum(arr[:, 0], 1e-300)
    half = max(1, len(rows) // 2)
    fitted = float(ratios[:half].max())
    hold = arr[half:]
    excess = hold[:, 1] - outlier_factor * fitted * hold[:, 0] if len(hold) else np.zeros(1)
    edges = [small_scale, 0.1, 1.0, np.inf]
    modulus, lo = [], 0.0
    for e in edges:
        sel = (arr[:, 0] > lo) & (arr[:, 0] <= e)
        modulus.append([float(e), float(arr[sel, 1].max()) if sel.any() else None, int(sel.sum())])
        lo = e
    small = arr[arr[:, 0] <= small_scale, 1]
    return RegularityReport(alpha, alpha_star, grw, arr.tolist(), fitted if sigma_lipschitz else None,
                            int(np.sum(excess > 1e-12)), float(excess.max()) if len(excess) else 0.0,
                            modulus, float(small.max()) if small.size else 0.0)
