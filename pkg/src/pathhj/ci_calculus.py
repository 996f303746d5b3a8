"""Numerical estimators for right derivatives along extensions and ci-sub/superdifferentials.

Limits in ``tau -> t`` are replaced by difference quotients on a dyadic schedule
of grid offsets; infima over extension families are replaced by minima over
seeded samples.  Every infimum estimate is therefore an upper bound of the true
value and is labelled ``one_sided``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.optimize import minimize, nnls

from ._parallel import child_rng
from .path_core import (PathPoint, SampledPath, make_extension, point_at, straight_extension,
                        sup_norm)

TAGS = frozenset({"continuous", "rho1_lsc", "rho1_usc", "locally_lipschitz"})
_MIRROR = {"rho1_lsc": "rho1_usc", "rho1_usc": "rho1_lsc"}


@dataclass(frozen=True)
class Functional:
    """A map ``G -> R`` with caller-declared regularity tags."""

    fn: Callable[[PathPoint], float]
    tags: frozenset = frozenset()
    name: str = "phi"

    def __post_init__(self):
        tags = frozenset(self.tags)
        bad = tags - TAGS
        if bad:
            raise ValueError(f"unknown tags {sorted(bad)}")
        object.__setattr__(self, "tags", tags)

    def __call__(self, p: PathPoint) -> float:
        return float(self.fn(p))

    def __neg__(self) -> "Functional":
        fn = self.fn
        return Functional(lambda p: -fn(p), frozenset(_MIRROR.get(t, t) for t in self.tags),
                          f"-{self.name}")

    def plus(self, other: Callable[[PathPoint], float], name: str | None = None,
             tags: Iterable[str] | None = None) -> "Functional":
        fn = self.fn
        return Functional(lambda p: fn(p) + other(p), self.tags if tags is None else tags,
                          name or f"{self.name}+g")


def shift_by_s(phi: Functional, s) -> Functional:
    """``phi_s(t, x) = phi(t, x) - <s, x(t)>``."""
    s = np.asarray(s, dtype=float)
    fn = phi.fn
    if not np.any(s):
        return Functional(fn, phi.tags, phi.name)
    return Functional(lambda p: fn(p) - float(np.dot(s, p.x)), phi.tags, f"{phi.name}_s")


# --- schedules -----------------------------------------------------------------------

DEFAULT_KS = tuple(range(4, 13))


def dyadic_schedule(p: PathPoint, ks: Sequence[int] = DEFAULT_KS) -> np.ndarray:
    """Step counts ``m`` with ``m dt ~ 2^-k (T - t)``, clamped to at least one step.

    Returned in decreasing order without duplicates.
    """
    left = p.grid.steps - p.grid.step_index(p.t)
    if left < 1:
        raise ValueError("derivatives need t < T")
    out: list[int] = []
    for k in ks:
        m = max(1, int(round(left * 2.0 ** -k)))
        if not out or m < out[-1]:
            out.append(m)
        elif m > out[-1]:
            raise ValueError("schedule must be shrinking")
    return np.array(out, dtype=int)


@dataclass
class DerivativeEstimate:
    """A limit estimate with its quotient trace (``(tau - t, quotient)`` rows)."""

    estimate: float
    trace: list
    budget: int = 0
    seed: int | None = None
    one_sided: bool = False
    witness: np.ndarray | None = field(default=None, repr=False)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {"estimate": float(self.estimate),
             "trace": [[float(a), float(b)] for a, b in self.trace],
             "budget": int(self.budget), "seed": self.seed, "one_sided": bool(self.one_sided)}
        d.update(self.extra)
        return d


def _quotients(phi, p: PathPoint, z: SampledPath, steps: np.ndarray, base: float | None = None):
    base = phi(p) if base is None else base
    dt = p.grid.dt
    out = np.empty(len(steps))
    for j, m in enumerate(steps):
        tau = p.t + m * dt
        out[j] = (phi(point_at(z, tau)) - base) / (m * dt)
    return out


def _extrapolate_to_zero(m: np.ndarray, q: np.ndarray) -> float:
    """Value at ``m = 0`` of the polynomial through the points ``(m, q)``."""
    out = 0.0
    for i in range(len(m)):
        w = 1.0
        for j in range(len(m)):
            if j != i:
                w *= m[j] / (m[j] - m[i])
        out += w * q[i]
    return float(out)


def _reduce(steps: np.ndarray, q: np.ndarray, tail: int | None, extrapolate: bool, upper: bool):
    if extrapolate and len(q) >= 2:
        k = min(3, len(q))
        return _extrapolate_to_zero(steps[-k:].astype(float), q[-k:])
    v = q if tail is None else q[-tail:]
    return float(v.max() if upper else v.min())


def lower_right_derivative(phi, p: PathPoint, z: SampledPath, schedule=None, tail: int | None = 2,
                           extrapolate: bool = False, upper: bool = False) -> DerivativeEstimate:
    """liminf (``upper=True``: limsup) of ``(phi(tau, z_tau) - phi(t, x)) / (tau - t)``.

    ``schedule`` lists step counts (default :func:`dyadic_schedule`).  The
    estimate is the min (max) of the quotients at the ``tail`` finest levels;
    ``tail=None`` uses every level, which makes the estimate a running min.
    With ``extrapolate`` the estimate is instead the polynomial extrapolation
    to zero offset through the three finest quotients, which removes the
    ``O(tau - t)`` and ``O((tau - t)^2)`` bias for smooth functionals; ``tail``
    is then ignored.
    """
    if not p.in_G0:
        raise ValueError("derivatives need t < T")
    steps = dyadic_schedule(p) if schedule is None else np.asarray(schedule, dtype=int)
    if len(steps) == 0:
        raise ValueError("empty schedule")
    q = _quotients(phi, p, z, steps)
    est = _reduce(steps, q, tail, extrapolate, upper)
    trace = [(m * p.grid.dt, v) for m, v in zip(steps, q)]
    return DerivativeEstimate(est, trace)


def upper_right_derivative(phi, p, z, schedule=None, tail: int | None = 2,
                           extrapolate: bool = False) -> DerivativeEstimate:
    return lower_right_derivative(phi, p, z, schedule, tail, extrapolate, upper=True)


def dir_deriv_single(phi, p: PathPoint, l, schedule=None, tail: int | None = 2,
                     extrapolate: bool = False, upper: bool = False) -> DerivativeEstimate:
    """Lower (or upper) right derivative along ``z(tau) = x(t) + (tau - t) l``."""
    return lower_right_derivative(phi, p, straight_extension(p, l), schedule, tail, extrapolate, upper)


def single_values(phi, p: PathPoint, l_grid, schedule=None, tail: int | None = 2,
                  upper: bool = False) -> np.ndarray:
    """``dir_deriv_single`` for every row of ``l_grid`` (shared base value)."""
    steps = dyadic_schedule(p) if schedule is None else np.asarray(schedule, dtype=int)
    base = phi(p)
    out = np.empty(len(l_grid))
    for i, l in enumerate(np.atleast_2d(l_grid)):
        q = _quotients(phi, p, straight_extension(p, l), steps, base)
        out[i] = _reduce(steps, q, tail, False, upper)
    return out


# --- direction sets ------------------------------------------------------------------

@dataclass(frozen=True)
class DirectionSet:
    """A convex compact set of derivative values: a centred ball or a polytope."""

    kind: str
    n: int
    radius: float = 0.0
    vertices: tuple = ()
    epsilon: float = 0.0

    def __post_init__(self):
        if self.kind not in ("ball", "polytope"):
            raise ValueError("kind must be 'ball' or 'polytope'")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.kind == "ball" and self.radius < 0:
            raise ValueError("radius must be non-negative")
        if self.kind == "polytope":
            v = np.atleast_2d(np.asarray(self.vertices, dtype=float))
            if v.size == 0 or v.shape[1] != self.n:
                raise ValueError("polytope needs at least one vertex of dimension n")
            object.__setattr__(self, "vertices", tuple(map(tuple, v)))

    @classmethod
    def ball(cls, n: int, radius: float, epsilon: float = 0.0) -> "DirectionSet":
        return cls("ball", n, radius=float(radius), epsilon=epsilon)

    @classmethod
    def polytope(cls, vertices, epsilon: float = 0.0) -> "DirectionSet":
        v = np.atleast_2d(np.asarray(vertices, dtype=float))
        return cls("polytope", v.shape[1], vertices=tuple(map(tuple, v)), epsilon=epsilon)

    def enlarged(self, eps: float) -> "DirectionSet":
        return DirectionSet(self.kind, self.n, self.radius, self.vertices, eps)

    @property
    def V(self) -> np.ndarray:
        return np.asarray(self.vertices, dtype=float)

    def max_norm(self) -> float:
        """Largest norm of a point of the (non-enlarged) set."""
        if self.kind == "ball":
            return self.radius
        return float(np.max(np.linalg.norm(self.V, axis=1)))

    def core_vertices(self) -> np.ndarray:
        """Vertices of ``L`` itself (coordinate extremes for a ball)."""
        if self.kind == "ball":
            e = np.eye(self.n) * self.radius
            return np.vstack([e, -e])
        return self.V

    def _hull_projection(self, v: np.ndarray) -> np.ndarray:
        V = self.V
        if len(V) == 1:
            return V[0].copy()
        w = 1e3
        A = np.vstack([V.T, w * np.ones((1, len(V)))])
        b = np.concatenate([v, [w]])
        lam, _ = nnls(A, b)
        s = lam.sum()
        if s > 0:
            lam = lam / s
        return lam @ V

    def project(self, v) -> np.ndarray:
        """Nearest point of ``[L]^eps``."""
        v = np.asarray(v, dtype=float)
        if self.kind == "ball":
            r = self.radius + self.epsilon
            nv = np.linalg.norm(v)
            return v if nv <= r else v * (r / nv)
        c = self._hull_projection(v)
        d = np.linalg.norm(v - c)
        if d <= self.epsilon:
            return v
        return c + (v - c) * (self.epsilon / d)

    def contains(self, v, tol: float = 1e-9) -> bool:
        v = np.asarray(v, dtype=float)
        return bool(np.linalg.norm(self.project(v) - v) <= tol)

    def sample(self, rng: np.random.Generator, n_random: int = 8, n_interior: int = 8) -> np.ndarray:
        """Extreme points of ``[L]^eps`` plus seeded boundary and interior samples."""
        n, eps = self.n, self.epsilon
        eye = np.eye(n)
        if self.kind == "ball":
            r = self.radius + eps
            pts = [np.zeros(n)] if r == 0 else [r * eye, -r * eye]
            if r > 0:
                g = rng.normal(size=(n_random, n))
                g /= np.linalg.norm(g, axis=1, keepdims=True)
                pts.append(r * g)
                u = rng.random(n_interior) ** (1.0 / n)
                g2 = rng.normal(size=(n_interior, n))
                g2 /= np.linalg.norm(g2, axis=1, keepdims=True)
                pts.append(r * u[:, None] * g2)
            out = np.vstack(pts)
        else:
            V = self.V
            pts = [V]
            if eps > 0:
                for v in V:
                    pts.append(v + eps * eye)
                    pts.append(v - eps * eye)
            if len(V) > 1 and n_interior:
                lam = rng.dirichlet(np.ones(len(V)), size=n_interior)
                pts.append(lam @ V)
            if eps > 0 and n_random:
                g = rng.normal(size=(n_random, n))
                g /= np.linalg.norm(g, axis=1, keepdims=True)
                base = V[rng.integers(0, len(V), size=n_random)]
                pts.append(base + eps * g)
            out = np.vstack(pts)
        return out


# --- multi-valued directions ---------------------------------------------------------

def _omega_path(p: PathPoint, seq: np.ndarray) -> SampledPath:
    """Extension whose first ``len(seq)`` step derivatives are ``seq``; the last one is held."""
    steps = p.grid.size - len(p.values)
    k = min(len(seq), steps)
    d = np.empty((steps, p.grid.n))
    d[:k] = seq[:k]
    if steps > k:
        d[k:] = seq[k - 1]
    return make_extension(p, d)


def _seq_key(value: float, seq: np.ndarray):
    return (value, tuple(np.round(seq.ravel(), 15)))


@dataclass
class _Search:
    phi: object
    p: PathPoint
    steps: np.ndarray  # quotient offsets (in grid steps)
    L: DirectionSet
    base: float
    tail: int | None
    evaluations: int = 0

    @property
    def K(self) -> int:
        return int(self.steps.max())

    def value(self, seq: np.ndarray) -> float:
        self.evaluations += 1
        z = _omega_path(self.p, seq)
        q = _quotients(self.phi, self.p, z, self.steps, self.base)
        return _reduce(self.steps, q, self.tail, False, False)


def _search_omega(S: _Search, rng: np.random.Generator, budget: int, seeds: list[np.ndarray]):
    """Sampled minimisation over piecewise-constant selections with values in ``[L]^eps``."""
    K = S.K
    samples = S.L.sample(rng)
    best = None

    def consider(seq):
        nonlocal best
        v = S.value(seq)
        key = _seq_key(v, seq)
        if best is None or key < best[0]:
            best = (key, seq.copy())

    for s in seeds:
        s = np.atleast_2d(np.asarray(s, dtype=float))
        if len(s) < K:
            s = np.vstack([s, np.repeat(s[-1:], K - len(s), axis=0)])
        consider(np.array([S.L.project(r) for r in s[:K]]))
    for l in samples:
        consider(np.tile(l, (K, 1)))
    if K > 1:
        for _ in range(max(0, budget)):
            idx = rng.integers(0, len(samples), size=K)
            consider(samples[idx])
    # continuous refinement of the constant selection through the current best value
    l0 = best[1][0]

    def f(l):
        l = S.L.project(l)
        return S.value(np.tile(l, (K, 1)))

    scale = max(S.L.max_norm() + S.L.epsilon, 1e-3)
    res = minimize(f, l0, method="Nelder-Mead",
                   options={"xatol": 1e-6 * scale, "fatol": 1e-10, "maxfev": 60 * S.p.grid.n + 60,
                            "initial_simplex": np.vstack([l0, l0 + 0.05 * scale * np.eye(S.p.grid.n)])})
    consider(np.tile(S.L.project(res.x), (K, 1)))
    # coordinate descent over the steps
    if K > 1:
        improved = True
        sweeps = 0
        while improved and sweeps < 3:
            improved = False
            sweeps += 1
            for j in range(K):
                cur = best[1]
                for l in samples:
                    if np.array_equal(cur[j], l):
                        continue
                    trial = cur.copy()
                    trial[j] = l
                    old = best[0]
                    consider(trial)
                    if best[0] < old:
                        improved = True
                        cur = best[1]
    return best[0][0], best[1]


DEFAULT_EPS = (1e-2, 1e-3, 1e-4)


def dir_deriv_multi(phi, p: PathPoint, L: DirectionSet, eps_schedule: Sequence[float] = DEFAULT_EPS,
                    budget: int = 32, seed: int = 0, schedule=None, tail: int | None = 2,
                    seeds: Sequence[np.ndarray] = ()) -> DerivativeEstimate:
    """Lower right derivative in the multi-valued direction ``L`` (sampled; an upper estimate).

    For each enlargement ``eps`` the infimum over piecewise-constant selections
    with values in ``[L]^eps`` is approximated; the estimate reported is the one
    at the last (smallest) ``eps``.
    """
    if budget <= 0:
        raise ValueError("budget must be positive")
    if not p.in_G0:
        raise ValueError("derivatives need t < T")
    steps = dyadic_schedule(p) if schedule is None else np.asarray(schedule, dtype=int)
    window = steps if tail is None else steps[-tail:]
    base = phi(p)
    trace, witness, est, evals = [], None, None, 0
    for i, eps in enumerate(eps_schedule):
        S = _Search(phi, p, window, L.enlarged(eps), base, None)
        est, witness = _search_omega(S, child_rng(seed, i), budget, list(seeds))
        evals += S.evaluations
        trace.append((eps, est))
    return DerivativeEstimate(est, trace, budget, seed, True, witness,
                              {"evaluations": evals, "kind": "multi"})


def dir_deriv_d0(phi, p: PathPoint, L: DirectionSet, delta_schedule: Sequence[float] | None = None,
                 budget: int = 32, seed: int = 0, schedule=None, tail: int | None = 2,
                 eps_schedule: Sequence[float] = DEFAULT_EPS) -> DerivativeEstimate:
    """Joint infimum over ``tau in (t, t + delta]`` and selections with values in ``[L]^eps``.

    The window ``delta`` cannot shrink below the grid step, so the enlargement
    of ``L`` is decoupled from it and taken as ``min(delta, eps)`` with ``eps``
    the last entry of ``eps_schedule``; otherwise the enlargement would bias
    the estimate by ``delta`` times the Lipschitz constant of ``phi``.

    The search is seeded with the witness of :func:`dir_deriv_multi` (same seed),
    whose admissible set is contained in the one searched here as long as every
    ``delta`` covers the quotient offsets used there; the default schedule
    guarantees that, so the estimate never exceeds the multi-valued one.
    """
    if budget <= 0:
        raise ValueError("budget must be positive")
    steps = dyadic_schedule(p) if schedule is None else np.asarray(schedule, dtype=int)
    window = steps if tail is None else steps[-tail:]
    dt = p.grid.dt
    if delta_schedule is None:
        delta_schedule = (2 * window.max() * dt, window.max() * dt)
    multi = dir_deriv_multi(phi, p, L, eps_schedule, budget, seed, steps, tail)
    left = p.grid.steps - p.grid.step_index(p.t)
    base = phi(p)
    trace, est, witness = [], None, None
    for i, delta in enumerate(delta_schedule):
        m = max(1, min(left, int(np.floor(delta / dt + 1e-9))))
        offsets = np.arange(m, 0, -1)
        enlarged = L.enlarged(min(delta, eps_schedule[-1]) if len(eps_schedule) else delta)
        S = _Search(phi, p, offsets, enlarged, base, None)
        est, witness = _search_omega(S, child_rng(seed, 1000 + i), budget, [multi.witness])
        trace.append((delta, est))
    return DerivativeEstimate(est, trace, budget, seed, True, witness,
                              {"multi": multi.estimate, "kind": "d0"})


# --- finite-direction sub/superdifferentials -----------------------------------------

def default_l_grid(p: PathPoint, c_H: float, n_random: int | None = None, seed: int = 0,
                   unit: bool = True) -> np.ndarray:
    """``{0}``, the coordinate directions at radius ``c_H (1 + |x|)`` and at unit length,
    ``2n`` seeded random directions at that radius, and halves of all of them."""
    n = p.grid.n
    r = c_H * (1 + sup_norm(p))
    n_random = 2 * n if n_random is None else n_random
    eye = np.eye(n)
    dirs = [r * eye, -r * eye]
    g = child_rng(seed, 77).normal(size=(n_random, n))
    if n_random:
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        dirs.append(r * g)
    D = np.vstack(dirs)
    rows = [np.zeros((1, n)), D, 0.5 * D]
    if unit:
        rows += [eye, -eye]
    return np.unique(np.vstack(rows), axis=0)


@dataclass
class Polyhedron:
    """Finite-constraint outer approximation of a ci-sub- or superdifferential.

    ``sense = 'sub'``: ``p0 + <p, l_i> <= d_i``; ``sense = 'super'``: ``>=``.
    """

    l_grid: np.ndarray
    d: np.ndarray
    sense: str
    tags: frozenset = frozenset()

    def slack(self, p0: float, p) -> float:
        """Smallest constraint slack (negative means violated)."""
        lhs = p0 + self.l_grid @ np.asarray(p, dtype=float)
        return float(np.min(self.d - lhs)) if self.sense == "sub" else float(np.min(lhs - self.d))

    def contains(self, p0: float, p, tol: float = 1e-9) -> bool:
        return self.slack(p0, p) >= -tol

    def best_p0(self, p) -> float:
        """Largest admissible ``p0`` (sub) or smallest admissible ``q0`` (super) for the given ``p``."""
        v = self.d - self.l_grid @ np.asarray(p, dtype=float)
        return float(v.min()) if self.sense == "sub" else float(v.max())

    def negated(self) -> "Polyhedron":
        """The image under ``(p0, p) -> (-p0, -p)``: the set for ``-phi`` of the other sense."""
        return Polyhedron(self.l_grid, -self.d, "super" if self.sense == "sub" else "sub", self.tags)


def approx_subdifferential(phi: Functional, p: PathPoint, l_grid, schedule=None,
                           tail: int | None = 2) -> Polyhedron:
    """``{(p0, p): p0 + <p, l> <= lower derivative along l, for l in l_grid}``."""
    if "locally_lipschitz" not in getattr(phi, "tags", ()):
        raise ValueError("the finite-direction description needs a locally Lipschitz functional")
    L = np.atleast_2d(np.asarray(l_grid, dtype=float))
    return Polyhedron(L, single_values(phi, p, L, schedule, tail), "sub", phi.tags)


def approx_superdifferential(phi: Functional, p: PathPoint, l_grid, schedule=None,
                             tail: int | None = 2) -> Polyhedron:
    """``{(q0, q): q0 + <q, l> >= upper derivative along l, for l in l_grid}``."""
    if "locally_lipschitz" not in getattr(phi, "tags", ()):
        raise ValueError("the finite-direction description needs a locally Lipschitz functional")
    L = np.atleast_2d(np.asarray(l_grid, dtype=float))
    return Polyhedron(L, single_values(phi, p, L, schedule, tail, upper=True), "super", phi.tags)
