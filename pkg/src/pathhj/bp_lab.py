"""Smooth variational-principle perturbations on finite subsets of path space.

``bp_minimize`` builds the anchor sequence and perturbation ``psi`` on a finite
proxy set, ``subgradient_search`` runs the penalised two-set construction that
turns a positive joint-infimum derivative into an explicit subgradient, and
``gauge_axiom_suite`` samples the gauge-type properties of ``mu_alpha``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._parallel import child_rng, pmap
from .ci_calculus import (DirectionSet, approx_subdifferential, default_l_grid, dir_deriv_d0,
                          _omega_path)
from .gauge import GaugeParams, eval_mu_alpha, grad_V_of_values, grad1_Psi, mu_difference
from .path_core import PathPoint, SampledPath, point_at, random_piecewise_affine, rho_inf, sup_norm


class PreconditionError(ValueError):
    """The joint-infimum derivative estimate is not positive; the search is refused."""

    def __init__(self, message: str, d0: float):
        super().__init__(message)
        self.d0 = d0


def _key(p: PathPoint):
    return (round(float(p.t), 12), p.values.tobytes())


@dataclass
class DiscreteSet:
    """A finite proxy of a closed subset of ``G(alpha) n G0``; duplicates are dropped in order."""

    points: list
    alpha: float
    closed_flag: bool = True

    def __post_init__(self):
        if not self.points:
            raise ValueError("the set must be non-empty")
        seen, out = set(), []
        for p in self.points:
            if not p.in_G0:
                raise ValueError("points must satisfy t < T")
            if not p.in_G(self.alpha + 1e-12):
                raise ValueError(f"point outside G({self.alpha})")
            k = _key(p)
            if k not in seen:
                seen.add(k)
                out.append(p)
        self.points = out

    def __len__(self):
        return len(self.points)

    def __getitem__(self, i):
        return self.points[i]

    def covering_radius(self, probes: Sequence[PathPoint]) -> float:
        """Largest ``rho_inf`` distance from a probe point to its nearest member."""
        return max(min(rho_inf(q, p) for p in self.points) for q in probes)


@dataclass
class Perturbation:
    """``psi = kappa * sum_k 2^-k mu_alpha(., anchor_k)`` over finitely many anchors."""

    anchors: list
    kappa: float
    alpha: float
    T: float

    def __post_init__(self):
        if not (0 < self.kappa <= 1):
            raise ValueError("kappa must lie in (0, 1]")

    @property
    def gauge(self) -> GaugeParams:
        return GaugeParams(self.alpha, self.T)

    @property
    def tail_bound(self) -> float:
        """Bound ``kappa c_alpha 2^(1-K)`` on the omitted series tail (``K`` anchors kept)."""
        return self.kappa * self.gauge.c_alpha * 2.0 ** (1 - len(self.anchors))

    def to_dict(self) -> dict:
        return {"kappa": self.kappa, "alpha": self.alpha, "anchors": len(self.anchors),
                "anchor_times": [float(a.t) for a in self.anchors], "tail_bound": self.tail_bound}


def eval_psi(pert: Perturbation, p: PathPoint) -> float:
    g = pert.gauge
    return pert.kappa * sum(2.0 ** -k * eval_mu_alpha(p, a, g) for k, a in enumerate(pert.anchors))


def psi_ci_derivatives(pert: Perturbation, p: PathPoint) -> tuple[float, np.ndarray]:
    """Closed-form ``(d_t psi, grad psi)``; needs ``p.t`` at or after every anchor time."""
    if not p.in_G0:
        raise ValueError("derivatives need t < T")
    late = [float(a.t) for a in pert.anchors if a.t > p.t + 1e-12]
    if late:
        raise ValueError(f"anchor times {late} exceed t = {p.t}; psi need not be ci-differentiable here")
    dt_psi = 0.0
    grad = np.zeros(p.grid.n)
    for k, a in enumerate(pert.anchors):
        dt_psi += 2.0 ** (1 - k) * (p.t - a.t)
        grad += 2.0 ** -k * grad_V_of_values(mu_difference(p, a))
    return pert.kappa * dt_psi, pert.kappa * grad


@dataclass
class BPResult:
    minimizer: PathPoint
    index: int
    perturbation: Perturbation
    objective: float
    anchor_indices: list
    anchor_mu: list
    psi_range: tuple
    checks: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"index": self.index, "t": float(self.minimizer.t), "objective": self.objective,
                "anchor_indices": self.anchor_indices, "anchor_mu": self.anchor_mu,
                "psi_range": list(self.psi_range), "perturbation": self.perturbation.to_dict(),
                "checks": self.checks}


def _mu_column(X: DiscreteSet, a: PathPoint, g: GaugeParams, workers) -> np.ndarray:
    return np.array(pmap(lambda p: eval_mu_alpha(p, a, g), X.points, workers))


def bp_minimize(phi, X: DiscreteSet, kappa: float, max_anchors: int = 40, start: str = "min",
                phi_values: np.ndarray | None = None, workers: int | None = None) -> BPResult:
    """Anchor iteration for the perturbed minimisation of ``phi`` over the finite set ``X``.

    ``start='min'`` takes the exact minimiser of ``phi`` as the first anchor;
    ``start='near'`` takes the largest value among points within ``kappa**2``
    of the minimum (a genuine near-minimiser, which exercises the iteration).
    Each next anchor minimises ``phi + psi_k`` over ``X`` (lowest index on ties,
    the current anchor first); the loop stops when an anchor repeats.
    """
    if len(X) == 0:
        raise ValueError("X is empty")
    if not (0 < kappa <= 1):
        raise ValueError("kappa must lie in (0, 1]")
    f = np.array([phi(p) for p in X.points]) if phi_values is None else np.asarray(phi_values, float)
    T = X.points[0].grid.T
    g = GaugeParams(X.alpha, T)
    if start == "min":
        i0 = int(np.argmin(f))
    elif start == "near":
        ok = np.flatnonzero(f <= f.min() + kappa ** 2)
        i0 = int(ok[np.argmax(f[ok])])
    else:
        raise ValueError("start must be 'min' or 'near'")
    anchors = [i0]
    psi = kappa * _mu_column(X, X[i0], g, workers)
    while True:
        tot = f + psi
        m = tot.min()
        cur = anchors[-1]
        nxt = cur if tot[cur] <= m else int(np.flatnonzero(tot <= m)[0])
        if nxt == cur or len(anchors) >= max_anchors:
            break
        anchors.append(nxt)
        psi = psi + kappa * 2.0 ** -(len(anchors) - 1) * _mu_column(X, X[nxt], g, workers)
    tot = f + psi
    star = anchors[-1] if tot[anchors[-1]] <= tot.min() else int(np.argmin(tot))
    pert = Perturbation([X[i] for i in anchors], kappa, X.alpha, T)
    p_star = X[star]
    mus = [eval_mu_alpha(p_star, X[i], g) for i in anchors]
    checks = {
        "psi_nonneg": bool(psi.min() >= 0),
        "psi_upper": bool(psi.max() <= 2 * g.c_alpha * kappa),
        "exact_min": bool(tot[star] <= tot.min()),
        "anchor_bounds": bool(all(mu <= kappa * 2.0 ** -k + 1e-12 for k, mu in enumerate(mus))),
        "anchor_order": bool(all(X[i].t <= p_star.t + 1e-12 for i in anchors)),
    }
    if checks["anchor_order"]:
        d_t, grad = psi_ci_derivatives(pert, p_star)
        checks["dt_psi"] = float(d_t)
        checks["grad_psi"] = [float(v) for v in grad]
        checks["dt_bound"] = bool(abs(d_t) <= 4 * T * kappa + 1e-12)
        checks["grad_bound"] = bool(np.linalg.norm(grad) <= 8 * X.alpha * kappa + 1e-12)
    return BPResult(p_star, star, pert, float(tot[star]), anchors, [float(m) for m in mus],
                    (float(psi.min()), float(psi.max())), checks)


# --- subgradient search ----------------------------------------------------------------

@dataclass
class SubgradientCandidate:
    p0: float
    p: np.ndarray
    k: int

    def to_dict(self) -> dict:
        return {"p0": float(self.p0), "p": [float(v) for v in self.p], "k": self.k}


@dataclass
class SearchResult:
    success: bool
    point: PathPoint | None
    candidate: SubgradientCandidate | None
    margin: float
    accepted: bool
    d0: float
    eps_star: float
    delta: float
    lambda_L: float
    sizes: dict
    per_k: list

    def to_dict(self) -> dict:
        return {"success": self.success, "t": None if self.point is None else float(self.point.t),
                "x_t": None if self.point is None else [float(v) for v in self.point.x],
                "candidate": None if self.candidate is None else self.candidate.to_dict(),
                "margin": self.margin, "accepted": self.accepted, "d0": self.d0,
                "eps_star": self.eps_star, "delta": self.delta, "lambda_L": self.lambda_L,
                "sizes": self.sizes, "per_k": self.per_k}


def omega_family(p: PathPoint, L: DirectionSet, count: int = 4, seed: int = 0) -> list[SampledPath]:
    """Finite sample of the extensions with derivative in ``L``: constant selections at the
    vertices and the centre, then seeded piecewise-constant switches between vertices."""
    V = L.core_vertices()
    n = p.grid.n
    steps = p.grid.size - len(p.values)
    consts = np.unique(np.vstack([np.zeros((1, n)), V]), axis=0) if L.contains(np.zeros(n)) \
        else np.unique(V, axis=0)
    fam = [_omega_path(p, np.tile(v, (1, 1))) for v in consts]
    if len(consts) > 1:
        rng = child_rng(seed, 41)
        for _ in range(count):
            cut = int(rng.integers(1, max(2, steps)))
            a, b = rng.choice(len(V), size=2, replace=len(V) < 2)
            seq = np.vstack([np.tile(V[a], (cut, 1)), V[b][None, :]])
            fam.append(_omega_path(p, seq))
    return fam


def _growth_window(phi, p: PathPoint, fam, eps_star: float, limit: int) -> int:
    """Largest number of steps ``m <= limit`` with the growth bound ``2 eps* (tau - t*)`` holding
    for every family member at every offset up to ``m``."""
    g = p.grid
    k0 = g.index(p.t)
    base = phi(p)
    m_ok = 0
    for m in range(1, limit + 1):
        tau = g.time(k0 + m)
        if any(phi(point_at(z, tau)) - base < 2 * eps_star * (tau - p.t) - 1e-12 for z in fam):
            break
        m_ok = m
    return m_ok


def _tube(p: PathPoint, y: PathPoint, offsets: np.ndarray) -> list[PathPoint]:
    """Copies of ``y`` whose window part is shifted by ramps from ``0`` at ``t*`` to ``v``."""
    g = p.grid
    k0 = len(p.values) - 1
    k1 = len(y.values) - 1
    if k1 == k0:
        return []
    ramp = np.arange(1, k1 - k0 + 1)[:, None] / (k1 - k0)
    out = []
    for v in offsets:
        vals = y.values.copy()
        vals[k0 + 1:] += ramp * v
        out.append(PathPoint._trusted(g, vals))
    return out


def _window_psi(XP: list, YP: list, k0: int, dt: float, T: float) -> np.ndarray:
    """``Psi`` between all members of ``XP`` and ``YP`` (shared history up to node ``k0``)."""
    g = XP[0].grid
    kmax = max(len(p.values) for p in XP + YP)
    W = kmax - k0

    def window(ps):
        A = np.empty((len(ps), W, g.n))
        for i, q in enumerate(ps):
            seg = q.values[k0:]
            A[i, : len(seg)] = seg
            A[i, len(seg):] = seg[-1]
        return A

    A, B = window(XP), window(YP)
    w = np.full(W, dt)
    w[0] = w[-1] = dt / 2
    if W == 1:
        w[:] = 0.0
    Af, Bf = A.reshape(len(XP), -1), B.reshape(len(YP), -1)
    wn = np.repeat(w, g.n)
    sa = (Af * Af) @ wn
    sb = (Bf * Bf) @ wn
    cross = (Af * wn) @ Bf.T
    integ = sa[:, None] + sb[None, :] - 2 * cross
    ea, eb = A[:, -1], B[:, -1]
    tail = T - g.time(kmax - 1)
    d_end = (np.einsum("ij,ij->i", ea, ea)[:, None] + np.einsum("ij,ij->i", eb, eb)[None, :]
             - 2 * ea @ eb.T)
    xa = np.array([q.x for q in XP])
    yb = np.array([q.x for q in YP])
    d_cur = (np.einsum("ij,ij->i", xa, xa)[:, None] + np.einsum("ij,ij->i", yb, yb)[None, :]
             - 2 * xa @ yb.T)
    return np.maximum(d_cur + integ + tail * d_end, 0.0)


def subgradient_search(phi, p_star: PathPoint, L: DirectionSet, eta: float = 0.1,
                       ks: Sequence[int] = (4, 8, 16), eps_star: float | None = None,
                       delta: float | None = None, family: int = 4, seed: int = 0,
                       budget: int = 2_000_000, l_grid=None, d0_budget: int = 16,
                       workers: int | None = None) -> SearchResult:
    """Find a point near ``p_star`` and a subgradient ``(p0, p)`` with ``p0 + <p, l> > 0`` on ``L``.

    Steps: estimate the joint-infimum derivative (refuse unless positive), pick
    ``eps*``, ``lambda_L`` and ``delta``, build the finite sets ``Y``
    (restrictions of a sampled family of ``L``-extensions) and ``X`` (``Y``
    plus ramp-shaped tubes of radius up to ``delta``), then for each ``k``
    minimise the penalised functional over ``X x Y`` exactly, with the
    perturbation of :func:`bp_minimize` on the ``X`` marginal, and extract the
    candidate.  The first ``k`` meeting the time-gap, window and perturbation
    derivative thresholds (with a positive margin and, for Lipschitz ``phi``,
    finite-direction membership) is returned.  The state-gap threshold is only
    reported: at desk-scale ``k`` the tube minimiser sits on the stencil boundary.
    """
    g = p_star.grid
    if not p_star.in_G0:
        raise ValueError("the start point must satisfy t < T")
    d0 = dir_deriv_d0(phi, p_star, L, budget=d0_budget, seed=seed).estimate
    if not d0 > 0:
        raise PreconditionError(f"joint-infimum derivative estimate {d0:.6g} is not positive", d0)
    eps_star = 0.5 * d0 if eps_star is None else float(eps_star)
    lam = 1.1 * L.max_norm()
    alpha = sup_norm(p_star) + eta
    fam = omega_family(p_star, L, family, seed)
    k0 = g.index(p_star.t)
    left = g.size - 1 - k0
    cap = int(np.floor(min(eta / (2 + lam), g.T - p_star.t) / g.dt + 1e-9))
    if delta is not None:
        if delta > eta / (2 + lam) + 1e-12:
            raise ValueError("delta must not exceed eta / (2 + lambda_L)")
        cap = min(cap, int(np.floor(delta / g.dt + 1e-9)))
    m = _growth_window(phi, p_star, fam, eps_star, min(cap, left))
    if m < 1:
        raise PreconditionError("no grid step satisfies the growth bound; refine the grid", d0)
    dlt = m * g.dt
    # Y: restrictions of the family; X: Y plus ramp tubes
    Y, seen = [], set()
    for z in fam:
        for j in range(m + 1):
            q = point_at(z, g.time(k0 + j))
            key = _key(q)
            if key not in seen:
                seen.add(key)
                Y.append(q)
    eye = np.eye(g.n)
    stencil = np.vstack([c * dlt * s for c in (0.5, 1.0) for s in (eye, -eye)])
    Xp = list(Y)
    for y in Y:
        for q in _tube(p_star, y, stencil):
            key = _key(q)
            if key not in seen:
                seen.add(key)
                Xp.append(q)
    if len(Xp) * len(Y) > budget:
        raise ValueError(f"X x Y has {len(Xp) * len(Y)} cells, over the budget {budget}")
    X = DiscreteSet(Xp, alpha + dlt)
    Xp = X.points
    fX = np.array(pmap(phi, Xp, workers))
    Psi = _window_psi(Xp, Y, k0, g.dt, g.T)
    tX = np.array([q.t for q in Xp])
    tY = np.array([q.t for q in Y])
    dT2 = (tX[:, None] - tY[None, :]) ** 2
    lin = eps_star * (tY - p_star.t)
    c_alpha = GaugeParams(X.alpha, g.T).c_alpha
    beta = 1 + 2 * c_alpha + eps_star * dlt
    per_k, chosen = [], None
    for k in ks:
        Z = k * Psi + k ** 4 * dT2 - lin[None, :]
        jY = np.argmin(Z, axis=1)
        fk = fX + Z[np.arange(len(Xp)), jY]
        bp = bp_minimize(None, X, 1.0 / (2 * k), phi_values=fk, workers=workers)
        i = bp.index
        x_k, y_k = Xp[i], Y[jY[i]]
        rec = {"k": k, "t": float(x_k.t), "tau": float(y_k.t), "Psi": float(Psi[i, jY[i]]),
               "dt2": float(dT2[i, jY[i]]), "beta": beta,
               "Psi_scaling": bool(Psi[i, jY[i]] <= beta / k), "dt_scaling": bool(dT2[i, jY[i]] <= beta / k ** 4),
               "rho_inf": float(rho_inf(x_k, p_star))}
        if not bp.checks.get("anchor_order", False):
            rec["status"] = "anchor-order"
            per_k.append(rec)
            continue
        d_t, grad = psi_ci_derivatives(bp.perturbation, x_k)
        p0 = -2 * k ** 4 * (x_k.t - y_k.t) - d_t
        p = -k * grad1_Psi(x_k, y_k) - grad
        verts = L.core_vertices()
        margin = float(np.min(p0 + verts @ p))
        lam_div = lam if lam > 0 else np.inf
        lam_eps = lam if lam > 0 else 1e-300
        thresholds = {
            "t_gap": abs(x_k.t - y_k.t) <= dlt / (3 * lam_div) if lam > 0 else True,
            "x_gap": float(np.linalg.norm(x_k.x - y_k.x)) <= dlt / 3 + 1e-12,
            "inside": x_k.t < p_star.t + dlt - 1e-12 and y_k.t < p_star.t + dlt - 1e-12,
            "dt_psi": abs(d_t) <= eps_star / 4,
            "grad_psi": float(np.linalg.norm(grad)) <= eps_star / (4 * lam_eps),
            "t_gap_2": abs(x_k.t - y_k.t) <= eps_star / (16 * k * alpha * lam_eps),
        }
        accepted = None
        if "locally_lipschitz" in getattr(phi, "tags", ()):
            grid_l = default_l_grid(x_k, max(lam, 1.0), seed=seed) if l_grid is None else l_grid
            poly = approx_subdifferential(phi, x_k, grid_l)
            accepted = bool(poly.contains(p0, p, 1e-6))
            rec["slack"] = poly.slack(p0, p)
        rec.update({"p0": float(p0), "p": [float(v) for v in p], "margin": margin,
                    "thresholds": {a: bool(b) for a, b in thresholds.items()}, "accepted": accepted,
                    "status": "ok"})
        per_k.append(rec)
        gate = all(v for a, v in thresholds.items() if a != "x_gap")
        if chosen is None and gate and margin > 0 and accepted is not False:
            chosen = (x_k, SubgradientCandidate(float(p0), p, k), margin, bool(accepted))
    sizes = {"X": len(Xp), "Y": len(Y), "family": len(fam), "steps": m}
    if chosen is None:
        return SearchResult(False, None, None, float("nan"), False, float(d0), eps_star, dlt, lam,
                            sizes, per_k)
    x_k, cand, margin, acc = chosen
    return SearchResult(True, x_k, cand, margin, acc, float(d0), eps_star, dlt, lam, sizes, per_k)


# --- gauge axioms ------------------------------------------------------------------------

def gauge_axiom_suite(alpha: float, grid, count: int = 100, seed: int = 0) -> dict:
    """Sampled checks of the gauge-type properties of ``mu_alpha`` on ``G(alpha)``.

    Items: non-negativity and the diagonal zero; the growth bound
    ``mu <= T^2 + 2(|x| + |y|)^2`` for ``t >= tau``; the implication
    ``mu -> 0  =>  rho_inf -> 0`` along shrinking perturbation sequences; and
    lower semicontinuity sampled as ``mu(p_j, q) -> mu(p, q)`` for ``p_j -> p``.
    """
    g = GaugeParams(alpha, grid.T)
    rng = child_rng(seed, 61)

    def draw():
        t = grid.time(int(rng.integers(grid.m, grid.size - 1)))
        p = random_piecewise_affine(grid, t, rng, scale=alpha / 2)
        return p

    diag, neg, growth = 0.0, np.inf, np.inf
    seq_ok, lsc_gap = True, 0.0
    for _ in range(count):
        p, q = draw(), draw()
        diag = max(diag, abs(eval_mu_alpha(p, p, g)))
        mu = eval_mu_alpha(p, q, g)
        neg = min(neg, mu)
        if p.t >= q.t:
            bound = grid.T ** 2 + 2 * (sup_norm(p) + sup_norm(q)) ** 2
            growth = min(growth, bound - mu)
        # shrinking perturbations of p: mu -> 0 and rho_inf -> 0 together
        dirs = rng.normal(size=p.values.shape)
        mus, rhos = [], []
        for j in range(1, 9):
            pj = PathPoint._trusted(grid, p.values + 2.0 ** -j * dirs)
            mus.append(eval_mu_alpha(pj, p, g))
            rhos.append(rho_inf(pj, p))
        seq_ok &= bool(np.all(np.diff(rhos) <= 1e-15) and mus[-1] < mus[0])
        near = PathPoint._trusted(grid, p.values + 2.0 ** -12 * dirs)
        lsc_gap = max(lsc_gap, mu - eval_mu_alpha(near, q, g))
    return {"alpha": alpha, "count": count, "seed": seed, "diagonal_max": diag,
            "min_mu": float(neg), "growth_margin": float(growth), "sequence_monotone": seq_ok,
            "lsc_gap": float(lsc_gap), "c_alpha": g.c_alpha}
