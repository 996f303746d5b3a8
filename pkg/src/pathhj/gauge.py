"""The smooth gauge functional V, its two-argument variants, and closed-form ci-derivatives."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .path_core import (GridError, GridSpec, PathPoint, SampledPath, _check_same_grid,
                        _frozen_values, constant_path, point_at, straight_extension)

ZERO_GUARD = 1e-14
LOWER_V = (3 - np.sqrt(5)) / 2


@dataclass(frozen=True)
class GaugeParams:
    """Radius ``alpha`` and horizon ``T``; ``c_alpha`` is derived on access."""

    alpha: float
    T: float

    def __post_init__(self):
        if not (self.alpha > 0):
            raise ValueError("alpha must be positive")

    @property
    def c_alpha(self) -> float:
        return self.T ** 2 + 8 * self.alpha ** 2 + 1


def _V_from(S2: float, a2: float) -> float:
    if S2 < ZERO_GUARD ** 2:
        return 0.0
    return (S2 - a2) ** 2 / S2 + a2


def _sq_norms(v: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->i", v, v)


def V_of_values(values: np.ndarray) -> float:
    """V for a path given by its node values (last row is the current value)."""
    sq = _sq_norms(values)
    return _V_from(float(sq.max()), float(sq[-1]))


def eval_V(p) -> float:
    values = p.values if isinstance(p, (PathPoint, SampledPath)) else np.asarray(p)
    return V_of_values(values)


def grad_V_of_values(values: np.ndarray) -> np.ndarray:
    sq = _sq_norms(values)
    S2, a2 = float(sq.max()), float(sq[-1])
    if S2 < ZERO_GUARD ** 2:
        return np.zeros(values.shape[1])
    return (2 - 4 * (S2 - a2) / S2) * values[-1]


def grad_V(p: PathPoint) -> np.ndarray:
    if not p.in_G0:
        raise GridError("ci-derivatives are defined for t < T only")
    return grad_V_of_values(p.values)


def dt_V(p: PathPoint) -> float:
    if not p.in_G0:
        raise GridError("ci-derivatives are defined for t < T only")
    return 0.0


def check_V_bounds(p) -> tuple[float, float]:
    """Margins ``(V - c_low |x|^2, 2|x|^2 - V)``; both are non-negative in exact arithmetic."""
    values = p.values
    S2 = float(_sq_norms(values).max())
    v = V_of_values(values)
    return v - LOWER_V * S2, 2 * S2 - v


def grad_V_margin(p: PathPoint) -> float:
    """``2|x(t)| - |grad V|``."""
    return 2 * float(np.linalg.norm(p.x)) - float(np.linalg.norm(grad_V_of_values(p.values)))


def eval_Vbar(p: PathPoint, q: PathPoint) -> float:
    """V at time ``T`` of the difference of the two constant extensions."""
    _check_same_grid(p, q)
    return V_of_values(_frozen_values(p) - _frozen_values(q))


def mu_difference(p: PathPoint, q: PathPoint) -> np.ndarray:
    """Node values of ``x(.) - y(. ^ tau)`` on ``[-h, t]``; requires ``t >= tau``."""
    k = len(p.values)
    return p.values - _frozen_values(q)[:k]


def eval_mu_alpha(p: PathPoint, q: PathPoint, g: GaugeParams) -> float:
    _check_same_grid(p, q)
    if p.t >= q.t - 1e-12:
        return (p.t - q.t) ** 2 + V_of_values(mu_difference(p, q))
    return g.c_alpha


def _trap(values: np.ndarray, dt: float) -> np.ndarray:
    if len(values) < 2:
        return np.zeros(values.shape[1:]) if values.ndim > 1 else 0.0
    return dt * (values.sum(axis=0) - 0.5 * (values[0] + values[-1]))


def eval_Psi(p: PathPoint, q: PathPoint) -> float:
    _check_same_grid(p, q)
    d = _frozen_values(p) - _frozen_values(q)
    return float(np.dot(p.x - q.x, p.x - q.x) + _trap(_sq_norms(d), p.grid.dt))


def grad1_Psi(p: PathPoint, q: PathPoint) -> np.ndarray:
    _check_same_grid(p, q)
    k = len(p.values)
    yq = _frozen_values(q)[k - 1 :]
    return 2 * (p.x - q.x) + 2 * _trap(p.x - yq, p.grid.dt)


def grad2_Psi(p: PathPoint, q: PathPoint) -> np.ndarray:
    return grad1_Psi(q, p)


def dt_Psi(p: PathPoint, q: PathPoint) -> float:
    return 0.0


# --- the non-differentiability probe -------------------------------------------------

def probe_setup(dt: float = 2.0 ** -12, h: float = 1.0):
    """Start point ``(0, x* = 1)`` and anchor ``(1, y*(xi) = max(xi, 0))`` on a scalar grid."""
    grid = GridSpec(h=h, T=1.0, dt=dt, n=1)
    start = constant_path(grid, 0.0, 1.0)
    ts = grid.times()
    anchor = PathPoint.from_values(grid, 1.0, np.maximum(ts, 0.0))
    return grid, start, anchor


def probe_quotients(l: float, ks=range(4, 13), dt: float = 2.0 ** -12, h: float = 1.0):
    """Difference quotients of ``Vbar(., anchor)`` along the straight extension with slope ``l``.

    Returns ``(taus, quotients)`` with ``tau = 2^-k``.
    """
    grid, start, anchor = probe_setup(dt, h)
    z = straight_extension(start, [l])
    base = eval_Vbar(start, anchor)
    taus, qs = [], []
    for k in ks:
        tau = 2.0 ** -k
        grid.index(tau)
        qs.append((eval_Vbar(point_at(z, tau), anchor) - base) / tau)
        taus.append(tau)
    return np.array(taus), np.array(qs)


@dataclass
class ProbeResult:
    l: float
    taus: np.ndarray
    quotients: np.ndarray
    extrapolated: np.ndarray
    estimate: float
    converged: bool
    tol: float


def counterexample_probe(l: float, ks=range(4, 13), tol: float = 1e-3,
                         dt: float = 2.0 ** -12) -> ProbeResult:
    """Implied spatial ci-derivative ``lim quotient / l`` along the slope-``l`` extension.

    The quotients carry an ``O(tau)`` bias, so consecutive dyadic levels are
    combined by one Richardson step before the limit is read off.  The result
    is flagged converged when the last three extrapolated values agree within
    ``tol``.
    """
    if not l > 1:
        raise ValueError("the probe requires l > 1")
    taus, qs = probe_quotients(l, ks, dt)
    scaled = qs / l
    rich = 2 * scaled[1:] - scaled[:-1]
    tail = rich[-3:]
    return ProbeResult(l=l, taus=taus, quotients=scaled, extrapolated=rich,
                       estimate=float(rich[-1]),
                       converged=bool(np.ptp(tail) <= tol), tol=tol)


def probe_time_derivative(ks=range(4, 13), dt: float = 2.0 ** -12) -> float:
    """Quotient limit along the frozen extension (slope 0); it is identically zero."""
    _, qs = probe_quotients(0.0, ks, dt)
    return float(qs[-1])


def probe_closed_form(l: float, tau):
    """Direct formula for ``Vbar`` along the slope-``l`` extension (independent oracle)."""
    tau = np.asarray(tau, dtype=float)
    s = 1 + tau * (l - 1)
    return (s ** 2 - tau ** 2 * l ** 2) ** 2 / s ** 2 + tau ** 2 * l ** 2
