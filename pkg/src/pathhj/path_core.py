"""History paths on a uniform grid, the two path metrics, and extension operators.

A path ``x`` on ``[-h, t]`` is stored by its values at the grid nodes
``-h, -h + dt, ..., t`` and is linearly interpolated in between.  All times that
enter the public operations (``t``, ``tau``, integration bounds) must be grid
nodes; this keeps restriction and extension round trips exact.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

_NODE_TOL = 1e-9


class GridError(ValueError):
    """Raised on inconsistent grid data (non-node times, mismatched grids)."""


@dataclass(frozen=True)
class GridSpec:
    """Uniform time grid covering ``[-h, T]`` for paths in ``R^n``."""

    h: float
    T: float
    dt: float
    n: int = 1

    def __post_init__(self):
        if not (self.h > 0):
            raise GridError("h must be positive")
        if not (self.T > 0):
            raise GridError("T must be positive")
        if not (self.dt > 0):
            raise GridError("dt must be positive")
        if int(self.n) != self.n or self.n < 1:
            raise GridError("n must be a positive integer")
        for name, val in (("h", self.h), ("T", self.T)):
            r = val / self.dt
            if abs(r - round(r)) > _NODE_TOL * max(1.0, r):
                raise GridError(f"{name}/dt must be an integer")
        if self.dt > self.T / 4 + _NODE_TOL * self.dt:
            raise GridError("dt must not exceed T/4")

    @property
    def m(self) -> int:
        """Number of steps on ``[-h, 0]``."""
        return int(round(self.h / self.dt))

    @property
    def steps(self) -> int:
        """Number of steps on ``[0, T]``."""
        return int(round(self.T / self.dt))

    @property
    def size(self) -> int:
        """Number of nodes on ``[-h, T]``."""
        return self.m + self.steps + 1

    def index(self, time: float) -> int:
        """Node index of ``time`` counted from ``-h``; raises if off-grid."""
        r = (time + self.h) / self.dt
        i = int(round(r))
        if abs(r - i) > _NODE_TOL * max(1.0, abs(r)) or i < 0 or i > self.size - 1:
            raise GridError(f"time {time!r} is not a grid node in [-h, T]")
        return i

    def time(self, index: int) -> float:
        return -self.h + index * self.dt

    def times(self, upto: float | None = None) -> np.ndarray:
        k = self.size if upto is None else self.index(upto) + 1
        return -self.h + self.dt * np.arange(k)

    def step_index(self, time: float) -> int:
        """Index of ``time`` counted from 0 (so node ``t`` is step ``t/dt``)."""
        return self.index(time) - self.m

    def refine(self, factor: int) -> "GridSpec":
        return GridSpec(self.h, self.T, self.dt / factor, self.n)


@dataclass(frozen=True, eq=False)
class SampledPath:
    """Values of a path at the nodes ``-h, ..., t`` (rows) in ``R^n`` (columns)."""

    grid: GridSpec
    t: float
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v.reshape(-1, 1) if self.grid.n == 1 else v.reshape(1, -1)
        k = self.grid.index(self.t) + 1
        if v.shape != (k, self.grid.n):
            raise GridError(f"expected values of shape {(k, self.grid.n)}, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise GridError("path values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        # snap t onto the node to avoid drift in later arithmetic
        object.__setattr__(self, "t", self.grid.time(k - 1))

    @property
    def end(self) -> np.ndarray:
        """``x(t)``."""
        return self.values[-1]

    @property
    def times(self) -> np.ndarray:
        return -self.grid.h + self.grid.dt * np.arange(len(self.values))

    def __call__(self, time: float) -> np.ndarray:
        """Linear interpolation at an arbitrary time in ``[-h, t]``."""
        if time < -self.grid.h - 1e-12 or time > self.t + 1e-12:
            raise GridError("evaluation time outside [-h, t]")
        r = (time + self.grid.h) / self.grid.dt
        i = min(int(np.floor(r)), len(self.values) - 2) if len(self.values) > 1 else 0
        if len(self.values) == 1:
            return self.values[0].copy()
        w = r - i
        return (1 - w) * self.values[i] + w * self.values[i + 1]

    @classmethod
    def _trusted(cls, grid: GridSpec, values: np.ndarray) -> "SampledPath":
        """Construct without validation; ``values`` must already be a float (k, n) array."""
        obj = object.__new__(cls)
        v = values.view()
        v.flags.writeable = False
        object.__setattr__(obj, "grid", grid)
        object.__setattr__(obj, "values", v)
        object.__setattr__(obj, "t", -grid.h + (len(v) - 1) * grid.dt)
        return obj

    def __eq__(self, other):
        if not isinstance(other, SampledPath):
            return NotImplemented
        return (self.grid == other.grid and self.values.shape == other.values.shape
                and bool(np.array_equal(self.values, other.values)))

    def __hash__(self):
        return hash((self.grid, self.values.shape, self.values.tobytes()))


@dataclass(frozen=True, eq=False)
class PathPoint:
    """A pair ``(t, x)`` with ``x`` a history path ending at ``t``."""

    t: float
    path: SampledPath

    def __post_init__(self):
        if abs(self.t - self.path.t) > _NODE_TOL * self.path.grid.dt:
            raise GridError("PathPoint time does not match its path")
        object.__setattr__(self, "t", self.path.t)

    @classmethod
    def of(cls, path: SampledPath) -> "PathPoint":
        return cls(path.t, path)

    @classmethod
    def from_values(cls, grid: GridSpec, t: float, values) -> "PathPoint":
        return cls.of(SampledPath(grid, t, values))

    @classmethod
    def _trusted(cls, grid: GridSpec, values: np.ndarray) -> "PathPoint":
        """Unchecked construction for inner loops (values: float (k, n) array on ``grid``)."""
        path = SampledPath._trusted(grid, values)
        obj = object.__new__(cls)
        object.__setattr__(obj, "t", path.t)
        object.__setattr__(obj, "path", path)
        return obj

    @property
    def grid(self) -> GridSpec:
        return self.path.grid

    @property
    def x(self) -> np.ndarray:
        """The terminal value ``x(t)``."""
        return self.path.end

    @property
    def values(self) -> np.ndarray:
        return self.path.values

    @property
    def in_G0(self) -> bool:
        return self.t < self.grid.T - _NODE_TOL * self.grid.dt

    def in_G(self, alpha: float) -> bool:
        return sup_norm(self.path) <= alpha

    def __eq__(self, other):
        if not isinstance(other, PathPoint):
            return NotImplemented
        return self.path == other.path

    def __hash__(self):
        return hash(self.path)


def _as_path(p) -> SampledPath:
    return p.path if isinstance(p, PathPoint) else p


def sup_norm(p) -> float:
    """Node-wise maximum of the Euclidean norm (exact for piecewise-affine paths)."""
    v = _as_path(p).values
    return float(np.sqrt(np.max(np.einsum("ij,ij->i", v, v))))


def constant_extension(p, to: float | None = None) -> SampledPath:
    """Freeze ``x`` at ``x(t)`` on ``(t, to]``; ``to`` defaults to ``T``."""
    path = _as_path(p)
    g = path.grid
    to = g.T if to is None else to
    k_to = g.index(to)
    k_t = len(path.values) - 1
    if k_to < k_t:
        raise GridError("cannot extend to a time before the path end")
    if k_to == k_t:
        return path
    tail = np.repeat(path.values[-1:], k_to - k_t, axis=0)
    return SampledPath(g, g.time(k_to), np.vstack([path.values, tail]))


def restrict(z, t: float) -> SampledPath:
    """Truncate a path at the grid node ``t``."""
    path = _as_path(z)
    k = path.grid.index(t)
    if k > len(path.values) - 1:
        raise GridError("restriction time beyond path end")
    return SampledPath._trusted(path.grid, path.values[: k + 1])


def _check_same_grid(p, q):
    if p.grid != q.grid:
        raise GridError("paths live on different grids")


def _frozen_values(p) -> np.ndarray:
    """Values of ``x(. ^ t)`` on the full grid ``[-h, T]``."""
    path = _as_path(p)
    g = path.grid
    pad = g.size - len(path.values)
    if pad == 0:
        return path.values
    return np.vstack([path.values, np.repeat(path.values[-1:], pad, axis=0)])


def rho_inf(p: PathPoint, q: PathPoint) -> float:
    """``|t - tau| + sup |x(. ^ t) - y(. ^ tau)|`` over ``[-h, T]``."""
    _check_same_grid(p, q)
    d = _frozen_values(p) - _frozen_values(q)
    return abs(p.t - q.t) + float(np.sqrt(np.max(np.einsum("ij,ij->i", d, d))))


def rho_1(p: PathPoint, q: PathPoint) -> float:
    """``|t - tau| + |x(t) - y(tau)| + int |x(. ^ t) - y(. ^ tau)|`` (trapezoid)."""
    _check_same_grid(p, q)
    d = _frozen_values(p) - _frozen_values(q)
    nrm = np.sqrt(np.einsum("ij,ij->i", d, d))
    integral = p.grid.dt * (nrm.sum() - 0.5 * (nrm[0] + nrm[-1]))
    return abs(p.t - q.t) + float(np.linalg.norm(p.x - q.x)) + float(integral)


def make_extension(p: PathPoint, derivs) -> SampledPath:
    """Extend ``p`` to ``[-h, T]`` with one derivative vector per step of ``[t, T]``.

    ``z(node + dt) = z(node) + dt * derivs[j]``; the result is Lipschitz on
    ``[t, T]`` with constant ``max_j |derivs[j]|``.
    """
    g = p.grid
    steps = g.size - len(p.values)
    d = np.asarray(derivs, dtype=float)
    if d.ndim == 1 and g.n == 1 and d.shape[0] == steps:
        d = d.reshape(-1, 1)
    elif d.ndim == 1 and d.shape == (g.n,):
        d = np.broadcast_to(d, (steps, g.n))
    if d.shape != (steps, g.n):
        raise GridError(f"expected {steps} derivative vectors of size {g.n}, got shape {d.shape}")
    tail = p.x + g.dt * np.cumsum(d, axis=0)
    return SampledPath(g, g.T, np.vstack([p.values, tail]))


def straight_extension(p: PathPoint, l) -> SampledPath:
    """``z(tau) = x(t) + (tau - t) l`` on ``[t, T]``."""
    g = p.grid
    steps = g.size - len(p.values)
    l = np.asarray(l, dtype=float).reshape(g.n)
    tail = p.x + g.dt * np.arange(1, steps + 1)[:, None] * l
    return SampledPath(g, g.T, np.vstack([p.values, tail]))


def point_at(z: SampledPath, tau: float) -> PathPoint:
    """The point ``(tau, z_tau)`` for a path ``z`` defined at least up to ``tau``."""
    return PathPoint.of(restrict(z, tau))


def integrate_scalar(f: Sequence[float], a: float, b: float, grid: GridSpec | None = None,
                     start: float | None = None) -> float:
    """Trapezoid rule for samples ``f`` at consecutive grid nodes.

    ``f[0]`` is the sample at ``start`` (default ``-h`` when a grid is given,
    else ``a``).  Without a grid the samples are assumed to cover exactly
    ``[a, b]`` with uniform spacing.
    """
    if b < a:
        raise ValueError("reversed integration bounds")
    f = np.asarray(f, dtype=float)
    if grid is None:
        if len(f) < 2:
            return 0.0
        dx = (b - a) / (len(f) - 1)
        return float(dx * (f.sum() - 0.5 * (f[0] + f[-1])))
    start = -grid.h if start is None else start
    i0 = grid.index(a) - grid.index(start)
    i1 = grid.index(b) - grid.index(start)
    if i0 < 0 or i1 > len(f) - 1:
        raise GridError("integration bounds outside the sampled range")
    seg = f[i0 : i1 + 1]
    if len(seg) < 2:
        return 0.0
    return float(grid.dt * (seg.sum() - 0.5 * (seg[0] + seg[-1])))


def constant_path(grid: GridSpec, t: float, c) -> PathPoint:
    k = grid.index(t) + 1
    c = np.broadcast_to(np.asarray(c, dtype=float), (grid.n,))
    return PathPoint.from_values(grid, t, np.tile(c, (k, 1)))


def path_from_function(grid: GridSpec, t: float, fn) -> PathPoint:
    """Sample ``fn(time) -> R^n`` at the nodes of ``[-h, t]``."""
    ts = grid.times(t)
    vals = np.array([np.broadcast_to(np.asarray(fn(s), dtype=float), (grid.n,)) for s in ts])
    return PathPoint.from_values(grid, t, vals)


def random_piecewise_affine(grid: GridSpec, t: float, rng: np.random.Generator,
                            pieces: int | None = None, scale: float = 1.0) -> PathPoint:
    """A random continuous piecewise-affine path with breakpoints on the grid."""
    k = grid.index(t) + 1
    if pieces is None:
        pieces = int(rng.integers(1, 6))
    pieces = max(1, min(pieces, k - 1)) if k > 1 else 1
    if k == 1:
        return PathPoint.from_values(grid, t, scale * rng.normal(size=(1, grid.n)))
    inner = np.sort(rng.choice(np.arange(1, k - 1), size=min(pieces - 1, max(k - 2, 0)), replace=False)) \
        if k > 2 else np.array([], dtype=int)
    knots = np.concatenate([[0], inner, [k - 1]]).astype(int)
    kv = scale * rng.normal(size=(len(knots), grid.n))
    idx = np.arange(k)
    vals = np.column_stack([np.interp(idx, knots, kv[:, j]) for j in range(grid.n)])
    return PathPoint.from_values(grid, t, vals)


def path_to_csv_rows(path: SampledPath):
    """Rows ``time, x_1..x_n`` for CSV emission."""
    header = ["time"] + [f"x_{i + 1}" for i in range(path.grid.n)]
    rows = [[float(s)] + [float(v) for v in row] for s, row in zip(path.times, path.values)]
    return header, rows


def path_to_json(p: PathPoint) -> dict:
    g = p.grid
    return {"h": g.h, "T": g.T, "dt": g.dt, "n": g.n, "t": p.t,
            "values": [[float(v) for v in row] for row in p.values]}


def path_from_json(obj: dict, grid: GridSpec | None = None) -> PathPoint:
    g = grid or GridSpec(float(obj["h"]), float(obj["T"]), float(obj["dt"]), int(obj.get("n", 1)))
    return PathPoint.from_values(g, float(obj["t"]), np.asarray(obj["values"], dtype=float))
