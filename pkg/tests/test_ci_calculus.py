import numpy as np
import pytest
from hypothesis import given, strategies as st

from pathhj.ci_calculus import (DirectionSet, Functional, approx_subdifferential,
                                approx_superdifferential, default_l_grid, dir_deriv_d0,
                                dir_deriv_multi, dir_deriv_single, dyadic_schedule,
                                lower_right_derivative, shift_by_s, single_values)
from pathhj.gauge import eval_V
from pathhj.path_core import (GridSpec, PathPoint, constant_extension, constant_path,
                              random_piecewise_affine, straight_extension)

G = GridSpec(h=0.5, T=1.0, dt=1 / 256, n=1)
G2 = GridSpec(h=0.5, T=1.0, dt=1 / 64, n=2)

TIME = Functional(lambda p: p.t, {"locally_lipschitz"}, "t")


def _point(seed, grid=G):
    rng = np.random.default_rng(seed)
    t = grid.time(int(rng.integers(grid.m, grid.size - 8)))
    return random_piecewise_affine(grid, t, rng)


def _affine(a, b=0.0):
    a = np.asarray(a, dtype=float)
    return Functional(lambda p: float(a @ p.x) + b * p.t, {"locally_lipschitz"}, "affine")


# --- functionals and shifts -----------------------------------------------------------

def test_functional_tags():
    with pytest.raises(ValueError):
        Functional(lambda p: 0.0, {"smooth"})
    f = Functional(lambda p: p.t, {"rho1_lsc", "locally_lipschitz"})
    assert (-f).tags == frozenset({"rho1_usc", "locally_lipschitz"})
    p = constant_path(G, 0.25, 1.0)
    assert (-f)(p) == -0.25
    assert f.plus(lambda q: 1.0)(p) == 1.25


@given(st.integers(0, 10 ** 6), st.floats(-3, 3), st.floats(-3, 3))
def test_shift_by_s(seed, s0, s1):
    p = _point(seed, G2)
    zero = Functional(lambda q: 0.0)
    s = np.array([s0, s1])
    assert shift_by_s(zero, s)(p) == pytest.approx(-float(s @ p.x), abs=1e-12)
    assert shift_by_s(TIME, np.zeros(2))(p) == TIME(p)
    V = Functional(eval_V)
    assert shift_by_s(shift_by_s(V, s), -s)(p) == pytest.approx(V(p), abs=1e-12)


def test_dyadic_schedule_shrinks():
    p = constant_path(G, 0.0, 0.0)
    steps = dyadic_schedule(p)
    assert steps[0] == 16 and steps[-1] == 1
    assert np.all(np.diff(steps) < 0)
    with pytest.raises(ValueError):
        dyadic_schedule(constant_path(G, 1.0, 0.0))


# --- one-sided derivatives ------------------------------------------------------------

@given(st.integers(0, 10 ** 6), st.floats(-2, 2))
def test_time_and_affine_derivatives(seed, l):
    p = _point(seed)
    z = straight_extension(p, [l])
    assert lower_right_derivative(TIME, p, z).estimate == pytest.approx(1.0)
    assert dir_deriv_single(_affine([0.7]), p, [l]).estimate == pytest.approx(0.7 * l, abs=1e-12)


def test_V_at_constant_path():
    c, l = 0.8, -1.3
    p = constant_path(G, 0.25, c)
    est = dir_deriv_single(Functional(eval_V), p, [l], extrapolate=True).estimate
    assert est == pytest.approx(2 * c * l, abs=1e-3)


def test_frozen_direction_gives_zero():
    p = _point(4)
    assert dir_deriv_single(Functional(eval_V), p, [0.0]).estimate == 0.0
    assert lower_right_derivative(Functional(eval_V), p, constant_extension(p)).estimate == 0.0


@given(st.integers(0, 10 ** 6), st.floats(-2, 2))
def test_extrapolation_exact_for_quadratic_growth(seed, l):
    """``x(t)^2`` along a line has quotients affine in the offset."""
    rng = np.random.default_rng(seed)
    p = random_piecewise_affine(G, G.time(int(rng.integers(G.m, G.m + 128))), rng)
    phi = Functional(lambda q: q.x[0] ** 2)
    est = dir_deriv_single(phi, p, [l], extrapolate=True).estimate
    assert est == pytest.approx(2 * p.x[0] * l, abs=1e-9)


def test_upper_derivative_of_kink():
    p = constant_path(G, 0.25, 0.0)
    absx = Functional(lambda q: abs(q.x[0]), {"locally_lipschitz"})
    for l in (-1.0, 0.5):
        assert dir_deriv_single(absx, p, [l]).estimate == pytest.approx(abs(l))
        assert dir_deriv_single(absx, p, [l], upper=True).estimate == pytest.approx(abs(l))
    assert np.allclose(single_values(absx, p, [[-1.0], [0.0], [2.0]]), [1.0, 0.0, 2.0])


# --- direction sets -------------------------------------------------------------------

def test_direction_sets():
    B = DirectionSet.ball(2, 1.5)
    assert B.contains([1.0, 1.0]) and not B.contains([1.5, 1.5])
    assert np.allclose(B.project([3.0, 4.0]), [0.9, 1.2])
    assert B.core_vertices().shape == (4, 2) and B.max_norm() == 1.5
    P = DirectionSet.polytope([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    assert P.contains([0.25, 0.25]) and not P.contains([1.0, 1.0])
    assert np.allclose(P.project([1.0, 1.0]), [0.5, 0.5], atol=1e-6)
    assert P.enlarged(0.2).contains([0.6, 0.6], tol=1e-6)
    with pytest.raises(ValueError):
        DirectionSet("cube", 1)
    with pytest.raises(ValueError):
        DirectionSet.ball(1, 1.0, epsilon=-1.0)
    pts = B.sample(np.random.default_rng(0))
    assert all(B.contains(v) for v in pts)


# --- multi-valued and joint-infimum derivatives ---------------------------------------

def test_multi_of_time_is_one():
    p = _point(7, G2)
    for L in (DirectionSet.ball(2, 2.0), DirectionSet.polytope([[1.0, 0.0], [0.0, -1.0]])):
        assert dir_deriv_multi(TIME, p, L, budget=8).estimate == pytest.approx(1.0)
        assert dir_deriv_d0(TIME, p, L, budget=8).estimate == pytest.approx(1.0)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_multi_of_affine_matches_dense_grid(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=2)
    r = 1.5
    p = _point(seed, G2)
    est = dir_deriv_multi(_affine(a), p, DirectionSet.ball(2, r), budget=16, seed=seed).estimate
    ang = np.linspace(0, 2 * np.pi, 2001)
    oracle = (r * np.c_[np.cos(ang), np.sin(ang)] @ a).min()
    assert oracle == pytest.approx(-r * np.linalg.norm(a), abs=1e-5)
    assert est == pytest.approx(oracle, abs=2e-3)


LIP_BATTERY = [
    lambda p: abs(p.x[0]),
    lambda p: -abs(p.x[0]),
    lambda p: max(p.x[0], -2 * p.x[0]) + 0.3 * p.t,
    lambda p: np.sin(p.x[0]) * np.cos(p.t),
]


@pytest.mark.parametrize("i", range(len(LIP_BATTERY)))
def test_lipschitz_reduction(i):
    phi = Functional(LIP_BATTERY[i], {"locally_lipschitz"})
    g = GridSpec(h=0.5, T=1.0, dt=1 / 128, n=1)
    p = PathPoint.from_values(g, 0.25, np.r_[np.zeros(g.m), np.linspace(0.5, 0.0, g.index(0.25) - g.m + 1)])
    L = DirectionSet.ball(1, 1.0)
    l_grid = np.linspace(-1, 1, 401)[:, None]
    single = single_values(phi, p, l_grid).min()
    multi = dir_deriv_multi(phi, p, L).estimate
    d0 = dir_deriv_d0(phi, p, L).estimate
    assert multi == pytest.approx(single, abs=2e-3)
    assert d0 <= multi + 1e-9
    assert d0 == pytest.approx(single, abs=2e-3)


@given(st.integers(0, 10 ** 6))
def test_d0_never_exceeds_multi(seed):
    rng = np.random.default_rng(seed)
    g = GridSpec(h=0.5, T=1.0, dt=1 / 32, n=1)
    p = random_piecewise_affine(g, g.time(int(rng.integers(g.m, g.size - 2))), rng)
    c = rng.normal(size=3)
    phi = Functional(lambda q: c[0] * abs(q.x[0]) + c[1] * q.x[0] ** 2 + c[2] * eval_V(q))
    L = DirectionSet.ball(1, 1 + rng.random())
    multi = dir_deriv_multi(phi, p, L, budget=8, seed=seed).estimate
    d0 = dir_deriv_d0(phi, p, L, budget=8, seed=seed)
    assert d0.estimate <= multi + 1e-9
    assert d0.extra["multi"] == multi


def test_estimates_are_deterministic():
    p = _point(3, G2)
    phi = Functional(lambda q: abs(q.x[0]) - q.x[1] ** 2)
    L = DirectionSet.ball(2, 1.0)
    a = dir_deriv_multi(phi, p, L, seed=5).to_dict()
    b = dir_deriv_multi(phi, p, L, seed=5).to_dict()
    assert a == b


# --- finite-direction sub/superdifferentials ------------------------------------------

def test_subdifferential_of_affine():
    a, b = np.array([0.6, -1.2]), 0.4
    phi = _affine(a, b)
    p = _point(2, G2)
    poly = approx_subdifferential(phi, p, default_l_grid(p, 1.0))
    assert poly.contains(b, a) and poly.contains(b - 1.0, a)
    assert not poly.contains(b + 0.1, a)
    assert not poly.contains(b - 0.01, a + [0.3, 0.0])
    assert poly.best_p0(a) == pytest.approx(b)
    sup = approx_superdifferential(phi, p, default_l_grid(p, 1.0))
    assert sup.contains(b, a) and sup.contains(b + 1.0, a) and not sup.contains(b - 0.1, a)


def test_subdifferential_of_norm_at_zero():
    phi = Functional(lambda q: abs(q.x[0]), {"locally_lipschitz"})
    p = constant_path(G, 0.25, 0.0)
    l_grid = np.linspace(-2, 2, 81)[:, None]
    poly = approx_subdifferential(phi, p, l_grid)
    # oracle: the lower derivative along l is |l|
    assert np.allclose(poly.d, np.abs(l_grid[:, 0]))
    for p0 in (0.0, -0.5):
        for s in np.linspace(-1, 1, 9):
            assert poly.contains(p0, [s])
    assert not poly.contains(0.0, [1.1])
    # the superdifferential is empty there: no q with q0 + q l >= |l| for small q0
    sup = approx_superdifferential(phi, p, l_grid)
    assert not any(sup.contains(0.0, [s]) for s in np.linspace(-3, 3, 61))


def test_sub_needs_lipschitz_tag():
    with pytest.raises(ValueError):
        approx_subdifferential(Functional(eval_V), constant_path(G, 0.0, 1.0), [[1.0]])


def test_default_l_grid_contents():
    p = constant_path(G2, 0.0, [1.0, 0.0])
    L = default_l_grid(p, 1.0)
    rows = {tuple(np.round(r, 12)) for r in L}
    assert (0.0, 0.0) in rows and (2.0, 0.0) in rows and (1.0, 0.0) in rows and (0.0, -1.0) in rows and (-0.5, 0.0) not in rows
