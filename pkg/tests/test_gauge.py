import numpy as np
import pytest
from hypothesis import given, strategies as st

from pathhj.gauge import (LOWER_V, GaugeParams, check_V_bounds, counterexample_probe, dt_V,
                          eval_mu_alpha, eval_Psi, eval_V, eval_Vbar, grad1_Psi, grad2_Psi, grad_V,
                          grad_V_margin, probe_closed_form, probe_quotients, probe_setup,
                          probe_time_derivative)
from pathhj.path_core import (GridError, GridSpec, PathPoint, constant_path, make_extension,
                              point_at, random_piecewise_affine, straight_extension)

G = GridSpec(h=1.0, T=1.0, dt=1 / 32, n=1)
G3 = GridSpec(h=0.5, T=1.0, dt=1 / 16, n=3)


def _point(seed, grid=G, scale=1.0):
    rng = np.random.default_rng(seed)
    t = grid.time(int(rng.integers(grid.m, grid.size - 1)))
    return random_piecewise_affine(grid, t, rng, scale=scale)


# --- V --------------------------------------------------------------------------------

def test_V_examples():
    assert eval_V(constant_path(G, 0.0, 0.0)) == 0.0
    assert eval_V(constant_path(G, 0.25, -1.5)) == pytest.approx(2.25)
    grid, start, anchor = probe_setup(dt=1 / 64)
    # difference of x* = 1 and y* frozen at t = 0 is the constant path 1
    assert eval_Vbar(start, anchor) == pytest.approx(1.0)


def test_V_by_hand():
    # sup |x|^2 = 4 (at -h), current |x|^2 = 1: (4 - 1)^2 / 4 + 1 = 3.25
    vals = np.linspace(2.0, 1.0, G.m + 1)
    p = PathPoint.from_values(G, 0.0, vals)
    assert eval_V(p) == pytest.approx(3.25)
    # gradient: (2 - 4 (4 - 1) / 4) * 1 = -1
    assert grad_V(p)[0] == pytest.approx(-1.0)


def test_grad_V_examples():
    assert np.all(grad_V(constant_path(G, 0.0, 0.0)) == 0.0)
    assert grad_V(constant_path(G3, 0.0, [1.0, -2.0, 0.5])) == pytest.approx([2.0, -4.0, 1.0])
    vals = np.linspace(1.0, 0.0, G.m + 1)
    assert np.all(grad_V(PathPoint.from_values(G, 0.0, vals)) == 0.0)
    assert dt_V(constant_path(G, 0.5, 1.0)) == 0.0
    with pytest.raises(GridError):
        grad_V(constant_path(G, 1.0, 1.0))


def test_V_bounds_examples():
    assert check_V_bounds(constant_path(G, 0.0, 0.0)) == (0.0, 0.0)
    c = 1.3
    lo, hi = check_V_bounds(constant_path(G, 0.0, c))
    assert lo == pytest.approx(c ** 2 * (1 - (3 - np.sqrt(5)) / 2))
    assert hi == pytest.approx(c ** 2)
    assert LOWER_V == pytest.approx(0.3819660112501051)


@given(st.integers(0, 10 ** 6), st.sampled_from([G, G3]), st.sampled_from([0.01, 1.0, 50.0]))
def test_V_bounds_hold(seed, grid, scale):
    p = _point(seed, grid, scale)
    lo, hi = check_V_bounds(p)
    assert lo >= -1e-12 * scale ** 2 and hi >= -1e-12 * scale ** 2
    assert grad_V_margin(p) >= -1e-12 * scale


@given(st.integers(0, 10 ** 6))
def test_grad_V_matches_difference_quotients(seed):
    """Oracle: two-level Richardson quotient of V along a straight extension."""
    g = GridSpec(h=0.5, T=1.0, dt=2.0 ** -14, n=1)
    rng = np.random.default_rng(seed)
    p = random_piecewise_affine(g, 0.25, rng, pieces=3)
    l = rng.normal()
    z = straight_extension(p, [l])
    base = eval_V(p)
    q = [(eval_V(point_at(z, p.t + m * g.dt)) - base) / (m * g.dt) for m in (2, 1)]
    assert 2 * q[1] - q[0] == pytest.approx(grad_V(p)[0] * l, abs=1e-3)


# --- Vbar and mu_alpha ----------------------------------------------------------------

@given(st.integers(0, 10 ** 6), st.integers(0, 10 ** 6))
def test_Vbar_symmetric_and_diagonal(a, b):
    p, q = _point(a), _point(b)
    assert eval_Vbar(p, p) == 0.0
    assert eval_Vbar(p, q) == pytest.approx(eval_Vbar(q, p), rel=1e-14, abs=1e-14)


def test_c_alpha_and_cap():
    g = GaugeParams(1.0, 1.0)
    assert g.c_alpha == 10.0
    with pytest.raises(ValueError):
        GaugeParams(0.0, 1.0)
    early, late = constant_path(G, 0.0, 0.2), constant_path(G, 0.5, 0.1)
    assert eval_mu_alpha(early, late, g) == 10.0


@given(st.integers(0, 10 ** 6), st.integers(0, 10 ** 6))
def test_mu_alpha_range(a, b):
    g = GaugeParams(1.0, G.T)
    p, q = _point(a, scale=0.3), _point(b, scale=0.3)
    p = PathPoint.from_values(G, p.t, np.clip(p.values, -1, 1))
    q = PathPoint.from_values(G, q.t, np.clip(q.values, -1, 1))
    assert eval_mu_alpha(p, p, g) == 0.0
    mu = eval_mu_alpha(p, q, g)
    assert 0.0 <= mu <= g.c_alpha


# --- Psi ------------------------------------------------------------------------------

def test_Psi_constant_paths():
    a, b = 0.9, -0.4
    p, q = constant_path(G, 0.0, a), constant_path(G, 0.0, b)
    assert eval_Psi(p, q) == pytest.approx(3 * (a - b) ** 2)
    assert grad1_Psi(p, q)[0] == pytest.approx(4 * (a - b))
    assert grad2_Psi(p, q)[0] == pytest.approx(4 * (b - a))
    assert eval_Psi(p, p) == 0.0 and grad1_Psi(p, p)[0] == 0.0


@given(st.integers(0, 10 ** 6))
def test_Psi_quotients_converge_linearly(seed):
    g = GridSpec(h=0.5, T=1.0, dt=2.0 ** -12, n=2)
    rng = np.random.default_rng(seed)
    p = random_piecewise_affine(g, 0.0, rng)
    q = random_piecewise_affine(g, g.time(int(rng.integers(0, g.size))), rng)
    steps = g.size - len(p.values)
    d = rng.normal(size=(1, 2))
    z = make_extension(p, np.repeat(d, steps, axis=0))
    target = float(grad1_Psi(p, q) @ d[0])
    errs = []
    for k in range(4, 11):
        tau = 2.0 ** -k
        errs.append(abs((eval_Psi(point_at(z, tau), q) - eval_Psi(p, q)) / tau - target))
    # O(tau - t): once the offset is below the kinks of q, halving it halves the error
    errs = np.array(errs[3:])
    assert np.all(errs[1:] <= 0.6 * errs[:-1] + 1e-9)


# --- the direction-dependence probe ---------------------------------------------------

def _vbar_along(l, tau):
    # difference of the slope-l extension of x* = 1 and y*(xi) = max(xi, 0), on [-1, 1]
    s = 1 + (l - 1) * tau
    a = l * tau
    return (s ** 2 - a ** 2) ** 2 / s ** 2 + a ** 2


@pytest.mark.parametrize("l", [1.5, 2.0, 4.0])
def test_probe_quotients_match_hand_formula(l):
    taus, qs = probe_quotients(l, ks=range(4, 9), dt=2.0 ** -10)
    ref = (_vbar_along(l, taus) - 1.0) / taus
    assert np.allclose(qs, ref, atol=1e-12)
    assert np.allclose(probe_closed_form(l, taus), _vbar_along(l, taus), atol=1e-14)


@pytest.mark.parametrize("l,expected", [(2.0, 1.0), (4.0, 1.5), (1.5, 2 / 3)])
def test_counterexample_probe(l, expected):
    res = counterexample_probe(l)
    assert res.estimate == pytest.approx(expected, abs=1e-3)
    assert res.converged


def test_probe_time_derivative_and_domain():
    assert probe_time_derivative() == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        counterexample_probe(1.0)
