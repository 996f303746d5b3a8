import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pathhj.delay_control import (BudgetExceeded, ControlSignal, DelayControlProblem, bellman_H, cost,
                                  dpp_residual, integrate_motion, integrator_problem,
                                  integrator_value_closed_form, linear_delay_problem,
                                  method_of_steps_solution, regularity_report, value)
from pathhj.path_core import GridSpec, PathPoint, constant_extension, constant_path, random_piecewise_affine

G = GridSpec(h=0.5, T=1.0, dt=0.1, n=1)


def _still(grid, chi=0.0, sigma=lambda z: float(z.values[-1, 0] ** 2)):
    return DelayControlProblem(lambda p, u: np.zeros(grid.n), lambda p, u: chi, sigma, (0.0, 1.0), grid,
                               chi_zero=chi == 0.0)


# --- motions and costs ----------------------------------------------------------------

def test_zero_dynamics_freeze_the_path():
    p = random_piecewise_affine(G, 0.3, np.random.default_rng(1))
    prob = _still(G)
    z = integrate_motion(prob, p, [0] * 7)
    assert z == constant_extension(p)
    assert cost(prob, p, [1] * 7) == pytest.approx(p.x[0] ** 2)
    with pytest.raises(ValueError):
        integrate_motion(prob, p, [0, 0])


def test_unit_running_cost_integrates_time():
    prob = _still(G, chi=1.0, sigma=lambda z: 0.0)
    p = constant_path(G, 0.2, 0.4)
    assert cost(prob, p, [0] * 8) == pytest.approx(0.8)


def test_integrator_motion_and_bang_cost():
    prob = integrator_problem(G)
    z = integrate_motion(prob, constant_path(G, 0.0, 0.0), [2] * 10)
    assert z.values[-1, 0] == pytest.approx(1.0, abs=1e-14)
    assert cost(prob, constant_path(G, 0.0, 0.6), [0] * 10) == pytest.approx(0.4)


# --- the delay oracle -----------------------------------------------------------------

def _two_interval(tau, h):
    # z' = -z(tau - h), z = 1 on [-h, 0]: 1 - tau on [0, h], then integrate -(1 - (s - h))
    tau = np.asarray(tau)
    late = (1 - h) - (tau - h) + 0.5 * (tau - h) ** 2
    return np.where(tau <= h, 1 - tau, late)


def test_method_of_steps_formula():
    ts = np.linspace(0, 1, 11)
    assert np.allclose(method_of_steps_solution(ts, 0.5), _two_interval(ts, 0.5))


def test_delay_dynamics_matches_method_of_steps():
    g = GridSpec(h=0.5, T=1.0, dt=1 / 256, n=1)
    prob = linear_delay_problem(g, [[0.0]], [[-1.0]], [[0.0]], [[0.0]])
    z = integrate_motion(prob, constant_path(g, 0.0, 1.0), [0] * g.steps)
    ts = g.times()[g.m:]
    assert np.max(np.abs(z.values[g.m:, 0] - _two_interval(ts, 0.5))) < 1e-3


# --- value ----------------------------------------------------------------------------

def test_value_of_uncontrolled_problem():
    prob = _still(G)
    p = constant_path(G, 0.4, -0.7)
    res = value(prob, p)
    assert res.value == pytest.approx(0.49)
    assert not res.one_sided and res.mode == "exhaustive"


def test_value_at_horizon_is_terminal_cost():
    prob = integrator_problem(G)
    p = random_piecewise_affine(G, 1.0, np.random.default_rng(2))
    assert value(prob, p).value == abs(p.x[0])


@given(st.integers(0, 10), st.integers(-15, 15))
def test_integrator_value_closed_form(k, j):
    prob = integrator_problem(G)
    p = constant_path(G, G.time(G.m + k), j * G.dt)
    res = value(prob, p)
    assert res.value == pytest.approx(max(0.0, abs(j * G.dt) - (G.T - p.t)), abs=1e-12)
    assert res.value == pytest.approx(integrator_value_closed_form(p), abs=1e-12)
    assert cost(prob, p, res.witness) == pytest.approx(res.value, abs=1e-12)


def test_batched_matches_tree_enumeration():
    g = GridSpec(h=0.25, T=1.0, dt=0.125, n=1)
    fast = linear_delay_problem(g, [[-0.3]], [[0.5]], [[1.0]], [[-1.0], [0.0], [1.0]], sigma="quadratic")
    slow = linear_delay_problem(g, [[-0.3]], [[0.5]], [[1.0]], [[-1.0], [0.0], [1.0]], sigma="quadratic",
                                chi=lambda p, u: 0.0)
    for seed in range(4):
        p = random_piecewise_affine(g, 0.25, np.random.default_rng(seed))
        a, b = value(fast, p), value(slow, p)
        assert a.value == pytest.approx(b.value, abs=1e-12)
        brute = min(cost(slow, p, u) for u in itertools.product(range(3), repeat=6))
        assert a.value == pytest.approx(brute, abs=1e-12)


def test_beam_is_an_upper_bound():
    g = GridSpec(h=0.25, T=1.0, dt=0.125, n=1)
    prob = linear_delay_problem(g, [[0.2]], [[-1.0]], [[1.0]], [[-1.0], [0.0], [1.0]])
    p = random_piecewise_affine(g, 0.0, np.random.default_rng(7))
    ex, bm = value(prob, p), value(prob, p, mode="beam", beam_width=4)
    assert bm.value >= ex.value - 1e-12 and bm.one_sided


def test_budget_guard():
    g = GridSpec(h=0.5, T=1.0, dt=1 / 16, n=1)
    with pytest.raises(BudgetExceeded):
        value(integrator_problem(g), constant_path(g, 0.0, 0.0))
    with pytest.raises(ValueError):
        value(integrator_problem(G), constant_path(G, 0.0, 0.0), mode="greedy")


def test_value_deterministic_across_workers():
    g = GridSpec(h=0.25, T=1.0, dt=0.125, n=1)
    prob = linear_delay_problem(g, [[0.2]], [[-1.0]], [[1.0]], [[-1.0], [0.0], [1.0]], chi=lambda p, u: 0.1 * u[0] ** 2)
    p = random_piecewise_affine(g, 0.0, np.random.default_rng(3))
    a, b = value(prob, p, workers=1), value(prob, p, workers=4)
    assert a.to_dict() == b.to_dict()


# --- Hamiltonian and DPP --------------------------------------------------------------

@given(st.floats(-5, 5))
def test_bellman_H_of_integrator(s):
    p = constant_path(G, 0.0, 0.3)
    assert bellman_H(integrator_problem(G), p, [s]) == pytest.approx(-abs(s))


def test_bellman_H_singleton():
    prob = DelayControlProblem(lambda p, u: np.array([2.0 * u[0]]), lambda p, u: 0.5, lambda z: 0.0,
                               (1.5,), G)
    assert bellman_H(prob, constant_path(G, 0.0, 0.0), [2.0]) == pytest.approx(2.0 * 3.0 + 0.5)


def test_dpp_residual_uncontrolled():
    assert dpp_residual(_still(G), constant_path(G, 0.5, 1.0), 0.8) == 0.0


def test_dpp_residual_integrator():
    g = GridSpec(h=0.5, T=1.0, dt=1 / 16, n=1)
    prob = integrator_problem(g)
    rng = np.random.default_rng(4)
    for _ in range(3):
        t = g.time(g.m + int(rng.integers(6, 12)))
        p = random_piecewise_affine(g, t, rng)
        for tau in (t + g.dt, t + 2 * g.dt, g.T):
            assert dpp_residual(prob, p, tau) <= 1e-9
    with pytest.raises(ValueError):
        dpp_residual(prob, p, p.t)


# --- regularity ------------------------------------------------------------------------

def test_regularity_uncontrolled_keeps_alpha():
    rep = regularity_report(_still(G, sigma=lambda z: float(abs(z.values[-1, 0]))), 1.0, budget=6)
    assert rep.alpha_star == 1.0 and rep.outliers == 0


def test_regularity_integrator_lipschitz():
    g = GridSpec(h=0.5, T=1.0, dt=0.125, n=1)
    rep = regularity_report(integrator_problem(g), 1.0, budget=16, seed=2)
    assert rep.outliers == 0 and rep.lam is not None and rep.lam <= 1.0 + 1e-9
    assert rep.alpha_star <= rep.gronwall + 1e-9


def test_regularity_flags_discontinuous_terminal_cost():
    g = GridSpec(h=0.5, T=1.0, dt=0.125, n=1)
    prob = _still(g, sigma=lambda z: float(z.values[g.index(0.5), 0] > 0))
    pairs = []
    for e in (1e-3, 2e-3, 1e-1):
        p = constant_path(g, 0.75, e)
        q = constant_path(g, 0.75, -e)
        pairs.append((p, q))
    rep = regularity_report(prob, 1.0, pairs=pairs, sigma_lipschitz=False)
    assert rep.small_scale_jump == 1.0
    ratios = [d / r for r, d in rep.pairs]
    assert max(ratios) > 100


def test_control_signal_normalises():
    assert ControlSignal([1.0, 2]).indices == (1, 2)
    with pytest.raises(ValueError):
        DelayControlProblem(lambda p, u: u, lambda p, u: 0.0, lambda z: 0.0, (), G)
    assert PathPoint.from_values(G, 0.0, np.zeros(G.m + 1)).in_G0
