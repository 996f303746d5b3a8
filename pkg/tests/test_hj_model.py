import numpy as np
import pytest
from hypothesis import given, strategies as st

from pathhj.delay_control import bellman_hamiltonian, integrator_problem, linear_delay_problem
from pathhj.hj_model import (HamiltonianSpec, char_ball_radius, extend_with_feedback, gronwall_bound,
                             linear_hamiltonian, norm_scaled_hamiltonian, sample_characteristics,
                             validate_assumption_H, zero_hamiltonian)
from pathhj.path_core import GridSpec, constant_extension, constant_path, random_piecewise_affine, sup_norm

G = GridSpec(h=0.5, T=1.0, dt=1 / 32, n=2)


def test_spec_validation():
    with pytest.raises(ValueError):
        HamiltonianSpec(lambda p, s: 0.0, 0.0)
    with pytest.raises(ValueError):
        HamiltonianSpec(lambda p, s: 0.0, np.inf)
    H = linear_hamiltonian([3.0, 4.0])
    assert H.c_H == 5.0 and H(constant_path(G, 0.0, 0.0), [1.0, 1.0]) == 7.0


@pytest.mark.parametrize("H", [linear_hamiltonian([0.3, -0.4], c_H=0.5), norm_scaled_hamiltonian(1.7),
                               zero_hamiltonian()])
def test_builtin_hamiltonians_satisfy_growth(H):
    rep = validate_assumption_H(H, G, budget=150, seed=1)
    assert rep.ok and rep.checked == 150
    assert len(rep.modulus_table) == 50
    assert rep.to_dict()["violations"] == 0


def test_norm_scaled_is_tight():
    rep = validate_assumption_H(norm_scaled_hamiltonian(2.0), G, budget=100)
    # |(1+|x|)(|s| - |r|)| reaches (1+|x|)|s - r| for parallel s, r; random pairs come close
    assert rep.worst_excess <= 1e-9


def test_understated_constant_is_caught():
    H = HamiltonianSpec(lambda p, s: 3.0 * float(np.linalg.norm(s)), 1.0)
    rep = validate_assumption_H(H, G, budget=50)
    assert not rep.ok and rep.worst_cases[0]["excess"] > 0


@pytest.mark.parametrize("make", [
    lambda: integrator_problem(GridSpec(0.5, 1.0, 1 / 16, 1)),
    lambda: linear_delay_problem(GridSpec(0.5, 1.0, 1 / 16, 1), [[-0.5]], [[-1.0]], [[1.0]], [[-1.0], [1.0]]),
])
def test_bellman_hamiltonian_growth(make):
    """Min of affine functions of ``s`` with slopes bounded by ``c (1 + |x|)`` inherits the bound."""
    prob = make()
    H = bellman_hamiltonian(prob)
    rep = validate_assumption_H(H, prob.grid, budget=200, seed=3)
    assert rep.ok


def test_char_ball_radius():
    g1 = GridSpec(0.5, 1.0, 1 / 16, 1)
    assert char_ball_radius(constant_path(g1, 0.0, 0.0), 1.5) == 1.5
    assert char_ball_radius(constant_path(g1, 0.0, 1.0), 2.0) == 4.0


@given(st.floats(0.0, 5.0), st.floats(0.0, 5.0))
def test_radius_monotone_in_sup_norm(a, b):
    g1 = GridSpec(0.5, 1.0, 1 / 16, 1)
    ra = char_ball_radius(constant_path(g1, 0.0, a), 1.3)
    rb = char_ball_radius(constant_path(g1, 0.0, b), 1.3)
    if a <= b:
        assert ra <= rb


def test_count_one_contains_constant_extension():
    p = random_piecewise_affine(G, 0.25, np.random.default_rng(0))
    paths = sample_characteristics(p, 1.0, count=1)
    assert paths[0] == constant_extension(p)
    with pytest.raises(ValueError):
        sample_characteristics(p, 1.0, count=0)


@given(st.integers(0, 10 ** 6), st.floats(0.2, 3.0))
def test_characteristics_obey_radius_and_gronwall(seed, c_H):
    rng = np.random.default_rng(seed)
    p = random_piecewise_affine(G, G.time(int(rng.integers(G.m, G.size - 1))), rng)
    k0 = len(p.values) - 1
    for z in sample_characteristics(p, c_H, count=6, seed=seed):
        v = z.values
        running = np.sqrt(np.max(np.einsum("ij,ij->i", v[: k0 + 1], v[: k0 + 1])))
        for k in range(k0, G.size - 1):
            r = c_H * (1 + running)
            assert np.linalg.norm(v[k + 1] - v[k]) / G.dt <= r + 1e-12
            running = max(running, float(np.linalg.norm(v[k + 1])))
        # discrete Gronwall: (1 + sup) grows at most by (1 + c_H dt) per step
        steps = G.size - 1 - k0
        assert sup_norm(z) <= (1 + sup_norm(p)) * (1 + c_H * G.dt) ** steps - 1 + 1e-9
        assert sup_norm(z) <= gronwall_bound(p, c_H) + 1e-9


def test_feedback_extension_clips():
    p = constant_path(GridSpec(0.5, 1.0, 1 / 8, 1), 0.5, 0.0)
    z, d = extend_with_feedback(p, 1.0, lambda j, x, r: np.array([10.0]))
    assert d[0, 0] == 1.0 and d[-1, 0] <= 1 + z.values[-2, 0] + 1e-12
    assert np.all(np.diff(d[:, 0]) > 0)
