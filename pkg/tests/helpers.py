"""Shared functionals for the tests."""
from pathhj.ci_calculus import Functional
from pathhj.delay_control import integrator_value_closed_form


def integrator_value(shift: float = 0.0) -> Functional:
    """Closed-form value of the scalar integrator problem, optionally plus ``shift (T - t)``."""
    def fn(p):
        return integrator_value_closed_form(p) + shift * (p.grid.T - p.t)

    return Functional(fn, {"locally_lipschitz", "rho1_lsc", "rho1_usc"}, f"value{shift:+g}")
