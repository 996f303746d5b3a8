"""Margins of the eight solution criteria for the integrator value functional.

Runs the checkers on the exact value max(0, |x(t)| - (T - t)) and on the
perturbations value + eps (T - t), printing the worst margin per criterion.
Positive margins on upper criteria (negative on lower) are violations.
"""
import argparse

import numpy as np

from pathhj.ci_calculus import Functional
from pathhj.delay_control import bellman_hamiltonian, integrator_problem, integrator_value_closed_form
from pathhj.path_core import GridSpec, random_piecewise_affine
from pathhj.solution_checkers import CRITERIA, UPPER, cross_validate

TAGS = {"continuous", "rho1_lsc", "rho1_usc", "locally_lipschitz"}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=20)
    ap.add_argument("--dt", type=float, default=1 / 64)
    ap.add_argument("--eps", type=float, nargs="+", default=[0.0, 0.5, -0.5])
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    g = GridSpec(h=0.5, T=1.0, dt=args.dt, n=1)
    H = bellman_hamiltonian(integrator_problem(g))
    rng = np.random.default_rng(args.seed)
    pts = [random_piecewise_affine(g, g.time(int(rng.integers(g.m, g.size - 2))), rng) for _ in range(args.points)]
    S = np.array([[0.0], [1.0], [-1.0], [2.0], [-2.0]])
    pairs = [(i, i % len(S)) for i in range(len(pts))]
    print(f"{'eps':>6} " + " ".join(f"{c:>10}" for c in CRITERIA))
    for eps in args.eps:
        phi = Functional(lambda p, e=eps: integrator_value_closed_form(p) + e * (g.T - p.t), TAGS)
        cv = cross_validate(phi, H, pts, S, pairs=pairs, workers=args.workers)
        worst = []
        for c in CRITERIA:
            m = [r["results"][c]["margin"] for r in cv.rows]
            worst.append(max(m) if c in UPPER else min(m))
        print(f"{eps:6.2f} " + " ".join(f"{w:10.4f}" for w in worst))
        print(f"{'':6} " + " ".join(f"{cv.verdicts[c]:>10}" for c in CRITERIA))


if __name__ == "__main__":
    main()
