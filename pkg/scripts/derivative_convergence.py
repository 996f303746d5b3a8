"""Error of the one-sided directional derivative estimates against closed forms.

For V, Psi(., q) and an affine functional the estimate along a straight
extension is compared with d_t phi + <grad phi, l> at decreasing grid steps,
with and without extrapolation to zero offset.
"""
import argparse

import numpy as np

from pathhj.ci_calculus import Functional, dir_deriv_single
from pathhj.gauge import dt_V, eval_Psi, eval_V, grad1_Psi, grad_V
from pathhj.path_core import GridSpec, random_piecewise_affine


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=30)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    print(f"{'dt':>10} {'plain V':>10} {'extrap V':>10} {'plain Psi':>10} {'extrap Psi':>10}")
    for e in (6, 7, 8, 9):
        g = GridSpec(0.5, 1.0, 2.0 ** -e, 2)
        rng = np.random.default_rng(args.seed)
        err = np.zeros((2, 2))
        for _ in range(args.samples):
            p = random_piecewise_affine(g, g.time(int(rng.integers(g.m, g.m + g.size // 3))), rng)
            q = random_piecewise_affine(g, g.time(int(rng.integers(g.m, g.size))), rng)
            l = rng.normal(size=2)
            cases = [(Functional(eval_V), dt_V(p) + grad_V(p) @ l),
                     (Functional(lambda z: eval_Psi(z, q)), grad1_Psi(p, q) @ l)]
            for i, (phi, exact) in enumerate(cases):
                for j, ex in enumerate((False, True)):
                    est = dir_deriv_single(phi, p, l, extrapolate=ex).estimate
                    err[i, j] = max(err[i, j], abs(est - exact))
        print(f"{g.dt:10.2e} {err[0, 0]:10.2e} {err[0, 1]:10.2e} {err[1, 0]:10.2e} {err[1, 1]:10.2e}")


if __name__ == "__main__":
    main()
