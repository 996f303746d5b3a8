"""Perturbed minimisation on a random finite path set and the subgradient search.

Part one runs the anchor iteration for several kappa values and reports the
anchors and the three clause checks.  Part two runs the penalised search on
the two analytic functionals and prints the per-k diagnostics.
"""
import argparse

import numpy as np

from pathhj.bp_lab import DiscreteSet, PreconditionError, bp_minimize, subgradient_search
from pathhj.ci_calculus import DirectionSet, Functional
from pathhj.path_core import GridSpec, constant_path, random_piecewise_affine, rho_inf, sup_norm

TAGS = {"continuous", "rho1_lsc", "locally_lipschitz"}


def bp_part(size, seed):
    g = GridSpec(0.5, 1.0, 1 / 16, 2)
    rng = np.random.default_rng(seed)
    pts = [random_piecewise_affine(g, g.time(int(rng.integers(g.m, g.size - 1))), rng, scale=0.5)
           for _ in range(size)]
    X = DiscreteSet(pts, max(sup_norm(p) for p in pts))
    target = random_piecewise_affine(g, 0.5, rng, scale=0.5)
    f = np.array([rho_inf(p, target) ** 2 for p in X.points])
    print(f"set of {len(X)} points, alpha = {X.alpha:.3f}, min phi = {f.min():.4f}")
    for kappa in (1.0, 0.5, 0.25, 0.1):
        res = bp_minimize(None, X, kappa, start="near", phi_values=f)
        flags = {k: v for k, v in res.checks.items() if isinstance(v, bool)}
        print(f"  kappa {kappa:4.2f}: anchors {res.anchor_indices}, phi(p*) = {f[res.index]:.4f}, "
              f"psi range [{res.psi_range[0]:.3g}, {res.psi_range[1]:.3g}], all checks {all(flags.values())}")


def search_part():
    g = GridSpec(h=0.125, T=0.5, dt=2.0 ** -12, n=1)
    p = constant_path(g, 0.125, 0.3)
    cases = [("phi = t, L = {0}", Functional(lambda q: q.t, TAGS), DirectionSet.polytope([[0.0]])),
             ("phi = x(t) + 2t, L = B_1", Functional(lambda q: float(q.x[0]) + 2 * q.t, TAGS),
              DirectionSet.ball(1, 1.0)),
             ("phi = -t, L = {0}", Functional(lambda q: -q.t, TAGS), DirectionSet.polytope([[0.0]]))]
    for name, phi, L in cases:
        try:
            res = subgradient_search(phi, p, L, 0.1)
        except PreconditionError as e:
            print(f"{name}: refused ({e})")
            continue
        print(f"{name}: d0 = {res.d0:.4f}, delta = {res.delta:.4f}, |X| = {res.sizes['X']}, |Y| = {res.sizes['Y']}")
        for r in res.per_k:
            print(f"  k = {r['k']:2d}: p0 = {r['p0']:8.4f}, p = {r['p'][0]:8.4f}, margin = {r['margin']:8.4f}, "
                  f"accepted = {r['accepted']}, Psi = {r['Psi']:.2e}, (t - tau)^2 = {r['dt2']:.2e}")
        print(f"  success = {res.success}, chosen k = {res.candidate.k if res.success else None}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=200)
    ap.add_argument("--seed", type=int, default=10)
    args = ap.parse_args()
    bp_part(args.size, args.seed)
    search_part()


if __name__ == "__main__":
    main()
