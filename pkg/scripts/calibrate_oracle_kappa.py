"""Worst-case ratio of brute-force maximum to the heuristic oracle value.

Run this to justify the declared kappa constants in ``kwidth.geometry``.
"""

import argparse

import numpy as np

from kwidth.geometry import ConstraintSet, quad_max_bruteforce, quad_max_oracle


def random_symmetric(rng, d, psd):
    G = rng.standard_normal((d, d))
    return G @ G.T if psd else 0.5 * (G + G.T)


def worst_ratio(make_set, dims, trials, rng, samples):
    worst = 1.0
    for d in dims:
        for t in range(trials):
            K = make_set(d, rng)
            X = random_symmetric(rng, d, psd=t % 2 == 0)
            brute = quad_max_bruteforce(K, X, samples=samples, seed=t)
            got = quad_max_oracle(K, X).value
            if brute > 1e-12:
                worst = max(worst, brute / max(got, 1e-300))
    return worst


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--trials", type=int, default=100)
    parser.add_argument("--samples", type=int, default=20_000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    rng = np.random.default_rng(args.seed)

    def box(d, rng):
        return ConstraintSet.hyperrectangle(rng.uniform(0.2, 2.0, d))

    r = worst_ratio(box, range(2, 13), args.trials, rng, args.samples)
    print(f"hyperrectangle worst ratio: {r:.4f}")
    for p in (1.5, 3.0, 4.0):
        r = worst_ratio(lambda d, rng, p=p: ConstraintSet.lp_ball(d, p), range(2, 9),
                        max(args.trials // 5, 1), rng, args.samples)
        print(f"l_{p} ball worst ratio: {r:.4f}")


if __name__ == "__main__":
    main()
