"""Wall time of the refinement solver against sequence length.

    python scripts/refine_scaling.py --sizes 1000 10000 100000 1000000
"""
import argparse
import time

import numpy as np

from topseg.refine import RefineConfig, solve_refinement


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[1_000, 10_000, 100_000])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--n-iter", type=int, default=8)
    a = ap.parse_args()

    rng = np.random.default_rng(0)
    cfg = RefineConfig()
    solve_refinement(rng.dirichlet(np.ones(4), 32), rng.random(32), rng.random(32), cfg)  # jit warm-up
    print(f"{'T':>10s} {'best_s':>10s} {'us/frame':>10s}")
    for T in a.sizes:
        P_hat = rng.dirichlet(np.ones(4), T)
        r, eta = rng.random(T), rng.random(T)
        best = np.inf
        for _ in range(a.repeats):
            t0 = time.perf_counter()
            solve_refinement(P_hat, r, eta, cfg, n_iter=a.n_iter)
            best = min(best, time.perf_counter() - t0)
        print(f"{T:>10d} {best:>10.4f} {1e6 * best / T:>10.3f}")


if __name__ == "__main__":
    main()
