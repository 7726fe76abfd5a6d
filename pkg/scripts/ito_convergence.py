"""Print the Ito residual study for X = B, f(x) = x^2 over a range of step counts."""

import argparse

import numpy as np

from bdsde.calculus import brownian_ito_study
from bdsde.markspace import DiscreteMeasureSpace


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--steps", type=int, nargs="+", default=[16, 32, 64, 128])
    ap.add_argument("--paths", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    e = DiscreteMeasureSpace.empty()
    study = brownian_ito_study(dict(E=e, U0=e, U1=e, F=e), tuple(args.steps), args.paths, seed=args.seed)
    print("K  mean|residual|  ratio  sqrt(dt) reference")
    for i, (K, r) in enumerate(zip(study.steps, study.mean_abs_residual)):
        ratio = study.ratios[i - 1] if i else float("nan")
        print(f"{K:4d}  {r:.6f}  {ratio:.4f}  {np.sqrt(1.0 / K):.4f}")
    print(f"linear test function residual: {study.linear_max_residual:.3g}")


if __name__ == "__main__":
    main()
