"""Minimal/maximal solution bracket for beta = min(sqrt|y|, 1 + |y|), Y_T = 0.

The minimal solution is 0 and the maximal one is (T - t)^2 / 4; the
printed Y_S0 column should decrease towards 0.25 as the level grows.
"""

import argparse

from bdsde.coefficients import TerminalCondition
from bdsde.drivers import TimeGrid, simulate_drivers
from bdsde.envelope import envelope_solve
from bdsde.families import sqrt_drift_family
from bdsde.markspace import DiscreteMeasureSpace


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--levels", type=float, nargs="+", default=[2, 4, 8, 16])
    ap.add_argument("--steps", type=int, default=32)
    ap.add_argument("--paths", type=int, default=1000)
    ap.add_argument("--sigma", type=float, default=0.2)
    ap.add_argument("--seed", type=int, default=3)
    args = ap.parse_args()
    e = DiscreteMeasureSpace.empty()
    sp = dict(E=DiscreteMeasureSpace.from_atoms([("e", 0.5, 1.0)]), U0=e, U1=e, F=e)
    d = simulate_drivers(TimeGrid.uniform(1.0, args.steps), sp, args.paths, seed=args.seed, scenario_size=100)
    rep = envelope_solve(sqrt_drift_family(sp, sigma_y=args.sigma), TerminalCondition.constant(0.0), d, args.levels)
    print("level  Y_I0      Y_S0      width")
    for lv, a, b, w in zip(rep.levels, rep.Y_I0, rep.Y_S0, rep.width0):
        print(f"{lv.level:5g}  {a:.6f}  {b:.6f}  {w:.6f}")
    bad = {k: v for k, v in rep.chain_violations.items() if v > 0}
    print("chain violations:", bad or "none")


if __name__ == "__main__":
    main()
