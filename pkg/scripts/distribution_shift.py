"""NPQM robustness when training and test bids come from different distributions.

Four setups at one budget, each against FQ on the same test bids:
(1) uniform/uniform, (2) uniform/normal(0.5, 0.25), (3) standard normal
for both, (4) standard normal train, normal(0.5, 0.25) test. Normal bids
are min-max mapped into (0, 1). That mapping removes location and scale,
so normal(0.5, 0.25) and standard normal test bids coincide for a fixed seed
and setups (3) and (4) differ only in what NPQM was trained on.

    python scripts/distribution_shift.py --budget 0.5 --trials 100
"""

import argparse

import numpy as np

from pdqs.harness import BidModel, ExperimentPlan, SyntheticBinary, run_cell
from pdqs.npqm import TrainConfig

UNIFORM = BidModel("uniform")
NARROW = BidModel("normal", 0.5, 0.25)
STANDARD = BidModel("normal", 0.0, 1.0)

SETUPS = {
    "(1) uniform -> uniform": (UNIFORM, UNIFORM),
    "(2) uniform -> normal(0.25)": (UNIFORM, NARROW),
    "(3) std normal -> std normal": (STANDARD, STANDARD),
    "(4) std normal -> normal(0.25)": (STANDARD, NARROW),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--budget", type=float, default=0.5)
    ap.add_argument("--trials", type=int, default=100)
    ap.add_argument("--episodes", type=int, default=5000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    data = SyntheticBinary(args.n, 0.3)
    print(f"{'setup':<32}{'npqm':>8}{'fq':>8}")
    for name, (train, test) in SETUPS.items():
        plan = ExperimentPlan(mechanisms=("npqm", "fq"), budget_fractions=(args.budget,), trials=args.trials, bid_model=test, train_bid_model=train, seed=args.seed, train=TrainConfig(episodes=args.episodes))
        cells = {}
        for mech in plan.mechanisms:
            recs, skip = run_cell(plan, data, mech, 0)
            cells[mech] = np.mean([r.error for r in recs]) if recs else float("nan")
        print(f"{name:<32}{cells['npqm']:>8.3f}{cells['fq']:>8.3f}")


if __name__ == "__main__":
    main()
