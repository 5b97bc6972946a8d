"""Purchased privacy of a trained NPQM allocation against GPQM-linear.

Trains on one uniform bid vector and reports, per owner, the total expected
privacy loss bought and the expected spend, plus the learned allocation at a
few bids.

    python scripts/purchased_privacy.py --n 2000 --budget 0.5
"""

import argparse
import time

import numpy as np

from pdqs.core import LinearAllocation
from pdqs.gpqm import greedy_admission
from pdqs.npqm import TrainConfig, TrainingTrace, dual_ascent_train
from pdqs.payments import expected_payments


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--budget", type=float, default=0.5, help="fraction of n")
    ap.add_argument("--episodes", type=int, default=5000)
    ap.add_argument("--inner-steps", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    bids = np.random.default_rng(args.seed).uniform(0, 1, args.n)
    budget = args.budget * args.n
    trace = TrainingTrace()
    t0 = time.perf_counter()
    model = dual_ascent_train(bids, budget, TrainConfig(episodes=args.episodes, inner_steps=args.inner_steps, seed=args.seed), trace)
    print(f"trained in {time.perf_counter() - t0:.1f}s, {trace.commits} feasible episodes, final lambda {trace.lam[-1]:.3f}")

    q, w, P, _ = expected_payments(LinearAllocation(), bids)
    adm = greedy_admission(q, P, budget)
    print(f"gpqm-linear  privacy/n {w[adm].sum() / args.n:.4f}  spend/n {P[adm].sum() / args.n:.4f}  admitted {adm.sum()}")
    if model is None:
        print("npqm: no budget-feasible allocation")
        return
    q, w, P, _ = expected_payments(model.allocation(), bids)
    print(f"npqm         privacy/n {w.sum() / args.n:.4f}  spend/n {P.sum() / args.n:.4f}")
    order = np.argsort(bids)
    for b in (0.05, 0.1, 0.2, 0.3, 0.5, 0.8):
        print(f"  q at bid {b:.2f}: {np.interp(b, bids[order], q[order]):.4g}")


if __name__ == "__main__":
    main()
