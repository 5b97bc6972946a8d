"""Budget sweep on a synthetic binary dataset: every mechanism, budgets 0.1n..0.9n.

Writes JSON-lines records and a per-cell summary CSV, then prints mean error
per mechanism and budget.

    python scripts/budget_sweep.py --n 2000 --trials 100 --out results/sweep.jsonl
"""

import argparse
import time
from pathlib import Path

from pdqs.harness import ExperimentPlan, SyntheticBinary, SyntheticReal, run_experiment, summarize_records, write_records, write_summary
from pdqs.npqm import TrainConfig
from pdqs.queries import QuerySpec


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--ones-fraction", type=float, default=0.3)
    ap.add_argument("--trials", type=int, default=100)
    ap.add_argument("--query", choices=["count", "median"], default="count")
    ap.add_argument("--estimator", choices=["raw", "debiased"])
    ap.add_argument("--episodes", type=int, default=5000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", default="results/sweep.jsonl")
    args = ap.parse_args()

    data = SyntheticBinary(args.n, args.ones_fraction) if args.query == "count" else SyntheticReal(args.n, 0.0, 100.0, "normal")
    plan = ExperimentPlan(
        trials=args.trials,
        query=QuerySpec(args.query, args.estimator),
        seed=args.seed,
        train=TrainConfig(episodes=args.episodes),
    )
    t0 = time.perf_counter()
    res = run_experiment(plan, data, jobs=args.jobs)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_records(res.records, out)
    rows = summarize_records(res.records)
    write_summary(rows, out.with_suffix(".summary.csv"))

    fracs = plan.budget_fractions
    table = {(r["mechanism"], r["budget_fraction"]): r["mean_error"] for r in rows}
    print(f"{'mechanism':<12}" + "".join(f"{f:>8.1f}n" for f in fracs))
    for mech in plan.mechanisms:
        print(f"{mech:<12}" + "".join(f"{table.get((mech, f), float('nan')):>9.3f}" for f in fracs))
    for s in res.skipped:
        print(f"skipped {s.mechanism} at {s.budget_fraction}n: {s.reason}")
    print(f"{len(res.records)} records in {time.perf_counter() - t0:.0f}s -> {out}")


if __name__ == "__main__":
    main()
