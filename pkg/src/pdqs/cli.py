"""Command-line entry point: ``pdqs {train,run,experiment,gen-data,check}``.

Settings resolve as built-in defaults, then the ``--config`` JSON file, then
explicit flags. The master seed falls back to ``$PDQS_SEED`` when neither
the config nor a flag sets it.

Exit codes: 0 success, 1 usage error, 2 runtime failure, 3 invariant
violation (``check``), 4 training found no budget-feasible allocation.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__, defaults
from .baseline_fq import run_fq
from .core import DataDomain, ExpAllocation, IncreasingAllocation, LinearAllocation, LogAllocation, Market, Rng
from .gpqm import run_gpqm
from .harness import (
    BidModel,
    CsvSource,
    ExperimentPlan,
    SyntheticBinary,
    SyntheticReal,
    generate_bids,
    load_dataset,
    run_experiment,
    summarize_records,
    write_records,
    write_summary,
)
from .npqm import TrainConfig, dual_ascent_train, load_model, run_npqm, save_model
from .queries import QuerySpec

log = logging.getLogger("pdqs")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_VIOLATION, EXIT_NO_ANSWER = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# built-in defaults for every setting a flag or config key can override
DEFAULTS = {
    "seed": 0,
    "n": 2000,
    "budget_fraction": [0.5],
    "mechanism": ["gpqm-linear"],
    "query": "count",
    "estimator": None,
    "q_min": defaults.Q_MIN,
    "trials": defaults.TRIALS,
    "episodes": defaults.EPISODES,
    "hidden": defaults.HIDDEN,
    "inner_steps": defaults.INNER_STEPS,
    "jobs": None,
    "out": None,
    "model": None,
    "data": {"kind": "synthetic-binary", "n": 2000, "ones_fraction": 0.3, "seed": 0},
    "bid_model": {"distribution": "uniform"},
    "train_bid_model": {"distribution": "uniform"},
    "redraw_bids": True,
}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file whose keys mirror the flags (underscores for dashes)")
    p.add_argument("--seed", type=int, help="master seed (default: $PDQS_SEED, else 0)")
    p.add_argument("--out", help="output path")


def _market_flags(p):
    p.add_argument("--budget-fraction", type=float, action="append", help="budget as a fraction of theta_hi * n (repeatable)")
    p.add_argument("--query", choices=["count", "median"])
    p.add_argument("--estimator", choices=["raw", "debiased"])
    p.add_argument("--n", type=int, help="number of owners for synthetic data")


def _train_flags(p):
    p.add_argument("--episodes", type=int, help=f"dual-ascent episodes (default {defaults.EPISODES})")
    p.add_argument("--hidden", type=int, help=f"hidden width per head (default {defaults.HIDDEN})")
    p.add_argument("--inner-steps", type=int, help=f"primal steps per episode (default {defaults.INNER_STEPS})")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="pdqs", description="Private data trading under local differential privacy.")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train an NPQM allocation and write the model file")
    _common(p)
    _market_flags(p)
    _train_flags(p)
    p.add_argument("--bid-distribution", choices=["uniform", "normal"])
    p.add_argument("--model", help="model output path (alias of --out)")

    p = sub.add_parser("run", help="run one mechanism on one market and print the outcome")
    _common(p)
    _market_flags(p)
    p.add_argument("--mechanism", choices=defaults.MECHANISMS, action="append")
    p.add_argument("--model", help="trained NPQM model file (required for npqm)")
    p.add_argument("--csv", help="read private values from this CSV instead of synthetic data")
    p.add_argument("--column")
    p.add_argument("--predicate", help="column==value or column>=number")

    p = sub.add_parser("experiment", help="run a budget-sweep experiment plan")
    _common(p)
    _market_flags(p)
    _train_flags(p)
    p.add_argument("--mechanism", choices=defaults.MECHANISMS, action="append", help="repeatable; default all")
    p.add_argument("--trials", type=int)
    p.add_argument("--jobs", type=int, help="parallel worker processes (default: logical cores)")

    p = sub.add_parser("gen-data", help="write a synthetic dataset as CSV")
    _common(p)
    p.add_argument("--kind", choices=["binary", "real"], default="binary")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--ones-fraction", type=float, default=0.3)
    p.add_argument("--lo", type=float, default=0.0)
    p.add_argument("--hi", type=float, default=1.0)
    p.add_argument("--distribution", choices=["uniform", "normal"], default="uniform")

    p = sub.add_parser("check", help="run the invariant self-checks")
    _common(p)
    p.add_argument("--fixture", choices=["increasing"], help="add a deliberately broken allocation")
    p.add_argument("--markets", type=int, default=5, help="random markets per allocation kind")
    return ap


def resolve(args: argparse.Namespace) -> dict:
    """Defaults <- config file <- flags; seed falls back to $PDQS_SEED."""
    cfg = json.loads(json.dumps(DEFAULTS))
    file_cfg = {}
    if getattr(args, "config", None):
        try:
            file_cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(file_cfg, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = set(file_cfg) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(file_cfg)
    if "seed" not in file_cfg and os.environ.get("PDQS_SEED"):
        try:
            cfg["seed"] = int(os.environ["PDQS_SEED"])
        except ValueError:
            raise UsageError("PDQS_SEED must be an integer") from None
    for key, val in vars(args).items():
        if key in DEFAULTS and val is not None:
            cfg[key] = val
    if getattr(args, "model", None) and getattr(args, "command", "") == "train" and not args.out:
        cfg["out"] = args.model
    for key in ("budget_fraction", "mechanism"):
        if not isinstance(cfg[key], list):
            cfg[key] = [cfg[key]]
    if getattr(args, "n", None) is not None:
        cfg["data"] = {**cfg["data"], "n": args.n}
    return cfg


def _data_source(spec: dict):
    spec = dict(spec)
    kind = spec.pop("kind", "synthetic-binary")
    if kind == "csv":
        return CsvSource(**spec)
    if kind == "synthetic-binary":
        return SyntheticBinary(**spec)
    if kind == "synthetic-real":
        return SyntheticReal(**spec)
    raise UsageError(f"unknown data kind {kind!r}")


def _query(cfg) -> QuerySpec:
    try:
        return QuerySpec(cfg["query"], cfg["estimator"], cfg["q_min"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _train_config(cfg, seed: int) -> TrainConfig:
    return TrainConfig(episodes=cfg["episodes"], hidden=cfg["hidden"], inner_steps=cfg["inner_steps"], seed=seed)


def _header(command: str, cfg: dict) -> dict:
    return {"command": command, "version": __version__, "config": cfg, "created": _dt.datetime.now(_dt.timezone.utc).isoformat()}


# -- subcommands ----------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = resolve(args)
    if args.bid_distribution:
        cfg["train_bid_model"] = {"distribution": args.bid_distribution}
    if not cfg["out"]:
        raise UsageError("train needs --model or --out")
    n = int(cfg["data"]["n"])
    frac = cfg["budget_fraction"][0]
    root = Rng(cfg["seed"])
    bids = generate_bids(BidModel(**cfg["train_bid_model"]), n, root.derive(0, 0).generator())
    model = dual_ascent_train(bids, frac * n, _train_config(cfg, cfg["seed"]))
    if model is None:
        print(f"no budget-feasible allocation found for budget {frac}n with n={n}", file=sys.stderr)
        return EXIT_NO_ANSWER
    save_model(model, cfg["out"])
    print(json.dumps({"model": cfg["out"], "n": n, "budget_fraction": frac, "lambda": model.lam}))
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = resolve(args)
    if args.csv:
        cfg["data"] = {"kind": "csv", "path": args.csv, "column": args.column, "predicate": args.predicate}
    values, domain = load_dataset(_data_source(cfg["data"]))
    n = len(values)
    frac = cfg["budget_fraction"][0]
    mech = cfg["mechanism"][0]
    query = _query(cfg)
    root = Rng(cfg["seed"])
    bids = generate_bids(BidModel(**cfg["bid_model"]), n, root.derive(0, 0).generator())
    market = Market(values, bids, frac * n, data_domain=domain)
    gen = root.derive(0, 1).generator()
    if mech == "fq":
        out = run_fq(market, query, gen)
    elif mech == "npqm":
        if not cfg["model"]:
            raise UsageError("npqm needs --model")
        out = run_npqm(market, load_model(cfg["model"], expect_n=n), query, gen)
    else:
        coef = root.derive(0, 2).generator().uniform(0.0, defaults.COEF_HI)
        af = {"gpqm-linear": LinearAllocation(), "gpqm-log": LogAllocation(coef), "gpqm-exp": ExpAllocation(coef)}[mech]
        out = run_gpqm(market, af, query, gen)
    doc = {"mechanism": mech, "budget_fraction": frac, "n": n, **out.summary()}
    text = json.dumps(doc, sort_keys=True)
    if cfg["out"]:
        Path(cfg["out"]).write_text(json.dumps({"_header": _header("run", cfg)}) + "\n" + text + "\n")
    print(text)
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = resolve(args)
    if args.mechanism is None and "mechanism" not in _file_keys(args):
        cfg["mechanism"] = list(defaults.MECHANISMS)
    if args.budget_fraction is None and "budget_fraction" not in _file_keys(args):
        cfg["budget_fraction"] = list(defaults.BUDGET_FRACTIONS)
    if not cfg["out"]:
        raise UsageError("experiment needs --out")
    try:
        plan = ExperimentPlan(
            mechanisms=cfg["mechanism"],
            budget_fractions=cfg["budget_fraction"],
            trials=cfg["trials"],
            query=_query(cfg),
            bid_model=BidModel(**cfg["bid_model"]),
            train_bid_model=BidModel(**cfg["train_bid_model"]),
            seed=cfg["seed"],
            train=_train_config(cfg, 0),
            redraw_bids=cfg["redraw_bids"],
        )
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    jobs = cfg["jobs"] or os.cpu_count() or 1
    result = run_experiment(plan, _data_source(cfg["data"]), jobs=jobs)
    out = Path(cfg["out"])
    write_records(result.records, out, header={**_header("experiment", cfg), "skipped": [asdict(s) for s in result.skipped]})
    write_summary(summarize_records(result.records), out.with_suffix(".summary.csv"))
    for s in result.skipped:
        print(f"skipped {s.mechanism} at {s.budget_fraction}n: {s.reason}", file=sys.stderr)
    print(json.dumps({"records": len(result.records), "skipped": len(result.skipped), "out": str(out)}))
    return EXIT_OK


def _file_keys(args) -> set:
    if not getattr(args, "config", None):
        return set()
    return set(json.loads(Path(args.config).read_text()))


def cmd_gen_data(args) -> int:
    if not args.out:
        raise UsageError("gen-data needs --out")
    seed = resolve(args)["seed"]
    if args.kind == "binary":
        values, _ = load_dataset(SyntheticBinary(args.n, args.ones_fraction, seed))
        lines = [str(int(v)) for v in values]
    else:
        values, _ = load_dataset(SyntheticReal(args.n, args.lo, args.hi, args.distribution, seed))
        lines = [format(v, ".17g") for v in values]
    Path(args.out).write_text("value\n" + "\n".join(lines) + "\n")
    return EXIT_OK


def cmd_check(args) -> int:
    from .selfcheck import run_checks

    seed = resolve(args)["seed"]
    fixtures = [IncreasingAllocation()] if args.fixture == "increasing" else []
    failures = 0
    for name, ok, detail in run_checks(seed=seed, markets=args.markets, extra_allocations=fixtures):
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        failures += not ok
    return EXIT_VIOLATION if failures else EXIT_OK


COMMANDS = {"train": cmd_train, "run": cmd_run, "experiment": cmd_experiment, "gen-data": cmd_gen_data, "check": cmd_check}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"pdqs: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"pdqs: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - every other failure is a runtime error
        log.debug("runtime failure", exc_info=True)
        print(f"pdqs: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
