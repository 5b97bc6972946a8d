"""Datasets, bid generation and the budget-sweep experiment driver.

Randomness is keyed by role so that runs are reproducible and mechanisms see
common random numbers: trial ``t`` uses the same bid vector for every
mechanism and budget, while each (mechanism, budget, trial) cell gets its own
randomiser stream.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

from . import defaults
from .baseline_fq import run_fq
from .core import DataDomain, ExpAllocation, LinearAllocation, LogAllocation, Market, Rng, derive_rng
from .gpqm import MechanismOutcome, run_gpqm
from .npqm import NpqmModel, TrainConfig, dual_ascent_train, run_npqm
from .queries import MetricsSummary, QueryKind, QuerySpec, error_for, summarize

log = logging.getLogger(__name__)

MECHANISMS = defaults.MECHANISMS

# stream roles under the master seed
_BIDS, _MECH, _COEF, _TRAIN_BIDS, _TRAIN_INIT = 1, 2, 3, 4, 5


# -- datasets -----------------------------------------------------------------


@dataclass(frozen=True)
class CsvSource:
    """A CSV column. With a predicate (``col==value`` or ``col>=number``) the
    values are the 0/1 predicate outcomes; without one the column is parsed
    as numbers."""

    path: str
    column: str | None = None
    predicate: str | None = None


@dataclass(frozen=True)
class SyntheticBinary:
    n: int
    ones_fraction: float
    seed: int = 0


@dataclass(frozen=True)
class SyntheticReal:
    n: int
    lo: float = 0.0
    hi: float = 1.0
    distribution: str = "uniform"  # or "normal", min-max mapped into [lo, hi]
    seed: int = 0


DatasetSource = Union[CsvSource, SyntheticBinary, SyntheticReal]

_PREDICATE = re.compile(r"^\s*(?P<col>[^=<>]+?)\s*(?P<op>==|>=)\s*(?P<val>.*?)\s*$")


def parse_predicate(text: str):
    """``(column, op, value)`` for ``col==value`` or ``col>=number``."""
    m = _PREDICATE.match(text)
    if not m:
        raise ValueError(f"predicate must look like 'column==value' or 'column>=number', got {text!r}")
    col, op, val = m["col"], m["op"], m["val"]
    if op == ">=":
        try:
            val = float(val)
        except ValueError:
            raise ValueError(f"threshold predicate needs a number, got {m['val']!r}") from None
    return col, op, val


def _predicate_holds(cell: str, op: str, val) -> bool:
    if op == "==":
        return cell.strip() == val
    return float(cell) >= val


def _load_csv(src: CsvSource):
    path = Path(src.path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        if src.predicate is not None:
            col, op, val = parse_predicate(src.predicate)
        elif src.column is not None:
            col, op, val = src.column, None, None
        else:
            raise ValueError("a CSV source needs a column or a predicate")
        if col not in header:
            raise ValueError(f"column {col!r} not in CSV header {header}")
        out = []
        # row 1 is the header
        for row_no, row in enumerate(reader, start=2):
            cell = row[col]
            try:
                out.append(float(_predicate_holds(cell, op, val)) if op else float(cell))
            except (TypeError, ValueError):
                raise ValueError(f"{path}: row {row_no}: cannot parse {cell!r} in column {col!r}") from None
    if not out:
        raise ValueError(f"{path}: no data rows")
    values = np.array(out)
    if op:
        return values, DataDomain.binary()
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{path}: column {col!r} has non-finite values")
    lo, hi = values.min(), values.max()
    if lo == hi:
        raise ValueError(f"{path}: column {col!r} is constant; a real domain needs lo < hi")
    return values, DataDomain.interval(lo, hi)


def load_dataset(src: DatasetSource) -> tuple[np.ndarray, DataDomain]:
    if isinstance(src, CsvSource):
        return _load_csv(src)
    if src.n < 1:
        raise ValueError("dataset needs at least one value")
    gen = np.random.default_rng(src.seed)
    if isinstance(src, SyntheticBinary):
        if not 0 <= src.ones_fraction <= 1:
            raise ValueError("ones_fraction must lie in [0, 1]")
        values = np.zeros(src.n)
        values[: int(round(src.n * src.ones_fraction))] = 1.0
        return gen.permutation(values), DataDomain.binary()
    if isinstance(src, SyntheticReal):
        dom = DataDomain.interval(src.lo, src.hi)
        if src.distribution == "uniform":
            return gen.uniform(src.lo, src.hi, src.n), dom
        if src.distribution == "normal":
            return src.lo + (src.hi - src.lo) * _minmax(gen.standard_normal(src.n), 0.0), dom
        raise ValueError(f"unknown distribution {src.distribution!r}")
    raise TypeError(f"not a dataset source: {src!r}")


# -- bids ---------------------------------------------------------------------


def _minmax(x: np.ndarray, margin: float) -> np.ndarray:
    span = x.max() - x.min()
    if span == 0:
        return np.full_like(x, 0.5)
    return margin + (1.0 - 2.0 * margin) * (x - x.min()) / span


@dataclass(frozen=True)
class BidModel:
    """``uniform`` on (0, 1), or ``normal(mean, std)`` min-max mapped into (0, 1)."""

    distribution: str = "uniform"
    mean: float = 0.5
    std: float = 0.25
    margin: float = defaults.BID_MARGIN

    def __post_init__(self):
        if self.distribution not in ("uniform", "normal"):
            raise ValueError(f"unknown bid distribution {self.distribution!r}")
        if self.distribution == "normal" and not self.std > 0:
            raise ValueError("normal bids need std > 0")
        if not 0 < self.margin < 0.5:
            raise ValueError("margin must lie in (0, 0.5)")


def generate_bids(model: BidModel, n: int, gen: np.random.Generator) -> np.ndarray:
    if n < 1:
        raise ValueError("need at least one bid")
    if model.distribution == "uniform":
        # open interval: redraw the (probability ~2^-53) exact zero
        b = gen.uniform(0.0, 1.0, n)
        while np.any(b == 0.0):
            b[b == 0.0] = gen.uniform(0.0, 1.0, int(np.sum(b == 0.0)))
        return b
    return _minmax(gen.normal(model.mean, model.std, n), model.margin)


# -- plans and records ----------------------------------------------------------


@dataclass(frozen=True)
class ExperimentPlan:
    mechanisms: tuple[str, ...] = MECHANISMS
    budget_fractions: tuple[float, ...] = defaults.BUDGET_FRACTIONS
    trials: int = defaults.TRIALS
    query: QuerySpec = field(default_factory=QuerySpec)
    bid_model: BidModel = field(default_factory=BidModel)
    train_bid_model: BidModel = field(default_factory=BidModel)
    seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)
    redraw_bids: bool = True
    theta_hi: float = 1.0
    strict: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mechanisms", tuple(self.mechanisms))
        object.__setattr__(self, "budget_fractions", tuple(float(b) for b in self.budget_fractions))
        unknown = set(self.mechanisms) - set(MECHANISMS)
        if unknown:
            raise ValueError(f"unknown mechanisms {sorted(unknown)}; choose from {MECHANISMS}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.budget_fractions or any(not b > 0 for b in self.budget_fractions):
            raise ValueError("budget fractions must be positive")


@dataclass(frozen=True)
class ExperimentRecord:
    mechanism: str
    budget_fraction: float
    trial: int
    estimate: float
    ground_truth: float
    error: float
    estimator: str
    total_expected_payment: float
    total_realized_payment: float
    admitted_count: int
    seed: int
    # NPQM only: did the model satisfy the budget on its training bids
    train_feasible: bool | None = None


@dataclass(frozen=True)
class SkippedCell:
    mechanism: str
    budget_fraction: float
    reason: str


@dataclass
class ExperimentResult:
    records: list[ExperimentRecord]
    skipped: list[SkippedCell]

    def summary(self) -> list[dict]:
        return summarize_records(self.records)


def ground_truth(values: np.ndarray, kind: QueryKind) -> float:
    return float(values.sum()) if QueryKind(kind) is QueryKind.COUNT else float(np.median(values))


def trial_bids(plan: ExperimentPlan, n: int, trial: int) -> np.ndarray:
    t = trial if plan.redraw_bids else 0
    return generate_bids(plan.bid_model, n, derive_rng(Rng(plan.seed, _BIDS), t, 0).generator())


def train_for_budget(plan: ExperimentPlan, n: int, budget_index: int) -> NpqmModel | None:
    """NPQM trained on fresh bids from ``train_bid_model`` for one budget."""
    frac = plan.budget_fractions[budget_index]
    gen = derive_rng(Rng(plan.seed, _TRAIN_BIDS), budget_index, 0).generator()
    bids = generate_bids(plan.train_bid_model, n, gen)
    init_seed = derive_rng(Rng(plan.seed, _TRAIN_INIT), budget_index, 0).seed
    cfg = TrainConfig(**{**asdict(plan.train), "seed": init_seed, "theta_hi": plan.theta_hi})
    return dual_ascent_train(bids, frac * plan.theta_hi * n, cfg)


def _allocation_for(mechanism: str, gen: np.random.Generator):
    if mechanism == "gpqm-linear":
        return LinearAllocation()
    k = gen.uniform(0.0, defaults.COEF_HI)
    while k == 0.0:
        k = gen.uniform(0.0, defaults.COEF_HI)
    return LogAllocation(k) if mechanism == "gpqm-log" else ExpAllocation(k)


def run_cell(plan: ExperimentPlan, data: DatasetSource, mechanism: str, budget_index: int, model: NpqmModel | None = None):
    """All trials of one (mechanism, budget) cell: ``(records, skipped-or-None)``."""
    values, domain = load_dataset(data)
    n = len(values)
    frac = plan.budget_fractions[budget_index]
    budget = frac * plan.theta_hi * n
    truth = ground_truth(values, plan.query.kind)
    m_idx = MECHANISMS.index(mechanism)
    if mechanism == "npqm" and model is None:
        model = train_for_budget(plan, n, budget_index)
        if model is None:
            return [], SkippedCell(mechanism, frac, "no budget-feasible allocation found in training")
    records = []
    for t in range(plan.trials):
        market = Market(values, trial_bids(plan, n, t), budget, theta_hi=plan.theta_hi, data_domain=domain)
        cell_rng = derive_rng(Rng(plan.seed, _MECH), t, m_idx * 1024 + budget_index)
        gen = cell_rng.generator()
        if mechanism == "fq":
            out = run_fq(market, plan.query, gen)
        elif mechanism == "npqm":
            out = run_npqm(market, model, plan.query, gen)
        else:
            coef_gen = derive_rng(Rng(plan.seed, _COEF), t, m_idx * 1024 + budget_index).generator()
            out = run_gpqm(market, _allocation_for(mechanism, coef_gen), plan.query, gen, strict=plan.strict)
        records.append(_record(mechanism, frac, t, out, truth, plan, model))
    return records, None


def _record(mechanism, frac, trial, out: MechanismOutcome, truth, plan, model) -> ExperimentRecord:
    return ExperimentRecord(
        mechanism=mechanism,
        budget_fraction=frac,
        trial=trial,
        estimate=out.query_answer,
        ground_truth=truth,
        error=error_for(plan.query.kind, out.query_answer, truth),
        estimator=out.estimator.value,
        total_expected_payment=out.total_expected_payment,
        total_realized_payment=out.total_realized_payment,
        admitted_count=out.admitted_count,
        seed=plan.seed,
        train_feasible=bool(model.trained_bf) if mechanism == "npqm" else None,
    )


def _run_cell_job(args):
    return run_cell(*args)


def run_experiment(plan: ExperimentPlan, data: DatasetSource, jobs: int = 1) -> ExperimentResult:
    """Every (mechanism, budget) cell of the plan, in plan order.

    Output does not depend on ``jobs``: all randomness is keyed by role,
    trial and cell, never by execution order.
    """
    cells = [(mech, j) for mech in plan.mechanisms for j in range(len(plan.budget_fractions))]
    args = [(plan, data, mech, j) for mech, j in cells]
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell_job, args))
    else:
        results = [run_cell(*a) for a in args]
    records, skipped = [], []
    for recs, skip in results:
        records += recs
        if skip is not None:
            log.warning("skipped %s at budget %.2fn: %s", skip.mechanism, skip.budget_fraction, skip.reason)
            skipped.append(skip)
    return ExperimentResult(records, skipped)


# -- persistence ----------------------------------------------------------------

_RECORD_FIELDS = [f.name for f in fields(ExperimentRecord)]
HEADER_KEY = "_header"


def _format_value(v) -> str:
    if isinstance(v, float):
        if not math.isfinite(v):
            return json.dumps(v)  # NaN / Infinity
        text = format(v, ".17g")
        # keep a float marker so -0.0 and integral values parse back as floats
        return text + ".0" if text.lstrip("-").isdigit() else text
    return json.dumps(v)


def record_line(rec: ExperimentRecord) -> str:
    body = ", ".join(f"{json.dumps(k)}: {_format_value(getattr(rec, k))}" for k in _RECORD_FIELDS)
    return "{" + body + "}"


def write_records(records: Iterable[ExperimentRecord], path, header: dict | None = None) -> None:
    """JSON lines, floats at 17 significant digits. An optional header line
    (a single ``_header`` object) carries the run configuration."""
    with Path(path).open("w", encoding="utf-8") as fh:
        if header is not None:
            fh.write(json.dumps({HEADER_KEY: header}, sort_keys=True) + "\n")
        for rec in records:
            fh.write(record_line(rec) + "\n")


def read_records(path) -> list[ExperimentRecord]:
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: line {line_no}: malformed JSON ({exc.msg})") from None
            if not isinstance(doc, dict):
                raise ValueError(f"{path}: line {line_no}: expected an object")
            if HEADER_KEY in doc:
                continue
            if sorted(doc) != sorted(_RECORD_FIELDS):
                raise ValueError(f"{path}: line {line_no}: fields {sorted(doc)} do not match a record")
            out.append(_coerce(doc))
    return out


def read_header(path) -> dict | None:
    with Path(path).open(encoding="utf-8") as fh:
        first = fh.readline()
    try:
        doc = json.loads(first)
    except json.JSONDecodeError:
        return None
    return doc.get(HEADER_KEY) if isinstance(doc, dict) else None


def _coerce(doc: dict) -> ExperimentRecord:
    kw = dict(doc)
    for k in ("budget_fraction", "estimate", "ground_truth", "error", "total_expected_payment", "total_realized_payment"):
        kw[k] = float(kw[k])
    for k in ("trial", "admitted_count", "seed"):
        kw[k] = int(kw[k])
    return ExperimentRecord(**kw)


def summarize_records(records: Sequence[ExperimentRecord]) -> list[dict]:
    """Per-cell mean error and 95% interval, in first-seen cell order."""
    cells: dict[tuple[str, float], list[float]] = {}
    for r in records:
        cells.setdefault((r.mechanism, r.budget_fraction), []).append(r.error)
    rows = []
    for (mech, frac), errs in cells.items():
        if len(errs) >= 2:
            s: MetricsSummary = summarize(errs)
            lo, hi = s.ci_low, s.ci_high
        else:
            lo = hi = errs[0]
        rows.append({"mechanism": mech, "budget_fraction": frac, "mean_error": float(np.mean(errs)), "ci_low": lo, "ci_high": hi})
    return rows


def write_summary(rows: Sequence[dict], path) -> None:
    cols = ["mechanism", "budget_fraction", "mean_error", "ci_low", "ci_high"]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow([r["mechanism"], format(r["budget_fraction"], ".17g")] + [format(r[c], ".17g") for c in cols[2:]])
