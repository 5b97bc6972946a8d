"""Query answers on perturbed reports and accuracy metrics."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np


class QueryKind(str, enum.Enum):
    COUNT = "count"
    MEDIAN = "median"


class Estimator(str, enum.Enum):
    RAW = "raw"
    DEBIASED = "debiased"


@dataclass(frozen=True)
class QuerySpec:
    kind: QueryKind = QueryKind.COUNT
    estimator: Estimator | None = None
    q_min: float = 0.05

    def __post_init__(self):
        kind = QueryKind(self.kind)
        object.__setattr__(self, "kind", kind)
        est = self.estimator
        if est is None:
            est = Estimator.DEBIASED if kind is QueryKind.COUNT else Estimator.RAW
        object.__setattr__(self, "estimator", Estimator(est))
        if not 0 < self.q_min < 1:
            raise ValueError("q_min must lie in (0, 1)")
        if self.estimator is Estimator.DEBIASED and kind is not QueryKind.COUNT:
            raise ValueError("the debiased estimator only exists for count queries")


def answer_query(spec: QuerySpec, perturbed_values, allocation_q, n: int | None = None, binary: bool = True) -> float:
    """Answer ``spec`` from the reports.

    The debiased count inverts ``E[t'] = q * t + (1 - q) / 2`` for owners with
    ``q >= q_min`` and scales up to all ``n`` owners, assuming the rest are
    missing at random. With no such owner it falls back to the raw count.
    """
    t = np.asarray(perturbed_values, dtype=float)
    q = np.asarray(allocation_q, dtype=float)
    n = len(t) if n is None else n
    if len(t) != n or len(q) != n:
        raise ValueError("perturbed values and allocations must both have length n")
    if spec.kind is QueryKind.MEDIAN:
        return float(np.median(t))
    if spec.estimator is Estimator.RAW:
        return float(t.sum())
    if not binary:
        raise ValueError("debiased count needs the binary domain")
    sel = q >= spec.q_min
    if not sel.any():
        return float(t.sum())
    terms = (t[sel] - (1.0 - q[sel]) / 2.0) / q[sel]
    return float(np.clip(n / sel.sum() * terms.sum(), 0.0, n))


def ae(estimate: float, ground_truth: float) -> float:
    return abs(estimate - ground_truth)


def rae(estimate: float, ground_truth: float) -> float:
    if ground_truth == 0:
        raise ZeroDivisionError("relative error is undefined for a zero ground truth")
    return abs(estimate - ground_truth) / abs(ground_truth)


def error_for(kind: QueryKind, estimate: float, ground_truth: float) -> float:
    """RAE for counts, AE for medians (the metrics the experiments report)."""
    return rae(estimate, ground_truth) if QueryKind(kind) is QueryKind.COUNT else ae(estimate, ground_truth)


def pac_empirical(records, alpha: float) -> float:
    """Fraction of (estimate, truth) pairs that miss by at least ``alpha``."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    records = list(records)
    if not records:
        raise ValueError("need at least one record")
    return sum(abs(z - zg) >= alpha for z, zg in records) / len(records)


@dataclass(frozen=True)
class MetricsSummary:
    mean_error: float
    std_error: float
    ci_low: float
    ci_high: float
    trials: int


def summarize(errors) -> MetricsSummary:
    """Mean, sample sd and the normal-approximation 95% interval of the mean."""
    e = np.asarray(list(errors), dtype=float)
    m = len(e)
    if m < 2:
        raise ValueError("need at least two trials to summarise")
    mean = float(e.mean())
    sd = float(e.std(ddof=1))
    half = 1.96 * sd / math.sqrt(m)
    return MetricsSummary(mean, sd, mean - half, mean + half, m)
