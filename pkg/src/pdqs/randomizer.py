"""Integrated local randomiser and its privacy accounting."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import DEFAULT_TAU, DataDomain


@dataclass(frozen=True)
class IlrResult:
    reported_value: float
    realized_payment: float
    selected: bool


@dataclass(frozen=True)
class PrivacyLoss:
    epsilon: float


def epsilon_of(q: float, tau: float = DEFAULT_TAU) -> PrivacyLoss:
    """Local privacy loss ``ln((1 + q) / (1 - q))`` of selecting with probability q."""
    if not 0.0 <= q <= 1.0 - tau:
        raise ValueError(f"q must lie in [0, 1 - tau], got {q}")
    return PrivacyLoss(math.log1p(q) - math.log1p(-q))


def report_probabilities(q: float) -> tuple[float, float]:
    """Binary domain: (Pr[report = t], Pr[report = 1 - t])."""
    return q + (1.0 - q) / 2.0, (1.0 - q) / 2.0


def ilr_many(values, q, expected_payment, domain: DataDomain, gen: np.random.Generator):
    """Vectorised randomiser: returns (reports, payments, selected).

    Two draws per owner, always in the same order (selection uniform, then a
    replacement value), so a seed fixes the whole transaction.
    """
    values = np.asarray(values, dtype=float)
    q = np.asarray(q, dtype=float)
    P = np.asarray(expected_payment, dtype=float)
    if np.any(q < 0) or np.any(q >= 1):
        raise ValueError("selection probabilities must lie in [0, 1)")
    n = len(values)
    u = gen.random(n)
    replacement = domain.sample(gen, n)
    selected = u < q
    reports = np.where(selected, values, replacement)
    with np.errstate(divide="ignore", invalid="ignore"):
        payments = np.where(selected, P / np.where(q > 0, q, 1.0), 0.0)
    return reports, payments, selected


def ilr_apply(private_value: float, q: float, expected_payment: float, domain: DataDomain, gen: np.random.Generator) -> IlrResult:
    if not domain.contains([private_value]):
        raise ValueError("private value outside the data domain")
    if expected_payment < 0:
        raise ValueError("expected payment must be non-negative")
    r, p, s = ilr_many([private_value], [q], [expected_payment], domain, gen)
    return IlrResult(float(r[0]), float(p[0]), bool(s[0]))
