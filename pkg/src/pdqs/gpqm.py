"""Greedy private query mechanism and the shared transaction record."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import AllocationFunction, Market
from .payments import expected_payments
from .queries import Estimator, QuerySpec, answer_query
from .randomizer import ilr_many


@dataclass(frozen=True, eq=False)
class MechanismOutcome:
    """One transaction. ``allocation_q`` is each owner's effective selection
    probability (zero for owners the mechanism did not admit)."""

    allocation_q: np.ndarray
    expected_payments_P: np.ndarray
    realized_payments_p: np.ndarray
    perturbed_values: np.ndarray
    admitted: np.ndarray
    query_answer: float
    estimator: Estimator
    reruns: int = 0

    @property
    def admitted_count(self) -> int:
        return int(self.admitted.sum())

    @property
    def total_expected_payment(self) -> float:
        return float(self.expected_payments_P[self.admitted].sum())

    @property
    def total_realized_payment(self) -> float:
        return float(self.realized_payments_p.sum())

    def __eq__(self, other):
        if not isinstance(other, MechanismOutcome):
            return NotImplemented
        arrays = ("allocation_q", "expected_payments_P", "realized_payments_p", "perturbed_values", "admitted")
        return all(np.array_equal(getattr(self, a), getattr(other, a)) for a in arrays) and (
            self.query_answer == other.query_answer and self.estimator == other.estimator and self.reruns == other.reruns
        )

    def summary(self) -> dict:
        return {
            "admitted_count": self.admitted_count,
            "query_answer": self.query_answer,
            "estimator": self.estimator.value,
            "total_expected_payment": self.total_expected_payment,
            "total_realized_payment": self.total_realized_payment,
            "reruns": self.reruns,
        }


def _transact(market: Market, q, P, admitted, query: QuerySpec, gen, strict: bool = False, max_reruns: int = 100) -> MechanismOutcome:
    """Run the randomiser for admitted owners and answer the query.

    Non-admitted owners report a uniform domain value and are paid nothing.
    In strict mode the randomiser is re-drawn while the realized total
    exceeds the budget.
    """
    q_eff = np.where(admitted, q, 0.0)
    reruns = 0
    while True:
        reports, paid, _ = ilr_many(market.values, q_eff, P, market.data_domain, gen)
        if not strict or paid.sum() <= market.budget or reruns >= max_reruns:
            break
        reruns += 1
    z = answer_query(query, reports, q_eff, market.n, binary=market.data_domain.is_binary)
    return MechanismOutcome(q_eff, np.asarray(P, dtype=float), paid, reports, np.asarray(admitted, dtype=bool), z, query.estimator, reruns)


def greedy_admission(q, P, budget: float) -> np.ndarray:
    """Boolean mask of the longest q-descending prefix whose payments fit the budget.

    Ties in q keep the original owner order.
    """
    q = np.asarray(q, dtype=float)
    order = np.argsort(-q, kind="stable")
    running = np.cumsum(np.asarray(P, dtype=float)[order])
    P = np.asarray(P, dtype=float)
    k = int(np.searchsorted(running > budget, True))
    admitted = np.zeros(len(q), dtype=bool)
    admitted[order[:k]] = True
    # reported totals sum in owner order; drop the tail if rounding disagrees
    while k and P[admitted].sum() > budget:
        k -= 1
        admitted[order[k]] = False
    return admitted


def run_gpqm(market: Market, af: AllocationFunction, query: QuerySpec, gen: np.random.Generator, strict: bool = False) -> MechanismOutcome:
    q, _, P, _ = expected_payments(af, market.bids, market.theta_hi)
    admitted = greedy_admission(q, P, market.budget)
    return _transact(market, q, P, admitted, query, gen, strict=strict)
