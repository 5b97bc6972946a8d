"""FairQuery adapted to local privacy: separate procurement, then randomised response."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Market
from .gpqm import MechanismOutcome
from .queries import QuerySpec, answer_query
from .randomizer import ilr_many


@dataclass(frozen=True)
class FqSelection:
    k: int
    per_owner_payment: float
    epsilon: float
    q: float
    selected: np.ndarray  # owner indices, ascending-bid order


def fq_threshold_k(sorted_bids: np.ndarray, budget: float) -> int:
    """Largest k in 1..n-1 with ``b_k / (n - k) <= budget / k`` (1-based bids), else 0."""
    n = len(sorted_bids)
    ks = np.arange(1, n)
    ok = sorted_bids[: n - 1] / (n - ks) <= budget / ks
    hits = np.flatnonzero(ok)
    return int(ks[hits[-1]]) if len(hits) else 0


def fq_select(market: Market) -> FqSelection:
    if market.n < 2:
        raise ValueError("FairQuery needs at least two owners")
    n = market.n
    order = np.argsort(market.bids, kind="stable")
    b = market.bids[order]
    with np.errstate(divide="ignore"):
        k = fq_threshold_k(b, market.budget)
    if k == 0:
        return FqSelection(0, 0.0, 0.0, 0.0, order[:0])
    pay = min(market.budget / k, b[k] / (n - k))
    # k * (budget / k) can round above the budget; step down until the total fits
    while np.full(k, pay).sum() > market.budget:
        pay = float(np.nextafter(pay, 0.0))
    eps = 1.0 / (n - k)
    q = math.expm1(eps) / (math.exp(eps) + 1.0)
    return FqSelection(k, pay, eps, q, order[:k])


def run_fq(market: Market, query: QuerySpec, gen: np.random.Generator) -> MechanismOutcome:
    """Selected owners do randomised response with the common q and get paid the
    fixed price whatever they report; everyone else reports noise for free."""
    sel = fq_select(market)
    admitted = np.zeros(market.n, dtype=bool)
    admitted[sel.selected] = True
    q = np.where(admitted, sel.q, 0.0)
    pay = np.where(admitted, sel.per_owner_payment, 0.0)
    # summing over all n slots can round differently from k * payment
    while pay.sum() > market.budget or pay[admitted].sum() > market.budget:
        pay[admitted] = np.nextafter(pay[admitted], 0.0)
    reports, _, _ = ilr_many(market.values, q, np.zeros(market.n), market.data_domain, gen)
    z = answer_query(query, reports, q, market.n, binary=market.data_domain.is_binary)
    return MechanismOutcome(q, pay, pay, reports, admitted, z, query.estimator)
