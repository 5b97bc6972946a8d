"""Privacy load, threshold-style expected payments and truthfulness checks.

The expected payment of owner ``i`` bidding ``b`` is

    P(b) = b * w(b) + integral_b^theta_hi w(x) dx,   w = q * ln((1 + q) / (1 - q)),

where ``w(x)`` re-evaluates the owner's allocation at own bid ``x`` with all
other bids held fixed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import AllocationFunction, _check_bids, _check_index, eval_allocation
from .quadrature import integrate_rows

PAYMENT_TOL = 1e-6
QUAD_NODES = 129
IC_SLACK = 1e-9


def load(q):
    """Expected privacy loss ``q * ln((1 + q) / (1 - q))``, elementwise."""
    q = np.asarray(q, dtype=float)
    return q * (np.log1p(q) - np.log1p(-q))


@dataclass(frozen=True)
class PaymentQuote:
    load_w: float
    expected_payment_P: float
    quadrature_error_bound: float


@dataclass(frozen=True)
class UtilityPoint:
    bid: float
    expected_utility: float


@dataclass(frozen=True)
class IcIrReport:
    ic_holds: bool
    ir_holds: bool
    worst_violation: float


def privacy_load(af: AllocationFunction, bids, i: int) -> float:
    return float(load(eval_allocation(af, bids, i)))


def _load_integrals(af, bids, owners, lo, theta_hi, nodes, tol):
    def f(rows, x):
        return load(af.curves(bids, x, owners[rows]))

    return integrate_rows(f, lo, theta_hi, nodes=nodes, tol=tol)


def expected_payments(af: AllocationFunction, bids, theta_hi: float = 1.0, quad_nodes: int = QUAD_NODES, tol: float = PAYMENT_TOL):
    """Vectorised payments for every owner at the current bids.

    Returns ``(q, w, P, error_bound)`` arrays.
    """
    bids = _check_bids(bids)
    owners = np.arange(len(bids))
    q = af.probabilities(bids)
    w = load(q)
    integral, err = _load_integrals(af, bids, owners, bids, theta_hi, quad_nodes, tol)
    return q, w, bids * w + integral, err


def expected_payment(af: AllocationFunction, bids, i: int, theta_hi: float = 1.0, quad_nodes: int = QUAD_NODES, tol: float = PAYMENT_TOL) -> PaymentQuote:
    bids = _check_bids(bids)
    _check_index(i, len(bids))
    w = privacy_load(af, bids, i)
    integral, err = _load_integrals(af, bids, np.array([i]), bids[i : i + 1], theta_hi, quad_nodes, tol)
    return PaymentQuote(w, float(bids[i] * w + integral[0]), float(err[0]))


def payment_curve(af: AllocationFunction, bids, i: int, grid, theta_hi: float = 1.0, quad_nodes: int = QUAD_NODES, tol: float = PAYMENT_TOL):
    """Owner ``i``'s (w, P, error) at each alternative own bid in ``grid``."""
    bids = _check_bids(bids)
    _check_index(i, len(bids))
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    w = load(af.own_curve(bids, i, grid))
    owners = np.full(len(grid), i)
    integral, err = _load_integrals(af, bids, owners, grid, theta_hi, quad_nodes, tol)
    return w, grid * w + integral, err


def expected_utility(af: AllocationFunction, bids, i: int, true_theta: float, theta_hi: float = 1.0) -> UtilityPoint:
    quote = expected_payment(af, bids, i, theta_hi)
    b = float(np.asarray(bids, dtype=float)[i])
    return UtilityPoint(b, quote.expected_payment_P - true_theta * quote.load_w)


def ic_ir_check(
    af: AllocationFunction,
    bids,
    i: int,
    grid_step: float = 0.01,
    true_theta: float | None = None,
    theta_lo: float = 0.0,
    theta_hi: float = 1.0,
) -> IcIrReport:
    """Grid search for a profitable misreport by owner ``i``.

    The owner's true valuation defaults to her current bid. A misreport is a
    violation only when it beats truthful utility by more than the float slack
    plus the quadrature error bound of the two points being compared.
    """
    if not 0 < grid_step < theta_hi - theta_lo:
        raise ValueError("grid_step must lie in (0, theta_hi - theta_lo)")
    bids = _check_bids(bids)
    theta = float(bids[i] if true_theta is None else true_theta)
    steps = int(np.floor((theta_hi - theta_lo) / grid_step + 1e-9))
    grid = np.append(theta_lo + grid_step * np.arange(steps + 1), theta)
    grid = np.clip(grid, theta_lo, theta_hi)
    w, P, err = payment_curve(af, bids, i, grid, theta_hi)
    u = P - theta * w
    u_true, err_true = u[-1], err[-1]
    gain = u[:-1] - u_true
    excess = gain - (IC_SLACK + err[:-1] + err_true)
    worst = float(max(0.0, gain.max()))
    return IcIrReport(
        ic_holds=bool(np.all(excess <= 0)),
        ir_holds=bool(u_true >= -IC_SLACK),
        worst_violation=worst,
    )
