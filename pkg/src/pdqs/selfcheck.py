"""Invariant self-checks behind ``pdqs check``.

Each check yields ``(name, ok, detail)``. They are quick, seeded versions
of the properties the test suite pins down in depth.
"""

from __future__ import annotations

from typing import Iterable, Iterator

import numpy as np

from .baseline_fq import fq_threshold_k
from .core import AllocationFunction, ExpAllocation, LinearAllocation, LogAllocation, Rng
from .npqm import NpqmModel, gradient_check, init_params
from .payments import ic_ir_check
from .randomizer import epsilon_of, report_probabilities

GRADIENT_TOL = 1e-4


def standard_allocations() -> list[AllocationFunction]:
    return [LinearAllocation()] + [LogAllocation(k) for k in (0.5, 2.0, 8.0)] + [ExpAllocation(k) for k in (0.5, 2.0, 8.0)]


def _label(af: AllocationFunction) -> str:
    k = getattr(af, "k", None)
    return af.kind if k is None else f"{af.kind}(k={k:g})"


def check_ldp_ratio(qs=(0.1, 0.3, 0.5, 0.9, 1 - 1e-6)) -> tuple[bool, str]:
    worst = 0.0
    for q in qs:
        keep, flip = report_probabilities(q)
        bound = np.exp(epsilon_of(q).epsilon)
        worst = max(worst, abs(keep / flip - (1 + q) / (1 - q)) / bound)
    return worst < 1e-9, f"worst relative gap {worst:.2e}"


def check_monotone(af: AllocationFunction, gen: np.random.Generator, n: int = 10) -> tuple[bool, str]:
    bids = gen.uniform(0, 1, n)
    grid = np.linspace(0, 1, 101)
    bad = 0
    for i in range(n):
        q = af.own_curve(bids, i, grid)
        bad += int(np.sum(np.diff(q) > 0))
    return bad == 0, f"{bad} increasing steps"


def check_ic_ir(af: AllocationFunction, gen: np.random.Generator, markets: int, n: int = 10) -> tuple[bool, str]:
    worst, ok = 0.0, True
    for _ in range(markets):
        bids = gen.uniform(0, 1, n)
        i = int(gen.integers(n))
        rep = ic_ir_check(af, bids, i)
        ok &= rep.ic_holds and rep.ir_holds
        worst = max(worst, rep.worst_violation)
    return ok, f"worst misreport gain {worst:.2e}"


def check_gradients(gen: np.random.Generator, models: int = 3, n: int = 5, h: int = 3) -> tuple[bool, str]:
    worst = 0.0
    for _ in range(models):
        theta = init_params(n, h, gen) * 3.0
        model = NpqmModel.from_vector(theta, n, h, lam=float(gen.uniform(0, 2)))
        worst = max(worst, gradient_check(model, gen.uniform(0, 1, n), budget=n * 0.5))
    return worst < GRADIENT_TOL, f"worst relative error {worst:.2e}"


def check_fq(gen: np.random.Generator, instances: int = 50) -> tuple[bool, str]:
    mismatches = 0
    for _ in range(instances):
        n = int(gen.integers(2, 60))
        b = np.sort(gen.uniform(0, 1, n))
        beta = float(gen.uniform(0.01, n))
        brute = max((k for k in range(1, n) if b[k - 1] / (n - k) <= beta / k), default=0)
        mismatches += brute != fq_threshold_k(b, beta)
    return mismatches == 0, f"{mismatches} mismatches in {instances} instances"


def run_checks(seed: int = 0, markets: int = 5, extra_allocations: Iterable[AllocationFunction] = ()) -> Iterator[tuple[str, bool, str]]:
    gen = Rng(seed).generator()
    yield ("ldp-ratio", *check_ldp_ratio())
    for af in standard_allocations() + list(extra_allocations):
        yield (f"monotone {_label(af)}", *check_monotone(af, gen))
        yield (f"ic-ir {_label(af)}", *check_ic_ir(af, gen, markets))
    yield ("gradients", *check_gradients(gen))
    yield ("fq-threshold", *check_fq(gen))
