import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pdqs.baseline_fq import fq_select, fq_threshold_k, run_fq
from pdqs.core import Market, Rng
from pdqs.queries import QuerySpec


def brute_k(sorted_bids, budget):
    n = len(sorted_bids)
    best = 0
    for k in range(1, n):
        if sorted_bids[k - 1] / (n - k) <= budget / k:
            best = k
    return best


def market(bids, budget=1.0):
    return Market(np.ones(len(bids)), bids, budget)


class TestSelect:
    def test_worked_example(self):
        sel = fq_select(market([0.1, 0.2, 0.4, 0.8], 1.0))
        assert sel.k == 2
        assert sel.per_owner_payment == pytest.approx(0.2)
        assert sel.epsilon == pytest.approx(0.5)
        assert sel.q == pytest.approx((math.exp(0.5) - 1) / (math.exp(0.5) + 1), abs=1e-12)
        assert sel.q == pytest.approx(0.24492, abs=1e-5)
        assert sorted(sel.selected) == [0, 1]

    def test_unsorted_input_selects_cheapest(self):
        sel = fq_select(market([0.8, 0.1, 0.4, 0.2], 1.0))
        assert sorted(sel.selected) == [1, 3]

    def test_all_bids_at_ceiling(self):
        n = 10
        sel = fq_select(market(np.ones(n), 1e6))
        assert sel.k == brute_k(np.ones(n), 1e6) == n - 1
        # ties broken by original index
        assert list(sel.selected) == list(range(n - 1))

    def test_zero_budget_threshold(self):
        assert fq_threshold_k(np.array([0.1, 0.2, 0.4]), 0.0) == 0

    def test_no_feasible_k(self):
        sel = fq_select(market([1.0, 1.0], 0.5))
        assert sel.k == 0 and len(sel.selected) == 0 and sel.per_owner_payment == 0

    def test_needs_two_owners(self):
        with pytest.raises(ValueError):
            fq_select(market([0.3]))

    def test_k_n_minus_one_epsilon_one(self):
        # k = n - 1 gives eps = 1, q = (e - 1) / (e + 1)
        sel = fq_select(market([0.01, 0.02, 0.03, 0.9], 100.0))
        assert sel.k == 3
        assert sel.q == pytest.approx(0.46212, abs=1e-5)

    @given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=60), st.floats(0.001, 60.0))
    def test_matches_brute_force(self, bids, budget):
        b = np.sort(np.array(bids))
        assert fq_threshold_k(b, budget) == brute_k(b, budget)

    @given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=60), st.floats(0.001, 60.0))
    def test_payment_within_budget(self, bids, budget):
        sel = fq_select(market(bids, budget))
        assert sel.k * sel.per_owner_payment <= budget * (1 + 1e-12)


class TestRun:
    def test_payments_deterministic_and_feasible(self, gen):
        n = 300
        m = Market(gen.integers(0, 2, n), gen.uniform(0, 1, n), 40.0)
        out = run_fq(m, QuerySpec("count"), Rng(0).generator())
        sel = fq_select(m)
        assert out.total_realized_payment == pytest.approx(sel.k * sel.per_owner_payment)
        assert out.total_realized_payment <= m.budget
        assert set(np.unique(out.allocation_q[out.admitted])) == {sel.q}
        assert np.all(out.allocation_q[~out.admitted] == 0)
        assert np.all(out.realized_payments_p[~out.admitted] == 0)

    def test_k_zero_pure_noise(self):
        m = Market([1, 1], [1.0, 1.0], 0.5)
        out = run_fq(m, QuerySpec("count", "raw"), Rng(0).generator())
        assert out.total_realized_payment == 0 and out.admitted_count == 0

    def test_deterministic(self, gen):
        m = Market(gen.integers(0, 2, 50), gen.uniform(0, 1, 50), 10.0)
        assert run_fq(m, QuerySpec(), Rng(5).generator()) == run_fq(m, QuerySpec(), Rng(5).generator())
