import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from pdqs.quadrature import integrate_rows, simpson_panel, trapezoid_nodes


def test_polynomial_exact():
    # Simpson plus Richardson is exact through degree 5
    f = lambda rows, x: x**5 - 2 * x**2 + 1
    v, e = integrate_rows(f, [0.0, -1.0], [2.0, 3.0])
    exact = [64 / 6 - 16 / 3 + 2, (729 - 1) / 6 - 2 * (27 + 1) / 3 + 4]
    np.testing.assert_allclose(v, exact, rtol=1e-12)


def test_kink_triggers_bisection_and_meets_tol():
    f = lambda rows, x: np.sqrt(np.abs(x - 0.3))
    v, e = integrate_rows(f, [0.0], [1.0], tol=1e-8)
    oracle = integrate.quad(lambda x: math.sqrt(abs(x - 0.3)), 0, 1, points=[0.3], epsabs=1e-13)[0]
    assert abs(v[0] - oracle) < 1e-8
    assert e[0] <= 1e-8


def test_empty_and_reversed_intervals():
    f = lambda rows, x: np.ones_like(x)
    v, e = integrate_rows(f, [0.5, 1.0], [0.5, 0.0])
    np.testing.assert_allclose(v, [0.0, -1.0])


def test_node_validation():
    with pytest.raises(ValueError):
        simpson_panel(lambda r, x: x, np.array([0]), np.array([0.0]), np.array([1.0]), nodes=64)


@given(st.floats(0.0, 0.99), st.floats(0.1, 5.0))
def test_matches_scipy_on_smooth_rows(a, k):
    f = lambda rows, x: np.exp(-k * x) * np.cos(3 * x)
    v, _ = integrate_rows(f, [a], [1.0])
    oracle = integrate.quad(lambda x: math.exp(-k * x) * math.cos(3 * x), a, 1.0, epsabs=1e-13)[0]
    assert abs(v[0] - oracle) < 1e-9


def test_trapezoid_weights():
    x, w = trapezoid_nodes(np.array([0.0, 0.5]), 1.0, nodes=64)
    assert x.shape == w.shape == (2, 64)
    np.testing.assert_allclose(w.sum(axis=1), [1.0, 0.5])
    np.testing.assert_allclose((w * x).sum(axis=1), [0.5, 0.375])
