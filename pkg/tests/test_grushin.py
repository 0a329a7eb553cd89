from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from degma.errors import ConfigurationError, DomainError, PreconditionError, UnsupportedOrderError
from degma.grid import BandLimitedField, BoundaryTrace, StripField, dft_horizontal
from degma.grushin import (
    GrushinProblem,
    algebra_constant,
    ensemble_ratios,
    estimate_ratio,
    grushin_residual,
    problem_at,
    product_ratio,
    random_problems,
    solve_grushin,
    weighted_norm,
)

SQPI = math.sqrt(math.pi)


def _problem(m, f, g, M, K):
    return GrushinProblem(m, StripField.from_function(f, M, K), BoundaryTrace.from_function(g, M))


def test_zero_data_gives_zero():
    p = _problem(1, lambda x, y: 0 * x, lambda x: 0 * x, 16, 16)
    assert np.all(solve_grushin(p).values == 0.0)


def test_m_must_be_positive():
    with pytest.raises(ConfigurationError):
        _problem(0, lambda x, y: 0 * x, np.cos, 16, 16)


def _airy_like(K):
    """w'' = x w, w(0) = 1, w(1) = 0 by superposition of two adaptive IVP solves."""
    rhs = lambda x, y: [y[1], x * y[0]]
    xs = np.linspace(0, 1, K + 1)
    a = solve_ivp(rhs, (0, 1), [1.0, 0.0], t_eval=xs, rtol=1e-12, atol=1e-14, method="DOP853").y[0]
    b = solve_ivp(rhs, (0, 1), [0.0, 1.0], t_eval=xs, rtol=1e-12, atol=1e-14, method="DOP853").y[0]
    return a - a[-1] / b[-1] * b


def test_single_mode_matches_ode_oracle():
    errs = []
    for K in (64, 128):
        p = _problem(1, lambda x, y: 0 * x, np.cos, 32, K)
        u = solve_grushin(p)
        X1, _ = u.mesh()
        errs.append(np.max(np.abs(u.values - _airy_like(K)[:, None] * np.cos(X1))))
    assert errs[1] < 1e-5
    assert 3.5 < errs[0] / errs[1] < 4.5


@pytest.mark.parametrize("m", [1, 2, 3])
def test_quadratic_profile_is_reproduced(m):
    # (1 - x_n)^2 sin x1 is reproduced to rounding: the three-point stencil is exact on quadratics
    f = lambda x, y: 2 * np.sin(x) - y**m * (1 - y) ** 2 * np.sin(x)
    p = _problem(m, f, np.sin, 32, 64)
    u = solve_grushin(p)
    ex = StripField.from_function(lambda x, y: (1 - y) ** 2 * np.sin(x), 32, 64).values
    assert np.max(np.abs(u.values - ex)) < 1e-12


@pytest.mark.parametrize("m", [1, 2, 3])
def test_manufactured_second_order(m):
    us = lambda x, y: np.sin(x) * (1 - y) * np.exp(y)
    f = lambda x, y: np.sin(x) * (-(1 + y) * np.exp(y) - y**m * (1 - y) * np.exp(y))
    errs = []
    for K in (64, 128):
        u = solve_grushin(_problem(m, f, np.sin, 32, K))
        errs.append(np.max(np.abs(u.values - StripField.from_function(us, 32, K).values)))
    assert 3.2 <= errs[0] / errs[1] <= 4.8


def test_discrete_residual_small():
    p = problem_at(random_problems(2, 1, 3)[0], 2, 64, 128)
    u = solve_grushin(p)
    scale = max(1.0, np.max(np.abs(p.f.values)))
    assert np.max(np.abs(grushin_residual(u, p))) < 1e-9 * scale


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.floats(-3, 3), st.floats(-3, 3))
def test_superposition(seed, a, b):
    d1, d2 = random_problems(1, 2, seed)
    p1, p2 = problem_at(d1, 1, 32, 32), problem_at(d2, 1, 32, 32)
    lhs = solve_grushin(p1.combine(a, p2, b)).values
    rhs = a * solve_grushin(p1).values + b * solve_grushin(p2).values
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * max(1.0, np.max(np.abs(rhs)))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_discrete_maximum_principle(seed):
    rng = np.random.default_rng(seed)
    f = StripField(-rng.random((33, 16)))
    g = BoundaryTrace(rng.random(16))
    # positivity needs an M-matrix: the spectral u_11 is not monotone, so test per-mode data
    f = StripField(np.repeat(f.values.mean(axis=1, keepdims=True), 16, axis=1))
    g = BoundaryTrace(np.full(16, g.values.mean()))
    u = solve_grushin(GrushinProblem(2, f, g))
    assert np.all(u.values >= -1e-15)


def test_mode_decoupling():
    p = _problem(2, lambda x, y: np.cos(3 * x) * y, lambda x: np.cos(3 * x), 32, 32)
    s = dft_horizontal(solve_grushin(p))
    other = np.delete(s.coeffs, [3, 29], axis=1)
    assert np.max(np.abs(other)) <= 1e-13


def test_weighted_norm_zero_and_linear_field():
    z = weighted_norm(StripField(np.zeros((9, 16))), 2, 1)
    assert z.total == 0.0 and all(c == 0.0 for c in z.components())
    u = StripField.from_function(lambda x, y: y + 0 * x, 16, 256)
    r = weighted_norm(u, 0, 1)
    L = 2 * math.pi
    assert r.second_vertical == pytest.approx(0.0, abs=1e-10)
    assert r.weighted_top == pytest.approx(0.0, abs=1e-10)
    assert r.first_vertical == pytest.approx(math.sqrt(L), rel=1e-12)
    assert r.weighted_horizontal == pytest.approx(0.0, abs=1e-12)
    assert r.trace == pytest.approx(math.sqrt(L), rel=1e-12)
    assert r.base == pytest.approx(math.sqrt(L / 3), rel=1e-5)
    assert r.total == pytest.approx(2 * math.sqrt(L) + math.sqrt(L / 3), rel=1e-5)
    assert r.total == pytest.approx(sum(r.components()))


def test_weighted_norm_closed_form_components():
    u = StripField.from_function(lambda x, y: np.sin(x) * y * (1 - y), 64, 256)
    r = weighted_norm(u, 0, 2)
    expect = {
        "second_vertical": 2 * SQPI,
        "weighted_top": SQPI * (math.sqrt(1 / 252) + math.sqrt(11 / 105)),
        "first_vertical": SQPI * math.sqrt(1 / 3),
        "weighted_horizontal": SQPI * math.sqrt(1 / 105),
        "trace": SQPI,
        "base": SQPI * math.sqrt(1 / 30),
    }
    got = r.as_dict()
    for name, value in expect.items():
        assert got[name] == pytest.approx(value, rel=1e-4), name


def test_weighted_norm_order_limit():
    u = StripField(np.zeros((17, 16)))
    with pytest.raises(UnsupportedOrderError):
        weighted_norm(u, 5, 1)
    assert weighted_norm(u, 5, 1, vertical="chebyshev").total == 0.0


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 3), st.integers(0, 2))
def test_weighted_norm_monotone_in_m(seed, m, k):
    f = BandLimitedField.random(np.random.default_rng(seed), 3).sample(16, 32)
    assert weighted_norm(f, k, m + 1).total <= weighted_norm(f, k, m).total + 1e-12


def test_estimate_ratio_refinement_and_errors():
    r = []
    for M, K in ((32, 64), (64, 128)):
        r.append(estimate_ratio(_problem(1, lambda x, y: 0 * x, np.cos, M, K), 0))
    assert abs(r[0] - r[1]) / r[0] <= 0.25
    with pytest.raises(DomainError):
        estimate_ratio(_problem(1, lambda x, y: 0 * x, lambda x: 0 * x, 16, 16), 0)


def test_ensemble_ratios_finite_and_deterministic():
    a = ensemble_ratios(1, 0, 10, 5, 32, 32)
    b = ensemble_ratios(1, 0, 10, 5, 32, 32)
    assert np.all(np.isfinite(a)) and np.array_equal(a, b)


def test_algebra_constant_hand_value_and_errors():
    one = StripField(np.ones((33, 32)))
    assert product_ratio(one, one, 5, 1) == pytest.approx(1 / math.sqrt(2 * math.pi), rel=1e-12)
    zero = StripField(np.zeros((33, 32)))
    with pytest.raises(DomainError):
        product_ratio(one, zero, 5, 1)
    with pytest.raises(PreconditionError):
        algebra_constant(4, 5, 0)
    assert algebra_constant(5, 3, 0) == algebra_constant(5, 3, 0)
