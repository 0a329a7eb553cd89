from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from degma.errors import ConfigurationError, PreconditionError, UnsupportedOrderError
from degma.grid import (
    BandLimitedField,
    BoundaryTrace,
    Domain2D,
    GridFunction,
    StripField,
    dft_horizontal,
    differentiate,
    idft_horizontal,
    l2_strip,
    paraboloid,
    polar_radii,
    sobolev_norm,
)

L = 2.0 * np.pi


def test_domain_invariants():
    with pytest.raises(ConfigurationError):
        Domain2D("disc", 1.0, 2.0)
    with pytest.raises(ConfigurationError):
        Domain2D.ellipse(-1.0, 1.0)
    e = Domain2D.ellipse(1.2, 0.8)
    th = np.linspace(0, 2 * np.pi, 17)
    assert np.all(e.curvature(th) > 0)
    p = e.boundary_point(0.3)
    assert (p[0] / 1.2) ** 2 + (p[1] / 0.8) ** 2 == pytest.approx(1.0)
    assert np.dot(e.tangent(0.3), e.inward_normal(0.3)) == pytest.approx(0.0, abs=1e-15)


def test_polar_mesh_boundary_ring():
    r = polar_radii(32)
    assert r[-1] == pytest.approx(1.0)
    assert np.allclose(np.diff(r), r[1] - r[0])
    u = paraboloid(Domain2D.disc(), 32, 16)
    assert np.all(u.values[-1] == 0.0)
    assert u.center_value() == pytest.approx(-0.5, abs=1e-14)


def test_grid_function_invariants():
    with pytest.raises(ConfigurationError):
        GridFunction(Domain2D.disc(), np.zeros((8, 9)))
    with pytest.raises(ConfigurationError):
        GridFunction(Domain2D.disc(), np.full((8, 8), np.nan))


def test_strip_modes_power_of_two():
    with pytest.raises(ConfigurationError):
        StripField(np.zeros((5, 12)))
    with pytest.raises(ConfigurationError):
        BoundaryTrace(np.zeros(6))


def test_dft_constant_and_single_mode():
    one = StripField(np.ones((5, 16)))
    s = dft_horizontal(one)
    assert np.allclose(s.coefficient(0), 1.0)
    assert np.max(np.abs(s.coeffs[:, 1:])) == 0.0
    c = StripField.from_function(lambda x1, xn: np.cos(2 * np.pi * x1 / L), 16, 4)
    s = dft_horizontal(c)
    assert np.allclose(s.coefficient(1), 0.5, atol=1e-15)
    assert np.allclose(s.coefficient(-1), 0.5, atol=1e-15)
    rest = np.delete(s.coeffs, [1, 15], axis=1)
    assert np.max(np.abs(rest)) < 1e-15


def test_dft_round_trip_and_parseval():
    rng = np.random.default_rng(0)
    for _ in range(100):
        f = StripField(rng.standard_normal((9, 32)))
        back = idft_horizontal(dft_horizontal(f))
        assert np.max(np.abs(back.values - f.values)) <= 1e-13 * np.max(np.abs(f.values))
        c = dft_horizontal(f).coeffs
        # rectangle rule: sum |f|^2 dx = L sum |c|^2 per level
        lhs = np.sum(f.values**2, axis=1) * L / 32
        rhs = L * np.sum(np.abs(c) ** 2, axis=1)
        assert np.allclose(lhs, rhs, rtol=1e-12)


def test_spectral_derivative_exact():
    f = StripField.from_function(lambda x1, xn: np.sin(2 * np.pi * x1 / L) + 0 * xn, 32, 8)
    d = differentiate(f, (1, 0))
    X1, _ = f.mesh()
    assert np.max(np.abs(d.values - np.cos(X1))) < 1e-13


def test_vertical_derivatives():
    x = StripField.from_function(lambda x1, xn: xn + 0 * x1, 16, 32)
    assert np.max(np.abs(differentiate(x, (0, 1)).values - 1.0)) <= 1e-12
    errs = []
    for K in (32, 64):
        f = StripField.from_function(lambda x1, xn: xn**3 + 0 * x1, 16, K)
        _, XN = f.mesh()
        errs.append(np.max(np.abs(differentiate(f, (0, 2)).values - 6 * XN)))
    assert errs[1] < 1e-10  # the one-sided stencils are exact on cubics
    with pytest.raises(UnsupportedOrderError):
        differentiate(x, (0, 5))


def test_differentiate_linear():
    rng = np.random.default_rng(1)
    f = StripField(rng.standard_normal((17, 16)))
    g = StripField(rng.standard_normal((17, 16)))
    for alpha in ((1, 0), (0, 2), (2, 1), (3, 4)):
        lhs = differentiate(2.0 * f + (-3.0) * g, alpha).values
        rhs = 2.0 * differentiate(f, alpha).values - 3.0 * differentiate(g, alpha).values
        assert np.max(np.abs(lhs - rhs)) <= 1e-12 * max(1.0, np.max(np.abs(rhs)))


def test_sobolev_norms():
    assert sobolev_norm(StripField(np.zeros((5, 16))), 3) == 0.0
    cos = BoundaryTrace.from_function(np.cos, 32)
    # (1 + 1) * 2 * (1/2)^2 * L = L
    assert sobolev_norm(cos, 1) == pytest.approx(math.sqrt(L), rel=1e-13)
    c = BoundaryTrace(np.full(16, 3.0))
    for s in range(4):
        assert sobolev_norm(c, s) == pytest.approx(3.0 * math.sqrt(L), rel=1e-14)
    f = StripField(np.random.default_rng(2).standard_normal((9, 16)))
    assert sobolev_norm(f, 0) == pytest.approx(l2_strip(f.values, L))
    with pytest.raises(PreconditionError):
        sobolev_norm(f, 7)


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=10_000), st.integers(min_value=0, max_value=3))
def test_sobolev_triangle_inequality(seed, s):
    rng = np.random.default_rng(seed)
    bl = [BandLimitedField.random(rng, 3) for _ in range(2)]
    f, g = (b.sample(16, 16) for b in bl)
    assert sobolev_norm(f + g, s) <= sobolev_norm(f, s) + sobolev_norm(g, s) + 1e-12
    a, b = (x.trace(16) for x in bl)
    assert sobolev_norm(BoundaryTrace(a.values + b.values), s) <= sobolev_norm(a, s) + sobolev_norm(b, s) + 1e-12


def test_band_limited_resolution_guard():
    b = BandLimitedField.random(np.random.default_rng(0), 7)
    with pytest.raises(ConfigurationError):
        b.sample(16, 8)
    assert b.sample(64, 8).values.shape == (9, 64)
