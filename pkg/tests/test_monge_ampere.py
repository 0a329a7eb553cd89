from __future__ import annotations

import math

import numpy as np
import pytest

from degma.errors import (
    CollapseError,
    ConfigurationError,
    ConvergenceError,
    ConvexityError,
    DomainError,
    NegativityError,
    PreconditionError,
    StiffnessError,
)
from degma.grid import Domain2D, GridFunction, paraboloid
from degma.monge_ampere import (
    FlowConfig,
    NewtonConfig,
    default_initializer,
    default_scale,
    discrete_det,
    eigen_solve,
    flow_step,
    flow_velocity,
    functional_J,
    is_discretely_convex,
    newton_solve,
    rayleigh_lambda,
    residual,
    run_flow,
)
from degma.radial import radial_oracle

DISC = Domain2D.disc()


def test_q0_paraboloid_exact():
    sol = newton_solve(DISC, 0, 1.0, n_r=32, n_theta=16)
    exact = paraboloid(DISC, 32, 16)
    assert np.max(np.abs(sol.u.values - exact.values)) < 1e-12
    assert sol.residual <= 1e-10


def test_solution_invariants(solutions):
    sol = solutions(1, 64)
    assert np.all(sol.u.values[-1] == 0.0)
    assert np.all(sol.u.values[:-1] < 0.0)
    assert is_discretely_convex(sol.u)
    res = [r for _, r, _ in sol.iterations]
    assert all(b <= a for a, b in zip(res, res[1:]))
    assert sol.metadata()["q"] == 1


@pytest.mark.parametrize("q", [1, 3])
def test_center_matches_radial_oracle(solutions, q):
    ref = radial_oracle(q).center
    errs = [abs(solutions(q, n).u.center_value() - ref) / abs(ref) for n in (32, 64, 128)]
    assert errs[-1] < 1e-3
    orders = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    assert all(1.6 <= p <= 2.4 for p in orders)


def test_ellipse_equals_reduced_disc_solve():
    a, b, lam = 1.2, 0.8, 1.0
    e = newton_solve(Domain2D.ellipse(a, b), 1, lam, n_r=32, n_theta=16)
    d = newton_solve(DISC, 1, lam * (a * b) ** 2, n_r=32, n_theta=16)
    assert np.max(np.abs(e.u.values - d.u.values)) < 1e-10
    assert e.residual < 1e-9


def test_homogeneity(solutions):
    u = solutions(1, 32).u
    q, lam = 1, 1.0
    for t in (0.5, 2.0):
        tu = GridFunction(DISC, t * u.values)
        assert np.allclose(discrete_det(tu), t**2 * discrete_det(u), rtol=1e-13, atol=0)
        assert residual(tu, q, lam * t ** (2 - q)) == pytest.approx(t**2 * residual(u, q, lam), rel=1e-3, abs=1e-13)


def test_default_scale_balances_q0():
    assert default_scale(0, 1.0) == pytest.approx(1.0)
    assert default_scale(2, 5.0) == 1.0
    u0 = default_initializer(DISC, 1, 16, 8)
    assert u0.center_value() == pytest.approx(-0.5 * default_scale(1, 1.0), rel=1e-12)


def test_newton_errors():
    with pytest.raises(PreconditionError):
        newton_solve(DISC, 1, -1.0)
    with pytest.raises(NegativityError):
        newton_solve(DISC, 1, 1.0, u0=GridFunction(DISC, -paraboloid(DISC, 16, 8).values))
    with pytest.raises(ConvexityError):
        newton_solve(DISC, 3, 1.0, u0=paraboloid(DISC, 32, 16, 8.0))
    with pytest.raises(ConvergenceError):
        newton_solve(DISC, 1, 1.0, NewtonConfig(max_iter=1), n_r=32, n_theta=16)
    with pytest.raises(ConfigurationError):
        NewtonConfig(tol=0.0)


def test_q2_dirichlet_problem_collapses():
    # lambda = 1 is below the eigenvalue, so the only solution is u = 0
    with pytest.raises(CollapseError):
        newton_solve(DISC, 2, 1.0, n_r=32, n_theta=16)


def test_eigen_against_oracle(eigens):
    sol = eigens(64)
    ref = radial_oracle(2, "eigen").lam
    assert abs(sol.lam - ref) / ref < 1e-3
    assert np.max(np.abs(sol.u.values)) == 1.0
    assert abs(rayleigh_lambda(sol.u, 2) - sol.lam) / sol.lam < 1e-6


def test_eigen_scaling_law(eigens):
    base = eigens(32).lam
    for R in (0.5, 2.0):
        lam = eigens(32, radius=R).lam
        assert lam == pytest.approx(base * R**-4, rel=1e-6)


def test_eigen_preconditions():
    with pytest.raises(PreconditionError):
        eigen_solve(DISC, 3)


def test_rayleigh_and_functional():
    p = paraboloid(DISC, 64, 32)
    assert rayleigh_lambda(p, 0) == pytest.approx(1.0, rel=1e-12)
    assert functional_J(p, 0) == pytest.approx(-math.pi / 6, rel=2e-4)
    zero = GridFunction(DISC, np.zeros((16, 8)))
    assert functional_J(zero, 1) == 0.0
    with pytest.raises(DomainError):
        rayleigh_lambda(zero, 2)


def test_rayleigh_scale_invariance(eigens):
    u = eigens(32).u
    base = rayleigh_lambda(u, 2)
    for t in (0.3, 4.0):
        assert rayleigh_lambda(GridFunction(DISC, t * u.values), 2) == pytest.approx(base, rel=1e-12)


def test_flow_fixed_point_and_unit_velocity():
    u = newton_solve(DISC, 1, 1.0, n_r=32, n_theta=16).u
    assert np.max(np.abs(flow_velocity(u, 1))) < 1e-6
    ue = newton_solve(DISC, 1, math.e, n_r=32, n_theta=16).u
    step = flow_step(ue, 1, FlowConfig(dt=1e-5))
    d = (step.values - ue.values)[:-1]
    assert np.allclose(d, 1e-5, rtol=1e-6)
    assert np.all(step.values[-1] == 0.0)


def test_flow_converges_to_newton_q1():
    u0 = default_initializer(DISC, 1, 12, 8)
    res = run_flow(u0, 1, FlowConfig(dt=2e-4, steps=20000))
    assert res.converged and res.residual < 1e-6
    ref = newton_solve(DISC, 1, 1.0, n_r=12, n_theta=8).u
    assert np.max(np.abs(res.u.values - ref.values)) < 1e-5


def test_flow_q2_collapses_from_default_initializer():
    u0 = default_initializer(DISC, 2, 12, 8)
    with pytest.raises((CollapseError, StiffnessError)):
        run_flow(u0, 2, FlowConfig(dt=2e-4, steps=20000))


def test_flow_config_validation():
    with pytest.raises(ConfigurationError):
        FlowConfig(dt=0.0)
