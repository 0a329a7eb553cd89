from __future__ import annotations

import numpy as np
import pytest

from degma.errors import OracleError, PreconditionError
from degma.radial import profile_residual, radial_oracle


def test_q0_closed_form():
    p = radial_oracle(0)
    assert p.center == pytest.approx(-0.5, abs=1e-12)
    assert np.max(np.abs(p.values - 0.5 * (p.r**2 - 1))) < 1e-11


def test_q1_dual_integrator():
    a = radial_oracle(1).center
    b = radial_oracle(1, method="Radau", rtol=5e-13).center
    assert abs(a - b) <= 1e-9


def test_eigen_profile_residual():
    p = radial_oracle(2, "eigen")
    assert p.values[-1] == 0.0 and p.derivative[0] == 0.0
    assert np.all(p.derivative >= 0.0)
    assert p.lam == pytest.approx(7.49, rel=1e-3)
    assert profile_residual(p) <= 1e-9


def test_eigen_radius_scaling():
    assert radial_oracle(2, "eigen", radius=2.0).lam == pytest.approx(radial_oracle(2, "eigen").lam / 16, rel=1e-12)


def test_q2_dirichlet_has_no_profile():
    # for q = 2 the zero radius is independent of u(0); lambda = 1 never gives R = 1
    with pytest.raises(OracleError):
        radial_oracle(2, "dirichlet")


def test_preconditions():
    with pytest.raises(PreconditionError):
        radial_oracle(-1)
    with pytest.raises(PreconditionError):
        radial_oracle(1, "eigen")
    with pytest.raises(PreconditionError):
        radial_oracle(1, radius=0.0)
