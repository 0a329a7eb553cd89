"""Radial shooting oracle for ``u'' u' / r = lam (-u)^q`` on ``[0, R]``.

For radial ``u`` in the plane ``det D^2 u = u'' u' / r``.  Starting from
``u(0) = -c`` the local series

    u = -c + a r^2 / 2 + beta r^4,   a = sqrt(lam c^q),   beta = -lam q c^{q-1} / 32

moves the integration off the singular point, and the zero of ``u`` gives the
radius on which the profile is a Dirichlet solution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad, solve_ivp
from scipy.optimize import brentq

from degma.errors import OracleError, PreconditionError

R_START = 1e-3
RTOL = 1e-12
ATOL = 1e-14


@dataclass
class RadialProfile:
    r: np.ndarray
    values: np.ndarray
    derivative: np.ndarray
    q: int
    lam: float
    radius: float

    @property
    def center(self) -> float:
        return float(self.values[0])


def _series(r, c, q, lam):
    a = math.sqrt(lam * c**q)
    beta = -lam * q * c ** (q - 1) / 32.0 if q else 0.0
    return -c + 0.5 * a * r**2 + beta * r**4, a * r + 4.0 * beta * r**3


def _rhs(q, lam):
    def f(r, y):
        u, du = y
        return [du, lam * r * max(-u, 0.0) ** q / du]
    return f


def _hit_zero(r, y):
    return y[0]


_hit_zero.terminal = True
_hit_zero.direction = 1


def _shoot(c: float, q: int, lam: float, method: str = "DOP853", rtol: float = RTOL,
           r_max: float = 100.0, dense: bool = False):
    u0, du0 = _series(R_START, c, q, lam)
    sol = solve_ivp(_rhs(q, lam), (R_START, r_max), [u0, du0], method=method, rtol=rtol,
                    atol=ATOL * max(c, 1.0), events=_hit_zero, dense_output=dense)
    if sol.status != 1 or not len(sol.t_events[0]):
        raise OracleError(f"profile with u(0) = -{c:g} does not reach zero before r = {r_max}")
    return float(sol.t_events[0][0]), sol


def zero_radius(c: float, q: int, lam: float = 1.0, method: str = "DOP853", rtol: float = RTOL) -> float:
    """Radius at which the profile started from ``u(0) = -c`` vanishes."""
    return _shoot(c, q, lam, method, rtol)[0]


def _profile(c, q, lam, radius, samples, method, rtol, scale_r=1.0, scale_lam=None):
    rho, sol = _shoot(c, q, lam, method, rtol, dense=True)
    r = np.linspace(0.0, radius, samples)
    s = r * scale_r
    u = np.empty(samples)
    du = np.empty(samples)
    near = s <= R_START
    u[near], du[near] = _series(s[near], c, q, lam)
    far = ~near
    y = sol.sol(np.minimum(s[far], rho))
    u[far], du[far] = y[0], y[1]
    u[-1] = 0.0
    return RadialProfile(r, u, du * scale_r, q, lam if scale_lam is None else scale_lam, radius), sol


def radial_oracle(q: int, mode: str = "dirichlet", radius: float = 1.0, lam: float = 1.0,
                  samples: int = 257, method: str = "DOP853", rtol: float = RTOL) -> RadialProfile:
    """Radial solution on the disc of ``radius``.

    Parameters
    ----------
    mode : {"dirichlet", "eigen"}
        ``dirichlet`` shoots on ``c = -u(0)`` until the zero falls at
        ``radius``.  ``eigen`` (``q = 2``) fixes ``u(0) = -1`` and returns the
        eigenvalue ``lam = (rho_1 / radius)^4`` in the profile.
    """
    if int(q) != q or q < 0:
        raise PreconditionError("q must be a nonnegative integer")
    if not radius > 0:
        raise PreconditionError("radius must be positive")
    q = int(q)
    if mode == "eigen":
        if q != 2:
            raise PreconditionError("the eigen mode needs q = 2")
        rho = zero_radius(1.0, 2, 1.0, method, rtol)
        s = rho / radius
        prof, _ = _profile(1.0, 2, 1.0, radius, samples, method, rtol, scale_r=s, scale_lam=s**4)
        return prof
    if mode != "dirichlet":
        raise PreconditionError(f"unknown mode {mode!r}")
    if not lam > 0:
        raise PreconditionError("lambda must be positive")

    def g(logc):
        return zero_radius(math.exp(logc), q, lam, method, rtol) - radius

    lo, hi = -1.0, 1.0
    try:
        glo, ghi = g(lo), g(hi)
        for _ in range(40):
            if glo * ghi < 0:
                break
            lo, hi = lo - 2.0, hi + 2.0
            glo, ghi = g(lo), g(hi)
        else:
            raise OracleError(
                f"shooting bracket failure: the zero radius does not depend on u(0) "
                f"enough to reach R = {radius} (q = {q}, lambda = {lam})"
            )
    except OracleError:
        raise
    logc = brentq(g, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=200)
    c = math.exp(logc)
    prof, _ = _profile(c, q, lam, radius, samples, method, rtol)
    return prof


def profile_residual(prof: RadialProfile, method: str = "DOP853") -> float:
    """Max over samples of ``|u'^2 / 2 - int_0^r lam s (-u)^q ds|`` relative to ``max u'^2 / 2``.

    This is the integrated form of the radial equation; the integral is
    evaluated by adaptive quadrature of a re-integrated dense profile.
    """
    c = -prof.center
    if prof.lam <= 0 or c <= 0:
        raise OracleError("degenerate profile")
    rho, sol = _shoot(c, prof.q, prof.lam, method, RTOL, dense=True)

    def u_at(s):
        if s <= R_START:
            return _series(s, c, prof.q, prof.lam)[0]
        return float(sol.sol(min(s, rho))[0])

    worst = 0.0
    scale = 0.5 * float(np.max(prof.derivative)) ** 2
    for r, du in zip(prof.r[1:], prof.derivative[1:]):
        integral, _ = quad(lambda s: prof.lam * s * max(-u_at(s), 0.0) ** prof.q, 0.0, r,
                           epsabs=1e-14, epsrel=1e-13, limit=200)
        worst = max(worst, abs(0.5 * du**2 - integral) / scale)
    return worst
