"""Indicators for boundary asymptotics, analyticity and the induction bounds.

* :func:`boundary_exponent_fit` -- slope of ``log |w|`` against ``log x_n`` for
  the normal profile ``w`` with its linear part removed.
* :func:`taylor_coefficients` / :func:`analyticity_radius` -- Chebyshev based
  Taylor coefficients about the left end of a 1-D profile and a root-test
  radius estimate.
* :func:`induction_constants` -- norms ``s_N`` of ``eta^{N-2} d_1^N u`` and the
  smallest ``(A0, A1)`` with ``s_N <= A0 A1^{(N-4)^+} (N-4)^+!``.
* :func:`composition_sum` / :func:`verify_cl1` -- exact rational check of the
  factorial-ratio composition bound.

All of these are numerical indicators, not proofs.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import mpmath
import numpy as np
from numpy.polynomial import chebyshev as cheb
from numpy.polynomial.legendre import leggauss

from degma.errors import (
    ConditioningError,
    DifferentiationError,
    InsufficientDataError,
    PreconditionError,
    WindowError,
)
from degma.grid import GridFunction, StripField, l2_strip, spectral_derivative, trace_sobolev_norm
from degma.grushin import WeightedNormReport, strip_norm, weighted_components
from degma.transforms import BoundaryFrame, PatchField, normalizing_scales

TAYLOR_ORDER = 24
MIN_SAMPLES = 64
MIN_TERMS = 8
PATCH_DEGREE = 6

# ---------------------------------------------------------------------------
# Cutoff profile
# ---------------------------------------------------------------------------

# C^4 smoothstep: S(0) = 0, S(1) = 1, derivatives 1..4 vanish at both ends
_SMOOTHSTEP = np.polynomial.Polynomial([0, 0, 0, 0, 0, 126, -420, 540, -315, 70])


@dataclass(frozen=True)
class CutoffProfile:
    """``chi = 1`` on ``[-r, r]``, ``0`` outside ``[-2r, 2r]``, smoothstep between.

    The 2-D cutoff is ``eta(x1, xn) = chi(x1 - center) chi(xn)``.  ``center``
    defaults to the middle of the horizontal extent of the field it is
    applied to.
    """

    r: float
    center: float | None = None

    def __post_init__(self):
        if not self.r > 0:
            raise PreconditionError("cutoff radius must be positive")

    def taylor(self, t, order: int) -> np.ndarray:
        """``chi^{(j)}(t) / j!`` for ``j = 0..order``; shape ``(order + 1,) + t.shape``."""
        shape = np.shape(t)
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.zeros((order + 1,) + t.shape)
        a = np.abs(t)
        inner = a <= self.r
        out[0][inner] = 1.0
        mid = (a > self.r) & (a < 2 * self.r)
        if np.any(mid):
            x = (2 * self.r - a[mid]) / self.r
            # d/dt = -sign(t) / r d/dx
            sgn = -np.sign(t[mid]) / self.r
            p = _SMOOTHSTEP
            for j in range(order + 1):
                out[j][mid] = p(x) * sgn**j / math.factorial(j)
                p = p.deriv()
        return out.reshape((order + 1,) + shape)

    def __call__(self, t) -> np.ndarray:
        return self.taylor(t, 0)[0]

    def power_derivatives(self, t, p: int, order: int) -> np.ndarray:
        """``d^j (chi^p)`` for ``j = 0..order`` by Taylor-series powering."""
        a = self.taylor(t, order)
        b = np.zeros_like(a)
        if p == 0:
            b[0] = 1.0
            return b
        a0 = a[0]
        live = a0 > 0
        b[0] = np.where(live, a0, 0.0) ** p
        safe = np.where(live, a0, 1.0)
        for n in range(1, order + 1):
            acc = np.zeros_like(a0)
            for k in range(1, n + 1):
                acc += ((p + 1) * k - n) * a[k] * b[n - k]
            b[n] = np.where(live, acc / (n * safe), 0.0)
        fact = np.array([math.factorial(j) for j in range(order + 1)], dtype=float)
        return b * fact.reshape((-1,) + (1,) * (b.ndim - 1))


# ---------------------------------------------------------------------------
# Boundary exponent
# ---------------------------------------------------------------------------


@dataclass
class ExponentFit:
    gamma: float
    prefactor: float
    residual: float
    xn: np.ndarray
    w: np.ndarray
    normalized_prefactor: float = float("nan")
    expected_prefactor: float = float("nan")


def fit_exponent(xn, w) -> ExponentFit:
    """Least-squares slope of ``log |w|`` against ``log x_n``."""
    xn = np.asarray(xn, dtype=float)
    w = np.asarray(w, dtype=float)
    if xn.size < 3:
        raise InsufficientDataError("at least three samples are needed")
    if np.any(w == 0) or np.any(np.sign(w) != np.sign(w[0])):
        raise WindowError("w changes sign in the fit window; shrink delta")
    X, Y = np.log(xn), np.log(np.abs(w))
    (g, c), res, *_ = np.polyfit(X, Y, 1, full=True)
    resid = float(np.sqrt(res[0] / xn.size)) if res.size else 0.0
    return ExponentFit(float(g), float(np.exp(c)), resid, xn, w)


_GL_X, _GL_W = leggauss(40)


def normal_profile(u, frame: BoundaryFrame | None, xn) -> np.ndarray:
    """``w(s) = U(0, s) - U(0, 0) - s U_n(0, 0)`` in frame coordinates.

    Grid functions use ``w(s) = int_0^s (s - t) U_nn(t) dt`` on the spectral
    interpolant, which avoids the cancellation of the direct difference.
    """
    xn = np.asarray(xn, dtype=float)
    if isinstance(u, GridFunction):
        if frame is None:
            frame = BoundaryFrame.at(u, 0.0)
        ev = frame.evaluator
        out = np.empty_like(xn)
        for i, s in enumerate(xn):
            t = 0.5 * s * (_GL_X + 1.0)
            unn = ev.derivatives(np.zeros_like(t), t)[2]
            out[i] = np.sum(0.5 * s * _GL_W * (s - t) * unn)
        return out
    try:
        return _mp_normal_profile(u, xn)
    except (TypeError, AttributeError, ValueError):
        pass
    if frame is None:
        frame = BoundaryFrame.identity(u)
    ev = frame.evaluator
    zero = np.zeros(1)
    u0 = float(ev.value(zero, zero)[0])
    z = np.zeros_like(xn)
    return ev.value(z, xn) - u0 - xn * frame.u_n


def _mp_normal_profile(func, xn, dps: int = 60) -> np.ndarray:
    """Direct difference in extended precision for callables that accept ``mpmath`` numbers.

    In double precision the cancellation in ``U - U(0) - s U_n`` leaves only
    a few digits of ``w`` once ``w`` is far below ``s``.
    """
    with mpmath.workdps(dps):
        zero = mpmath.mpf(0)
        g = lambda t: func(zero, t)  # noqa: E731
        u0 = mpmath.mpf(g(zero))
        un = mpmath.diff(g, zero)
        return np.array([float(g(mpmath.mpf(s)) - u0 - mpmath.mpf(s) * un) for s in xn])


def boundary_exponent_report(u, frame: BoundaryFrame | None, q: int, delta: float = 0.4,
                             samples: int = 24, lam: float = 1.0) -> ExponentFit:
    """Exponent fit over the decade ``[delta / 20, delta / 2]`` with prefactor diagnostics.

    The normalized prefactor rescales ``w`` by the frame factors
    ``(kappa, beta)`` (``kappa w(beta x_n)``) and is to be compared, by order
    of magnitude only, with ``1 / ((q + 1)(q + 2))``.
    """
    if q < 1:
        raise PreconditionError("q must be positive")
    if not delta > 0:
        raise PreconditionError("delta must be positive")
    if samples < 20:
        raise PreconditionError("at least 20 window samples are required")
    xn = np.geomspace(delta / 20.0, delta / 2.0, samples)
    fit = fit_exponent(xn, normal_profile(u, frame, xn))
    if frame is None and isinstance(u, GridFunction):
        frame = BoundaryFrame.at(u, 0.0)
    if frame is not None and frame.u_n < 0 and frame.u_tt > 0:
        kappa, _, beta = normalizing_scales(-frame.u_n, frame.u_tt, q, lam)
        fit.normalized_prefactor = kappa * beta**fit.gamma * fit.prefactor
    fit.expected_prefactor = 1.0 / ((q + 1) * (q + 2))
    return fit


def boundary_exponent_fit(u, frame: BoundaryFrame | None, q: int, delta: float = 0.4,
                          samples: int = 24) -> float:
    """Fitted exponent ``gamma`` of the normal profile; expected ``q + 2``."""
    return boundary_exponent_report(u, frame, q, delta, samples).gamma


# ---------------------------------------------------------------------------
# Taylor coefficients and the analyticity radius
# ---------------------------------------------------------------------------


@dataclass
class TaylorCoefficients:
    """``a[N] = |f^{(N)}(0)| / N!`` with absolute error estimates ``err[N]``."""

    a: np.ndarray
    err: np.ndarray
    delta: float
    degree: int
    noise: float
    method: str

    def __len__(self):
        return self.a.size

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.a, dtype=dtype)


def _conversion(nmax: int, degree: int, delta, one=1.0):
    """Rows ``N``: Taylor coefficient at the left end from Chebyshev coefficients on ``[0, delta]``.

    ``T_k^{(N)}(-1) = (-1)^{k+N} prod_{j<N} (k^2 - j^2) / (2j + 1)``.
    """
    M = [[one * 0 for _ in range(degree + 1)] for _ in range(nmax + 1)]
    for k in range(degree + 1):
        p = one
        for N in range(nmax + 1):
            if N:
                j = N - 1
                p = p * (k * k - j * j) / (2 * j + 1)
            M[N][k] = p if (k + N) % 2 == 0 else -p
    scale = one
    for N in range(nmax + 1):
        if N:
            scale = scale * 2 / (delta * N)
        M[N] = [v * scale for v in M[N]]
    return M


def _float_taylor(t, values, delta, nmax):
    n = values.size
    dmax = int(min(2 * math.sqrt(n), 40, n - 1))
    c = cheb.chebfit(t, values, dmax)
    fmax = float(np.max(np.abs(values)))
    tail = np.abs(c[3 * dmax // 4:])
    if fmax > 0 and np.max(tail) > 1e-3 * np.max(np.abs(c)):
        raise ConditioningError("Chebyshev coefficients do not decay; the profile is not smooth")
    tau = max(float(np.median(tail)), 1e-16 * fmax)
    big = np.nonzero(np.abs(c) > 10.0 * tau)[0]
    d = min(dmax, int(big[-1]) + 2) if big.size else 1

    def at(deg):
        M = np.array(_conversion(nmax, deg, delta))
        cc = cheb.chebfit(t, values, deg)
        return M @ cc, np.abs(M) @ np.full(deg + 1, tau)

    a, err = at(d)
    for dd in (d - 4, d - 2, d + 2):
        if 4 <= dd <= dmax:
            err = np.maximum(err, np.abs(at(dd)[0] - a))
    return np.abs(a), err, d, tau


def _mp_taylor(func, delta, nmax, degree=128, dps=120):
    with mpmath.workdps(dps):
        D = degree
        dl = mpmath.mpf(delta)
        nodes = [mpmath.cos(mpmath.pi * (j + mpmath.mpf(1) / 2) / (D + 1)) for j in range(D + 1)]
        vals = [mpmath.mpf(func(dl * (x + 1) / 2)) for x in nodes]
        c = []
        for k in range(D + 1):
            s = mpmath.fsum(v * mpmath.cos(mpmath.pi * k * (j + mpmath.mpf(1) / 2) / (D + 1))
                            for j, v in enumerate(vals))
            c.append(s * 2 / (D + 1))
        c[0] /= 2
        cmax = max(abs(v) for v in c)
        tail = max(abs(v) for v in c[-8:])
        if cmax > 0 and tail > mpmath.mpf(10) ** (-dps // 3) * cmax:
            raise ConditioningError("Chebyshev coefficients do not decay; the function is not smooth")
        tau = max(tail, mpmath.mpf(10) ** (-dps) * cmax)
        M = _conversion(nmax, D, dl, mpmath.mpf(1))
        a = [abs(mpmath.fsum(m * ck for m, ck in zip(row, c))) for row in M]
        err = [mpmath.fsum(abs(m) for m in row) * tau for row in M]
        return (np.array([float(v) for v in a]), np.array([float(v) for v in err]), D, float(tau))


def taylor_coefficients(f, delta: float | None = None, nmax: int = TAYLOR_ORDER,
                        x: np.ndarray | None = None) -> TaylorCoefficients:
    """Taylor coefficients about the left end of a profile on ``[0, delta]``.

    Parameters
    ----------
    f : array_like or callable
        Samples (uniform on ``[0, delta]`` unless ``x`` is given, at least 64)
        or a callable.  Callables are evaluated in extended precision when they
        accept ``mpmath`` numbers, which keeps all 25 coefficients accurate;
        otherwise they are sampled in double precision.
    """
    if nmax > TAYLOR_ORDER:
        raise PreconditionError(f"nmax must not exceed {TAYLOR_ORDER}")
    if callable(f):
        if delta is None or not delta > 0:
            raise PreconditionError("a callable needs a positive interval length delta")
        try:
            a, err, d, tau = _mp_taylor(f, delta, nmax)
            return TaylorCoefficients(a, err, float(delta), d, tau, "extended")
        except (TypeError, AttributeError):
            n = 129
            x = 0.5 * delta * (1.0 - np.cos(np.pi * (np.arange(n) + 0.5) / n))[::-1]
            f = np.array([float(f(v)) for v in x])
    values = np.asarray(f, dtype=float)
    if values.ndim != 1 or values.size < MIN_SAMPLES:
        raise InsufficientDataError(f"need at least {MIN_SAMPLES} samples, got {values.size}")
    if not np.all(np.isfinite(values)):
        raise ConditioningError("samples must be finite")
    if x is None:
        if delta is None or not delta > 0:
            raise PreconditionError("uniform samples need a positive interval length delta")
        x = np.linspace(0.0, delta, values.size)
    x = np.asarray(x, dtype=float)
    if abs(x[0]) > 1e-12 * max(1.0, abs(x[-1])):
        raise PreconditionError("samples must start at the expansion point 0")
    delta = float(x[-1])
    t = 2.0 * x / delta - 1.0
    a, err, d, tau = _float_taylor(t, values, delta, nmax)
    return TaylorCoefficients(a, err, delta, d, tau, "double")


@dataclass
class RadiusFit:
    radius: float
    diverging: bool
    terms: np.ndarray
    slope: float
    residual: float


def _usable(a, err, zero_tol):
    a = np.asarray(a, dtype=float)
    N = np.arange(a.size)
    ok = (N >= 1) & np.isfinite(a) & (a > 0)
    if a.size and np.max(a) > 0:
        ok &= a > zero_tol * np.max(a)
    if err is not None:
        ok &= a > 10.0 * np.asarray(err, dtype=float)
    return N[ok]


def analyticity_fit(a, err=None, min_terms: int = MIN_TERMS, zero_tol: float = 1e-10) -> RadiusFit:
    """Root-test fit ``-log a_N ~ c + N log(rho)`` over the tail of the usable coefficients.

    A coefficient is usable when it exceeds ``zero_tol`` times the largest one
    and ten times its error estimate.  The fit uses the upper half of the
    usable orders, so that low-order terms (which carry the boundary data
    rather than the singularity) do not bias the slope.  Factorial growth
    (a positive ``log N!`` component in a three-parameter fit on a tail of at
    least six terms) is flagged as divergence and reported with radius 0.
    """
    if isinstance(a, TaylorCoefficients):
        err = a.err if err is None else err
        a = a.a
    a = np.asarray(a, dtype=float)
    N = _usable(a, err, zero_tol)
    if N.size < min_terms:
        raise InsufficientDataError(f"{N.size} usable nonzero coefficients, need {min_terms}")
    N = N[N.size // 2:] if N.size >= 4 else N
    y = -np.log(a[N])
    if N.size >= 6:
        lf = np.array([math.lgamma(n + 1.0) for n in N])
        A = np.column_stack([np.ones(N.size), N, lf])
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        if -coef[2] > 0.5:
            res = float(np.sqrt(np.mean((A @ coef - y) ** 2)))
            return RadiusFit(0.0, True, N, float("inf"), res)
    (slope, c0), res, *_ = np.polyfit(N, y, 1, full=True)
    resid = float(np.sqrt(res[0] / N.size)) if res.size else 0.0
    return RadiusFit(float(np.exp(slope)), False, N, float(slope), resid)


def analyticity_radius(a, err=None, min_terms: int = MIN_TERMS, zero_tol: float = 1e-10) -> float:
    """Radius of convergence from Taylor coefficient decay (0 on factorial growth)."""
    return analyticity_fit(a, err, min_terms, zero_tol).radius


def grid_normal_profile(u: GridFunction, j: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Values of a disc solution along the diameter through angle index ``j``.

    Returns ``(s, values)`` with ``s = 1 - r`` on the ray ``theta_j`` continued
    through the centre onto the opposite ray; the spacing is uniform.
    """
    if u.domain.kind != "disc" or u.domain.a != 1.0:
        raise PreconditionError("normal profiles are taken on the unit disc")
    r = u.radii
    jj = (j + u.n_theta // 2) % u.n_theta
    s = np.concatenate([1.0 - r[::-1], 1.0 + r])
    vals = np.concatenate([u.values[::-1, j], u.values[:, jj]])
    return s, vals


def profile_radius(u: GridFunction, delta: float = 1.0, min_terms: int = 3,
                   zero_tol: float = 1e-3) -> RadiusFit:
    """Analyticity radius of the normal profile of a disc solution on ``[0, delta]``.

    Discrete profiles only resolve a handful of Taylor coefficients above the
    mesh error, and coefficients below ``zero_tol`` of the largest one are
    treated as structural zeros; hence the relaxed defaults.
    """
    s, vals = grid_normal_profile(u)
    keep = s <= delta + 1e-12
    tc = taylor_coefficients(vals[keep], x=s[keep])
    return analyticity_fit(tc, min_terms=min_terms, zero_tol=zero_tol)


# ---------------------------------------------------------------------------
# Induction constants
# ---------------------------------------------------------------------------


@dataclass
class GrowthFit:
    """Norms ``s_N`` and the fitted bound ``A0 A1^{(N-4)^+} (N-4)^+!``."""

    N: np.ndarray
    s: np.ndarray
    A0: float
    A1: float
    residual: float
    k: int
    variants: dict = field(default_factory=dict)

    @property
    def N_max(self) -> int:
        return int(self.N[-1])

    def bound(self, i: int = 0) -> np.ndarray:
        e = np.maximum(self.N - 4, 0)
        f = np.array([math.factorial(max(n - 4 - i, 0)) for n in self.N], dtype=float)
        return self.A0 * self.A1 ** e * f

    def satisfied(self) -> bool:
        return bool(np.all(self.s <= self.bound()))

    def rows(self) -> list[tuple[int, float, float]]:
        return [(int(n), float(s), float(b)) for n, s, b in zip(self.N, self.s, self.bound())]


def fit_growth(N, s, k: int = 0) -> GrowthFit:
    """Smallest ``(A0, A1)`` in lexicographic order with ``s_N <= A0 A1^{(N-4)^+} (N-4)^+!``.

    ``A0`` is fixed by the ``N <= 4`` norms (where the bound does not involve
    ``A1``); ``A1`` is then the smallest value covering every ``N > 4``.
    """
    N = np.asarray(N, dtype=int)
    s = np.asarray(s, dtype=float)
    if not np.all(np.isfinite(s)):
        raise DifferentiationError("a derivative norm is not finite")
    if np.all(s == 0):
        return GrowthFit(N, s, 0.0, 1.0, 0.0, k)
    low = s[N <= 4]
    A0 = float(np.max(low)) if low.size and np.max(low) > 0 else float(np.min(s[s > 0]))
    A1 = 0.0
    for n, v in zip(N, s):
        if n > 4 and v > 0:
            A1 = max(A1, (v / (A0 * math.factorial(n - 4))) ** (1.0 / (n - 4)))
    A1 = A1 * (1 + 1e-12) if A1 > 0 else 1.0
    A0 *= 1 + 1e-12
    fit = GrowthFit(N, s, A0, A1, 0.0, k)
    pos = s > 0
    fit.residual = float(np.sqrt(np.mean(np.log(fit.bound()[pos] / s[pos]) ** 2)))
    fit.variants = {i: fit.bound(i) for i in (1, 2)}
    return fit


class _StripProvider:
    """Derivatives of ``F = eta^p d_1^N u`` on the strip by the Leibniz rule."""

    def __init__(self, u: StripField, eta: CutoffProfile, degree):
        self.u = u
        self.eta = eta
        n = u.vertical + 1
        self.degree = degree or int(min(24, 2 * math.sqrt(n), n - 1))
        t = 2.0 * u.xn - 1.0
        self.t = t
        self.coef = cheb.chebfit(t, u.values, self.degree)
        self._vert = {}
        c = eta.center if eta.center is not None else 0.5 * u.period
        self.x1 = u.x1 - c
        self.xn = u.xn
        self.l2 = lambda v: l2_strip(v, u.period)
        self.trace = lambda d, k: trace_sobolev_norm(d(0, 1)[0], k, u.period)

    def vertical(self, b):
        if b not in self._vert:
            c = cheb.chebder(self.coef, b, scl=2.0) if b else self.coef
            self._vert[b] = cheb.chebval(self.t, c).T
        return self._vert[b]

    def g(self, a, b):
        return spectral_derivative(self.vertical(b), a, self.u.period)


class _PatchProvider:
    """Same on a rectangular patch, with a tensor Chebyshev fit of the data.

    Patch data carry the O(h^2) error of the solver, which high-degree fits
    amplify in derivatives of order ``N + k + 2``; the low default degree
    keeps the fitted constants stable under refinement.
    """

    def __init__(self, u: PatchField, eta: CutoffProfile, degree):
        self.u = u
        self.eta = eta
        n1, nn = u.x1.size, u.xn.size
        d1 = min(degree or PATCH_DEGREE, n1 - 1)
        dn = min(degree or PATCH_DEGREE, nn - 1)
        self.L1 = u.x1[-1] - u.x1[0]
        self.Ln = u.xn[-1] - u.xn[0]
        self.t1 = 2.0 * (u.x1 - u.x1[0]) / self.L1 - 1.0
        self.tn = 2.0 * (u.xn - u.xn[0]) / self.Ln - 1.0
        V1 = cheb.chebvander(self.t1, d1)
        Vn = cheb.chebvander(self.tn, dn)
        self.coef = np.linalg.pinv(Vn) @ u.values @ np.linalg.pinv(V1).T  # (dn+1, d1+1)
        c = eta.center if eta.center is not None else 0.5 * (u.x1[0] + u.x1[-1])
        self.x1 = u.x1 - c
        self.xn = u.xn
        w1 = _trapezoid(u.x1)
        wn = _trapezoid(u.xn)
        self.l2 = lambda v: float(np.sqrt(np.sum(wn[:, None] * w1[None, :] * v**2)))
        self.trace = lambda d, k: float(sum(np.sqrt(np.sum(w1 * d(j, 1)[0] ** 2)) for j in range(k + 1)))

    def g(self, a, b):
        c = self.coef
        if b:
            c = cheb.chebder(c, b, scl=2.0 / self.Ln, axis=0)
        if a:
            c = cheb.chebder(c, a, scl=2.0 / self.L1, axis=1)
        return cheb.chebgrid2d(self.tn, self.t1, c)


def _trapezoid(x):
    w = np.zeros_like(x)
    dx = np.diff(x)
    w[:-1] += 0.5 * dx
    w[1:] += 0.5 * dx
    return w


def _cutoff_norm(prov, N: int, k: int, m: int) -> WeightedNormReport:
    p = N - 2
    order = k + 2
    e1 = prov.eta.power_derivatives(prov.x1, p, order)  # (order+1, n1)
    en = prov.eta.power_derivatives(prov.xn, p, order)  # (order+1, nn)
    cache = {}

    def d(a, b):
        if (a, b) not in cache:
            tot = 0.0
            for i in range(a + 1):
                for j in range(b + 1):
                    eta = np.outer(en[j], e1[i])
                    if not np.any(eta):
                        continue
                    tot = tot + math.comb(a, i) * math.comb(b, j) * eta * prov.g(N + a - i, b - j)
            cache[(a, b)] = np.broadcast_to(tot, (prov.xn.size, prov.x1.size)) + 0.0
        return cache[(a, b)]

    return weighted_components(d, prov.xn, prov.l2, prov.trace, k, m)


def induction_norms(u, k: int, N_max: int, eta: CutoffProfile, m: int,
                    degree: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """``s_N = ||eta^{N-2} d_1^N u||`` in the weighted norm of order ``k``, ``2 <= N <= N_max``."""
    if not 2 <= N_max <= 12:
        raise PreconditionError("N_max must lie in [2, 12]")
    if k < 0 or m < 1:
        raise PreconditionError("k must be nonnegative and m positive")
    if k + 2 > 4:
        # the cutoff is C^4; higher derivatives of eta^p are only piecewise smooth
        raise PreconditionError("the C^4 cutoff supports k <= 2")
    if isinstance(u, StripField):
        prov = _StripProvider(u, eta, degree)
    elif isinstance(u, PatchField):
        prov = _PatchProvider(u, eta, degree)
    else:
        raise PreconditionError("induction constants need a StripField or a PatchField")
    N = np.arange(2, N_max + 1)
    s = np.array([_cutoff_norm(prov, int(n), k, m).total for n in N])
    if not np.all(np.isfinite(s)):
        raise DifferentiationError("a derivative norm is not finite")
    return N, s


def induction_constants(u, k: int, N_max: int, eta: CutoffProfile, m: int,
                        degree: int | None = None) -> GrowthFit:
    """Fit ``(A0, A1)`` to the horizontal-derivative norms of ``u``."""
    N, s = induction_norms(u, k, N_max, eta, m, degree)
    fit = fit_growth(N, s, k)
    assert fit.satisfied()
    return fit


# ---------------------------------------------------------------------------
# Composition sums
# ---------------------------------------------------------------------------


def _phi(j: int) -> Fraction:
    return Fraction(math.factorial(max(j - 2, 0)), math.factorial(j))


@functools.lru_cache(maxsize=None)
def _power_series(b: int, p: int) -> tuple[Fraction, ...]:
    """Coefficients ``0..p`` of ``(sum_j phi(j) x^j)^{b+1}``."""
    base = [_phi(j) for j in range(p + 1)]
    if b == 0:
        return tuple(base)
    prev = _power_series(b - 1, p)
    return tuple(sum((base[j] * prev[n - j] for j in range(n + 1)), Fraction(0)) for n in range(p + 1))


def composition_sum(p: int, b: int) -> Fraction:
    """``sum over k_0 + ... + k_b = p`` of ``prod (k_i - 2)^+! / k_i!``, exactly."""
    if p < 0 or b < 0:
        raise PreconditionError("p and b must be nonnegative")
    if p > 60 or b > 6:
        raise PreconditionError("composition sums are supported for p <= 60, b <= 6")
    return _power_series(b, 60)[p] if p <= 60 else Fraction(0)


def _pi2_bounds(bits: int = 200) -> tuple[Fraction, Fraction]:
    with mpmath.workprec(bits + 20):
        v = mpmath.pi**2
        man, exp = mpmath.mpf(v).man_exp
    mid = Fraction(man) * Fraction(2) ** exp
    eps = Fraction(1, 2**bits)
    return mid - eps, mid + eps


@dataclass
class Cl1Row:
    p: int
    b: int
    S: Fraction
    bound: float
    passed: bool


@dataclass
class Cl1Report:
    rows: list[Cl1Row]
    C2: float
    K: float
    base_p: int
    argmax: tuple[int, int]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def failures(self) -> list[Cl1Row]:
        return [r for r in self.rows if not r.passed]


class _Interval:
    """Closed interval with positive rational ends."""

    def __init__(self, lo: Fraction, hi: Fraction):
        self.lo, self.hi = lo, hi

    def __pow__(self, e: int) -> _Interval:
        return _Interval(self.lo**e, self.hi**e) if e >= 0 else _Interval(self.hi**e, self.lo**e)


def _leq(x: Fraction, K: _Interval, e: int, y: Fraction) -> bool:
    """Decide ``x K^e <= y`` for positive ``K`` in an interval."""
    Ke = K**e
    if x * Ke.hi <= y:
        return True
    if x * Ke.lo > y:
        return False
    raise ConditioningError("interval bound for pi^2 too wide to decide the comparison")


def verify_cl1(p_max: int, b_max: int, d: int, K=None, base_p: int = 10, C2=None) -> Cl1Report:
    """Check ``S(p, b) <= C2 K^{b+1} / (p+1)^2`` exactly, ``K = 8 pi^2 (d + 1)`` by default.

    ``C2`` is the smallest constant for which the bound holds on ``p <= base_p``
    (all ``b <= b_max``) unless given.  Comparisons with ``pi`` use rational
    enclosures, so every pass/fail verdict is exact.
    """
    if d < b_max:
        raise PreconditionError("need d >= b_max")
    if p_max < 0 or b_max < 0:
        raise PreconditionError("p_max and b_max must be nonnegative")
    if K is None:
        lo, hi = _pi2_bounds()
        Kint = _Interval(8 * (d + 1) * lo, 8 * (d + 1) * hi)
        Kf = 8.0 * math.pi**2 * (d + 1)
    else:
        Kq = Fraction(K)
        if Kq <= 0:
            raise PreconditionError("K must be positive")
        Kint = _Interval(Kq, Kq)
        Kf = float(Kq)
    # weight(p, b) = S (p+1)^2 ; ratio = weight / K^{b+1}
    weight = {(p, b): composition_sum(p, b) * (p + 1) ** 2
              for b in range(b_max + 1) for p in range(p_max + 1)}
    best = None
    for b in range(b_max + 1):
        for p in range(min(base_p, p_max) + 1):
            if best is None:
                best = (p, b)
                continue
            bp, bb = best
            # ratio(p, b) > ratio(best)  <=>  w(p,b) K^{bb-b} > w(best)
            if not _leq(weight[(p, b)], Kint, bb - b, weight[best]):
                best = (p, b)
    bp, bb = best
    fixed = C2 is not None
    if fixed:
        C2q = Fraction(C2)
        if C2q <= 0:
            raise PreconditionError("C2 must be positive")
        C2 = float(C2q)
    else:
        C2 = float(weight[best]) / Kf ** (bb + 1)
    rows = []
    for b in range(b_max + 1):
        for p in range(p_max + 1):
            S = composition_sum(p, b)
            if fixed:
                ok = _leq(weight[(p, b)], Kint, -(b + 1), C2q)
            else:
                ok = (p, b) == best or _leq(weight[(p, b)], Kint, bb - b, weight[best])
            rows.append(Cl1Row(p, b, S, C2 * Kf ** (b + 1) / (p + 1) ** 2, ok))
    return Cl1Report(rows, C2, Kf, base_p, best)


def strip_weighted_norm(u: StripField, k: int, m: int, degree: int | None = None) -> WeightedNormReport:
    """Weighted norm of a strip field with Chebyshev vertical derivatives (no cutoff)."""
    prov = _StripProvider(u, CutoffProfile(1.0), degree)
    return strip_norm(prov.g, u.xn, u.period, k, m)
