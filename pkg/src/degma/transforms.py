"""Hodograph and partial Legendre transforms near a boundary point.

The chain is ``u -> v -> v*``:

* ``v(y', y_n)`` is the height ``x_n`` at which ``u(y', x_n) = -y_n``
  (coordinates swapped so that the level value becomes a coordinate);
* ``v*(z', z_n) = sup_{y'} (y' z' - v(y', z_n))`` is the Legendre conjugate
  in the horizontal variable only, so ``z_n = y_n``.

If ``det D^2 u = lam (-u)^q`` then ``v*`` solves

    lam z_n^q (-v*_n)^4 v*_11 + v*_nn = 0

in the plane, which :func:`pl_residual` evaluates by finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import CubicSpline

from degma.errors import (
    DeltaTooLargeError,
    FrameError,
    NonConvexError,
    PreconditionError,
    RangeError,
    SignError,
)
from degma.grid import GridFunction, polar_radii

ROOT_TOL = 1e-13


# ---------------------------------------------------------------------------
# Smooth evaluation of grid functions
# ---------------------------------------------------------------------------


class PolarInterpolant:
    """Smooth extension of a :class:`GridFunction` to arbitrary points.

    Trigonometric interpolation in the angle and, for each Fourier mode,
    a cubic spline in the radius over the mirrored nodes ``-r_i, r_i``
    (mode ``k`` has parity ``(-1)^k`` across the origin).  The half-shifted
    mesh makes the mirrored nodes uniformly spaced.
    """

    def __init__(self, u: GridFunction):
        self.domain = u.domain
        n_r, n_t = u.values.shape
        self.n_theta = n_t
        coef = np.fft.rfft(u.values, axis=1) / n_t
        nk = coef.shape[1]
        k = np.arange(nk)
        weight = np.full(nk, 2.0)
        weight[0] = 1.0
        if n_t % 2 == 0:
            weight[-1] = 1.0
        coef = coef * weight
        r = polar_radii(n_r)
        parity = (-1.0) ** k
        rr = np.concatenate([-r[::-1], r])
        full = np.concatenate([coef[::-1] * parity, coef], axis=0)
        self.k = k
        self.spline = CubicSpline(rr, np.concatenate([full.real, full.imag], axis=1), axis=0)
        self.nk = nk

    def _polar(self, x, y):
        X, Y = self.domain.to_reference(x, y)
        return np.hypot(X, Y), np.arctan2(Y, X)

    def _modes(self, rad, nu=0):
        c = self.spline(rad, nu)
        return c[..., : self.nk] + 1j * c[..., self.nk:]

    def __call__(self, x, y) -> np.ndarray:
        return self.derivatives(x, y, 0)[0]

    def derivatives(self, x, y, order: int = 2):
        """Value and physical derivatives up to ``order`` (0, 1 or 2).

        Returns ``[u]``, ``[u, u_x, u_y]`` or
        ``[u, u_x, u_y, u_xx, u_xy, u_yy]``.
        """
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        shape = np.broadcast(x, y).shape
        x = np.broadcast_to(x, shape).ravel()
        y = np.broadcast_to(y, shape).ravel()
        R, T = self._polar(x, y)
        e = np.exp(1j * np.outer(T, self.k))
        ik = 1j * self.k
        c0 = self._modes(R)
        out = [np.real(np.sum(c0 * e, axis=1))]
        if order >= 1:
            c1 = self._modes(R, 1)
            ur = np.real(np.sum(c1 * e, axis=1))
            ut = np.real(np.sum(c0 * ik * e, axis=1))
        if order >= 2:
            c2 = self._modes(R, 2)
            urr = np.real(np.sum(c2 * e, axis=1))
            urt = np.real(np.sum(c1 * ik * e, axis=1))
            utt = np.real(np.sum(c0 * ik * ik * e, axis=1))
        a, b = self.domain.a, self.domain.b
        if order >= 1:
            Rs = np.where(R > 0, R, 1.0)
            cs, sn = np.cos(T), np.sin(T)
            uX = cs * ur - sn * ut / Rs
            uY = sn * ur + cs * ut / Rs
            out += [uX / a, uY / b]
        if order >= 2:
            uXX = cs * cs * urr + sn * sn * (ur / Rs + utt / Rs**2) - 2 * sn * cs * (urt / Rs - ut / Rs**2)
            uYY = sn * sn * urr + cs * cs * (ur / Rs + utt / Rs**2) + 2 * sn * cs * (urt / Rs - ut / Rs**2)
            uXY = sn * cs * (urr - ur / Rs - utt / Rs**2) + (cs * cs - sn * sn) * (urt / Rs - ut / Rs**2)
            out += [uXX / a**2, uXY / (a * b), uYY / b**2]
        return [o.reshape(shape) for o in out]


# ---------------------------------------------------------------------------
# Frames and patches
# ---------------------------------------------------------------------------


@dataclass
class BoundaryFrame:
    """Rigid frame at a boundary point: ``x = origin + x' tangent + x_n normal``.

    ``u_n`` and ``u_tt`` are the normal derivative and the tangential second
    derivative at the origin; ``c0`` is half the smaller of ``|u_n|`` and
    ``u_tt``.  ``scales`` holds the factors ``(kappa, alpha, beta)`` for which
    ``kappa u(alpha x', beta x_n)`` has unit tangential Hessian, normal
    derivative ``-1`` and right-hand side coefficient 1.
    """

    origin: np.ndarray
    tangent: np.ndarray
    normal: np.ndarray
    u_n: float
    u_tt: float
    c0: float
    theta: float = 0.0
    scales: tuple[float, float, float] = (1.0, 1.0, 1.0)
    evaluator: object = field(default=None, repr=False, compare=False)

    @classmethod
    def identity(cls, func, c0: float | None = None, step: float = 1e-4) -> BoundaryFrame:
        """Frame for a function already given in frame coordinates, ``func(x1, xn)``."""
        ev = CallableFrameFunction(func, step)
        _, un, _, utt = ev.derivatives(np.array([0.0]), np.array([0.0]))
        un, utt = float(un[0]), float(utt[0])
        if c0 is None:
            c0 = 0.5 * min(abs(un), utt if utt > 0 else abs(un))
        return cls(np.zeros(2), np.array([1.0, 0.0]), np.array([0.0, 1.0]), un, utt, c0,
                   evaluator=ev)

    @classmethod
    def at(cls, u: GridFunction, theta: float, q: int | None = None, lam: float = 1.0) -> BoundaryFrame:
        interp = PolarInterpolant(u)
        dom = u.domain
        origin = dom.boundary_point(theta)
        t = dom.tangent(theta)
        n = dom.inward_normal(theta)
        ev = GridFrameFunction(interp, origin, t, n)
        _, un, _, utt = ev.derivatives(np.array([0.0]), np.array([0.0]))
        un, utt = float(un[0]), float(utt[0])
        if not un < 0:
            raise FrameError(f"normal derivative {un:.3e} is not negative at the frame origin")
        if not utt > 0:
            raise FrameError(f"tangential Hessian {utt:.3e} is not positive at the frame origin")
        c0 = 0.5 * min(-un, utt)
        scales = (1.0, 1.0, 1.0) if q is None else normalizing_scales(-un, utt, q, lam)
        return cls(origin, t, n, un, utt, c0, theta, scales, ev)


def normalizing_scales(un_abs: float, utt: float, q: int, lam: float) -> tuple[float, float, float]:
    """``(kappa, alpha, beta)`` with ``kappa alpha^2 u_tt = 1``, ``kappa beta |u_n| = 1``
    and ``kappa^{2-q} alpha^2 beta^2 lam = 1``."""
    # logs: k + 2a = -log utt, k + b = -log un, (2-q)k + 2a + 2b = -log lam
    A = np.array([[1.0, 2.0, 0.0], [1.0, 0.0, 1.0], [2.0 - q, 2.0, 2.0]])
    rhs = -np.log([utt, un_abs, lam])
    k, a, b = np.linalg.solve(A, rhs)
    return float(np.exp(k)), float(np.exp(a)), float(np.exp(b))


class GridFrameFunction:
    """``U(x', x_n) = u(origin + x' t + x_n n)`` with frame derivatives."""

    def __init__(self, interp: PolarInterpolant, origin, t, n):
        self.interp = interp
        self.origin = np.asarray(origin, float)
        self.t = np.asarray(t, float)
        self.n = np.asarray(n, float)

    def _points(self, x1, xn):
        px = self.origin[0] + x1 * self.t[0] + xn * self.n[0]
        py = self.origin[1] + x1 * self.t[1] + xn * self.n[1]
        return px, py

    def value(self, x1, xn):
        return self.interp(*self._points(x1, xn))

    def derivatives(self, x1, xn):
        """``(U, U_n, U_nn, U_11)``."""
        u, ux, uy, uxx, uxy, uyy = self.interp.derivatives(*self._points(x1, xn), 2)
        t, n = self.t, self.n
        un = ux * n[0] + uy * n[1]
        unn = uxx * n[0] ** 2 + 2 * uxy * n[0] * n[1] + uyy * n[1] ** 2
        utt = uxx * t[0] ** 2 + 2 * uxy * t[0] * t[1] + uyy * t[1] ** 2
        return u, un, unn, utt

    def lower_bracket(self, x1):
        """Normal coordinate where the vertical line through ``x1`` meets the boundary."""
        dom = self.interp.domain
        a, b = dom.a, dom.b
        px0 = self.origin[0] + x1 * self.t[0]
        py0 = self.origin[1] + x1 * self.t[1]
        # (px0 + s n0)^2 / a^2 + (py0 + s n1)^2 / b^2 = 1
        A = self.n[0] ** 2 / a**2 + self.n[1] ** 2 / b**2
        B = 2 * (px0 * self.n[0] / a**2 + py0 * self.n[1] / b**2)
        C = px0**2 / a**2 + py0**2 / b**2 - 1.0
        disc = np.maximum(B * B - 4 * A * C, 0.0)
        return (-B - np.sqrt(disc)) / (2 * A)


class CallableFrameFunction:
    """Frame function from a callable ``f(x1, xn)``; derivatives by central differences."""

    def __init__(self, func, step: float = 1e-4):
        self.func = func
        self.step = step

    def value(self, x1, xn):
        return np.asarray(self.func(x1, xn), dtype=float) + 0.0 * x1

    def derivatives(self, x1, xn):
        h = self.step
        f = self.value
        u = f(x1, xn)
        up, um = f(x1, xn + h), f(x1, xn - h)
        lp, lm = f(x1 + h, xn), f(x1 - h, xn)
        return u, (up - um) / (2 * h), (up - 2 * u + um) / h**2, (lp - 2 * u + lm) / h**2

    def lower_bracket(self, x1):
        return np.zeros_like(np.asarray(x1, dtype=float))


@dataclass
class PatchField:
    """Values on a rectangular grid; ``values[j, i]`` at ``(x1[i], xn[j])``.

    ``kind`` records which function the grid carries: ``"v"`` (hodograph),
    ``"v*"`` (partial Legendre transform) or ``"u"``.
    """

    x1: np.ndarray
    xn: np.ndarray
    values: np.ndarray
    frame: BoundaryFrame | None = None
    delta: float = 0.0
    kind: str = "v"

    def __post_init__(self):
        self.x1 = np.asarray(self.x1, dtype=float)
        self.xn = np.asarray(self.xn, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.xn.size, self.x1.size):
            raise PreconditionError("PatchField values must be (len(xn), len(x1))")
        if np.any(self.xn < 0):
            raise PreconditionError("a patch covers only the side x_n >= 0")
        if not np.all(np.isfinite(self.values)):
            raise PreconditionError("PatchField values must be finite")

    @property
    def h1(self) -> float:
        return float(self.x1[1] - self.x1[0])

    @property
    def hn(self) -> float:
        return float(self.xn[1] - self.xn[0])


# ---------------------------------------------------------------------------
# Hodograph transform
# ---------------------------------------------------------------------------


def _evaluator(u, frame: BoundaryFrame | None):
    if isinstance(u, GridFunction):
        if frame is None:
            raise PreconditionError("a grid function needs a boundary frame")
        if frame.evaluator is None:
            raise PreconditionError("frame was not built from a grid function")
        return frame.evaluator
    if frame is None:
        frame = BoundaryFrame.identity(u)
    return frame.evaluator


def hodograph_forward(u, frame: BoundaryFrame | None, delta: float, n1: int = 41, nn: int = 41,
                      height: float | None = None) -> PatchField:
    """Solve ``u(y', v) + y_n = 0`` for ``v`` on ``[-delta, delta] x [0, delta]``.

    Parameters
    ----------
    u : GridFunction or callable
        A callable is read as ``U(x1, xn)`` in frame coordinates.
    height : float, optional
        Length of the normal search interval; default ``delta / c0``.

    Roots are bracketed from the boundary, bisected and polished by Newton
    steps to ``1e-13``.
    """
    ev = _evaluator(u, frame)
    if frame is None:
        frame = BoundaryFrame.identity(u)
    c0 = frame.c0
    if not c0 > 0:
        raise FrameError("frame constant c0 must be positive")
    y1 = np.linspace(-delta, delta, n1)
    yn = np.linspace(0.0, delta, nn)
    Y1, YN = np.meshgrid(y1, yn)
    height = delta / c0 if height is None else height
    lo = ev.lower_bracket(Y1)
    lo = lo - 0.05 * delta
    hi = lo + height + 0.05 * delta

    def g(s):
        return ev.value(Y1, s) + YN

    glo, ghi = g(lo), g(hi)
    if np.any(glo < 0):
        raise FrameError("u is negative below the boundary: frame or data inconsistent")
    if np.any(ghi > 0):
        raise DeltaTooLargeError(f"level -y_n not reached within height {height:.3g}; shrink delta")
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        gm = g(mid)
        pos = gm > 0
        lo = np.where(pos, mid, lo)
        hi = np.where(pos, hi, mid)
        if np.max(hi - lo) < 1e-9:
            break
    s = 0.5 * (lo + hi)
    for _ in range(4):
        val, un, _, _ = ev.derivatives(Y1, s)
        step = (val + YN) / un
        s = s - step
        if np.max(np.abs(step)) < ROOT_TOL:
            break
    _, un, _, _ = ev.derivatives(Y1, s)
    if np.any(-un < c0):
        raise FrameError(f"|u_n| drops below c0 = {c0:.3e} on the patch")
    return PatchField(y1, yn, s, frame, delta, "v")


def hodograph_identity_error(u, frame: BoundaryFrame | None, v: PatchField) -> float:
    """``max |u(y', v(y)) + y_n|`` over the patch."""
    ev = _evaluator(u, frame if frame is not None else v.frame)
    Y1, YN = np.meshgrid(v.x1, v.xn)
    return float(np.max(np.abs(ev.value(Y1, v.values) + YN)))


def frame_ok(u: GridFunction, frame: BoundaryFrame, delta: float, n: int = 21) -> bool:
    """Both frame hypotheses on the patch: ``|u_n| >= c0`` and ``u_tt >= c0``."""
    try:
        v = hodograph_forward(u, frame, delta, n, n)
    except (FrameError, DeltaTooLargeError):
        return False
    Y1, _ = np.meshgrid(v.x1, v.xn)
    utt = frame.evaluator.derivatives(Y1, v.values)[3]
    return bool(np.all(utt >= frame.c0))


def auto_delta(u: GridFunction, frame: BoundaryFrame, delta0: float = 0.4, shrink: float = 0.5,
               tries: int = 12) -> float:
    """Largest ``delta0 * shrink^j`` on which the frame hypotheses hold."""
    d = delta0
    for _ in range(tries):
        if frame_ok(u, frame, d):
            return d
        d *= shrink
    raise FrameError("no patch radius satisfies the frame hypotheses")


# ---------------------------------------------------------------------------
# Partial Legendre transform
# ---------------------------------------------------------------------------


def conjugate_1d(x: np.ndarray, f: np.ndarray, s: np.ndarray) -> np.ndarray:
    """``sup_x (x s - f(x))`` of a convex sampled ``f`` at sorted slopes ``s``.

    The supporting node for each slope is located by merging ``s`` into the
    increasing secant slopes of ``f``; the sup is then refined on the local
    quadratic through that node and its neighbours.
    """
    x = np.asarray(x, dtype=float)
    f = np.asarray(f, dtype=float)
    s = np.asarray(s, dtype=float)
    dx = np.diff(x)
    slopes = np.diff(f) / dx
    if np.any(np.diff(slopes) <= 0):
        raise NonConvexError("slice is not strictly convex")
    if s.size and (s.min() < slopes[0] or s.max() > slopes[-1]):
        raise RangeError(
            f"slopes [{s.min():.4g}, {s.max():.4g}] exceed the range [{slopes[0]:.4g}, {slopes[-1]:.4g}]"
        )
    order = np.argsort(s, kind="stable")
    node = np.empty(s.size, dtype=int)
    node[order] = np.searchsorted(slopes, s[order], side="left")
    c = np.clip(node, 1, x.size - 2)
    h0 = x[c] - x[c - 1]
    h1 = x[c + 1] - x[c]
    # quadratic through (x[c-1], x[c], x[c+1])
    d1 = (f[c + 1] - f[c]) / h1
    d0 = (f[c] - f[c - 1]) / h0
    q2 = (d1 - d0) / (h0 + h1)  # half the second derivative
    q1 = (d0 * h1 + d1 * h0) / (h0 + h1)  # derivative at x[c]
    xs = x[c] + (s - q1) / (2.0 * q2)
    dxs = xs - x[c]
    return s * xs - (f[c] + q1 * dxs + q2 * dxs**2)


def _slope_window(x1, values):
    """Common slope interval covered by every row, one node in from each edge."""
    h = x1[1] - x1[0]
    left = (values[:, 2] - values[:, 0]) / (2 * h)
    right = (values[:, -1] - values[:, -3]) / (2 * h)
    return float(np.max(left)), float(np.min(right))


def _check_convex(p: PatchField, c0: float | None):
    d2 = np.diff(p.values, 2, axis=1) / p.h1**2
    floor = 0.0 if c0 is None else 0.5 * c0
    if np.any(d2 <= floor):
        raise NonConvexError(f"patch is not convex in the horizontal variable (min second difference {d2.min():.3e})")


def partial_legendre(v: PatchField, z1: np.ndarray | None = None, c0: float | None = None) -> PatchField:
    """Conjugate ``v`` in the horizontal variable on every vertical level.

    ``z1`` defaults to a grid of the same size spanning the slope interval
    shared by all levels.
    """
    _check_convex(v, c0)
    if z1 is None:
        lo, hi = _slope_window(v.x1, v.values)
        if not hi > lo:
            raise RangeError("levels share no common slope interval")
        z1 = np.linspace(lo, hi, v.x1.size)
    z1 = np.asarray(z1, dtype=float)
    out = np.vstack([conjugate_1d(v.x1, row, z1) for row in v.values])
    kind = "v*" if v.kind != "v*" else "v"
    return PatchField(z1, v.xn.copy(), out, v.frame, v.delta, kind)


def pl_inverse(vs: PatchField, y1: np.ndarray | None = None, c0: float | None = None) -> PatchField:
    """Invert the partial Legendre transform by conjugating again."""
    res = partial_legendre(vs, y1, c0)
    return replace(res, kind="v")


def roundtrip_error(v: PatchField, c0: float | None = None) -> float:
    """``max |v - pl_inverse(partial_legendre(v))|`` over the nodes of ``v``
    whose slopes are covered by the conjugate on every level."""
    vs = partial_legendre(v, c0=c0)
    lo, hi = _slope_window(vs.x1, vs.values)
    keep = (v.x1 >= lo) & (v.x1 <= hi)
    if keep.sum() < 3:
        raise RangeError("too few nodes inside the slope window of the conjugate")
    back = pl_inverse(vs, v.x1[keep])
    return float(np.max(np.abs(back.values - v.values[:, keep])))


def legendre_chain(u, theta_or_frame, delta: float, n1: int = 41, nn: int = 41):
    """``(frame, v, v*)`` for a grid function or a frame-coordinate callable."""
    if isinstance(u, GridFunction):
        frame = theta_or_frame if isinstance(theta_or_frame, BoundaryFrame) else BoundaryFrame.at(u, theta_or_frame)
    else:
        frame = theta_or_frame if isinstance(theta_or_frame, BoundaryFrame) else BoundaryFrame.identity(u)
    v = hodograph_forward(u, frame, delta, n1, nn)
    return frame, v, partial_legendre(v)


def pl_residual_field(vs: PatchField, m: int, lam: float = 1.0) -> np.ndarray:
    """``lam z_n^m (-v*_n)^4 v*_11 + v*_nn`` at interior nodes (one layer removed)."""
    V = vs.values
    h1, hn = vs.h1, vs.hn
    vn = (V[2:, 1:-1] - V[:-2, 1:-1]) / (2 * hn)
    vnn = (V[2:, 1:-1] - 2 * V[1:-1, 1:-1] + V[:-2, 1:-1]) / hn**2
    v11 = (V[1:-1, 2:] - 2 * V[1:-1, 1:-1] + V[1:-1, :-2]) / h1**2
    if np.any(vn >= 0):
        raise SignError("v*_n must be negative on the patch")
    zn = vs.xn[1:-1, None]
    # with one horizontal variable the cofactor matrix of D^2_{z'} v* is the scalar 1
    det = cofactor_det(v11[..., None, None])
    return lam * zn**m * (-vn) ** 4 * det + vnn


def cofactor_det(hess: np.ndarray) -> np.ndarray:
    """Determinant of a stack of ``(d, d)`` matrices through the cofactor expansion ``sum_ij C_ij H_ij / d``."""
    d = hess.shape[-1]
    if d == 1:
        return hess[..., 0, 0]
    if d == 2:
        cof = np.empty_like(hess)
        cof[..., 0, 0] = hess[..., 1, 1]
        cof[..., 1, 1] = hess[..., 0, 0]
        cof[..., 0, 1] = -hess[..., 1, 0]
        cof[..., 1, 0] = -hess[..., 0, 1]
        return np.einsum("...ij,...ij->...", cof, hess) / 2.0
    return np.linalg.det(hess)


def pl_residual(vs: PatchField, m: int, lam: float = 1.0) -> float:
    """Max-norm of the transformed equation's residual over interior nodes."""
    if m < 1:
        raise PreconditionError("m must be positive")
    return float(np.max(np.abs(pl_residual_field(vs, m, lam))))


def phi_star(vs: PatchField) -> np.ndarray:
    """Trace of ``v*`` on ``z_n = 0``: the conjugate of the boundary graph."""
    return vs.values[0].copy()
