"""Grids, sampled fields and the discrete calculus shared by all solvers.

Two kinds of fields live here:

* :class:`GridFunction` -- a scalar on a fitted elliptical-polar mesh over a
  disc or ellipse (the Monge-Ampere unknown).
* :class:`StripField` -- a scalar on the periodic strip
  ``[0, L) x [0, 1]`` (the Grushin-model unknown and its data).

Derivatives on the strip are spectral in the periodic direction and
second-order finite differences in the vertical direction.  This hybrid is the
one definition of ``H^s`` and of the weighted norms used by every estimate.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from numpy.polynomial import chebyshev as cheb

from degma.errors import ConfigurationError, PreconditionError, UnsupportedOrderError

MAX_VERTICAL_ORDER = 4
MAX_SOBOLEV_ORDER = 6


# ---------------------------------------------------------------------------
# Domains and the polar mesh
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Domain2D:
    """A disc or an axis-aligned ellipse centred at the origin.

    The boundary is parametrised by ``theta -> (a cos theta, b sin theta)``.
    A disc is the special case ``a == b``.
    """

    kind: str = "disc"
    a: float = 1.0
    b: float = 1.0

    def __post_init__(self):
        if self.kind not in ("disc", "ellipse"):
            raise ConfigurationError(f"unknown domain kind {self.kind!r}")
        if not (self.a > 0 and self.b > 0) or not (math.isfinite(self.a) and math.isfinite(self.b)):
            raise ConfigurationError("semi-axes must be positive and finite")
        if self.kind == "disc" and self.a != self.b:
            raise ConfigurationError("a disc needs a == b")

    @classmethod
    def disc(cls, radius: float = 1.0) -> Domain2D:
        return cls("disc", radius, radius)

    @classmethod
    def ellipse(cls, a: float, b: float) -> Domain2D:
        return cls("disc" if a == b else "ellipse", a, b)

    @property
    def area_scale(self) -> float:
        """Determinant of the map from the unit disc onto this domain."""
        return self.a * self.b

    def boundary_point(self, theta: float) -> np.ndarray:
        return np.array([self.a * math.cos(theta), self.b * math.sin(theta)])

    def tangent(self, theta: float) -> np.ndarray:
        t = np.array([-self.a * math.sin(theta), self.b * math.cos(theta)])
        return t / np.linalg.norm(t)

    def inward_normal(self, theta: float) -> np.ndarray:
        n = -np.array([self.b * math.cos(theta), self.a * math.sin(theta)])
        return n / np.linalg.norm(n)

    def curvature(self, theta) -> np.ndarray:
        s, c = np.sin(theta), np.cos(theta)
        return self.a * self.b / (self.a**2 * s**2 + self.b**2 * c**2) ** 1.5

    def to_reference(self, x, y):
        """Map physical points to the unit disc."""
        return np.asarray(x) / self.a, np.asarray(y) / self.b

    def to_dict(self) -> dict:
        return {"kind": self.kind, "a": self.a, "b": self.b}


def polar_radii(n_r: int) -> np.ndarray:
    """Radial nodes of the reference mesh, ``r_i = (i + 1/2) h`` with ``r_{n_r-1} = 1``.

    The half-cell shift keeps the origin off the mesh; the neighbour of the
    innermost ring across the origin is the same ring rotated by ``pi``.
    """
    h = 1.0 / (n_r - 0.5)
    return (np.arange(n_r) + 0.5) * h


def polar_angles(n_theta: int) -> np.ndarray:
    return 2.0 * np.pi * np.arange(n_theta) / n_theta


@dataclass
class GridFunction:
    """Scalar field on the fitted elliptical-polar mesh of ``domain``.

    ``values[i, j]`` lives at the physical point
    ``(a r_i cos theta_j, b r_i sin theta_j)``; row ``n_r - 1`` is the boundary.
    """

    domain: Domain2D
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ConfigurationError("GridFunction values must be 2-D")
        n_r, n_t = self.values.shape
        if n_r < 8 or n_t < 8 or n_t % 2:
            raise ConfigurationError(f"mesh {n_r}x{n_t} too small or odd angular count")
        if not np.all(np.isfinite(self.values)):
            raise ConfigurationError("GridFunction values must be finite")

    @property
    def n_r(self) -> int:
        return self.values.shape[0]

    @property
    def n_theta(self) -> int:
        return self.values.shape[1]

    @property
    def h(self) -> float:
        """Radial spacing on the reference (unit) disc."""
        return 1.0 / (self.n_r - 0.5)

    @property
    def radii(self) -> np.ndarray:
        return polar_radii(self.n_r)

    @property
    def angles(self) -> np.ndarray:
        return polar_angles(self.n_theta)

    def coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        r = self.radii[:, None]
        t = self.angles[None, :]
        return self.domain.a * r * np.cos(t), self.domain.b * r * np.sin(t)

    def center_value(self) -> float:
        """Value at the origin from the two innermost ring averages.

        Ring averages of a smooth field are even in ``r``, so the quadratic
        extrapolation ``(9 m_0 - m_1) / 8`` is fourth-order accurate.
        """
        m0 = self.values[0].mean()
        m1 = self.values[1].mean()
        return (9.0 * m0 - m1) / 8.0

    def copy(self, values=None) -> GridFunction:
        return GridFunction(self.domain, self.values.copy() if values is None else values)


def paraboloid(domain: Domain2D, n_r: int, n_theta: int, scale: float = 1.0) -> GridFunction:
    """``scale * (|X|^2 - 1) / 2`` in reference coordinates, zero on the boundary."""
    r = polar_radii(n_r)
    vals = np.repeat((scale * 0.5 * (r**2 - 1.0))[:, None], n_theta, axis=1)
    vals[-1] = 0.0
    return GridFunction(domain, vals)


# ---------------------------------------------------------------------------
# Strip fields
# ---------------------------------------------------------------------------


def _check_modes(m: int):
    if m < 2 or m & (m - 1):
        raise ConfigurationError(f"horizontal sample count {m} is not a power of two")


@dataclass
class StripField:
    """Samples on ``[0, period) x [0, 1]``: ``values[j, i]`` at ``(x1_i, xn_j)``."""

    values: np.ndarray
    period: float = 2.0 * np.pi

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[0] < 3:
            raise ConfigurationError("StripField needs a (K+1) x M array with K >= 2")
        _check_modes(self.values.shape[1])
        if not np.all(np.isfinite(self.values)):
            raise ConfigurationError("StripField values must be finite")
        if not self.period > 0:
            raise ConfigurationError("period must be positive")

    @property
    def modes(self) -> int:
        return self.values.shape[1]

    @property
    def vertical(self) -> int:
        """Number of vertical intervals K."""
        return self.values.shape[0] - 1

    @property
    def x1(self) -> np.ndarray:
        return self.period * np.arange(self.modes) / self.modes

    @property
    def xn(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.vertical + 1)

    @property
    def hn(self) -> float:
        return 1.0 / self.vertical

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x1, self.xn)

    @classmethod
    def from_function(cls, func, modes: int, vertical: int, period: float = 2.0 * np.pi) -> StripField:
        _check_modes(modes)
        x1 = period * np.arange(modes) / modes
        xn = np.linspace(0.0, 1.0, vertical + 1)
        X1, XN = np.meshgrid(x1, xn)
        return cls(np.broadcast_to(func(X1, XN), X1.shape).astype(float), period)

    def __add__(self, other: StripField) -> StripField:
        return StripField(self.values + other.values, self.period)

    def __mul__(self, c: float) -> StripField:
        return StripField(self.values * c, self.period)

    __rmul__ = __mul__


@dataclass
class BoundaryTrace:
    """Samples of a function of ``x'`` on the periodic horizontal line."""

    values: np.ndarray
    period: float = 2.0 * np.pi

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1:
            raise ConfigurationError("BoundaryTrace values must be 1-D")
        _check_modes(self.values.size)
        if not np.all(np.isfinite(self.values)):
            raise ConfigurationError("BoundaryTrace values must be finite")

    @property
    def modes(self) -> int:
        return self.values.size

    @property
    def x1(self) -> np.ndarray:
        return self.period * np.arange(self.modes) / self.modes

    @classmethod
    def from_function(cls, func, modes: int, period: float = 2.0 * np.pi) -> BoundaryTrace:
        _check_modes(modes)
        x1 = period * np.arange(modes) / modes
        return cls(np.broadcast_to(func(x1), x1.shape).astype(float), period)


@dataclass
class SpectralStripField:
    """Per-frequency coefficient columns; ``coeffs[j, l]`` pairs with ``wavenumbers[l]``.

    Coefficients are normalised so that ``values = sum_l coeffs[:, l] exp(i xi_l x1)``;
    a constant field 1 has a single coefficient 1 at ``xi = 0``.
    """

    coeffs: np.ndarray
    period: float = 2.0 * np.pi

    @property
    def modes(self) -> int:
        return self.coeffs.shape[-1]

    @property
    def indices(self) -> np.ndarray:
        return np.rint(np.fft.fftfreq(self.modes, 1.0 / self.modes)).astype(int)

    @property
    def wavenumbers(self) -> np.ndarray:
        return 2.0 * np.pi / self.period * self.indices

    def coefficient(self, index: int) -> np.ndarray:
        """Column for integer frequency ``index`` in ``-M/2 .. M/2-1``."""
        return self.coeffs[..., index % self.modes]


def wavenumbers(modes: int, period: float) -> np.ndarray:
    """Angular wavenumbers in numpy FFT order."""
    return 2.0 * np.pi / period * np.fft.fftfreq(modes, 1.0 / modes)


def dft_horizontal(f: StripField | BoundaryTrace) -> SpectralStripField:
    vals = f.values
    _check_modes(vals.shape[-1])
    return SpectralStripField(np.fft.fft(vals, axis=-1) / vals.shape[-1], f.period)


def idft_horizontal(s: SpectralStripField) -> StripField | BoundaryTrace:
    vals = np.fft.ifft(s.coeffs * s.modes, axis=-1).real
    if vals.ndim == 1:
        return BoundaryTrace(vals, s.period)
    return StripField(vals, s.period)


def spectral_derivative(values: np.ndarray, order: int, period: float) -> np.ndarray:
    """``d^order/dx1^order`` along the last axis by the real FFT."""
    if order == 0:
        return np.array(values, dtype=float, copy=True)
    m = values.shape[-1]
    xi = 2.0 * np.pi / period * np.arange(m // 2 + 1)
    symbol = (1j * xi) ** order
    if order % 2:
        symbol[-1] = 0.0  # odd derivatives of the Nyquist mode are not real
    return np.fft.irfft(np.fft.rfft(values, axis=-1) * symbol, n=m, axis=-1)


# ---------------------------------------------------------------------------
# Vertical finite differences
# ---------------------------------------------------------------------------


def fd_weights(x0: float, nodes, order: int) -> np.ndarray:
    """Finite-difference weights for ``d^order/dx^order`` at ``x0`` (Fornberg's recursion)."""
    nodes = np.asarray(nodes, dtype=float)
    n = nodes.size
    c = np.zeros((n, order + 1))
    c1 = 1.0
    c4 = nodes[0] - x0
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, order)
        c2 = 1.0
        c5 = c4
        c4 = nodes[i] - x0
        for j in range(i):
            c3 = nodes[i] - nodes[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, order]


@functools.lru_cache(maxsize=64)
def vertical_fd_matrix(intervals: int, order: int) -> sp.csr_matrix:
    """Second-order difference matrix for ``d^order/dxn^order`` on ``K + 1`` uniform nodes of [0, 1].

    Interior rows use the centred stencil; rows where it does not fit use the
    nearest in-range window of ``order + 2`` nodes.
    """
    if order > MAX_VERTICAL_ORDER:
        raise UnsupportedOrderError(f"vertical order {order} > {MAX_VERTICAL_ORDER}")
    n = intervals + 1
    if order == 0:
        return sp.identity(n, format="csr")
    half = (order + 1) // 2
    wide = order + 2
    if n < wide:
        raise ConfigurationError(f"{n} vertical nodes cannot carry order {order}")
    h = 1.0 / intervals
    rows, cols, data = [], [], []
    cache = {}
    for i in range(n):
        if half <= i <= n - 1 - half:
            lo, hi = i - half, i + half
        else:
            lo = min(max(i - wide // 2, 0), n - wide)
            hi = lo + wide - 1
        key = (i - lo, hi - lo)
        if key not in cache:
            cache[key] = fd_weights(float(i - lo), np.arange(hi - lo + 1), order) / h**order
        w = cache[key]
        rows.extend([i] * w.size)
        cols.extend(range(lo, hi + 1))
        data.extend(w)
    return sp.csr_matrix((data, (rows, cols)), shape=(n, n))


def vertical_derivative(values: np.ndarray, order: int) -> np.ndarray:
    if order == 0:
        return np.array(values, dtype=float, copy=True)
    return vertical_fd_matrix(values.shape[0] - 1, order) @ values


def chebyshev_vertical_derivative(values: np.ndarray, order: int, degree: int | None = None) -> np.ndarray:
    """Vertical derivative from a least-squares Chebyshev fit of each column.

    Used where derivatives above the finite-difference limit are needed.  The
    default degree ``min(24, 2 sqrt(K+1))`` keeps the fit on uniform nodes
    well conditioned.
    """
    n = values.shape[0]
    if degree is None:
        degree = int(min(24, 2 * math.sqrt(n), n - 1))
    xn = np.linspace(0.0, 1.0, n)
    t = 2.0 * xn - 1.0
    coef = cheb.chebfit(t, values, degree)
    # coefficients at the rounding floor would be amplified by high derivatives
    floor = 1e-13 * np.max(np.abs(coef), axis=0, keepdims=coef.ndim > 1)
    coef = np.where(np.abs(coef) < floor, 0.0, coef)
    if order:
        coef = cheb.chebder(coef, order, scl=2.0)
    return cheb.chebval(t, coef).reshape(values.shape) if coef.ndim == 1 else cheb.chebval(t, coef).T


def _alpha(alpha) -> tuple[int, int]:
    a = tuple(int(v) for v in alpha)
    if len(a) != 2 or min(a) < 0:
        raise ConfigurationError(f"multi-index {alpha!r} must be two nonnegative integers (n = 2)")
    return a


def differentiate(f: StripField, alpha) -> StripField:
    """``d_1^{alpha_1} d_n^{alpha_n} f``: spectral horizontally, finite differences vertically."""
    a1, an = _alpha(alpha)
    if an > MAX_VERTICAL_ORDER:
        raise UnsupportedOrderError(f"vertical order {an} > {MAX_VERTICAL_ORDER}")
    out = spectral_derivative(f.values, a1, f.period)
    out = vertical_derivative(out, an)
    return StripField(out, f.period)


# ---------------------------------------------------------------------------
# Norms
# ---------------------------------------------------------------------------


@functools.lru_cache(maxsize=64)
def vertical_weights(intervals: int) -> np.ndarray:
    """Trapezoid weights on ``K + 1`` uniform nodes of [0, 1]."""
    w = np.full(intervals + 1, 1.0 / intervals)
    w[0] = w[-1] = 0.5 / intervals
    w.setflags(write=False)
    return w


def l2_strip(values: np.ndarray, period: float) -> float:
    """L^2 norm over the strip: rectangle rule horizontally, trapezoid vertically."""
    w = vertical_weights(values.shape[0] - 1)
    dx = period / values.shape[1]
    return math.sqrt(float(w @ np.sum(values * values, axis=1)) * dx)


def trace_sobolev_norm(values: np.ndarray, s: float, period: float) -> float:
    """``|| (1 + |xi|^2)^{s/2} g_hat ||``, scaled so that ``||c|| = |c| sqrt(L)``."""
    m = values.shape[-1]
    ghat = np.fft.fft(values) / m
    xi = wavenumbers(m, period)
    return math.sqrt(period * float(np.sum((1.0 + xi**2) ** s * np.abs(ghat) ** 2)))


def sobolev_norm(f: StripField | BoundaryTrace, s: int) -> float:
    """Discrete ``H^s`` norm.

    Traces use the Fourier multiplier ``(1 + |xi|^2)^{s/2}``; strip fields use
    the sum of the ``L^2`` norms of every ``d^alpha f`` with ``|alpha| <= s``.
    """
    if s < 0 or s > MAX_SOBOLEV_ORDER:
        raise PreconditionError(f"Sobolev order {s} outside 0..{MAX_SOBOLEV_ORDER}")
    if isinstance(f, BoundaryTrace):
        return trace_sobolev_norm(f.values, s, f.period)
    total = 0.0
    for order in range(s + 1):
        for an in range(order + 1):
            total += l2_strip(differentiate(f, (order - an, an)).values, f.period)
    return total


# ---------------------------------------------------------------------------
# Random band-limited data
# ---------------------------------------------------------------------------


@dataclass
class BandLimitedField:
    """A smooth random field defined independently of any grid.

    ``f(x1, xn) = sum_{k<=kmax, d<=deg} (a_kd cos k x1 + b_kd sin k x1) T_d(2 xn - 1)``
    with amplitudes decaying like ``(1 + k)^-2``.  Sampling the same object on
    finer grids gives a resolution study of one fixed function.
    """

    cos_coef: np.ndarray
    sin_coef: np.ndarray
    period: float = 2.0 * np.pi
    trace_cos: np.ndarray = field(default_factory=lambda: np.zeros(1))
    trace_sin: np.ndarray = field(default_factory=lambda: np.zeros(1))

    @classmethod
    def random(cls, rng: np.random.Generator, kmax: int, degree: int = 4,
               period: float = 2.0 * np.pi) -> BandLimitedField:
        k = np.arange(kmax + 1)
        decay = (1.0 + k) ** -2.0
        vdecay = 2.0 ** -np.arange(degree + 1)
        shape = (kmax + 1, degree + 1)
        a = rng.standard_normal(shape) * decay[:, None] * vdecay[None, :]
        b = rng.standard_normal(shape) * decay[:, None] * vdecay[None, :]
        b[0] = 0.0
        ta = rng.standard_normal(kmax + 1) * decay
        tb = rng.standard_normal(kmax + 1) * decay
        tb[0] = 0.0
        return cls(a, b, period, ta, tb)

    @property
    def kmax(self) -> int:
        return self.cos_coef.shape[0] - 1

    def _horizontal(self, modes: int):
        x1 = self.period * np.arange(modes) / modes
        kx = np.outer(2.0 * np.pi / self.period * np.arange(self.kmax + 1), x1)
        return np.cos(kx), np.sin(kx)

    def sample(self, modes: int, vertical: int) -> StripField:
        if self.kmax >= modes // 4:
            raise ConfigurationError(f"band limit {self.kmax} not below M/4 = {modes // 4}")
        c, s = self._horizontal(modes)
        t = 2.0 * np.linspace(0.0, 1.0, vertical + 1) - 1.0
        tv = cheb.chebvander(t, self.cos_coef.shape[1] - 1)  # (K+1, deg+1)
        vals = tv @ self.cos_coef.T @ c + tv @ self.sin_coef.T @ s
        return StripField(vals, self.period)

    def trace(self, modes: int) -> BoundaryTrace:
        c, s = self._horizontal(modes)
        return BoundaryTrace(self.trace_cos @ c + self.trace_sin @ s, self.period)
