"""The degenerate linear model ``u_nn + x_n^m u_11 = f`` on the periodic strip.

Each horizontal Fourier mode decouples into a two-point problem

    w'' - xi^2 x^m w = f_hat,   w(0) = g_hat,   w(1) = 0,

which is discretised by the three-point Laplacian and solved by one
vectorised Thomas sweep over all modes at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from degma.errors import (
    ConfigurationError,
    DomainError,
    PreconditionError,
    SingularSystemError,
    UnsupportedOrderError,
)
from degma.grid import (
    MAX_VERTICAL_ORDER,
    BandLimitedField,
    BoundaryTrace,
    StripField,
    chebyshev_vertical_derivative,
    l2_strip,
    spectral_derivative,
    trace_sobolev_norm,
    vertical_derivative,
)

MAX_NORM_ORDER = 4


@dataclass
class GrushinProblem:
    """Data for ``u_nn + x_n^m u_11 = f``, ``u(., 0) = g``, ``u(., 1) = 0``."""

    m: int
    f: StripField
    g: BoundaryTrace

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise ConfigurationError(f"degeneracy exponent m = {self.m} must be a positive integer")
        self.m = int(self.m)
        if self.f.modes != self.g.modes or not math.isclose(self.f.period, self.g.period):
            raise ConfigurationError("f and g must share the horizontal grid")

    def combine(self, a: float, other: GrushinProblem, b: float) -> GrushinProblem:
        """The problem with data ``a * (f, g) + b * (other.f, other.g)``."""
        if other.m != self.m:
            raise ConfigurationError("cannot combine problems with different m")
        return GrushinProblem(
            self.m,
            StripField(a * self.f.values + b * other.f.values, self.f.period),
            BoundaryTrace(a * self.g.values + b * other.g.values, self.g.period),
        )


@dataclass
class WeightedNormReport:
    """Components of the weighted norm of order ``k`` with weight exponent ``m``."""

    k: int
    m: int
    second_vertical: float
    weighted_top: float
    first_vertical: float
    weighted_horizontal: float
    trace: float
    base: float
    total: float = field(init=False)

    def __post_init__(self):
        self.total = float(sum(self.components()))

    def components(self) -> tuple[float, ...]:
        return (
            self.second_vertical,
            self.weighted_top,
            self.first_vertical,
            self.weighted_horizontal,
            self.trace,
            self.base,
        )

    def as_dict(self) -> dict:
        names = ("second_vertical", "weighted_top", "first_vertical",
                 "weighted_horizontal", "trace", "base")
        return {"k": self.k, "m": self.m, **dict(zip(names, self.components())), "total": self.total}


# ---------------------------------------------------------------------------
# Solver
# ---------------------------------------------------------------------------


def thomas(lower: np.ndarray, diag: np.ndarray, upper: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve tridiagonal systems along axis 0, vectorised over trailing axes.

    ``lower[j]`` multiplies ``x[j-1]`` and ``upper[j]`` multiplies ``x[j+1]``
    in row ``j``.  No pivoting: the caller guarantees diagonal dominance and a
    vanishing pivot raises :class:`SingularSystemError`.
    """
    n = diag.shape[0]
    cp = np.empty(diag.shape, dtype=float)
    dp = np.empty(rhs.shape, dtype=rhs.dtype)
    piv = diag[0]
    if np.any(np.abs(piv) < 1e-300):
        raise SingularSystemError("zero pivot in row 0")
    cp[0] = upper[0] / piv
    dp[0] = rhs[0] / piv
    for j in range(1, n):
        piv = diag[j] - lower[j] * cp[j - 1]
        if np.any(np.abs(piv) <= 1e-14 * np.abs(diag[j])):
            raise SingularSystemError(f"pivot degenerated in row {j}")
        cp[j] = upper[j] / piv if j < n - 1 else 0.0
        dp[j] = (rhs[j] - lower[j] * dp[j - 1]) / piv
    x = np.empty_like(dp)
    x[-1] = dp[-1]
    for j in range(n - 2, -1, -1):
        x[j] = dp[j] - cp[j] * x[j + 1]
    return x


def solve_grushin(p: GrushinProblem) -> StripField:
    """Solve the model problem mode by mode.

    Returns
    -------
    StripField
        The discrete solution, with ``u(., 0) = g`` and ``u(., 1) = 0`` exactly.
    """
    f = p.f
    k_int, modes = f.vertical, f.modes
    h = f.hn
    xn = f.xn
    xi2 = (2.0 * np.pi / f.period * np.arange(modes // 2 + 1)) ** 2
    fhat = np.fft.rfft(f.values, axis=1)
    ghat = np.fft.rfft(p.g.values)

    interior = xn[1:-1] ** p.m
    n_int = k_int - 1
    diag = -2.0 / h**2 - interior[:, None] * xi2[None, :]
    off = np.full(n_int, 1.0 / h**2)
    rhs = fhat[1:-1].copy()
    rhs[0] -= ghat / h**2
    w = thomas(off[:, None], diag, off[:, None], rhs)

    what = np.empty_like(fhat)
    what[0] = ghat
    what[1:-1] = w
    what[-1] = 0.0
    return StripField(np.fft.irfft(what, n=modes, axis=1), f.period)


def grushin_residual(u: StripField, p: GrushinProblem) -> np.ndarray:
    """Interior residual of the discrete 2-D operator, rows ``1 .. K-1``."""
    h = u.hn
    v = u.values
    unn = (v[:-2] - 2.0 * v[1:-1] + v[2:]) / h**2
    u11 = spectral_derivative(v[1:-1], 2, u.period)
    return unn + (u.xn[1:-1] ** p.m)[:, None] * u11 - p.f.values[1:-1]


# ---------------------------------------------------------------------------
# Weighted norms
# ---------------------------------------------------------------------------


class _Derivatives:
    """Memoised ``d_1^a d_n^b u`` on the strip.

    Vertical derivatives come from finite differences (orders above the
    stencil limit are composed from two stencils) or, with
    ``vertical="chebyshev"``, from a Chebyshev fit of each column.
    """

    def __init__(self, u: StripField, vertical: str = "fd", degree: int | None = None):
        if vertical not in ("fd", "chebyshev"):
            raise ConfigurationError(f"unknown vertical differentiation {vertical!r}")
        self.u = u
        self.vertical = vertical
        self.degree = degree
        self._vert: dict[int, np.ndarray] = {0: u.values}
        self._cache: dict[tuple[int, int], np.ndarray] = {}

    def _vertical(self, b: int) -> np.ndarray:
        if b not in self._vert:
            if self.vertical == "chebyshev":
                self._vert[b] = chebyshev_vertical_derivative(self.u.values, b, self.degree)
            elif b <= MAX_VERTICAL_ORDER:
                self._vert[b] = vertical_derivative(self.u.values, b)
            elif b <= 2 * MAX_VERTICAL_ORDER:
                self._vert[b] = vertical_derivative(self._vertical(MAX_VERTICAL_ORDER), b - MAX_VERTICAL_ORDER)
            else:
                raise UnsupportedOrderError(f"vertical order {b} not representable")
        return self._vert[b]

    def __call__(self, a: int, b: int) -> np.ndarray:
        key = (a, b)
        if key not in self._cache:
            self._cache[key] = spectral_derivative(self._vertical(b), a, self.u.period)
        return self._cache[key]


def _norm(values: np.ndarray, period: float) -> float:
    return l2_strip(values, period)


def weighted_components(d, xn: np.ndarray, l2, trace_norm, k: int, m: int) -> WeightedNormReport:
    """Assemble the six weighted-norm terms from a derivative provider.

    Parameters
    ----------
    d : callable
        ``d(a, b)`` returns ``d_1^a d_n^b u`` sampled with rows along ``xn``.
    l2 : callable
        L^2 norm of a sampled field.
    trace_norm : callable
        ``trace_norm(d, k)`` returns the ``H^k`` norm of ``d_n u(., 0)``.
    """
    w_m = xn[:, None] ** m
    w_m1 = xn[:, None] ** (m - 1)
    second = sum(l2(d(k - b, b + 2)) for b in range(k + 1))
    top = sum(l2(w_m * d(k + 2 - b, b)) for b in range(2))
    first = sum(l2(d(k - b, b + 1)) for b in range(k + 1))
    horiz = l2(w_m1 * d(k + 1, 0))
    trace = trace_norm(d, k)
    base = sum(l2(d(s - b, b)) for s in range(k + 1) for b in range(s + 1))
    return WeightedNormReport(k, m, second, top, first, horiz, trace, base)


def weighted_norm(u: StripField, k: int, m: int, vertical: str = "fd",
                  degree: int | None = None) -> WeightedNormReport:
    """The six-term weighted norm of order ``k`` (one horizontal variable).

    With multi-indices ``alpha = (a, b)`` (horizontal, vertical) the terms are

    * ``sum_{|alpha|=k} ||d_n^2 d^alpha u||``
    * ``sum_{|alpha|=k+2, b<=1} ||x_n^m d^alpha u||``
    * ``sum_{|alpha|=k} ||d_n d^alpha u||``
    * ``||x_n^{m-1} d_1^{k+1} u||``
    * ``||d_n u(., 0)||_{H^k}`` (Fourier multiplier norm)
    * ``||u||_{H^k} = sum_{|alpha|<=k} ||d^alpha u||``

    Parameters
    ----------
    vertical : {"fd", "chebyshev"}
        Finite differences allow ``k <= 4``; Chebyshev fits allow any ``k``.
    """
    _check_km(k, m)
    if vertical == "fd" and k > MAX_NORM_ORDER:
        raise UnsupportedOrderError(f"k = {k} exceeds the finite-difference limit {MAX_NORM_ORDER}")
    return strip_norm(_Derivatives(u, vertical, degree), u.xn, u.period, k, m)


def strip_norm(d, xn: np.ndarray, period: float, k: int, m: int) -> WeightedNormReport:
    """Weighted norm on the periodic strip for any derivative provider ``d(a, b)``."""
    return weighted_components(
        d, xn,
        lambda v: l2_strip(v, period),
        lambda dd, kk: trace_sobolev_norm(dd(0, 1)[0], kk, period),
        k, m,
    )


def _check_km(k, m):
    if k < 0 or int(k) != k:
        raise PreconditionError("k must be a nonnegative integer")
    if m < 1:
        raise PreconditionError("m must be positive")


def _data_norm(p: GrushinProblem, k: int) -> float:
    d = _Derivatives(p.f)
    fk = sum(_norm(d(s - b, b), p.f.period) for s in range(k + 1) for b in range(s + 1))
    return fk + trace_sobolev_norm(p.g.values, k + 1, p.g.period)


def estimate_ratio(p: GrushinProblem, k: int) -> float:
    """``||u||_W / (||f||_{H^k} + ||g||_{H^{k+1}})`` for the discrete solution ``u``."""
    denom = _data_norm(p, k)
    if denom == 0.0:
        raise DomainError("both data f and g vanish; the ratio is undefined")
    u = solve_grushin(p)
    return weighted_norm(u, k, p.m).total / denom


# ---------------------------------------------------------------------------
# Random ensembles
# ---------------------------------------------------------------------------


def random_problems(m: int, samples: int, seed: int, kmax: int = 7, degree: int = 4,
                    period: float = 2.0 * np.pi) -> list[BandLimitedField]:
    """Grid-independent random data; sample each at any resolution with :func:`problem_at`."""
    rng = np.random.default_rng(seed)
    return [BandLimitedField.random(rng, kmax, degree, period) for _ in range(samples)]


def problem_at(data: BandLimitedField, m: int, modes: int, vertical: int) -> GrushinProblem:
    return GrushinProblem(m, data.sample(modes, vertical), data.trace(modes))


def ensemble_ratios(m: int, k: int, samples: int, seed: int, modes: int, vertical: int,
                    kmax: int = 7) -> np.ndarray:
    """Estimate ratios of a seeded random ensemble at one resolution."""
    fields = random_problems(m, samples, seed, kmax=kmax)
    return np.array([estimate_ratio(problem_at(d, m, modes, vertical), k) for d in fields])


def algebra_constant(k: int, samples: int, seed: int, modes: int = 32, vertical: int = 64,
                     m: int = 1, kmax: int = 3, n: int = 2) -> float:
    """Largest observed ``||uv||_W / (||u||_W ||v||_W)`` over random smooth pairs.

    Vertical derivatives up to order ``k + 2`` come from Chebyshev fits, which
    are exact for the polynomial vertical profiles of the ensemble and the
    products of pairs of them.
    """
    if k < n + 3:
        raise PreconditionError(f"the product estimate needs k >= {n + 3}, got {k}")
    if samples < 1:
        raise PreconditionError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    # product of two degree-4 profiles has degree 8
    deg = 8
    best = 0.0
    for _ in range(samples):
        a = BandLimitedField.random(rng, kmax, 4).sample(modes, vertical)
        b = BandLimitedField.random(rng, kmax, 4).sample(modes, vertical)
        best = max(best, product_ratio(a, b, k, m, deg))
    return best


def product_ratio(u: StripField, v: StripField, k: int, m: int, degree: int | None = None) -> float:
    nu = weighted_norm(u, k, m, "chebyshev", degree).total
    nv = weighted_norm(v, k, m, "chebyshev", degree).total
    if nu == 0.0 or nv == 0.0:
        raise DomainError("a factor has zero weighted norm")
    uv = StripField(u.values * v.values, u.period)
    return weighted_norm(uv, k, m, "chebyshev", degree).total / (nu * nv)
