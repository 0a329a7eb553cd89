"""Finite-difference solvers for ``det D^2 u = lam (-u)^q`` on discs and ellipses.

Every domain is reduced to the unit disc: for ``x = (a X, b Y)``,
``det D^2_X U = (ab)^2 det D^2_x u``, so an ellipse problem is the disc
problem with ``lam' = lam (ab)^2``.  On the disc the Hessian determinant is
assembled from second-order polar differences,

    det D^2 u = u_rr (u_r / r + u_tt / r^2) - (u_rt / r - u_t / r^2)^2,

on the half-shifted mesh of :func:`degma.grid.polar_radii`.  The innermost
ring borrows its inward neighbour from the opposite side of the origin.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from degma.errors import (
    CollapseError,
    ConfigurationError,
    ConvergenceError,
    ConvexityError,
    DomainError,
    NegativityError,
    PreconditionError,
    SingularSystemError,
    StiffnessError,
)
from degma.grid import Domain2D, GridFunction, paraboloid, polar_radii

ARMIJO = 1e-4
MAX_BACKTRACK = 30
# an iterate smaller than this fraction of the start has collapsed onto u = 0
COLLAPSE_RATIO = 1e-3


@dataclass(frozen=True)
class NewtonConfig:
    tol: float = 1e-10
    max_iter: int = 60
    backtrack: float = 0.5
    armijo: float = ARMIJO

    def __post_init__(self):
        if not self.tol > 0:
            raise ConfigurationError("tol must be positive")
        if self.max_iter < 1:
            raise ConfigurationError("max_iter must be >= 1")
        if not 0 < self.backtrack < 1:
            raise ConfigurationError("backtrack factor must lie in (0, 1)")


@dataclass(frozen=True)
class FlowConfig:
    dt: float = 1e-4
    steps: int = 10000
    residual_stop: float = 1e-6
    max_halvings: int = 20

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigurationError("dt must be positive")
        if self.steps < 1:
            raise ConfigurationError("steps must be >= 1")


@dataclass
class MASolution:
    u: GridFunction
    q: int
    lam: float
    residual: float
    iterations: list[tuple[int, float, float]] = field(default_factory=list)

    def metadata(self) -> dict:
        return {
            "domain": self.u.domain.to_dict(),
            "q": self.q,
            "lambda": self.lam,
            "residual": self.residual,
            "iterations": len(self.iterations),
        }


# ---------------------------------------------------------------------------
# Discrete operators on the reference disc
# ---------------------------------------------------------------------------


class PolarStencil:
    """Difference operators on the interior rings ``0 .. n_r - 2`` of the unit disc.

    Unknowns are flattened ring-major; the boundary ring is held at zero and
    drops out of every linear operator.
    """

    def __init__(self, n_r: int, n_theta: int):
        if n_r < 8 or n_theta < 8 or n_theta % 2:
            raise ConfigurationError(f"mesh {n_r}x{n_theta} too small or odd angular count")
        self.n_r = n_r
        self.n_theta = n_theta
        self.h = 1.0 / (n_r - 0.5)
        self.k = 2.0 * np.pi / n_theta
        self.r = polar_radii(n_r)
        self.ni = n_r - 1
        self.size = self.ni * n_theta
        self._build()

    def _idx(self, i, j):
        return i * self.n_theta + j % self.n_theta

    def _build(self):
        nt, ni, h, k = self.n_theta, self.ni, self.h, self.k
        I, J = np.meshgrid(np.arange(ni), np.arange(nt), indexing="ij")
        I = I.ravel()
        J = J.ravel()
        rows = np.arange(self.size)

        def neighbour(di, dj):
            """Column index of (i + di, j + dj) or -1 on the boundary ring."""
            ii = I + di
            jj = J + dj
            inner = ii < 0
            jj = np.where(inner, jj + nt // 2, jj)
            ii = np.where(inner, -ii - 1, ii)
            col = ii * nt + jj % nt
            return np.where(ii >= ni, -1, col)

        def op(entries):
            r_, c_, d_ = [], [], []
            for (di, dj), w in entries:
                col = neighbour(di, dj)
                keep = col >= 0
                r_.append(rows[keep])
                c_.append(col[keep])
                d_.append(np.broadcast_to(w, rows.shape)[keep])
            return sp.csr_matrix(
                (np.concatenate(d_), (np.concatenate(r_), np.concatenate(c_))),
                shape=(self.size, self.size),
            )

        self.d_r = op([((1, 0), 0.5 / h), ((-1, 0), -0.5 / h)])
        self.d_rr = op([((1, 0), 1 / h**2), ((0, 0), -2 / h**2), ((-1, 0), 1 / h**2)])
        self.d_t = op([((0, 1), 0.5 / k), ((0, -1), -0.5 / k)])
        self.d_tt = op([((0, 1), 1 / k**2), ((0, 0), -2 / k**2), ((0, -1), 1 / k**2)])
        w = 0.25 / (h * k)
        self.d_rt = op([((1, 1), w), ((1, -1), -w), ((-1, 1), -w), ((-1, -1), w)])
        rr = np.repeat(self.r[:ni], nt)
        self.rflat = rr
        inv_r = sp.diags(1.0 / rr)
        inv_r2 = sp.diags(1.0 / rr**2)
        self.d_a = (inv_r @ self.d_r + inv_r2 @ self.d_tt).tocsr()
        self.d_e = (inv_r @ self.d_rt - inv_r2 @ self.d_t).tocsr()

    def parts(self, x: np.ndarray):
        """``(B, A, E)`` with ``det = B A - E^2``: radial, angular and mixed entries."""
        return self.d_rr @ x, self.d_a @ x, self.d_e @ x

    def det(self, x: np.ndarray) -> np.ndarray:
        b, a, e = self.parts(x)
        return b * a - e * e

    def det_jacobian(self, x: np.ndarray) -> sp.csr_matrix:
        b, a, e = self.parts(x)
        return (sp.diags(a) @ self.d_rr + sp.diags(b) @ self.d_a - 2.0 * sp.diags(e) @ self.d_e).tocsr()

    def interior(self, values: np.ndarray) -> np.ndarray:
        return np.ascontiguousarray(values[:-1]).ravel()

    def full(self, x: np.ndarray) -> np.ndarray:
        out = np.zeros((self.n_r, self.n_theta))
        out[:-1] = x.reshape(self.ni, self.n_theta)
        return out

    @functools.cached_property
    def weights(self) -> np.ndarray:
        """Area weights on the unit disc for all rings (midpoint cells, half cell at r = 1)."""
        w = self.r * self.h
        w[-1] = 0.5 * self.h
        return np.repeat(w[:, None], self.n_theta, axis=1) * self.k


@functools.lru_cache(maxsize=16)
def stencil(n_r: int, n_theta: int) -> PolarStencil:
    return PolarStencil(n_r, n_theta)


def _check_q(q):
    if int(q) != q or q < 0:
        raise PreconditionError(f"q = {q} must be a nonnegative integer")
    return int(q)


def _power(neg_u: np.ndarray, q: int) -> np.ndarray:
    return np.ones_like(neg_u) if q == 0 else np.maximum(neg_u, 0.0) ** q


def discrete_det(u: GridFunction) -> np.ndarray:
    """Physical ``det D^2 u`` at interior nodes, shape ``(n_r - 1, n_theta)``."""
    st = stencil(u.n_r, u.n_theta)
    d = st.det(st.interior(u.values)) / u.domain.area_scale**2
    return d.reshape(st.ni, st.n_theta)


def residual(u: GridFunction, q: int, lam: float) -> float:
    """Discrete L-infinity norm of ``det D^2 u - lam (-u)^q`` over interior nodes."""
    q = _check_q(q)
    rhs = lam * _power(-u.values[:-1], q)
    return float(np.max(np.abs(discrete_det(u) - rhs)))


def is_discretely_convex(u: GridFunction, slack: float = 0.0) -> bool:
    st = stencil(u.n_r, u.n_theta)
    b, a, e = st.parts(st.interior(u.values))
    return bool(np.all(b >= -slack) and np.all(a >= -slack) and np.all(b * a - e * e >= -slack))


def _convex(st: PolarStencil, x: np.ndarray) -> bool:
    b, a, e = st.parts(x)
    return bool(np.all(b > 0) and np.all(a > 0) and np.all(b * a - e * e > 0))


# ---------------------------------------------------------------------------
# Newton
# ---------------------------------------------------------------------------


def _newton(st: PolarStencil, x: np.ndarray, rhs, rhs_jac, cfg: NewtonConfig,
            scale0: float | None = None):
    """Damped Newton for ``det(x) = rhs(x)`` with Armijo backtracking on the max-norm.

    Returns the converged interior vector, its residual and the trace
    ``[(step, residual, damping), ...]``.
    """
    def resid(y):
        return st.det(y) - rhs(y)

    def done(y, rn, trace):
        if float(np.max(np.abs(y))) < COLLAPSE_RATIO * scale0:
            raise CollapseError(
                f"residual {rn:.3e} reached only because the iterates shrank onto u = 0 "
                f"(max |u| = {np.max(np.abs(y)):.3e})"
            )
        return y, rn, trace

    f = resid(x)
    rn = float(np.max(np.abs(f)))
    trace = [(0, rn, 1.0)]
    # the target is relative to the size of the right-hand side once it exceeds 1
    tol = cfg.tol * max(1.0, float(np.max(np.abs(rhs(x)))))
    scale0 = float(np.max(np.abs(x))) if scale0 is None else scale0
    for it in range(1, cfg.max_iter + 1):
        if rn <= tol:
            return done(x, rn, trace)
        tol = cfg.tol * max(1.0, float(np.max(np.abs(rhs(x)))))
        if rn <= tol:
            return done(x, rn, trace)
        jac = st.det_jacobian(x)
        dj = rhs_jac(x)
        if dj is not None:
            jac = (jac - sp.diags(dj)).tocsc()
        else:
            jac = jac.tocsc()
        try:
            dx = spla.spsolve(jac, -f)
        except RuntimeError as exc:
            raise SingularSystemError(str(exc)) from exc
        if not np.all(np.isfinite(dx)):
            raise SingularSystemError("Newton system is singular")
        alpha = 1.0
        failure = None
        for _ in range(MAX_BACKTRACK):
            y = x + alpha * dx
            if np.any(y >= 0.0):
                failure = NegativityError
            elif not _convex(st, y):
                failure = ConvexityError
            else:
                fy = resid(y)
                ry = float(np.max(np.abs(fy)))
                if ry <= (1.0 - cfg.armijo * alpha) * rn:
                    failure = None
                    break
                failure = ConvergenceError
            alpha *= cfg.backtrack
        else:
            if failure is NegativityError:
                raise NegativityError(f"iterate leaves u < 0 at step {it}")
            if failure is ConvexityError:
                raise ConvexityError(f"discrete convexity lost at step {it}")
            raise ConvergenceError(f"line search failed at step {it} (residual {rn:.3e})")
        x, f, rn = y, fy, ry
        trace.append((it, rn, alpha))
        if float(np.max(np.abs(x))) < 1e-8 * scale0:
            raise CollapseError("iterates collapsed onto the trivial solution u = 0")
    if rn <= tol:
        return done(x, rn, trace)
    if float(np.max(np.abs(x))) < COLLAPSE_RATIO * scale0:
        raise CollapseError(
            f"no convergence in {cfg.max_iter} steps; iterates shrink towards u = 0 "
            f"(max |u| = {np.max(np.abs(x)):.3e})"
        )
    raise ConvergenceError(f"no convergence in {cfg.max_iter} steps (residual {rn:.3e})")


def default_scale(q: int, lam: float) -> float:
    """Scale ``c`` of the initial paraboloid ``c (|X|^2 - 1) / 2`` on the unit disc.

    Chosen so the residual is balanced in the weighted sense
    ``int (-u) (det D^2 u - lam (-u)^q) = 0``, which for the paraboloid gives
    ``c^{2-q} = lam 2^{1-q} / (q + 2)``; exact for ``q = 0``.  For ``q = 2`` the
    balance is independent of ``c`` and ``c = 1`` is used.
    """
    if q == 2:
        return 1.0
    return (lam * 2.0 ** (1 - q) / (q + 2)) ** (1.0 / (2 - q))


def default_initializer(domain: Domain2D, q: int, n_r: int = 64, n_theta: int = 32,
                        lam: float = 1.0) -> GridFunction:
    """The paraboloid ``c (|X|^2 - 1) / 2`` with ``c = default_scale(q, lam)``."""
    return paraboloid(domain, n_r, n_theta, default_scale(_check_q(q), lam * domain.area_scale**2))


def newton_solve(domain: Domain2D, q: int, lam: float, cfg: NewtonConfig | None = None,
                 u0: GridFunction | None = None, n_r: int = 64, n_theta: int = 32) -> MASolution:
    """Solve ``det D^2 u = lam (-u)^q``, ``u = 0`` on the boundary.

    Parameters
    ----------
    u0 : GridFunction, optional
        Initial iterate; its mesh overrides ``n_r``/``n_theta``.  Defaults to
        the paraboloid scaled by :func:`default_scale`.
    """
    cfg = cfg or NewtonConfig()
    q = _check_q(q)
    if not lam > 0:
        raise PreconditionError("lambda must be positive")
    lam_ref = lam * domain.area_scale**2
    if u0 is None:
        u0 = paraboloid(domain, n_r, n_theta, default_scale(q, lam_ref))
    elif u0.domain != domain:
        raise ConfigurationError("initial iterate lives on a different domain")
    st = stencil(u0.n_r, u0.n_theta)
    x0 = st.interior(u0.values)
    if np.any(x0 >= 0):
        raise NegativityError("initial iterate must be negative inside")

    def rhs(y):
        return lam_ref * _power(-y, q)

    def rhs_jac(y):
        if q == 0:
            return None
        return -lam_ref * q * (-y) ** (q - 1)

    tol_ref = cfg.tol * domain.area_scale**2
    x, _, trace = _newton(st, x0, rhs, rhs_jac, _with_tol(cfg, tol_ref))
    u = GridFunction(domain, st.full(x))
    return MASolution(u, q, lam, residual(u, q, lam), trace)


def _with_tol(cfg: NewtonConfig, tol: float) -> NewtonConfig:
    return NewtonConfig(tol, cfg.max_iter, cfg.backtrack, cfg.armijo)


# ---------------------------------------------------------------------------
# Eigenvalue problem (q = n = 2)
# ---------------------------------------------------------------------------


def eigen_solve(domain: Domain2D, n_eq: int = 2, cfg: NewtonConfig | None = None,
                n_r: int = 64, n_theta: int = 32, max_outer: int = 500,
                eig_tol: float = 1e-11) -> MASolution:
    """Normalised inverse iteration for ``det D^2 u = Lam (-u)^2``.

    Each outer step solves ``det D^2 v = (-u_k)^2`` by Newton and sets
    ``Lam = ||v||^-2``, ``u_{k+1} = v / ||v||``.  The iteration stops when both
    the relative change of ``Lam`` and the max-norm change of ``u`` fall below
    ``eig_tol``; the returned ``u`` has ``||u||_inf = 1`` exactly.
    """
    if n_eq != 2:
        raise PreconditionError("only the planar eigenvalue problem is supported")
    cfg = cfg or NewtonConfig()
    st = stencil(n_r, n_theta)
    s2 = domain.area_scale**2
    x = st.interior(paraboloid(domain, n_r, n_theta).values)
    x = x / np.max(np.abs(x))
    v = x.copy()
    lam_prev = None
    best = math.inf
    since_best = 0
    trace = []
    for it in range(1, max_outer + 1):
        target = s2 * x * x

        v, rn, inner = _newton(st, v, lambda y, t=target: t, lambda y: None, cfg, scale0=1.0)
        vmax = float(np.max(np.abs(v)))
        lam = vmax**-2
        x_new = v / vmax
        dx = float(np.max(np.abs(x_new - x)))
        change = math.inf if lam_prev is None else abs(lam - lam_prev) / lam_prev
        trace.append((it, max(change, dx), float(len(inner) - 1)))
        x = x_new
        v = x.copy()  # det(u_{k+1}) = Lam (-u_k)^2, so u_{k+1} is a good start for the next v
        v *= math.sqrt(1.0 / lam) if lam > 0 else 1.0
        lam_prev = lam
        err = max(change, dx)
        if err <= eig_tol:
            break
        if err < best * 0.999:
            best = err
            since_best = 0
        else:
            since_best += 1
            if since_best >= 10:
                raise ConvergenceError(f"eigen iteration stagnated at change {err:.3e}")
    else:
        raise ConvergenceError(f"eigen iteration not converged in {max_outer} steps")
    u = GridFunction(domain, st.full(x))
    return MASolution(u, 2, lam, residual(u, 2, lam), trace)


# ---------------------------------------------------------------------------
# Integral quantities
# ---------------------------------------------------------------------------


def integrate(u: GridFunction, values: np.ndarray) -> float:
    """Quadrature over the physical domain of a field sampled on ``u``'s mesh."""
    st = stencil(u.n_r, u.n_theta)
    return float(np.sum(st.weights * values)) * u.domain.area_scale


def _det_full(u: GridFunction) -> np.ndarray:
    out = np.zeros_like(u.values)
    out[:-1] = discrete_det(u)
    return out


def rayleigh_lambda(u: GridFunction, q: int) -> float:
    """``int (-u) det D^2 u / int (-u)^{q+1}`` on the mesh quadrature."""
    q = _check_q(q)
    neg = np.maximum(-u.values, 0.0)
    den = integrate(u, neg ** (q + 1))
    if den == 0.0:
        raise DomainError("u vanishes identically")
    return integrate(u, neg * _det_full(u)) / den


def functional_J(u: GridFunction, q: int, lam: float = 1.0) -> float:
    """``(1/3) int (-u) det D^2 u - lam/(q+1) int |u|^{q+1}`` (planar case)."""
    q = _check_q(q)
    neg = np.maximum(-u.values, 0.0)
    return integrate(u, neg * _det_full(u)) / 3.0 - lam / (q + 1) * integrate(u, np.abs(u.values) ** (q + 1))


# ---------------------------------------------------------------------------
# Logarithmic gradient flow
# ---------------------------------------------------------------------------


@dataclass
class FlowResult:
    u: GridFunction
    q: int
    residual: float
    steps: int
    time: float
    trace: list[tuple[int, float, float, float]] = field(default_factory=list)
    converged: bool = False


def flow_velocity(u: GridFunction, q: int) -> np.ndarray:
    """``ln det D^2 u - q ln(-u)`` at interior nodes (requires convex, negative ``u``)."""
    det = discrete_det(u)
    neg = -u.values[:-1]
    if np.any(det <= 0):
        raise ConvexityError("flow needs a strictly convex iterate")
    if np.any(neg <= 0):
        raise NegativityError("flow needs u < 0 inside")
    return np.log(det) - q * np.log(neg)


def _admissible(u: GridFunction) -> bool:
    if np.any(u.values[:-1] >= 0):
        return False
    st = stencil(u.n_r, u.n_theta)
    return _convex(st, st.interior(u.values))


def _flow_step(u: GridFunction, q: int, dt: float, max_halvings: int):
    vel = flow_velocity(u, q)
    for _ in range(max_halvings + 1):
        vals = u.values.copy()
        vals[:-1] += dt * vel
        new = GridFunction(u.domain, vals)
        if _admissible(new):
            return new, dt
        dt *= 0.5
    raise StiffnessError(f"time step underflow (dt = {dt:.3e})")


def flow_step(u: GridFunction, q: int, cfg: FlowConfig) -> GridFunction:
    """One explicit Euler step of ``u_t = ln det D^2 u - q ln(-u)``, boundary fixed at 0."""
    return _flow_step(u, _check_q(q), cfg.dt, cfg.max_halvings)[0]


def run_flow(u0: GridFunction, q: int, cfg: FlowConfig, lam: float = 1.0) -> FlowResult:
    """Integrate the flow until the residual ``det D^2 u - (-u)^q`` drops below ``cfg.residual_stop``.

    The trace records ``(step, residual, J, dt)`` every 100 steps and at the end.
    """
    q = _check_q(q)
    u = u0
    t = 0.0
    trace = []
    res = residual(u, q, 1.0)
    scale0 = float(np.max(np.abs(u0.values)))
    for step in range(1, cfg.steps + 1):
        u, dt = _flow_step(u, q, cfg.dt, cfg.max_halvings)
        t += dt
        res = residual(u, q, 1.0)
        if step % 100 == 0 or res < cfg.residual_stop:
            trace.append((step, res, functional_J(u, q, lam), dt))
        if float(np.max(np.abs(u.values))) < COLLAPSE_RATIO * scale0:
            raise CollapseError(f"flow collapsed onto u = 0 after {step} steps (t = {t:.4g})")
        if res < cfg.residual_stop:
            return FlowResult(u, q, res, step, t, trace, True)
    return FlowResult(u, q, res, cfg.steps, t, trace, False)
