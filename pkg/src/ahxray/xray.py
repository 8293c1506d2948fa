"""Forward X-ray transforms and the relation between metric and connection time.

Three transforms live here: the finite-interval transform of a connection
field (integral between the boundary exit times), the improper-integral
transform of the boundary-degenerate metric (truncated with a certified tail
bound), and the two-sided residual check

    I f(gamma) = c * Ihat(r^{-1} f_e)(gamma_hat),

where gamma_hat is the same curve in connection time, dt/dtau = c / r.  The
two sides are computed through entirely separate code paths (metric geodesic
plus tail bound vs. connection geodesic plus exit times), so the residual is
a genuine cross-check.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import quad, solve_ivp

from .connection import ChristoffelField, hat_field, split_connection, extend_past_boundary
from .errors import ExcludedGeodesicError, SplitRejectedError, StiffnessError
from .families import RadialBump, smooth_plateau
from .geometry import BoundaryMetricFamily, ProjectiveModel
from .geodesic import exit_times, integrate, reparametrize

__all__ = [
    "TestFunction",
    "DivergenceWarning",
    "ah_decay_bump",
    "hat_integrand",
    "AHGeodesic",
    "integrate_ah",
    "ah_unit_speed",
    "xray_connection",
    "xray_ah",
    "verify_relation",
    "RelationReport",
    "connection_field_for",
]


class DivergenceWarning(UserWarning):
    """Declared boundary decay may be too weak for a convergent transform."""


@dataclass(frozen=True)
class TestFunction:
    """Scalar test function with declared support and boundary decay.

    ``coords`` records which collar variables the first coordinate means:
    "rho" for metric-side functions f(rho, y), "r" for compactified-side
    functions defined on (r, y).
    """

    eval: Callable
    boundary_decay: float
    support_radius: float
    coords: str = "rho"
    decay_coefficient: float = 1.0

    def __call__(self, pts) -> np.ndarray:
        return self.eval(np.asarray(pts, dtype=float))


def ah_decay_bump(
    decay: int = 3,
    amplitude: float = 1.0,
    rho_sup: float = 0.45,
    y_center=None,
    y_width: float = 0.6,
    n: int = 2,
) -> TestFunction:
    """Bump rho^decay * plateau(rho) * bump(|y - y_c|), smooth and compact."""
    yb = RadialBump(amplitude=1.0, width=y_width, center=y_center)

    def f(pts):
        pts = np.asarray(pts, dtype=float)
        rho, y = pts[..., 0], pts[..., 1:]
        return amplitude * rho**decay * smooth_plateau(rho / rho_sup) * yb(y)

    return TestFunction(
        eval=f,
        boundary_decay=float(decay),
        support_radius=rho_sup,
        coords="rho",
        decay_coefficient=amplitude,
    )


def hat_integrand(f: TestFunction) -> TestFunction:
    """r^{-1} f_e on (r, y): the compactified integrand of the relation."""
    if f.coords != "rho":
        raise ValueError("expected a metric-side test function")

    def g(pts):
        pts = np.asarray(pts, dtype=float)
        r, y = pts[..., 0], pts[..., 1:]
        rp = np.maximum(r, 0.0)
        rho_pts = np.concatenate([np.sqrt(rp)[..., None], y], axis=-1)
        vals = f(rho_pts)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(rp > 0.0, vals / np.where(rp == 0.0, 1.0, rp), 0.0)
        return out

    return TestFunction(
        eval=g,
        boundary_decay=(f.boundary_decay - 2.0) / 2.0,
        support_radius=f.support_radius**2,
        coords="r",
        decay_coefficient=f.decay_coefficient,
    )


# ---------------------------------------------------------------------------
# metric-side geodesics
# ---------------------------------------------------------------------------


def _ah_acc(family: BoundaryMetricFamily, Z: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Geodesic acceleration of (d rho^2 + h)/rho^2 for conformal h = hs * I."""
    rho, y = Z[..., 0], Z[..., 1:]
    hs = family.h_scalar(rho, y)
    hs_r = family.d_rho_scalar(rho, y)
    hs_y = family.d_y_scalar(rho, y)
    v0, w = V[..., 0], V[..., 1:]
    w2 = np.sum(w * w, axis=-1)
    acc = np.empty_like(V)
    acc[..., 0] = v0 * v0 / rho - (hs / rho - 0.5 * hs_r) * w2
    acc[..., 1:] = (
        -(hs_r / hs - 2.0 / rho)[..., None] * v0[..., None] * w
        - (2.0 * np.sum(hs_y * w, axis=-1)[..., None] * w - w2[..., None] * hs_y)
        / (2.0 * hs)[..., None]
    )
    return acc


def ah_unit_speed(family: BoundaryMetricFamily, z, v) -> np.ndarray:
    """Rescale v to unit length for the metric (d rho^2 + h)/rho^2 at z."""
    z = np.asarray(z, dtype=float)
    v = np.asarray(v, dtype=float)
    hs = family.h_scalar(z[0], z[1:])
    norm = np.sqrt(v[0] ** 2 + hs * np.sum(v[1:] ** 2)) / z[0]
    return v / norm


@dataclass
class AHGeodesic:
    """Unit-speed metric geodesic with dense output on both time directions."""

    family: BoundaryMetricFamily
    sol_pos: object
    sol_neg: object
    t_reach: tuple[float, float]

    def _state(self, t):
        t = np.asarray(t, dtype=float)
        flat = np.atleast_1d(t)
        dim = self.family.n + 1
        out = np.empty((flat.size, 2 * dim))
        neg = flat < 0.0
        if np.any(~neg):
            out[~neg] = self.sol_pos.sol(flat[~neg]).T
        if np.any(neg):
            out[neg] = self.sol_neg.sol(flat[neg]).T
        return out if t.ndim else out[0]

    def z_of(self, t):
        st = np.atleast_2d(self._state(t))
        z = st[:, : self.family.n + 1]
        return z if np.asarray(t).ndim else z[0]

    def v_of(self, t):
        st = np.atleast_2d(self._state(t))
        v = st[:, self.family.n + 1 :]
        return v if np.asarray(t).ndim else v[0]

    def rho_of(self, t):
        return np.atleast_2d(self._state(t))[:, 0]


def integrate_ah(
    family: BoundaryMetricFamily,
    z0,
    v0,
    rho_stop: float = 1e-6,
    t_max: float = 40.0,
    rtol: float = 1e-11,
    atol: float = 1e-13,
) -> AHGeodesic:
    """Integrate a unit-speed metric geodesic until rho falls below rho_stop."""
    z0 = np.asarray(z0, dtype=float)
    v0 = ah_unit_speed(family, z0, np.asarray(v0, dtype=float))
    dim = family.n + 1

    def fun(t, s):
        Z, V = s[None, :dim], s[None, dim:]
        return np.concatenate([V[0], _ah_acc(family, Z, V)[0]])

    def ev(t, s):
        return s[0] - rho_stop

    ev.terminal = True
    sols = []
    for sgn in (+1.0, -1.0):
        y0 = np.concatenate([z0, sgn * v0])
        sol = solve_ivp(
            fun,
            (0.0, t_max),
            y0,
            method="RK45",
            rtol=rtol,
            atol=atol,
            dense_output=True,
            events=[ev],
        )
        if sol.status == -1:
            raise StiffnessError(f"metric geodesic integration failed: {sol.message}")
        sols.append(sol)
    pos, neg_raw = sols

    class _Flip:
        # backward branch integrated as forward time with -v; flip the sign
        def __init__(self, sol):
            self.sol_obj = sol
            self.t = -sol.t

        def sol(self, t):
            return self.sol_obj.sol(-np.asarray(t))

    neg = _Flip(neg_raw)
    return AHGeodesic(family=family, sol_pos=pos, sol_neg=neg, t_reach=(-neg_raw.t[-1], pos.t[-1]))


# ---------------------------------------------------------------------------
# transforms
# ---------------------------------------------------------------------------


def _quad_dense(g: Callable, a: float, b: float, tol: float, sqrt_endpoints: bool) -> float:
    if b <= a:
        return 0.0
    if not sqrt_endpoints:
        val, _ = quad(g, a, b, epsabs=tol, epsrel=tol, limit=300)
        return val
    mid = 0.5 * (a + b)
    # u^2-substitution absorbs sqrt-type endpoint behavior of the integrand
    ua = np.sqrt(mid - a)
    va, _ = quad(lambda u: 2.0 * u * g(a + u * u), 0.0, ua, epsabs=tol, epsrel=tol, limit=300)
    ub = np.sqrt(b - mid)
    vb, _ = quad(lambda u: 2.0 * u * g(b - u * u), 0.0, ub, epsabs=tol, epsrel=tol, limit=300)
    return va + vb


def xray_connection(
    fld: ChristoffelField,
    f: TestFunction,
    z,
    v,
    tol: float = 1e-10,
    tau_span=None,
    sqrt_endpoints: bool = False,
) -> float:
    """Integral of f along the connection geodesic between its exit times."""
    if tau_span is None:
        tau_span = (-2.0, 2.0)
    path = integrate(fld, z, v, tau_span, tol=tol)
    et = exit_times(path)
    if et.tangent:
        raise ExcludedGeodesicError("boundary-tangent geodesic is excluded")
    g = lambda tau: float(f(path.z_of(tau)))
    return _quad_dense(g, et.tau_minus, et.tau_plus, tol, sqrt_endpoints)


@dataclass(frozen=True)
class AHTransformResult:
    value: float
    tail_bound: float
    t_window: tuple[float, float]


def xray_ah(
    family: BoundaryMetricFamily,
    f: TestFunction,
    z0,
    v0,
    tail_tol: float = 1e-10,
    quad_tol: float = 1e-11,
) -> AHTransformResult:
    """Transform along a metric geodesic, truncated with a certified tail bound.

    The geodesic is integrated until |f| <= coeff * rho^decay makes the
    remaining tail integral provably smaller than tail_tol on each side.
    """
    d = f.boundary_decay
    if d <= 0.0:
        warnings.warn(
            "declared boundary decay <= 0: the transform may diverge", DivergenceWarning
        )
    coeff = f.decay_coefficient
    # rho target from tail <= coeff * rho^d / (d * kappa), kappa >= 1/2 near 0
    rho_target = (max(tail_tol, 1e-300) * 0.5 * max(d, 1e-9) / max(coeff, 1e-300)) ** (
        1.0 / max(d, 1e-9)
    )
    gam = integrate_ah(family, z0, v0, rho_stop=min(rho_target, 1e-3))
    tail = 0.0
    for t_end in gam.t_reach:
        z_end = gam.z_of(t_end)
        v_end = gam.v_of(t_end)
        kappa = abs(v_end[0]) / z_end[0]
        tail += coeff * z_end[0] ** d / (max(d, 1e-9) * max(kappa, 0.25))
    g = lambda t: float(f(gam.z_of(t)))
    lo, hi = gam.t_reach
    val = _quad_dense(g, lo, 0.0, quad_tol, False) + _quad_dense(g, 0.0, hi, quad_tol, False)
    return AHTransformResult(value=val, tail_bound=tail, t_window=(lo, hi))


def connection_field_for(model: ProjectiveModel, eps0: float = 1.0) -> ChristoffelField:
    """C^1 split field when the order allows it, raw field otherwise."""
    try:
        return extend_past_boundary(split_connection(model, eps0), eps0)
    except SplitRejectedError:
        return hat_field(model, eps0)


@dataclass(frozen=True)
class RelationReport:
    metric_value: float
    connection_value: float
    c: float
    residual: float
    tail_bound: float


def verify_relation(
    family: BoundaryMetricFamily,
    model: ProjectiveModel,
    f: TestFunction,
    z0,
    v0,
    c: float = 1.0,
    fld: ChristoffelField | None = None,
    tail_tol: float = 1e-10,
) -> RelationReport:
    """Residual |I f - c * Ihat(r^{-1} f_e)| computed through independent paths.

    The metric side truncates the improper integral with a tail bound.  The
    connection side re-integrates the curve as a geodesic of the compactified
    connection from its own initial data (velocity scaled by c / r at the
    starting point) and integrates r^{-1} f_e between the exit times.
    """
    if fld is None:
        fld = connection_field_for(model)
    z0 = np.asarray(z0, dtype=float)
    v0 = ah_unit_speed(family, z0, np.asarray(v0, dtype=float))
    ah_res = xray_ah(family, f, z0, v0, tail_tol=tail_tol)

    r0 = z0[0] ** 2
    z_col = np.concatenate([[r0], z0[1:]])
    v_col = np.concatenate([[2.0 * z0[0] * v0[0]], v0[1:]]) * (c / r0)

    # span estimate: connection time accumulated along the metric path, padded
    gam = integrate_ah(family, z0, v0, rho_stop=1e-5)
    ts = np.linspace(gam.t_reach[0], gam.t_reach[1], 2001)
    rep = reparametrize(ts, gam.rho_of(ts) ** 2, c)
    lo = float(rep.tau_nodes[0]) * 1.5 - 0.05
    hi = float(rep.tau_nodes[-1]) * 1.5 + 0.05

    g = hat_integrand(f)
    ihat = xray_connection(fld, g, z_col, v_col, tau_span=(lo, hi), sqrt_endpoints=True)
    val = ah_res.value
    return RelationReport(
        metric_value=val,
        connection_value=ihat,
        c=c,
        residual=abs(val - c * ihat),
        tail_bound=ah_res.tail_bound,
    )
