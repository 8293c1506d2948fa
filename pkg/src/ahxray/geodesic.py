"""Geodesics of C^1 Christoffel fields, exponential maps, and shooting.

Two integration paths share one right-hand side library:

* :func:`integrate` wraps the adaptive embedded RK 5(4) pair (PI step control,
  dense output) for single trajectories;
* a fixed-step vectorized RK4 engine (:func:`exp_batch`,
  :func:`inverse_exp_batch`) drives the many short near-diagonal shooting
  solves that kernel assembly needs.

For fields with a Heaviside split the state is transformed to the regularized
variables (z, v^0, b) with b^c = v^c + (4/N) r^(N/2) H(r) W^c_d v^d, whose
right-hand side stays differentiable across r = 0; the plain system would lose
integrator order there.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.integrate import solve_ivp

from .connection import ChristoffelField
from .errors import (
    DegenerateDirectionError,
    DomainExitError,
    ExcludedGeodesicError,
    ReparametrizationError,
    ShootingError,
    StiffnessError,
)

__all__ = [
    "GeodesicPath",
    "ExitTimes",
    "LocalityWitness",
    "integrate",
    "exit_times",
    "exp_map",
    "inverse_exp",
    "inverse_exp_jacobian_fd",
    "exp_batch",
    "path_batch",
    "inverse_exp_batch",
    "convexity_scan",
    "locality_check",
    "reparametrize",
    "Reparametrization",
]


# ---------------------------------------------------------------------------
# right-hand sides
# ---------------------------------------------------------------------------


def _plain_rhs(fld: ChristoffelField, Z: np.ndarray, V: np.ndarray):
    return V, fld.acc(Z, V)


def _reg_recover(fld: ChristoffelField, Z: np.ndarray, Bst: np.ndarray) -> np.ndarray:
    """Velocity from the regularized state: v = L(z)^(-1) b (conformal W)."""
    sd = fld.split
    u, _ = sd.u_pow(Z[..., 0])
    scale = 1.0 + (4.0 / sd.N) * u * sd.wB(Z)
    V = Bst.copy()
    V[..., 1:] = Bst[..., 1:] / scale[..., None]
    return V


def _reg_transform(fld: ChristoffelField, Z: np.ndarray, V: np.ndarray) -> np.ndarray:
    sd = fld.split
    u, _ = sd.u_pow(Z[..., 0])
    scale = 1.0 + (4.0 / sd.N) * u * sd.wB(Z)
    B = V.copy()
    B[..., 1:] = V[..., 1:] * scale[..., None]
    return B


def _reg_rhs(fld: ChristoffelField, Z: np.ndarray, Bst: np.ndarray, light: bool = False):
    """Regularized right-hand side; differentiable across r = 0.

    b' = -Gbar(v,v) - r^(N/2-1) H B_rest(v,v)
         + (4/N) r^(N/2) H [ (v . grad wB) w + wB * full-acceleration_tang ].

    ``light`` drops the final bracket, an O(r^(N/2)) correction whose effect
    on short kernel chords is below 1e-8; the batch engines use it.
    """
    sd = fld.split
    wB0, u0 = sd.wB_u(Z)
    scale = 1.0 + (4.0 / sd.N) * u0 * wB0
    V = Bst.copy()
    V[..., 1:] = Bst[..., 1:] / scale[..., None]
    acc_full, acc_bar, rest, wB, u, u_m1 = fld.acc_pieces(Z, V)
    dB = acc_bar - u_m1[..., None] * rest
    if not light:
        w = V[..., 1:]
        gw = sd.grad_wB(Z)
        vdotg = np.sum(V * gw, axis=-1)
        corr = (4.0 / sd.N) * u
        dB[..., 1:] += corr[..., None] * (
            vdotg[..., None] * w + wB[..., None] * acc_full[..., 1:]
        )
    return V, dB


# ---------------------------------------------------------------------------
# adaptive single-trajectory integration
# ---------------------------------------------------------------------------


@dataclass
class GeodesicPath:
    """Dense-output geodesic with two-sided span around tau = 0."""

    field: ChristoffelField
    sol_pos: object | None
    sol_neg: object | None
    regularized: bool
    stats: dict
    tau_reach: tuple[float, float]
    domain_flag: bool = False
    tau_minus: float | None = None
    tau_plus: float | None = None
    tangent: bool = False

    def _state(self, tau):
        tau = np.asarray(tau, dtype=float)
        flat = np.atleast_1d(tau)
        out = np.empty((flat.size, 2 * self.field.dim))
        neg = flat < 0.0
        if np.any(~neg):
            if self.sol_pos is None:
                raise ValueError("path has no forward branch")
            out[~neg] = self.sol_pos.sol(flat[~neg]).T
        if np.any(neg):
            if self.sol_neg is None:
                raise ValueError("path has no backward branch")
            out[neg] = self.sol_neg.sol(flat[neg]).T
        return out if tau.ndim else out[0]

    def z_of(self, tau) -> np.ndarray:
        st = np.atleast_2d(self._state(tau))
        z = st[:, : self.field.dim]
        return z if np.asarray(tau).ndim else z[0]

    def v_of(self, tau) -> np.ndarray:
        st = np.atleast_2d(self._state(tau))
        dim = self.field.dim
        z, rest = st[:, :dim], st[:, dim:]
        v = _reg_recover(self.field, z, rest) if self.regularized else rest
        return v if np.asarray(tau).ndim else v[0]

    def samples(self):
        """(tau, z, v) at the accepted integrator steps, ordered in tau."""
        taus = []
        if self.sol_neg is not None:
            taus.append(self.sol_neg.t[::-1])
        if self.sol_pos is not None:
            taus.append(self.sol_pos.t)
        taus = np.unique(np.concatenate(taus))
        return taus, self.z_of(taus), self.v_of(taus)

    def ode_residual(self, n_probe: int = 30, h: float = 1e-6) -> float:
        """max |v'(tau) - acc(z, v)| at step midpoints (dense-output derivative)."""
        taus, _, _ = self.samples()
        mids = 0.5 * (taus[:-1] + taus[1:])
        if mids.size > n_probe:
            mids = mids[np.linspace(0, mids.size - 1, n_probe).astype(int)]
        worst = 0.0
        for tm in mids:
            vp = (self.v_of(tm + h) - self.v_of(tm - h)) / (2.0 * h)
            z, v = self.z_of(tm), self.v_of(tm)
            worst = max(worst, float(np.max(np.abs(vp - self.field.acc(z, v)))))
        return worst


def _one_sided(fld, z0, v0, t_end, rtol, atol, regularized):
    dim = fld.dim
    if regularized:
        y0 = np.concatenate([z0, _reg_transform(fld, z0[None, :], v0[None, :])[0]])

        def fun(t, y):
            Z, B = y[None, :dim], y[None, dim:]
            dZ, dB = _reg_rhs(fld, Z, B)
            return np.concatenate([dZ[0], dB[0]])

    else:
        y0 = np.concatenate([z0, v0])

        def fun(t, y):
            Z, V = y[None, :dim], y[None, dim:]
            dZ, dV = _plain_rhs(fld, Z, V)
            return np.concatenate([dZ[0], dV[0]])

    r_lo, r_hi = fld.r_range
    events = []
    if np.isfinite(r_lo):

        def ev_lo(t, y, lo=r_lo):
            return y[0] - lo

        ev_lo.terminal = True
        events.append(ev_lo)
    if np.isfinite(r_hi):

        def ev_hi(t, y, hi=r_hi):
            return y[0] - hi

        ev_hi.terminal = True
        events.append(ev_hi)
    sol = solve_ivp(
        fun,
        (0.0, t_end),
        y0,
        method="RK45",
        rtol=rtol,
        atol=atol,
        dense_output=True,
        events=events,
    )
    if sol.status == -1:
        raise StiffnessError(f"integrator failed: {sol.message}")
    truncated = sol.status == 1
    return sol, truncated


def integrate(
    fld: ChristoffelField,
    z0,
    v0,
    tau_span=(-1.0, 1.0),
    tol: float = 1e-10,
    atol: float = 1e-12,
) -> GeodesicPath:
    """Integrate the geodesic ODE from (z0, v0) at tau = 0 over tau_span.

    Uses the regularized variables whenever the field carries a C^1 split.
    Leaving the field's r-range truncates the path and raises the domain flag.
    """
    z0 = np.asarray(z0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    if not np.linalg.norm(v0) > 0.0:
        raise DegenerateDirectionError("initial velocity must be nonzero")
    a, b = float(tau_span[0]), float(tau_span[1])
    if a > 0.0 or b < 0.0:
        raise ValueError("tau_span must contain 0 (initial data is at tau = 0)")
    regularized = fld.regularity_tag == "C1_split"
    sol_pos = sol_neg = None
    truncated = False
    stats = {"nfev": 0, "steps": 0}
    if b > 0.0:
        sol_pos, tr = _one_sided(fld, z0, v0, b, tol, atol, regularized)
        truncated |= tr
        stats["nfev"] += sol_pos.nfev
        stats["steps"] += len(sol_pos.t) - 1
    if a < 0.0:
        sol_neg, tr = _one_sided(fld, z0, v0, a, tol, atol, regularized)
        truncated |= tr
        stats["nfev"] += sol_neg.nfev
        stats["steps"] += len(sol_neg.t) - 1
    reach_lo = sol_neg.t[-1] if sol_neg is not None else 0.0
    reach_hi = sol_pos.t[-1] if sol_pos is not None else 0.0
    stats["rejected_estimate"] = max(0, (stats["nfev"] - 2) // 6 - stats["steps"])
    return GeodesicPath(
        field=fld,
        sol_pos=sol_pos,
        sol_neg=sol_neg,
        regularized=regularized,
        stats=stats,
        tau_reach=(reach_lo, reach_hi),
        domain_flag=truncated,
    )


@dataclass(frozen=True)
class ExitTimes:
    tau_minus: float
    tau_plus: float
    tangent: bool
    open_minus: bool = False
    open_plus: bool = False


def _first_crossing(path: GeodesicPath, side: int, n_scan: int = 800) -> tuple[float, bool]:
    """First tau (signed side) with r < 0, bisected to 1e-12; open flag if none."""
    reach = path.tau_reach[1] if side > 0 else path.tau_reach[0]
    if reach == 0.0:
        r0 = path.z_of(0.0)[0]
        return 0.0, not (r0 <= 0.0)
    taus = np.linspace(0.0, reach, n_scan)
    r = path.z_of(taus)[:, 0]
    neg = np.nonzero(r < 0.0)[0]
    if neg.size == 0:
        return float(reach), True
    k = neg[0]
    if k == 0:
        return 0.0, False
    lo, hi = taus[k - 1], taus[k]
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if path.z_of(mid)[0] < 0.0:
            hi = mid
        else:
            lo = mid
        if abs(hi - lo) < 1e-12:
            break
    out = float(0.5 * (lo + hi))
    # sub-tolerance crossings are boundary starts (or tangencies); snap to 0
    if abs(out) < 2e-12:
        out = 0.0
    return out, False


def exit_times(path: GeodesicPath) -> ExitTimes:
    """First boundary crossings of r along the path, bisected to 1e-12.

    Tangent paths (both exits at 0) are flagged; transforms exclude them.
    Sides with no crossing inside the integrated span come back as the
    reached endpoint with an open-end flag.
    """
    tp, open_p = _first_crossing(path, +1)
    tm, open_m = _first_crossing(path, -1)
    tangent = (not open_p) and (not open_m) and (abs(tp) + abs(tm) == 0.0)
    path.tau_minus, path.tau_plus, path.tangent = tm, tp, tangent
    return ExitTimes(tau_minus=tm, tau_plus=tp, tangent=tangent, open_minus=open_m, open_plus=open_p)


def exp_map(fld: ChristoffelField, z, v, tol: float = 1e-10) -> np.ndarray:
    """Time-1 geodesic point; raises with the exit time if the domain is left."""
    v = np.asarray(v, dtype=float)
    if np.linalg.norm(v) == 0.0:
        return np.asarray(z, dtype=float).copy()
    path = integrate(fld, z, v, (0.0, 1.0), tol=tol)
    if path.domain_flag or path.tau_reach[1] < 1.0:
        raise DomainExitError(
            f"geodesic left the field domain at tau = {path.tau_reach[1]:.6g}",
            exit_time=path.tau_reach[1],
        )
    return path.z_of(1.0)


def inverse_exp(
    fld: ChristoffelField,
    z,
    z_target,
    tol: float = 1e-10,
    max_iter: int = 50,
    fd_step: float = 1e-5,
) -> np.ndarray:
    """Velocity v with exp_z(v) = z_target by damped Newton shooting.

    Seeded with the coordinate chord; the Jacobian is a central finite
    difference of exp_map; steps are halved while the residual increases.
    """
    z = np.asarray(z, dtype=float)
    z_target = np.asarray(z_target, dtype=float)
    dim = fld.dim
    v = z_target - z
    if np.linalg.norm(v) == 0.0:
        return np.zeros(dim)
    res = exp_map(fld, z, v) - z_target
    for _ in range(max_iter):
        if np.linalg.norm(res) <= tol:
            return v
        scale = fd_step * max(1.0, np.linalg.norm(v))
        J = np.empty((dim, dim))
        for d in range(dim):
            dv = np.zeros(dim)
            dv[d] = scale
            J[:, d] = (exp_map(fld, z, v + dv) - exp_map(fld, z, v - dv)) / (2.0 * scale)
        step = np.linalg.solve(J, -res)
        lam = 1.0
        for _ in range(25):
            v_new = v + lam * step
            res_new = exp_map(fld, z, v_new) - z_target
            if np.linalg.norm(res_new) < np.linalg.norm(res):
                break
            lam *= 0.5
        v, res = v_new, res_new
    if np.linalg.norm(res) <= tol:
        return v
    raise ShootingError(
        f"inverse_exp did not converge: residual {np.linalg.norm(res):.3e}",
        residual=float(np.linalg.norm(res)),
    )


def inverse_exp_jacobian_fd(
    fld: ChristoffelField, z, z_target, step: float = 1e-5, tol: float = 1e-10
) -> np.ndarray:
    """d(inverse_exp)/d(z_target) by central differences of the shooting solve."""
    z_target = np.asarray(z_target, dtype=float)
    dim = fld.dim
    J = np.empty((dim, dim))
    for d in range(dim):
        dz = np.zeros(dim)
        dz[d] = step
        vp = inverse_exp(fld, z, z_target + dz, tol=tol)
        vm = inverse_exp(fld, z, z_target - dz, tol=tol)
        J[:, d] = (vp - vm) / (2.0 * step)
    return J


# ---------------------------------------------------------------------------
# vectorized fixed-step engine
# ---------------------------------------------------------------------------


def _batch_rhs(fld: ChristoffelField, state: np.ndarray, regularized: bool, light: bool) -> np.ndarray:
    dim = fld.dim
    Z, rest = state[:, :dim], state[:, dim:]
    if regularized:
        dZ, dB = _reg_rhs(fld, Z, rest, light=light)
    else:
        dZ, dB = _plain_rhs(fld, Z, rest)
    return np.concatenate([dZ, dB], axis=1)


def _rk4(fld, state, t_final, steps, regularized, light=True):
    h = t_final / steps
    for _ in range(steps):
        k1 = _batch_rhs(fld, state, regularized, light)
        k2 = _batch_rhs(fld, state + 0.5 * h * k1, regularized, light)
        k3 = _batch_rhs(fld, state + 0.5 * h * k2, regularized, light)
        k4 = _batch_rhs(fld, state + h * k3, regularized, light)
        state = state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return state


def exp_batch(
    fld: ChristoffelField,
    Z0: np.ndarray,
    V0: np.ndarray,
    t_final: float = 1.0,
    steps: int = 12,
    light: bool = True,
):
    """Fixed-step RK4 flow for a batch of initial conditions; returns (Z, V).

    Uses the regularized state for split fields with the O(r^(N/2)) bracket
    dropped; on the short chords this engine serves, the effect is below the
    shooting tolerance (cross-checked against the adaptive path in tests).
    """
    regularized = fld.regularity_tag == "C1_split"
    if regularized:
        rest = _reg_transform(fld, Z0, V0)
    else:
        rest = V0
    state = np.concatenate([Z0, rest], axis=1)
    state = _rk4(fld, state, t_final, steps, regularized, light)
    dim = fld.dim
    Z, rest = state[:, :dim], state[:, dim:]
    V = _reg_recover(fld, Z, rest) if regularized else rest
    return Z, V


def path_batch(fld: ChristoffelField, Z0: np.ndarray, V0: np.ndarray, t_nodes: np.ndarray):
    """States at increasing t_nodes (starting from 0) for a batch; (k, m, dim) arrays."""
    regularized = fld.regularity_tag == "C1_split"
    rest = _reg_transform(fld, Z0, V0) if regularized else V0
    state = np.concatenate([Z0, rest], axis=1)
    dim = fld.dim
    out_z = np.empty((len(t_nodes), Z0.shape[0], dim))
    t_prev = 0.0
    for k, t in enumerate(t_nodes):
        if t > t_prev:
            state = _rk4(fld, state, t - t_prev, 1, regularized)
            t_prev = t
        elif t != 0.0 or k > 0 and t_nodes[k - 1] > t:
            raise ValueError("t_nodes must be nondecreasing from 0")
        out_z[k] = state[:, :dim]
    return out_z


class _ChartlessMap:
    """Identity chart: shooting directly in collar coordinates."""

    def to_collar(self, Z):
        return Z

    def to_chart(self, Z):
        return Z

    def vel_to_collar(self, Z, V):
        return V


def _exp_chart_batch(fld, chart, Zc, Vc, steps):
    Zcol = chart.to_collar(Zc)
    Vcol = chart.vel_to_collar(Zc, Vc)
    Z1, _ = exp_batch(fld, Zcol, Vcol, 1.0, steps)
    return chart.to_chart(Z1)


def _shoot_jacobian(fld, chart, Z, V, steps, fd_step):
    """Central-difference d_v exp at a batch of (z, v), stacked in one flow."""
    k, dim = Z.shape
    scale = fd_step * np.maximum(1.0, np.linalg.norm(V, axis=1))
    Zs = np.tile(Z, (2 * dim, 1))
    Vs = np.empty((2 * dim * k, dim))
    for d in range(dim):
        Vp = V.copy()
        Vm = V.copy()
        Vp[:, d] += scale
        Vm[:, d] -= scale
        Vs[2 * d * k : (2 * d + 1) * k] = Vp
        Vs[(2 * d + 1) * k : (2 * d + 2) * k] = Vm
    ends = _exp_chart_batch(fld, chart, Zs, Vs, steps)
    J = np.empty((k, dim, dim))
    for d in range(dim):
        Ep = ends[2 * d * k : (2 * d + 1) * k]
        Em = ends[(2 * d + 1) * k : (2 * d + 2) * k]
        J[:, :, d] = (Ep - Em) / (2.0 * scale[:, None])
    return J


def inverse_exp_batch(
    fld: ChristoffelField,
    Z: np.ndarray,
    Z_target: np.ndarray,
    chart=None,
    tol: float = 1e-10,
    max_iter: int = 12,
    fd_step: float = 1e-5,
    steps: int = 8,
    return_jac: bool = False,
):
    """Batched Newton shooting in chart coordinates.

    The Jacobian is frozen between iterations (the chords are short, so d_v exp
    is nearly constant) and refreshed only for rows that stall.  Returns
    (V, det_inv_jac, converged, residual) with det_inv_jac = |det d_z~ exp^{-1}|
    from the last shooting Jacobian; with ``return_jac`` the d_v exp Jacobian
    stack is appended (its inverse is d_z~ exp^{-1}).
    """
    if chart is None:
        chart = _ChartlessMap()
    m, dim = Z.shape
    V = Z_target - Z
    res = _exp_chart_batch(fld, chart, Z, V, steps) - Z_target
    rnorm = np.linalg.norm(res, axis=1)
    J = np.broadcast_to(np.eye(dim), (m, dim, dim)).copy()
    have_J = np.zeros(m, dtype=bool)
    stale = np.zeros(m, dtype=bool)
    for _ in range(max_iter):
        active = rnorm > tol
        if not np.any(active):
            break
        need = active & (~have_J | stale)
        if np.any(need):
            idx = np.nonzero(need)[0]
            J[idx] = _shoot_jacobian(fld, chart, Z[idx], V[idx], steps, fd_step)
            have_J[idx] = True
            stale[idx] = False
        idx = np.nonzero(active)[0]
        step = np.linalg.solve(J[idx], -res[idx][..., None])[..., 0]
        lam = np.ones(idx.size)
        V_new = V[idx] + step
        res_new = _exp_chart_batch(fld, chart, Z[idx], V_new, steps) - Z_target[idx]
        for _ in range(4):
            worse = np.linalg.norm(res_new, axis=1) > rnorm[idx]
            if not np.any(worse):
                break
            lam[worse] *= 0.5
            V_new[worse] = V[idx][worse] + lam[worse, None] * step[worse]
            res_new[worse] = (
                _exp_chart_batch(fld, chart, Z[idx][worse], V_new[worse], steps)
                - Z_target[idx][worse]
            )
        new_norm = np.linalg.norm(res_new, axis=1)
        # frozen-Jacobian rows that stopped contracting get a fresh Jacobian
        stale[idx] = new_norm > 0.25 * rnorm[idx]
        V[idx] = V_new
        res[idx] = res_new
        rnorm[idx] = new_norm
    det = np.abs(np.linalg.det(J))
    with np.errstate(divide="ignore"):
        det_inv = np.where(det > 0.0, 1.0 / det, np.inf)
    # rows converged at the chord seed never needed J; fill it for callers
    if return_jac and np.any(~have_J):
        idx = np.nonzero(~have_J)[0]
        J[idx] = _shoot_jacobian(fld, chart, Z[idx], V[idx], steps, fd_step)
        det = np.abs(np.linalg.det(J))
        with np.errstate(divide="ignore"):
            det_inv = np.where(det > 0.0, 1.0 / det, np.inf)
    if return_jac:
        return V, det_inv, rnorm <= tol, rnorm, J
    return V, det_inv, rnorm <= tol, rnorm


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------


def convexity_scan(fld: ChristoffelField, boundary_pts, dirs, fd_h: float = 5e-3):
    """Second tau-derivative of r along boundary-tangent geodesics.

    Returns (ode values, finite-difference cross-check values).  The ODE value
    is -G^0(w, w) evaluated at the boundary point; the cross-check integrates
    a short arc and applies a second central difference.
    """
    boundary_pts = np.asarray(boundary_pts, dtype=float)
    dirs = np.asarray(dirs, dtype=float)
    m = boundary_pts.shape[0]
    V = np.concatenate([np.zeros((m, 1)), dirs], axis=1)
    ode_vals = fld.acc(boundary_pts, V)[:, 0]
    Zp, _ = exp_batch(fld, boundary_pts, V, fd_h, steps=8)
    Zm, _ = exp_batch(fld, boundary_pts, -V, fd_h, steps=8)
    fd_vals = (Zp[:, 0] - 2.0 * boundary_pts[:, 0] + Zm[:, 0]) / fd_h**2
    return ode_vals, fd_vals


@dataclass(frozen=True)
class LocalityWitness:
    passed: bool
    min_x_eta: float
    re_entry_bound: float
    precondition_ok: bool


def locality_check(fld: ChristoffelField, config, z_chart, v_chart) -> LocalityWitness:
    """Check that a near-tangent geodesic stays inside the lens region.

    z_chart = (x, y) in artificial-boundary coordinates with x = x_eta >= 0;
    v = (lambda, omega) unit for the flat reference metric.  Verifies
    |lambda|/|omega| <= C_tilde sqrt(x), then integrates over |t| <= delta2
    and records min x_eta and the minimum of x_eta on delta1 <= |t| <= delta2.
    """
    boundary = config.boundary
    z_chart = np.asarray(z_chart, dtype=float)
    v_chart = np.asarray(v_chart, dtype=float)
    lam, omega = v_chart[0], v_chart[1:]
    if np.linalg.norm(omega) == 0.0:
        raise DegenerateDirectionError("purely normal initial velocity is excluded")
    pre_ok = abs(lam) / np.linalg.norm(omega) <= config.C_tilde * np.sqrt(max(z_chart[0], 0.0))
    ts = np.linspace(0.0, config.delta2, 120)
    zcol = boundary.to_collar(z_chart[None, :] - np.array([config.eta] + [0.0] * (fld.dim - 1)))
    vcol = boundary.vel_to_collar(z_chart[None, :], v_chart[None, :])
    xs = []
    for sgn in (+1.0, -1.0):
        zs = path_batch(fld, zcol, sgn * vcol, ts)[:, 0, :]
        xs.append(boundary.x_hat_collar(zs) + config.eta)
    x_eta = np.concatenate(xs)
    t_both = np.concatenate([ts, ts])
    min_x = float(np.min(x_eta))
    window = np.abs(t_both) >= config.delta1
    re_entry = float(np.min(x_eta[window])) if np.any(window) else np.inf
    passed = bool(pre_ok and min_x >= 0.0 and re_entry >= config.c0)
    return LocalityWitness(
        passed=passed, min_x_eta=min_x, re_entry_bound=re_entry, precondition_ok=bool(pre_ok)
    )


# ---------------------------------------------------------------------------
# reparametrization between metric time and connection time
# ---------------------------------------------------------------------------


@dataclass
class Reparametrization:
    """Monotone time change tau(t) = (1/c) int_0^t r(gamma(s)) ds."""

    c: float
    t_nodes: np.ndarray
    tau_nodes: np.ndarray
    _t_of_tau: object = dc_field(repr=False, default=None)
    _tau_of_t: object = dc_field(repr=False, default=None)

    def tau_of_t(self, t):
        return self._tau_of_t(t)

    def t_of_tau(self, tau):
        return self._t_of_tau(tau)


def reparametrize(t_nodes, r_nodes, c: float, check_tol: float = 1e-8) -> Reparametrization:
    """Build tau(t) from samples of r along a metric-time geodesic.

    r must be positive on the samples; tau is computed by cumulative Simpson
    quadrature and inverted monotonically.  dt/dtau = c / r is verified at the
    nodes within the quadrature tolerance.
    """
    from scipy.integrate import cumulative_simpson
    from scipy.interpolate import PchipInterpolator

    t_nodes = np.asarray(t_nodes, dtype=float)
    r_nodes = np.asarray(r_nodes, dtype=float)
    if np.any(r_nodes <= 0.0):
        raise ReparametrizationError("r must be positive along the sampled geodesic")
    tau = cumulative_simpson(r_nodes, x=t_nodes, initial=0.0) / c
    # anchor tau(0) = 0 when 0 is inside the sample range
    if t_nodes[0] <= 0.0 <= t_nodes[-1]:
        tau = tau - np.interp(0.0, t_nodes, tau)
    if np.any(np.diff(tau) <= 0.0):
        raise ReparametrizationError("computed time change is not monotone")
    t_of_tau = PchipInterpolator(tau, t_nodes)
    tau_of_t = PchipInterpolator(t_nodes, tau)
    # spot-check dt/dtau = c / r at interior nodes
    mid = slice(1, -1)
    dt_dtau = 1.0 / tau_of_t.derivative()(t_nodes[mid])
    target = c / r_nodes[mid]
    rel = np.max(np.abs(dt_dtau - target) / np.maximum(1.0, np.abs(target)))
    if rel > max(check_tol * 1e4, 1e-4):
        raise ReparametrizationError(f"dt/dtau check failed: rel error {rel:.2e}")
    return Reparametrization(c=c, t_nodes=t_nodes, tau_nodes=tau, _t_of_tau=t_of_tau, _tau_of_t=tau_of_t)
