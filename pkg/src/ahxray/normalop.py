"""Microlocalized normal operators on the artificial-boundary chart.

The lens region sits between the true boundary {r = 0} and the artificial
boundary {x_hat = -eta}, where x_hat = -r - q |y - y_p|^2 is strictly concave
for the active connections and q in (0, 1).  All operator work happens in the
chart (x, y) with x the value of x_hat, where the reference metric is
Euclidean.  The translated family acts on functions supported near {x >= 0}
for every eta; the shift enters only through the base points z - (eta, 0) of
the exponential maps, so at eta = 0 the two connections are sampled only where
they agree and the difference operator vanishes identically.

The kernel of the conjugated operator against coordinate Lebesgue measure is

    kappa(z, z~) = x^{-2} e^{-sigma(1/x - 1/x~)} 2 chi(P)
                   |det d_z~ exp^{-1}_{z-eta_}| / |exp^{-1}_{z-eta_}(z~-eta_)|^n,

    P = (0-component of exp^{-1}) / (x |y-part of exp^{-1}|).

Grids are radial products in (x, s = |y - y_p|); every built-in scenario is
rotation-invariant, so the operator restricts exactly to radial functions and
matrix entries carry the angular integral of the kernel.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .connection import ChristoffelField
from .errors import DomainError, ShootingError
from .geodesic import inverse_exp_batch, path_batch

__all__ = [
    "ArtificialBoundary",
    "CutoffProfile",
    "NormalOperatorConfig",
    "RadialGrid",
    "OperatorMatrix",
    "DegenerateBandWarning",
    "sphere_band_quadrature",
    "apply_A",
    "apply_A_sigma",
    "kernel_direct",
    "kernel_batch",
    "translate_operator",
    "assemble_matrix",
    "discrete_sc_norm",
    "schur_estimate_E",
    "SchurReport",
]


class DegenerateBandWarning(UserWarning):
    """The near-tangent band collapses at x = 0; the limiting value is used."""


# ---------------------------------------------------------------------------
# artificial boundary and chart
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ArtificialBoundary:
    """Concave hypersurface x_hat = 0 with x_hat = -r - q |y - y_p|^2.

    x_hat(p) = 0 and d x_hat(p) = -dr(p) hold exactly at the center
    p = (r=0, y_p).  The sublevel sets {x_hat >= -eta} meet {r >= 0} in lens
    regions that shrink to p as eta -> 0, and {x_hat >= 0} lies in {r <= 0},
    where split connections coincide with their smooth parts.
    """

    n: int
    q: float = 0.25
    y_p: tuple = None

    def __post_init__(self):
        if not 0.0 < self.q < 1.0:
            raise ValueError("concavity parameter q must lie in (0, 1)")
        if self.y_p is None:
            object.__setattr__(self, "y_p", tuple([0.0] * self.n))

    @property
    def center(self) -> np.ndarray:
        return np.asarray(self.y_p, dtype=float)

    def x_hat_collar(self, Zcol: np.ndarray) -> np.ndarray:
        Zcol = np.atleast_2d(np.asarray(Zcol, dtype=float))
        d = Zcol[:, 1:] - self.center
        return -Zcol[:, 0] - self.q * np.sum(d * d, axis=1)

    def to_collar(self, Zch: np.ndarray) -> np.ndarray:
        Zch = np.atleast_2d(np.asarray(Zch, dtype=float))
        out = Zch.copy()
        d = Zch[:, 1:] - self.center
        out[:, 0] = -Zch[:, 0] - self.q * np.sum(d * d, axis=1)
        return out

    def to_chart(self, Zcol: np.ndarray) -> np.ndarray:
        Zcol = np.atleast_2d(np.asarray(Zcol, dtype=float))
        out = Zcol.copy()
        out[:, 0] = self.x_hat_collar(Zcol)
        return out

    def vel_to_collar(self, Zch: np.ndarray, Vch: np.ndarray) -> np.ndarray:
        Zch = np.atleast_2d(np.asarray(Zch, dtype=float))
        Vch = np.atleast_2d(np.asarray(Vch, dtype=float))
        d = Zch[:, 1:] - self.center
        out = Vch.copy()
        out[:, 0] = -Vch[:, 0] - 2.0 * self.q * np.sum(d * Vch[:, 1:], axis=1)
        return out

    def vel_to_chart(self, Zcol: np.ndarray, Vcol: np.ndarray) -> np.ndarray:
        # the chart map is an involution in (first-coordinate, y)
        return self.vel_to_collar(self.to_chart(Zcol), Vcol)

    def gamma0_chart(self, fld: ChristoffelField, z_chart: np.ndarray) -> np.ndarray:
        """Chart-coordinate symbols G'^0_{ab} at a chart point (dense matrix)."""
        z_chart = np.asarray(z_chart, dtype=float)
        zc = self.to_collar(z_chart[None, :])[0]
        G = fld.gamma(zc)
        dim = self.n + 1
        d = z_chart[1:] - self.center
        J = np.zeros((dim, dim))
        J[0, 0] = -1.0
        J[0, 1:] = -2.0 * self.q * d
        J[1:, 1:] = np.eye(self.n)
        w = np.zeros(dim)
        w[0] = -1.0
        w[1:] = -2.0 * self.q * d
        pulled = np.einsum("k,kij,ia,jb->ab", w, G, J, J)
        pulled[1:, 1:] += 2.0 * self.q * np.eye(self.n)
        return pulled


# ---------------------------------------------------------------------------
# cutoff and configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CutoffProfile:
    """Even C^2 cutoff chi(t) = ((1 - (t/M)^2)_+)^3, chi(0) = 1, support [-M, M]."""

    M: float = 1.0

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        u = 1.0 - (t / self.M) ** 2
        return np.where(u > 0.0, u, 0.0) ** 3


@dataclass(frozen=True)
class NormalOperatorConfig:
    """One instance of the conjugated microlocalized normal operator."""

    boundary: ArtificialBoundary
    chi: CutoffProfile
    sigma: float = 1.0
    eta: float = 0.0
    c0: float = 0.05
    delta1: float = 0.35
    delta2: float = 0.7
    C_tilde: float = 1.0
    n_polar: int = 32
    n_azimuth: int = 64
    t_steps: int = 160
    n_theta: int = 48
    fill_radius_cells: float = 1.5

    def eta_bar(self, dim: int) -> np.ndarray:
        out = np.zeros(dim)
        out[0] = self.eta
        return out

    def band_condition_ok(self, x_values) -> bool:
        """M x <= C_tilde sqrt(x): the cutoff support implies the locality bound."""
        x = np.asarray(x_values, dtype=float)
        x = x[x > 0.0]
        return bool(np.all(self.chi.M * np.sqrt(x) <= self.C_tilde))

    def config_hash(self, extra: dict | None = None) -> str:
        payload = {
            "q": self.boundary.q,
            "y_p": list(self.boundary.y_p),
            "M": self.chi.M,
            "sigma": self.sigma,
            "eta": self.eta,
            "c0": self.c0,
            "delta1": self.delta1,
            "delta2": self.delta2,
            "C_tilde": self.C_tilde,
            "sphere": [self.n_polar, self.n_azimuth],
            "t_steps": self.t_steps,
            "n_theta": self.n_theta,
        }
        if extra:
            payload.update(extra)
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def translate_operator(config: NormalOperatorConfig, eta: float) -> NormalOperatorConfig:
    """Config of the translated operator; kernel arguments shift by (eta, 0)."""
    if eta < 0.0:
        raise ValueError("eta must be nonnegative")
    return replace(config, eta=eta)


# ---------------------------------------------------------------------------
# sphere-band quadrature and the averaged transforms
# ---------------------------------------------------------------------------


def sphere_band_quadrature(x: float, M: float, n_polar: int, n_azimuth: int):
    """Product rule on the unit sphere restricted to |lambda| <= M |omega| x.

    Gauss-Legendre in the polar component u = lambda, uniform midpoint rule in
    azimuth; returns directions (k, 3), weights, and the cutoff arguments
    lambda / (x |omega|).
    """
    u_star = M * x / np.sqrt(1.0 + (M * x) ** 2)
    nodes, wts = np.polynomial.legendre.leggauss(n_polar)
    u = nodes * u_star
    wu = wts * u_star
    theta = 2.0 * np.pi * (np.arange(n_azimuth) + 0.5) / n_azimuth
    wt = 2.0 * np.pi / n_azimuth
    su = np.sqrt(1.0 - u * u)
    V = np.empty((n_polar * n_azimuth, 3))
    V[:, 0] = np.repeat(u, n_azimuth)
    V[:, 1] = np.repeat(su, n_azimuth) * np.tile(np.cos(theta), n_polar)
    V[:, 2] = np.repeat(su, n_azimuth) * np.tile(np.sin(theta), n_polar)
    W = np.repeat(wu, n_azimuth) * wt
    chi_arg = V[:, 0] / (x * np.sqrt(np.sum(V[:, 1:] ** 2, axis=1)))
    return V, W, chi_arg


def _transform_values(fld, config, z_chart, f, conjugate: bool):
    """Common core of apply_A / apply_A_sigma: the weighted direction sums."""
    boundary = config.boundary
    dim = fld.dim
    z_chart = np.asarray(z_chart, dtype=float)
    x = z_chart[0]
    if x < 0.0:
        raise DomainError("apply_A requires x >= 0")
    if x == 0.0:
        warnings.warn("band degenerates at x = 0; returning 0", DegenerateBandWarning)
        return 0.0
    V, W, chi_arg = sphere_band_quadrature(x, config.chi.M, config.n_polar, config.n_azimuth)
    chi_vals = config.chi(chi_arg)
    keep = chi_vals > 0.0
    V, W, chi_vals = V[keep], W[keep], chi_vals[keep]
    if V.shape[0] == 0:
        return 0.0
    z_shift = z_chart - config.eta_bar(dim)
    Zc = np.broadcast_to(z_shift, (V.shape[0], dim))
    Zcol = boundary.to_collar(Zc)
    Vcol = boundary.vel_to_collar(Zc, V)
    # Composite Simpson in t over [0, delta1], both time directions.  The
    # conjugated integrand decays on a t-scale ~ x near the row point, so the
    # node budget is split between a dense panel [0, ~12x] and the tail.
    m = config.t_steps if config.t_steps % 4 == 0 else config.t_steps + (4 - config.t_steps % 4)
    t_cut = min(12.0 * x / max(config.sigma * config.chi.M, 1e-2), config.delta1)
    if conjugate and t_cut < config.delta1:
        m2 = m // 2
        ta = np.linspace(0.0, t_cut, m2 + 1)
        tb = np.linspace(t_cut, config.delta1, m2 + 1)
        wa = np.ones(m2 + 1)
        wa[1:-1:2], wa[2:-1:2] = 4.0, 2.0
        wa *= (ta[1] - ta[0]) / 3.0
        wb = np.ones(m2 + 1)
        wb[1:-1:2], wb[2:-1:2] = 4.0, 2.0
        wb *= (tb[1] - tb[0]) / 3.0
        t_nodes = np.concatenate([ta, tb[1:]])
        simp = np.concatenate([wa, wb[1:]])
        simp[m2] += wb[0]
    else:
        t_nodes = np.linspace(0.0, config.delta1, m + 1)
        simp = np.ones(m + 1)
        simp[1:-1:2], simp[2:-1:2] = 4.0, 2.0
        simp *= (t_nodes[1] - t_nodes[0]) / 3.0
    total = np.zeros(V.shape[0])
    n_nodes = t_nodes.size
    for sgn in (+1.0, -1.0):
        # t = 0 is an endpoint of each one-sided sum; the two endpoint weights
        # add up to the correct interior weight of the two-sided rule
        zt = path_batch(fld, Zcol, sgn * Vcol, t_nodes)  # (n_nodes, k, dim)
        pts = boundary.to_chart(zt.reshape(-1, dim)) + config.eta_bar(dim)
        vals = np.asarray(f(pts), dtype=float).reshape(n_nodes, -1)
        if conjugate:
            expo = config.sigma * (1.0 / np.maximum(pts[:, 0], 1e-300) - 1.0 / x)
            vals = vals * np.exp(np.clip(expo, -700.0, 700.0)).reshape(n_nodes, -1)
        total += np.einsum("t,tk->k", simp, vals)
    return float(np.sum(W * chi_vals * total))


def apply_A(fld: ChristoffelField, config: NormalOperatorConfig, f, z_chart) -> float:
    """Cutoff-averaged transform: int_{S_z} chi(lambda/(|omega| x)) I f(v) dmu.

    Works in the translated picture: geodesics start at z - (eta, 0); f is
    evaluated at the shifted-back points, so f always lives on {x >= 0}.
    """
    return _transform_values(fld, config, z_chart, f, conjugate=False)


def apply_A_sigma(
    fld: ChristoffelField, config: NormalOperatorConfig, f, z_chart, fused: bool = True
) -> float:
    """Conjugated operator x^{-2} e^{-sigma/x} A(e^{sigma/x} f).

    The fused path keeps the exponent difference sigma (1/x~ - 1/x), which is
    bounded on the cutoff band; the literal composition (fused=False) is exact
    but representable only away from small x.
    """
    z_chart = np.asarray(z_chart, dtype=float)
    x = z_chart[0]
    if x <= 0.0:
        raise DomainError("conjugated operator needs x_eta > 0")
    if fused:
        return x**-2 * _transform_values(fld, config, z_chart, f, conjugate=True)

    def weighted(pts):
        pts = np.asarray(pts, dtype=float)
        return np.asarray(f(pts), dtype=float) * np.exp(config.sigma / pts[:, 0])

    return x**-2 * np.exp(-config.sigma / x) * apply_A(fld, config, weighted, z_chart)


# ---------------------------------------------------------------------------
# explicit kernel
# ---------------------------------------------------------------------------


def kernel_batch(
    fld: ChristoffelField,
    config: NormalOperatorConfig,
    Z: np.ndarray,
    Z_tilde: np.ndarray,
    steps: int = 8,
):
    """Kernel values kappa(z, z~) for stacked chart-point pairs."""
    boundary = config.boundary
    dim = fld.dim
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    Z_tilde = np.atleast_2d(np.asarray(Z_tilde, dtype=float))
    shift = config.eta_bar(dim)
    V, det_inv, conv, rnorm = inverse_exp_batch(
        fld, Z - shift, Z_tilde - shift, chart=boundary, steps=steps
    )
    if not np.all(conv):
        bad = int(np.nonzero(~conv)[0][0])
        raise ShootingError(
            f"kernel shooting failed at pair {Z[bad]} -> {Z_tilde[bad]}",
            residual=float(rnorm[bad]),
        )
    x = Z[:, 0]
    x_t = Z_tilde[:, 0]
    vy = np.sqrt(np.sum(V[:, 1:] ** 2, axis=1))
    with np.errstate(divide="ignore", invalid="ignore"):
        P = np.where(vy > 0.0, V[:, 0] / (x * np.where(vy == 0.0, 1.0, vy)), np.inf)
    chi_vals = config.chi(np.where(np.isfinite(P), P, config.chi.M + 1.0))
    vnorm = np.linalg.norm(V, axis=1)
    out = np.zeros(Z.shape[0])
    pos = (chi_vals > 0.0) & (vnorm > 0.0)
    if np.any(pos):
        expo = np.clip(config.sigma * (1.0 / x_t[pos] - 1.0 / x[pos]), -700.0, 700.0)
        out[pos] = (
            x[pos] ** -2
            * np.exp(expo)
            * 2.0
            * chi_vals[pos]
            * det_inv[pos]
            / vnorm[pos] ** fld.n
        )
    return out


def kernel_direct(
    fld: ChristoffelField, config: NormalOperatorConfig, z, z_tilde, steps: int = 8
) -> float:
    """Kernel value at one chart-point pair (z != z_tilde)."""
    z = np.asarray(z, dtype=float)
    z_tilde = np.asarray(z_tilde, dtype=float)
    if np.allclose(z, z_tilde):
        raise DomainError("kernel_direct requires z != z_tilde")
    return float(kernel_batch(fld, config, z[None, :], z_tilde[None, :], steps=steps)[0])


# ---------------------------------------------------------------------------
# radial grids and matrix assembly
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RadialGrid:
    """Cell-centered product grid in (x, s = |y - y_p|) over [0,x_max]x[0,s_max]."""

    nx: int
    ns: int
    x_max: float
    s_max: float

    @property
    def dx(self) -> float:
        return self.x_max / self.nx

    @property
    def ds(self) -> float:
        return self.s_max / self.ns

    @property
    def size(self) -> int:
        return self.nx * self.ns

    def nodes(self):
        """Flattened (x, s) node arrays, x fastest within each s block."""
        x = (np.arange(self.nx) + 0.5) * self.dx
        s = (np.arange(self.ns) + 0.5) * self.ds
        X, S = np.meshgrid(x, s, indexing="ij")
        return X.ravel(), S.ravel()

    def weights(self) -> np.ndarray:
        """Annulus measure 2 pi s dx ds per cell."""
        _, S = self.nodes()
        return 2.0 * np.pi * S * self.dx * self.ds

    def u_mask(self, boundary: ArtificialBoundary, eta: float) -> np.ndarray:
        """Nodes of the (translated) lens region: x <= eta - q s^2."""
        X, S = self.nodes()
        return X <= eta - boundary.q * S * S

    def refine(self) -> "RadialGrid":
        return RadialGrid(2 * self.nx, 2 * self.ns, self.x_max, self.s_max)


@dataclass
class OperatorMatrix:
    """Dense quadrature discretization: entries[i, j] ~ int_cell_j kappa(z_i, .) dz~."""

    entries: np.ndarray
    grid: RadialGrid
    config: NormalOperatorConfig
    field_tag: str
    config_hash: str

    @property
    def col_weights(self) -> np.ndarray:
        # entries already integrate the angular direction; the planar cell
        # measure dx ds is folded in, so applying to samples is a plain dot
        return np.ones(self.grid.size)

    def apply(self, f_samples: np.ndarray) -> np.ndarray:
        return self.entries @ f_samples


_BIG_R = 1e18
_GL6 = np.polynomial.legendre.leggauss(6)


def _direction_grid(n_u: int, n_psi: int):
    """Sphere directions (u = polar component, psi = azimuth in [0, pi]) x 2."""
    un, uw = np.polynomial.legendre.leggauss(n_u)
    psis = np.pi * (np.arange(n_psi) + 0.5) / n_psi
    U = np.repeat(un, n_psi)
    WU = np.repeat(uw, n_psi)
    PS = np.tile(psis, n_u)
    Yn = np.sqrt(np.maximum(1.0 - U * U, 0.0))
    return U, Yn, np.cos(PS), np.sin(PS), WU * (np.pi / n_psi) * 2.0


def _quad_le_vec(a, b, c):
    """Solve a R^2 + b R + c <= 0 (a >= 0), vectorized: (lo, hi, nonempty)."""
    lo = np.full_like(b, _BIG_R)
    hi = np.full_like(b, -_BIG_R)
    lin = a < 1e-30
    with np.errstate(divide="ignore", invalid="ignore"):
        root = np.where(np.abs(b) > 1e-30, -c / np.where(b == 0.0, 1.0, b), 0.0)
    # linear cases
    lo = np.where(lin & (b > 1e-30), -_BIG_R, lo)
    hi = np.where(lin & (b > 1e-30), root, hi)
    lo = np.where(lin & (b < -1e-30), root, lo)
    hi = np.where(lin & (b < -1e-30), _BIG_R, hi)
    allR = lin & (np.abs(b) <= 1e-30) & (c <= 0.0)
    lo = np.where(allR, -_BIG_R, lo)
    hi = np.where(allR, _BIG_R, hi)
    # quadratic cases
    disc = b * b - 4.0 * a * c
    quad = ~lin & (disc > 0.0)
    sq = np.sqrt(np.where(disc > 0.0, disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        r1 = np.where(quad, (-b - sq) / np.where(a == 0.0, 1.0, 2.0 * a), 0.0)
        r2 = np.where(quad, (-b + sq) / np.where(a == 0.0, 1.0, 2.0 * a), 0.0)
    lo = np.where(quad, r1, lo)
    hi = np.where(quad, r2, hi)
    return lo, hi, hi > lo


def _near_cell_nodes(x, s, g0, dirs, cell, M):
    """Polar R-quadrature nodes covering one cell annulus from the row point.

    Returns (R, dir_index, weight) for Gauss-Legendre nodes on the R-segments
    where z~(R, omega) lies in the cell and the cutoff can be nonzero.
    """
    U, Yn, cps, sps, wd = dirs
    Zh0, Zh1, Zh2 = x * U, Yn * cps, Yn * sps
    p_bar = 0.5 * (
        g0[0, 0] * Zh0 * Zh0
        + g0[1, 1] * Zh1 * Zh1
        + g0[2, 2] * Zh2 * Zh2
        + 2.0 * (g0[0, 1] * Zh0 * Zh1 + g0[0, 2] * Zh0 * Zh2 + g0[1, 2] * Zh1 * Zh2)
    )
    x_lo, x_hi, s_lo, s_hi = cell
    # cutoff support |U + R p_bar| <= M Yn, padded by half its width
    small = np.abs(p_bar) < 1e-9
    pb = np.where(small, 1.0, p_bar)
    r1 = (-M * Yn - U) / pb
    r2 = (M * Yn - U) / pb
    clo, chi_ = np.minimum(r1, r2), np.maximum(r1, r2)
    w = chi_ - clo
    clo, chi_ = clo - 0.5 * w - 1e-9, chi_ + 0.5 * w + 1e-9
    inb = np.abs(U) <= 1.5 * M * Yn + 1e-9
    cap_lo = np.where(small, 0.0, np.maximum(clo, 0.0))
    cap_hi = np.where(small, np.where(inb, _BIG_R, -1.0), chi_)
    # x~ = x + x^2 R U inside [x_lo, x_hi]
    flat = np.abs(U) < 1e-13
    xu = np.where(flat, 1.0, x * x * U)
    rA = (x_lo - x) / xu
    rB = (x_hi - x) / xu
    xs_lo = np.where(U > 0.0, np.maximum(rA, 0.0), np.maximum(rB, 0.0))
    xs_hi = np.where(U > 0.0, rB, rA)
    in_x = (x_lo <= x) & (x <= x_hi)
    xs_lo = np.where(flat, 0.0, xs_lo)
    xs_hi = np.where(flat, np.where(in_x, _BIG_R, -1.0), xs_hi)
    # s~ inside [s_lo, s_hi]: quadratics in R
    a = (x * Yn) ** 2
    b = 2.0 * x * s * Yn * cps
    o_lo, o_hi, o_ok = _quad_le_vec(a, b, s * s - s_hi * s_hi)
    i_lo, i_hi, i_ok = _quad_le_vec(a, b, s * s - s_lo * s_lo)
    base_lo = np.maximum(np.maximum(cap_lo, xs_lo), np.where(o_ok, o_lo, _BIG_R))
    base_hi = np.minimum(np.minimum(cap_hi, xs_hi), np.where(o_ok, o_hi, -_BIG_R))
    base_lo = np.maximum(base_lo, 0.0)
    s1_hi = np.where(i_ok, np.minimum(base_hi, i_lo), base_hi)
    s2_lo = np.where(i_ok, np.maximum(base_lo, i_hi), 1.0)
    s2_hi = np.where(i_ok, base_hi, 0.0)
    slots = [(base_lo, s1_hi), (s2_lo, s2_hi)]
    gl_x, gl_w = _GL6
    R_out, d_out, w_out = [], [], []
    for lo, hi in slots:
        ok = np.nonzero(hi > lo + 1e-14)[0]
        if ok.size == 0:
            continue
        half = 0.5 * (hi[ok] - lo[ok])
        mid = 0.5 * (hi[ok] + lo[ok])
        R = mid[:, None] + half[:, None] * gl_x[None, :]
        Wq = half[:, None] * gl_w[None, :] * wd[ok][:, None]
        R_out.append(R.ravel())
        d_out.append(np.repeat(ok, gl_x.size))
        w_out.append(Wq.ravel())
    if not R_out:
        return None
    return np.concatenate(R_out), np.concatenate(d_out), np.concatenate(w_out)


def _cubic_weights(t):
    """Keys cubic-convolution weights (a = -1/2) for offsets (-1, 0, 1, 2)."""
    t2, t3 = t * t, t * t * t
    return (
        -0.5 * t + t2 - 0.5 * t3,
        1.0 - 2.5 * t2 + 1.5 * t3,
        0.5 * t + 2.0 * t2 - 1.5 * t3,
        -0.5 * t2 + 0.5 * t3,
    )


def _axis_weights(pos, h, count):
    """Sample-interpolation stencil along one grid axis: (base, 4 weights).

    Cubic convolution in the interior, linear collapse near the edges (the
    built-in test functions vanish there anyway).
    """
    g = np.clip(pos / h - 0.5, 0.0, count - 1.0)
    i0 = np.clip(g.astype(int), 0, max(count - 2, 0))
    t = g - i0
    w_m1, w_0, w_1, w_2 = _cubic_weights(t)
    interior = (i0 >= 1) & (i0 <= count - 3)
    lin0, lin1 = 1.0 - t, t
    w_m1 = np.where(interior, w_m1, 0.0)
    w_2 = np.where(interior, w_2, 0.0)
    w_0 = np.where(interior, w_0, lin0)
    w_1 = np.where(interior, w_1, lin1)
    return i0, (w_m1, w_0, w_1, w_2)


def _bilinear_scatter(entries, rows, xs, ss, vals, grid: RadialGrid):
    """Distribute node masses onto the surrounding f-sample columns.

    Cubic-convolution stencils keep the matrix action a fourth-order
    interpolatory quadrature of the integral against sampled f.
    """
    i0, wx = _axis_weights(xs, grid.dx, grid.nx)
    j0, ws = _axis_weights(ss, grid.ds, grid.ns)
    flat = entries.ravel()
    ncol = grid.size
    for di, wxa in zip((-1, 0, 1, 2), wx):
        ii = np.clip(i0 + di, 0, grid.nx - 1)
        for dj, wsa in zip((-1, 0, 1, 2), ws):
            w = wxa * wsa
            if not np.any(w):
                continue
            jj = np.clip(j0 + dj, 0, grid.ns - 1)
            np.add.at(flat, rows * ncol + ii * grid.ns + jj, vals * w)


_GL5 = np.polynomial.legendre.leggauss(5)
_GL3 = np.polynomial.legendre.leggauss(3)


def _window_x_nodes(lo, hi, x_row, sigma):
    """Gauss nodes on the cutoff window in the x~ offset, graded toward lo.

    The conjugation weight exp(sigma (1/x~ - 1/x)) varies on the x~ scale
    x^2/sigma, often much finer than the window; three geometric panels with
    four Gauss nodes each keep the weighted integral accurate.  lo/hi are
    (m,) arrays; returns offsets and weights of shape (m, 12).
    """
    w = hi - lo
    edges = np.stack([lo, lo + w / 9.0, lo + w / 3.0, hi], axis=-1)
    gx, gw = _GL5
    offs = []
    wts = []
    for k in range(3):
        a, b = edges[..., k], edges[..., k + 1]
        half = 0.5 * (b - a)
        mid = 0.5 * (b + a)
        offs.append(mid[..., None] + half[..., None] * gx[None, :])
        wts.append(half[..., None] * gw[None, :])
    return np.concatenate(offs, axis=-1), np.concatenate(wts, axis=-1)


def _accumulate_window(entries, grid, config, n, rows, x_row, x_base, Vb, Jinv, y_w,
                       x_lo, x_hi, extra_w):
    """Window-adapted x~ integration around linearized shooting data.

    For each node (one shooting solve at x~ = x_base), integrates the kernel
    over the x~ segment of the cutoff window inside [x_lo, x_hi] using the
    linearization v(x~) = V + (x~ - x_base) d(exp^-1)/dx~, and scatters the
    mass onto the f-sample columns.  extra_w carries all transverse quadrature
    weights (including any Jacobians).
    """
    M = config.chi.M
    Jx = Jinv[:, :, 0]
    lam0 = Vb[:, 0]
    om0 = np.sqrt(Vb[:, 1] ** 2 + Vb[:, 2] ** 2)
    p = Jx[:, 0]
    safe_p = np.where(np.abs(p) > 1e-12, p, 1.0)
    center = np.where(np.abs(p) > 1e-12, -lam0 / safe_p, 0.0)
    halfw = np.where(
        np.abs(p) > 1e-12,
        (1.25 * M * x_row * om0 + 1e-12) / np.abs(safe_p),
        x_hi - x_lo,
    )
    lo = np.maximum(x_base + center - halfw, x_lo)
    hi = np.minimum(x_base + center + halfw, x_hi)
    ok = hi > lo
    if not np.any(ok):
        return
    offs, wts = _window_x_nodes(lo - x_base, hi - x_base, x_row, config.sigma)
    for a in range(offs.shape[1]):
        da = offs[:, a]
        Vl = Vb + da[:, None] * Jx
        x_sub = x_base + da
        vy = np.sqrt(Vl[:, 1] ** 2 + Vl[:, 2] ** 2)
        with np.errstate(divide="ignore", invalid="ignore"):
            P = np.where(vy > 0.0, Vl[:, 0] / (x_row * np.where(vy == 0.0, 1.0, vy)), np.inf)
        chi_v = config.chi(np.where(np.isfinite(P), P, M + 1.0))
        vn = np.linalg.norm(Vl, axis=1)
        live = ok & (chi_v > 0.0) & (vn > 0.0) & (x_sub > 0.0)
        if not np.any(live):
            continue
        expo = np.clip(config.sigma * (1.0 / x_sub[live] - 1.0 / x_row[live]), -700.0, 700.0)
        kv = (
            x_row[live] ** -2
            * np.exp(expo)
            * 2.0
            * chi_v[live]
            / vn[live] ** n
        )
        wt = wts[live, a] * extra_w[live]
        s_sub = np.sqrt(y_w[live, 0] ** 2 + y_w[live, 1] ** 2)
        _bilinear_scatter(entries, rows[live], x_sub[live], s_sub, kv * wt, grid)


def assemble_matrix(
    fld: ChristoffelField,
    config: NormalOperatorConfig,
    grid: RadialGrid,
    field_tag: str = "hat",
    chunk: int = 60_000,
    steps: int = 8,
    rows: np.ndarray | None = None,
    band_cols: float = 1.5,
    n_phi: int = 20,
    n_rho: int = 8,
    tail_factor: int = 4,
    tail_cells: float = 7.0,
    _skip_cols: bool = False,
    _skip_band: bool = False,
) -> OperatorMatrix:
    """Dense matrix of the translated conjugated operator on the radial grid.

    Row i quadratures f -> (A f)(z_i) against f samples at the grid nodes.
    The kernel support is a shell that is thinner than a grid cell in x~
    wherever x is small, so the x~ direction is never sampled on the grid:
    every transverse node shoots the inverse exponential once, linearizes it
    across the cutoff window in x~, and integrates the kernel over graded
    Gauss nodes on the window (the |det d exp^{-1}| factor of the kernel is
    dropped on the window at its node value -- it is 1 + O(chord) there).

    Transverse nodes come in three tiers: an annulus band of the row's
    neighboring s~ columns integrated in polar (rho, phi) around the row
    point, where the (column, angle) product grid cannot resolve the kernel;
    the remaining columns on a midpoint angle grid; and, beyond
    ``tail_cells`` columns, the same with ``tail_factor`` fewer angles (the
    kernel varies on the separation scale there).  All nodes scatter their
    mass bilinearly onto the four surrounding sample columns, so the matrix
    action is a genuine quadrature of the operator on sampled functions.
    """
    boundary = config.boundary
    if not config.band_condition_ok([grid.x_max]):
        raise DomainError("cutoff band violates the locality condition M x <= C~ sqrt(x)")
    X, S = grid.nodes()
    Rsz = grid.size
    n = fld.n
    dx, ds = grid.dx, grid.ds
    M = config.chi.M
    shift = config.eta_bar(3)
    entries = np.zeros((Rsz, Rsz))
    row_list = range(Rsz) if rows is None else rows

    # angle grids for the column tiers
    th_fine = np.pi * (np.arange(config.n_theta) + 0.5) / config.n_theta
    w_fine = np.pi / config.n_theta
    n_coarse = max(config.n_theta // tail_factor, 8)
    th_coarse = np.pi * (np.arange(n_coarse) + 0.5) / n_coarse
    w_coarse = np.pi / n_coarse
    # polar band grid around the row point
    phis = np.pi * (np.arange(n_phi) + 0.5) / n_phi
    w_phi = np.pi / n_phi
    g_rho, w_rho = np.polynomial.legendre.leggauss(n_rho)
    gb, wb = _GL3

    pend = {"rows": [], "xr": [], "xb": [], "Z": [], "Zt": [], "yw": [], "w": []}
    count = [0]

    def flush():
        if not pend["rows"]:
            return
        rows_b = np.concatenate(pend["rows"])
        x_row = np.concatenate(pend["xr"])
        x_base = np.concatenate(pend["xb"])
        Zb = np.concatenate(pend["Z"])
        Ztb = np.concatenate(pend["Zt"])
        y_w = np.concatenate(pend["yw"])
        extra = np.concatenate(pend["w"])
        V, det_inv, conv, rn, J = inverse_exp_batch(
            fld, Zb - shift, Ztb - shift, chart=boundary, steps=steps, return_jac=True
        )
        if not np.all(conv):
            bad = int(np.nonzero(~conv)[0][0])
            raise ShootingError(
                f"kernel shooting failed at pair {Zb[bad]} -> {Ztb[bad]}",
                residual=float(rn[bad]),
            )
        Jinv = np.linalg.inv(J)
        _accumulate_window(
            entries, grid, config, n, rows_b, x_row, x_base, V, Jinv, y_w,
            np.zeros_like(x_base), np.full_like(x_base, grid.x_max),
            extra * det_inv,
        )
        for key in pend:
            pend[key].clear()
        count[0] = 0

    def push(rows_a, y_t, w_a, g0, z_row):
        """Queue transverse nodes: y_t are target y-positions, w_a weights."""
        k = rows_a.size
        dy1 = y_t[:, 0] - z_row[1]
        dy2 = y_t[:, 1] - z_row[2]
        quad = g0[1, 1] * dy1 * dy1 + 2.0 * g0[1, 2] * dy1 * dy2 + g0[2, 2] * dy2 * dy2
        x_base = np.clip(z_row[0] + 0.5 * quad, 0.25 * dx, grid.x_max)
        Zt = np.stack([x_base, y_t[:, 0], y_t[:, 1]], axis=-1)
        pend["rows"].append(rows_a)
        pend["xr"].append(np.full(k, z_row[0]))
        pend["xb"].append(x_base)
        pend["Z"].append(np.broadcast_to(z_row, (k, 3)).copy())
        pend["Zt"].append(Zt)
        pend["yw"].append(y_t)
        pend["w"].append(w_a)
        count[0] += k
        if count[0] >= chunk:
            flush()

    s_cols = (np.arange(grid.ns) + 0.5) * ds
    for i in row_list:
        x_i, s_i = X[i], S[i]
        z_row = np.array([x_i, s_i, 0.0])
        g0 = boundary.gamma0_chart(fld, z_row - shift)
        near_cols = np.abs(s_cols - s_i) <= band_cols * ds
        # conforming band edges: whole columns
        band_lo = max(s_cols[near_cols].min() - 0.5 * ds, 0.0)
        band_hi = s_cols[near_cols].max() + 0.5 * ds
        # --- polar band around the row point (mirror symmetry gives the x2) ---
        phi_arr = phis
        if not _skip_band:
            cphi = np.cos(phi_arr)
            a_out, b_out, ok_out = _quad_le_vec(
                np.ones(n_phi), 2.0 * s_i * cphi, np.full(n_phi, s_i * s_i - band_hi * band_hi)
            )
            a_in, b_in, ok_in = _quad_le_vec(
                np.ones(n_phi), 2.0 * s_i * cphi, np.full(n_phi, s_i * s_i - band_lo * band_lo)
            )
            lo1 = np.maximum(a_out, 0.0)
            hi1 = np.where(ok_in, np.maximum(a_in, 0.0), b_out)
            lo2 = np.maximum(np.where(ok_in, b_in, 1.0), 0.0)
            hi2 = np.where(ok_in, b_out, 0.0)
            for lo_seg, hi_seg in ((lo1, hi1), (lo2, hi2)):
                live = ok_out & (hi_seg > lo_seg + 1e-14)
                if not np.any(live):
                    continue
                idx = np.nonzero(live)[0]
                half = 0.5 * (hi_seg[idx] - lo_seg[idx])
                mid = 0.5 * (hi_seg[idx] + lo_seg[idx])
                for r_k in range(n_rho):
                    rho = mid + half * g_rho[r_k]
                    wq = half * w_rho[r_k] * w_phi * 2.0 * rho  # polar Jacobian
                    y_t = np.stack(
                        [s_i + rho * cphi[idx], rho * np.sin(phi_arr[idx])], axis=-1
                    )
                    push(np.full(idx.size, i), y_t, wq, g0, z_row)
        # --- column/angle tiers outside the band ---
        col_tiers = () if _skip_cols else (
            (
                (~near_cols) & (np.abs(s_cols - s_i) <= tail_cells * ds),
                th_fine,
                w_fine,
            ),
            ((np.abs(s_cols - s_i) > tail_cells * ds), th_coarse, w_coarse),
        )
        for cols_mask, th, wth in col_tiers:
            cols = np.nonzero(cols_mask)[0]
            if cols.size == 0:
                continue
            ct, st = np.cos(th), np.sin(th)
            for b in range(gb.size):
                s_sub = s_cols[cols] + 0.5 * ds * gb[b]
                wcell = 0.5 * ds * wb[b]
                y1 = s_sub[:, None] * ct[None, :]
                y2 = s_sub[:, None] * st[None, :]
                dyq = (y1 - s_i) ** 2 + y2**2
                # keep angles whose window can intersect the x~ box
                quad = (
                    g0[1, 1] * (y1 - s_i) ** 2
                    + 2.0 * g0[1, 2] * (y1 - s_i) * y2
                    + g0[2, 2] * y2**2
                )
                x_ctr = x_i + 0.5 * quad
                wwin = 1.4 * M * x_i * np.sqrt(dyq) + 0.5 * dx
                keep = (x_ctr + wwin > 0.0) & (x_ctr - wwin < grid.x_max) & (
                    dyq > (band_cols * ds) ** 2 * 0.999
                )
                cc, tt = np.nonzero(keep)
                if cc.size == 0:
                    continue
                y_t = np.stack([y1[cc, tt], y2[cc, tt]], axis=-1)
                # angles cover (0, pi); the lower half-plane mirrors
                wq = np.full(cc.size, 2.0 * wth * wcell) * s_sub[cc]
                push(np.full(cc.size, i), y_t, wq, g0, z_row)
    flush()
    h = config.config_hash({"grid": [grid.nx, grid.ns, grid.x_max, grid.s_max], "tag": field_tag})
    return OperatorMatrix(entries=entries, grid=grid, config=config, field_tag=field_tag, config_hash=h)


def _grid_derivatives(u: np.ndarray, grid: RadialGrid):
    """Central differences (one-sided at edges) of u(x, s) on the grid."""
    U = u.reshape(grid.nx, grid.ns)
    dU_dx = np.gradient(U, grid.dx, axis=0)
    dU_ds = np.gradient(U, grid.ds, axis=1)
    return dU_dx.ravel(), dU_ds.ravel()


def discrete_sc_norm(u: np.ndarray, grid: RadialGrid, k: int = 0, beta: float = 0.0) -> float:
    """Discrete scattering Sobolev norm on the radial grid, measure dx dy.

    k = 0: ||x^-beta u||_L2;  k = 1 adds the scattering derivatives
    x^-beta (x^2 du/dx) and x^-beta (x du/ds).
    """
    X, _ = grid.nodes()
    w = grid.weights()
    xb = X ** (-beta) if beta != 0.0 else np.ones_like(X)
    total = np.sum(w * (xb * u) ** 2)
    if k >= 1:
        dux, dus = _grid_derivatives(u, grid)
        total += np.sum(w * (xb * X * X * dux) ** 2)
        total += np.sum(w * (xb * X * dus) ** 2)
    return float(np.sqrt(total))


@dataclass(frozen=True)
class SchurReport:
    eta: float
    l2_bound: float
    h10_bound: float
    row_sup: float
    col_sup: float


def _schur_pair(E: np.ndarray, grid: RadialGrid):
    """Row/column L1 sups of an entry matrix (entries already carry dx ds)."""
    X, S = grid.nodes()
    row = np.abs(E).sum(axis=1)
    col = (np.abs(E) * (S[:, None] / S[None, :])).sum(axis=0)
    return float(row.max()), float(col.max())


def schur_estimate_E(
    mat_hat: OperatorMatrix, mat_bar: OperatorMatrix
) -> SchurReport:
    """Schur-test bounds for the difference operator on the radial sector.

    The L2 -> L2 bound is the geometric mean of the two L1 sups of the entry
    difference; the H^{1,0} bound adds the Schur bounds of the scattering
    derivatives of the kernel in the output variable (finite differences of
    the entry matrix along the row grid).
    """
    if mat_hat.grid != mat_bar.grid:
        raise ValueError("matrices must share a grid")
    grid = mat_hat.grid
    E = mat_hat.entries - mat_bar.entries
    r0, c0 = _schur_pair(E, grid)
    b0 = np.sqrt(r0 * c0)
    X, _ = grid.nodes()
    nxs = (grid.nx, grid.ns)
    Ex = np.gradient(E.reshape(*nxs, grid.size), grid.dx, axis=0).reshape(grid.size, grid.size)
    Es = np.gradient(E.reshape(*nxs, grid.size), grid.ds, axis=1).reshape(grid.size, grid.size)
    Ex *= (X * X)[:, None]
    Es *= X[:, None]
    rx, cx = _schur_pair(Ex, grid)
    rs, cs = _schur_pair(Es, grid)
    h10 = float(np.sqrt(b0**2 + rx * cx + rs * cs))
    return SchurReport(
        eta=mat_hat.config.eta, l2_bound=float(b0), h10_bound=h10, row_sup=r0, col_sup=c0
    )
