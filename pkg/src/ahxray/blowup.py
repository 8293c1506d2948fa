"""Blown-up double-space coordinates and lifted-kernel diagnostics.

Near the diagonal over the boundary, pairs (z, z~) are resolved by the polar
chart (x, y, R, theta): with X = (x~/x - 1)/x and Y = (y~ - y)/x one sets
R = sqrt(X^2 + |Y|^2), theta = (X, Y)/R.  R is the defining function of the
front face created by the final diagonal blow-up, x of the middle face.  In
these variables the conjugated kernel lifts to a bounded continuous function
whose boundary value at R = 0 is independent of the connection, and which
decays exponentially in R on rays with a positive x-component.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .connection import ChristoffelField
from .errors import DomainError
from .geodesic import inverse_exp_batch
from .normalop import CutoffProfile, NormalOperatorConfig, kernel_batch

__all__ = [
    "BlowupPoint",
    "to_blowup",
    "right_chart",
    "defining_functions",
    "density_factor",
    "lifted_kernel",
    "lifted_kernel_batch",
    "diagonal_limit",
    "decay_scan",
    "DecayFit",
    "kernel_difference_diag",
    "DifferenceReport",
    "extract_G",
]


@dataclass(frozen=True)
class BlowupPoint:
    """Polar chart point; theta = (Xhat, Yhat) is a Euclidean unit vector."""

    x: float
    y: np.ndarray
    R: float
    theta: np.ndarray | None
    diagonal: bool = False

    def __post_init__(self):
        if self.x < 0.0 or self.R < 0.0:
            raise ValueError("x and R must be nonnegative")
        if self.theta is not None:
            nrm = float(np.linalg.norm(self.theta))
            if abs(nrm - 1.0) > 1e-12:
                raise ValueError("theta must be a unit vector")

    @property
    def Xhat(self) -> float:
        return float(self.theta[0])

    @property
    def Yhat(self) -> np.ndarray:
        return np.asarray(self.theta[1:], dtype=float)

    def downstairs(self):
        """Forward map: (z, z~) with x~ = x + x^2 R Xhat, y~ = y + x R Yhat."""
        if self.theta is None:
            th = np.zeros(1 + self.y.size)
        else:
            th = self.theta
        z = np.concatenate([[self.x], self.y])
        zt = np.concatenate(
            [[self.x + self.x**2 * self.R * th[0]], self.y + self.x * self.R * th[1:]]
        )
        return z, zt


def to_blowup(x: float, y, x_tilde: float, y_tilde) -> BlowupPoint:
    """Left-factor polar chart of a pair; round-trips with ``downstairs``."""
    if x <= 0.0:
        raise DomainError("the interior polar chart needs x > 0")
    y = np.asarray(y, dtype=float)
    y_tilde = np.asarray(y_tilde, dtype=float)
    X = (x_tilde / x - 1.0) / x
    Y = (y_tilde - y) / x
    R = float(np.sqrt(X * X + np.sum(Y * Y)))
    if R == 0.0:
        return BlowupPoint(x=x, y=y, R=0.0, theta=None, diagonal=True)
    theta = np.concatenate([[X], Y]) / R
    return BlowupPoint(x=x, y=y, R=R, theta=theta)


def right_chart(x: float, y, x_tilde: float, y_tilde):
    """Right-factor mirror chart: (x~, y~, R~, theta~) with the roles swapped."""
    if x_tilde <= 0.0:
        raise DomainError("the right-factor chart needs x~ > 0")
    y = np.asarray(y, dtype=float)
    y_tilde = np.asarray(y_tilde, dtype=float)
    Xt = (x - x_tilde) / x_tilde**2
    Yt = (y - y_tilde) / x_tilde
    Rt = float(np.sqrt(Xt * Xt + np.sum(Yt * Yt)))
    theta = None if Rt == 0.0 else np.concatenate([[Xt], Yt]) / Rt
    return x_tilde, y_tilde, Rt, theta


def defining_functions(x: float, R: float, Xhat: float):
    """Defining functions of the three side faces in the polar chart.

    x01 = (1 + x R Xhat)/(2 + x R Xhat), x10 = 1/(2 + x R Xhat),
    x11 = (2 + x R Xhat)^2/(1 + R).
    """
    a = 2.0 + x * R * Xhat
    if a <= 0.0:
        raise DomainError("outside the chart: 2 + x R Xhat <= 0")
    return (1.0 + x * R * Xhat) / a, 1.0 / a, a * a / (1.0 + R)


def density_factor(x: float, R: float, Xhat: float, n: int) -> float:
    """(R+1)^{-1} (2 + x R Xhat)^n: makes the chart volume smooth and positive."""
    return (2.0 + x * R * Xhat) ** n / (R + 1.0)


def diagonal_limit(x: float, y, theta, chi: CutoffProfile, n: int = 2) -> float:
    """Front-face value 2^{1-n} chi(Xhat/|Yhat|) |Zhat|^{-n}, Zhat = (x Xhat, Yhat).

    Independent of the connection; vanishes as |Yhat| -> 0 with Xhat bounded
    away from zero because the cutoff has compact support.
    """
    theta = np.asarray(theta, dtype=float)
    Xh, Yh = theta[0], theta[1:]
    Yn = float(np.linalg.norm(Yh))
    if Yn == 0.0:
        return 0.0
    Zn = float(np.sqrt((x * Xh) ** 2 + Yn * Yn))
    return 2.0 ** (1 - n) * float(chi(np.asarray(Xh / Yn))) / Zn**n


def lifted_kernel_batch(
    fld: ChristoffelField,
    config: NormalOperatorConfig,
    x: float,
    y,
    R_values: np.ndarray,
    theta,
    steps: int = 8,
) -> np.ndarray:
    """Lifted kernel K along an R-ray at fixed (x, y, theta).

    K = kappa * x^{n+2} R^n / density_factor, with kappa the downstairs kernel
    value; bounded and continuous down to R = 0.
    """
    theta = np.asarray(theta, dtype=float)
    y = np.asarray(y, dtype=float)
    R_values = np.asarray(R_values, dtype=float)
    n = fld.n
    Z = np.tile(np.concatenate([[x], y]), (R_values.size, 1))
    Zt = np.empty_like(Z)
    Zt[:, 0] = x + x * x * R_values * theta[0]
    Zt[:, 1:] = y + x * R_values[:, None] * theta[1:]
    kappa = kernel_batch(fld, config, Z, Zt, steps=steps)
    dens = (2.0 + x * R_values * theta[0]) ** n / (R_values + 1.0)
    return kappa * x ** (n + 2) * R_values**n / dens


def lifted_kernel(
    fld: ChristoffelField, config: NormalOperatorConfig, pt: BlowupPoint, steps: int = 8
) -> float:
    """Lifted kernel value at one blow-up point (R > 0)."""
    if pt.diagonal or pt.R == 0.0:
        return diagonal_limit(pt.x, pt.y, pt.theta, config.chi, fld.n)
    return float(
        lifted_kernel_batch(fld, config, pt.x, pt.y, np.array([pt.R]), pt.theta, steps=steps)[0]
    )


@dataclass(frozen=True)
class DecayFit:
    slope: float
    intercept: float
    n_points: int
    vanishes: bool
    R_used: np.ndarray
    K_values: np.ndarray


def decay_scan(
    fld: ChristoffelField,
    config: NormalOperatorConfig,
    x: float,
    y,
    theta,
    R_grid,
    floor: float = 1e-280,
) -> DecayFit:
    """Least-squares slope of log |K| against R along a ray.

    Rays whose cutoff band is exited at every grid point report the
    identically-vanishing branch instead of a rate.
    """
    R_grid = np.asarray(R_grid, dtype=float)
    K = lifted_kernel_batch(fld, config, x, y, R_grid, theta)
    pos = K > floor
    if pos.sum() < 2:
        return DecayFit(
            slope=0.0, intercept=0.0, n_points=int(pos.sum()), vanishes=True,
            R_used=R_grid[pos], K_values=K[pos],
        )
    A = np.stack([R_grid[pos], np.ones(int(pos.sum()))], axis=1)
    coef, *_ = np.linalg.lstsq(A, np.log(np.abs(K[pos])), rcond=None)
    return DecayFit(
        slope=float(coef[0]), intercept=float(coef[1]), n_points=int(pos.sum()),
        vanishes=False, R_used=R_grid[pos], K_values=K[pos],
    )


@dataclass(frozen=True)
class DifferenceReport:
    """Front-face diagnostics of the kernel difference K_E = K_hat - K_bar."""

    eta: float
    sup_scaled: float  # sup |K_E| / min(R, 1)
    sup_dR: float  # sup |d K_E / d R| (finite differences along rays)
    sup_x_deriv: float  # sup |x^2 dK_E/dx| (finite differences in x)
    n_samples: int


def kernel_difference_diag(
    fld_hat: ChristoffelField,
    fld_bar: ChristoffelField,
    config: NormalOperatorConfig,
    x_values,
    theta_list,
    R_grid,
    y=None,
    fd_rel: float = 1e-3,
) -> DifferenceReport:
    """sup(K_E / min(R, 1)) and finite-difference derivative sups on samples.

    All quantities are finite for every eta and vanish identically at eta = 0,
    where the two connections are sampled only where they agree.
    """
    R_grid = np.asarray(R_grid, dtype=float)
    y = np.zeros(fld_hat.n) if y is None else np.asarray(y, dtype=float)
    sup_scaled = 0.0
    sup_dR = 0.0
    sup_dx = 0.0
    count = 0
    for x in np.atleast_1d(x_values):
        for theta in theta_list:
            KE = lifted_kernel_batch(fld_hat, config, x, y, R_grid, theta) - lifted_kernel_batch(
                fld_bar, config, x, y, R_grid, theta
            )
            count += R_grid.size
            sup_scaled = max(sup_scaled, float(np.max(np.abs(KE) / np.minimum(R_grid, 1.0))))
            dR = R_grid * fd_rel + 1e-6
            KEp = lifted_kernel_batch(fld_hat, config, x, y, R_grid + dR, theta) - (
                lifted_kernel_batch(fld_bar, config, x, y, R_grid + dR, theta)
            )
            sup_dR = max(sup_dR, float(np.max(np.abs(KEp - KE) / dR)))
            hx = x * fd_rel
            KEx = lifted_kernel_batch(fld_hat, config, x + hx, y, R_grid, theta) - (
                lifted_kernel_batch(fld_bar, config, x + hx, y, R_grid, theta)
            )
            sup_dx = max(sup_dx, float(np.max(x * x * np.abs(KEx - KE) / hx)))
    return DifferenceReport(
        eta=config.eta, sup_scaled=sup_scaled, sup_dR=sup_dR, sup_x_deriv=sup_dx, n_samples=count
    )


def extract_G(
    fld: ChristoffelField,
    config: NormalOperatorConfig,
    z,
    scale: float = 1e-3,
    n_probe: int = 12,
    seed: int = 7,
) -> np.ndarray:
    """Quadratic form G with |exp^{-1}(z~)|^2 = G_ij (z~-z)^i (z~-z)^j, near z.

    Solved in least squares from probe displacements of size ``scale``; at the
    diagonal G is the identity.
    """
    z = np.asarray(z, dtype=float)
    dim = fld.dim
    rng = np.random.default_rng(seed)
    D = rng.normal(size=(n_probe, dim))
    D *= scale / np.linalg.norm(D, axis=1)[:, None]
    shift = config.eta_bar(dim)
    Z = np.tile(z - shift, (n_probe, 1))
    V, _, conv, _ = inverse_exp_batch(fld, Z, Z + D, chart=config.boundary)
    if not np.all(conv):
        raise DomainError("probe shooting failed while extracting the quadratic form")
    lhs = np.sum(V * V, axis=1)
    cols = []
    for i in range(dim):
        for j in range(i, dim):
            f = 1.0 if i == j else 2.0
            cols.append(f * D[:, i] * D[:, j])
    A = np.stack(cols, axis=1)
    coef, *_ = np.linalg.lstsq(A, lhs, rcond=None)
    G = np.zeros((dim, dim))
    k = 0
    for i in range(dim):
        for j in range(i, dim):
            G[i, j] = coef[k]
            G[j, i] = coef[k]
            k += 1
    return G
