"""Built-in boundary metric families and their smooth profiles.

Every built-in family is conformal, ``h_rho = c(rho, y) * I`` with a scalar
profile ``c`` that is radial about a center point, which keeps all downstream
operators rotation-invariant.  The scalar profiles carry analytic first
derivatives; nothing here is differentiated numerically.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "RadialBump",
    "ScalarRFamily",
    "smooth_bump",
    "smooth_bump_dt",
    "smooth_plateau",
    "smooth_plateau_dt",
]


def smooth_bump(t):
    """C-infinity bump: exp(1 - 1/(1-t^2)) for |t| < 1, zero outside; value 1 at 0."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    inside = np.abs(t) < 1.0
    ti = t[inside]
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - ti * ti))
    return out


def smooth_bump_dt(t):
    """Derivative of :func:`smooth_bump`."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    inside = np.abs(t) < 1.0
    ti = t[inside]
    one_m = 1.0 - ti * ti
    out[inside] = np.exp(1.0 - 1.0 / one_m) * (-2.0 * ti / (one_m * one_m))
    return out


def _expstep(u):
    # f(u) = exp(-1/u) for u > 0, 0 otherwise; building block of the plateau.
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    pos = u > 0.0
    out[pos] = np.exp(-1.0 / u[pos])
    return out


def _expstep_dt(u):
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    pos = u > 0.0
    up = u[pos]
    out[pos] = np.exp(-1.0 / up) / (up * up)
    return out


def smooth_plateau(t, flat: float = 0.5):
    """C-infinity plateau: 1 for |t| <= flat, 0 for |t| >= 1, monotone between."""
    a = np.abs(np.asarray(t, dtype=float))
    u = (1.0 - a) / (1.0 - flat)
    f1 = _expstep(u)
    f2 = _expstep(1.0 - u)
    # f1 + f2 > 0 for every real u, so the quotient is well defined.
    return f1 / (f1 + f2)


def smooth_plateau_dt(t, flat: float = 0.5):
    """Derivative of :func:`smooth_plateau` with respect to t (odd in t)."""
    t = np.asarray(t, dtype=float)
    u = (1.0 - np.abs(t)) / (1.0 - flat)
    f1, f2 = _expstep(u), _expstep(1.0 - u)
    g1, g2 = _expstep_dt(u), _expstep_dt(1.0 - u)
    # d/du [f1/(f1+f2)] = (g1 f2 + f1 g2)/(f1+f2)^2, then du/dt = -sign(t)/(1-flat)
    h_u = (g1 * f2 + f1 * g2) / (f1 + f2) ** 2
    return -np.sign(t) * h_u / (1.0 - flat)


@dataclass(frozen=True)
class RadialBump:
    """Radial profile ``w(y) = amplitude * shape(|y - center| / width)``.

    ``shape`` is either the bump (=1 at the center, support |t|<1) or the
    plateau (flat top).  Smooth in y, including at the center, because the
    shapes are even functions of t.
    """

    amplitude: float = 1.0
    width: float = 0.25
    center: np.ndarray | None = None
    shape: str = "bump"  # "bump" | "plateau"
    flat: float = 0.5

    def _center(self, n: int) -> np.ndarray:
        if self.center is None:
            return np.zeros(n)
        return np.asarray(self.center, dtype=float)

    def __call__(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        d = y - self._center(y.shape[-1])
        t = np.sqrt(np.sum(d * d, axis=-1)) / self.width
        if self.shape == "plateau":
            return self.amplitude * smooth_plateau(t, self.flat)
        return self.amplitude * smooth_bump(t)

    def grad(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        d = y - self._center(y.shape[-1])
        s = np.sqrt(np.sum(d * d, axis=-1))
        t = s / self.width
        if self.shape == "plateau":
            dshape = smooth_plateau_dt(t, self.flat)
        else:
            dshape = smooth_bump_dt(t)
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(s[..., None] > 0.0, d / np.where(s == 0.0, 1.0, s)[..., None], 0.0)
        return self.amplitude * (dshape / self.width)[..., None] * unit


_ZERO = "zero"


@dataclass(frozen=True)
class ScalarRFamily:
    """Scalar family ``c(r, y) = const + (w_coeff + r_coeff * r) * w(y)``.

    ``profile`` None means w(y) = 1.  Covers every built-in: constants,
    linear-in-r conformal perturbations, and pure y-profiles.  Entire in r,
    so it evaluates on the extended collar r < 0 as well.
    """

    const: float = 0.0
    w_coeff: float = 0.0
    r_coeff: float = 0.0
    profile: RadialBump | None = None

    def __call__(self, r, y) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if self.profile is None:
            return self.const + self.w_coeff + self.r_coeff * r
        return self.const + (self.w_coeff + self.r_coeff * r) * self.profile(y)

    def d_r(self, r, y) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if self.r_coeff == 0.0:
            return np.zeros(r.shape)
        if self.profile is None:
            return np.full(r.shape, self.r_coeff)
        return self.r_coeff * self.profile(y)

    def d_y(self, r, y) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.profile is None:
            return np.zeros(r.shape + (y.shape[-1],))
        return (self.w_coeff + self.r_coeff * r)[..., None] * self.profile.grad(y)

    @property
    def is_zero(self) -> bool:
        return (
            self.profile is None
            and self.const == 0.0
            and self.w_coeff == 0.0
            and self.r_coeff == 0.0
        )


def constant_scalar(value: float) -> ScalarRFamily:
    return ScalarRFamily(const=value)


def zero_scalar() -> ScalarRFamily:
    return ScalarRFamily(const=0.0)
