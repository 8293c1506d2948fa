"""Boundary collar geometry: metrics in normal form and the r = rho^2 change.

A metric in normal form on the collar is ``g = (d rho^2 + h_rho) / rho^2`` with
``h_rho`` a family of boundary metrics.  Substituting r = rho^2 produces the
compactified data ``k_r = h_sqrt(r)``; families even mod O(rho^N) split as
``k = k1 + r^(N/2) k2`` with k1, k2 smooth in r.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, EvennessError
from .families import ScalarRFamily

__all__ = [
    "BoundaryPatch",
    "BoundaryMetricFamily",
    "ProjectiveModel",
    "EvennessReport",
    "evaluate_ah_metric",
    "to_even_structure",
    "check_evenness",
    "pullback_density_weight",
    "one_sided_fd_weights",
]


@dataclass(frozen=True)
class BoundaryPatch:
    """Coordinate collar [0, collar_depth) x box(extent) in R^n."""

    n: int
    extent: float = 1.2
    collar_depth: float = 0.5

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("boundary dimension must be >= 2 (total dimension >= 3)")
        if self.extent <= 0.0 or self.collar_depth <= 0.0:
            raise ValueError("extent and collar_depth must be positive")

    @property
    def dim(self) -> int:
        return self.n + 1

    def contains_y(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return np.all(np.abs(y) <= self.extent, axis=-1)


@dataclass(frozen=True)
class ProjectiveModel:
    """Compactified metric data: k_r = k1 + r^(N/2) k2, conformal scalars.

    ``c1`` and ``c2`` are the scalar profiles of k1 = c1 * I and k2 = c2 * I.
    ``N`` is the declared evenness order (odd), or None when the family is
    exactly even (then c2 is identically zero and k is smooth in r).
    """

    patch: BoundaryPatch
    c1: ScalarRFamily
    c2: ScalarRFamily
    N: int | None

    def __post_init__(self):
        if self.N is not None:
            if self.N % 2 == 0 or self.N < 3:
                raise ValueError("evenness order N must be an odd integer >= 3")
        elif not self.c2.is_zero:
            raise ValueError("exactly even model requires k2 = 0")

    @property
    def n(self) -> int:
        return self.patch.n

    @property
    def dim(self) -> int:
        return self.patch.n + 1

    # -- scalar accessors (r may be negative; the r^(N/2) term is cut at 0) --

    def _u(self, r):
        """r^(N/2) extended by zero to r <= 0, and its r-derivative."""
        r = np.asarray(r, dtype=float)
        if self.N is None or self.c2.is_zero:
            return np.zeros(r.shape), np.zeros(r.shape)
        rp = np.maximum(r, 0.0)
        half = 0.5 * self.N
        return rp**half, half * rp ** (half - 1.0)

    def c(self, r, y):
        u, _ = self._u(r)
        return self.c1(r, y) + u * self.c2(r, y)

    def c_r(self, r, y):
        u, du = self._u(r)
        return self.c1.d_r(r, y) + du * self.c2(r, y) + u * self.c2.d_r(r, y)

    def c_y(self, r, y):
        u, _ = self._u(r)
        return self.c1.d_y(r, y) + u[..., None] * self.c2.d_y(r, y)

    # -- matrix accessors --

    def k(self, r, y) -> np.ndarray:
        return self.c(r, y)[..., None, None] * np.eye(self.n)

    def k1(self, r, y) -> np.ndarray:
        return self.c1(r, y)[..., None, None] * np.eye(self.n)

    def k2(self, r, y) -> np.ndarray:
        return self.c2(r, y)[..., None, None] * np.eye(self.n)

    def boundary_metric(self, y) -> np.ndarray:
        """h = k at r = 0 (the conformal representative on the boundary)."""
        return self.k(np.zeros(np.asarray(y, dtype=float).shape[:-1]), y)

    def spot_check_positive(self, n_r: int = 7, n_y: int = 5, r_min: float | None = None):
        """Positive definiteness of k on a sample grid of the (extended) collar."""
        lo = -1.0 if r_min is None else r_min
        hi = self.patch.collar_depth**2 * 0.999
        rr = np.linspace(lo, hi, n_r)
        yy = np.linspace(-self.patch.extent, self.patch.extent, n_y)
        grids = np.meshgrid(*([yy] * self.n), indexing="ij")
        ys = np.stack([g.ravel() for g in grids], axis=-1)
        vals = self.c(rr[:, None], np.broadcast_to(ys, (n_r,) + ys.shape))
        return float(vals.min())


@dataclass(frozen=True)
class BoundaryMetricFamily:
    """One-parameter family h_rho = (c1(rho^2, y) + rho^N c2(rho^2, y)) * I."""

    name: str
    patch: BoundaryPatch
    c1: ScalarRFamily
    c2: ScalarRFamily
    N: int | None  # odd evenness order; None = exactly even

    @property
    def n(self) -> int:
        return self.patch.n

    def h_scalar(self, rho, y):
        rho = np.asarray(rho, dtype=float)
        r = rho * rho
        if self.N is None or self.c2.is_zero:
            return self.c1(r, y)
        return self.c1(r, y) + rho**self.N * self.c2(r, y)

    def d_rho_scalar(self, rho, y):
        rho = np.asarray(rho, dtype=float)
        r = rho * rho
        out = 2.0 * rho * self.c1.d_r(r, y)
        if self.N is not None and not self.c2.is_zero:
            out = out + self.N * rho ** (self.N - 1) * self.c2(r, y)
            out = out + rho**self.N * 2.0 * rho * self.c2.d_r(r, y)
        return out

    def d_y_scalar(self, rho, y):
        rho = np.asarray(rho, dtype=float)
        r = rho * rho
        grad = self.c1.d_y(r, y)
        if self.N is not None and not self.c2.is_zero:
            grad = grad + (rho**self.N)[..., None] * self.c2.d_y(r, y)
        return grad

    def h(self, rho, y) -> np.ndarray:
        return self.h_scalar(rho, y)[..., None, None] * np.eye(self.n)

    def d_rho(self, rho, y) -> np.ndarray:
        rho = np.asarray(rho, dtype=float)
        r = rho * rho
        out = 2.0 * rho * self.c1.d_r(r, y)
        if self.N is not None and not self.c2.is_zero:
            out = out + self.N * rho ** (self.N - 1) * self.c2(r, y)
            out = out + rho**self.N * 2.0 * rho * self.c2.d_r(r, y)
        return out[..., None, None] * np.eye(self.n)

    def d_y(self, rho, y) -> np.ndarray:
        rho = np.asarray(rho, dtype=float)
        r = rho * rho
        grad = self.c1.d_y(r, y)
        if self.N is not None and not self.c2.is_zero:
            grad = grad + (rho**self.N)[..., None] * self.c2.d_y(r, y)
        return grad[..., None, None] * np.eye(self.n)


def evaluate_ah_metric(family: BoundaryMetricFamily, rho: float, y) -> np.ndarray:
    """Full (n+1)x(n+1) metric (d rho^2 + h_rho)/rho^2 at an interior point."""
    if rho <= 0.0:
        raise DomainError("the metric is defined only for rho > 0")
    if rho >= family.patch.collar_depth:
        raise DomainError("rho outside the collar")
    n = family.n
    g = np.zeros((n + 1, n + 1))
    g[0, 0] = 1.0
    g[1:, 1:] = family.h(np.asarray(rho), np.asarray(y, dtype=float))
    return g / rho**2


def to_even_structure(
    family: BoundaryMetricFamily, tol: float = 1e-10, samples: int = 9
) -> ProjectiveModel:
    """Change variables r = rho^2: returns k_r = h_sqrt(r) with its split.

    Validates that the declared split reproduces h_sqrt(r) pointwise on a
    sample grid of the collar.
    """
    model = ProjectiveModel(patch=family.patch, c1=family.c1, c2=family.c2, N=family.N)
    rho = np.linspace(0.0, family.patch.collar_depth * 0.97, samples)
    yy = np.linspace(-family.patch.extent, family.patch.extent, samples)
    for ya in yy:
        y = np.full((samples, family.n), ya)
        lhs = model.c(rho * rho, y)
        rhs = family.h_scalar(rho, y)
        err = float(np.max(np.abs(lhs - rhs)))
        if err > tol * max(1.0, float(np.max(np.abs(rhs)))):
            raise EvennessError(
                f"split k1 + r^(N/2) k2 does not reproduce h_sqrt(r): error {err:.3e}"
            )
    return model


def one_sided_fd_weights(m: int, points: int, step: float) -> np.ndarray:
    """Weights w_j with sum_j w_j f(j*step) ~ f^(m)(0), one-sided stencil."""
    if m >= points:
        raise ValueError("stencil too short for requested derivative order")
    import math

    j = np.arange(points, dtype=float) * step
    # Taylor matching: sum_j w_j (j*step)^i = m! * delta_{i m}
    V = np.vander(j, points, increasing=True).T  # V[i, :] = (j*step)^i
    rhs = np.zeros(points)
    rhs[m] = float(math.factorial(m))
    return np.linalg.solve(V, rhs)


@dataclass(frozen=True)
class EvennessReport:
    """Finite-difference norms of odd rho-derivatives of h at rho = 0."""

    N: int
    tol: float
    norms: dict
    passed: bool


def check_evenness(
    family: BoundaryMetricFamily,
    N: int,
    tol: float = 1e-6,
    step: float | None = None,
    points: int = 6,
    n_y: int = 5,
) -> EvennessReport:
    """Check that odd rho-derivatives of order m < N vanish at rho = 0.

    One-sided `points`-node stencils at rho = 0; reports the max-abs entry of
    each odd-order derivative over a y-sample.  Passes iff every reported norm
    is <= tol (relative to the family scale at rho = 0).
    """
    if N % 2 == 0 or N < 3:
        raise ValueError("N must be an odd integer >= 3")
    if step is None:
        step = max(5e-3, 1e-2 * family.patch.collar_depth)
    if (points - 1) * step >= family.patch.collar_depth:
        raise DomainError("evenness stencil exits the collar")
    yy = np.linspace(-0.8 * family.patch.extent, 0.8 * family.patch.extent, n_y)
    ys = np.stack([yy] + [np.zeros(n_y)] * (family.n - 1), axis=-1)
    rho = np.arange(points, dtype=float) * step
    h_samples = family.h(rho[:, None], np.broadcast_to(ys, (points,) + ys.shape))
    scale = max(1.0, float(np.max(np.abs(h_samples[0]))))
    norms = {}
    for m in range(1, N, 2):
        w = one_sided_fd_weights(m, points, step)
        deriv = np.tensordot(w, h_samples, axes=(0, 0))
        norms[m] = float(np.max(np.abs(deriv)))
    passed = all(v <= tol * scale for v in norms.values())
    return EvennessReport(N=N, tol=tol, norms=norms, passed=passed)


def pullback_density_weight(rho: np.ndarray, f_vals: np.ndarray):
    """Push a grid function f(rho, y) to r^-1 f_e on the (r = rho^2, y) grid.

    f_e(rho^2, y) = f(rho, y), so the returned values are f / rho^2; they are
    infinite at rho = 0 unless f vanishes faster than rho^2 (reported, not
    trapped).
    """
    rho = np.asarray(rho, dtype=float)
    f_vals = np.asarray(f_vals, dtype=float)
    shape = rho.shape + (1,) * (f_vals.ndim - rho.ndim)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = f_vals / np.reshape(rho * rho, shape)
    return rho * rho, out
