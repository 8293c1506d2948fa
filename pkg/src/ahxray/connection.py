"""Christoffel fields of the boundary-compactified connection and its split.

For compactified data k_r on the collar, the connection has symbols

    G^0_{ab} = [[0, 0], [0, 2(k - r dk/dr)]],
    G^c_{ab} = [[0, (1/2) k^{-1} dk/dr], [(1/2) k^{-1} dk/dr, Gamma(k_r)]],

where Gamma(k_r) are the fixed-r symbols of k_r.  With k = k1 + r^(N/2) k2 the
field splits exactly as  G = Gbar + r^(N/2-1) H(r) B  with Gbar smooth (built
from k1 alone) and B given in closed form below; the two connections coincide
for r <= 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DomainError, ExtensionError, SingularMetricError, SplitRejectedError
from .geometry import ProjectiveModel

__all__ = [
    "ChristoffelField",
    "ConnectionSplit",
    "SplitData",
    "hat_christoffel",
    "hat_field",
    "split_connection",
    "extend_past_boundary",
    "projective_difference",
    "background_metric",
    "levi_civita_fd",
]

_FD4 = (np.array([1.0, -8.0, 8.0, -1.0]) / 12.0, np.array([-2.0, -1.0, 1.0, 2.0]))


def _as_batch(z) -> tuple[np.ndarray, bool]:
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        return z[None, :], True
    return z, False


@dataclass(frozen=True)
class _Scalars:
    """Conformal scalar bundle at a batch of collar points."""

    r: np.ndarray
    c1: np.ndarray
    c1_r: np.ndarray
    c1_y: np.ndarray
    c2: np.ndarray
    c2_r: np.ndarray
    c2_y: np.ndarray
    u: np.ndarray  # r^(N/2) cut at 0
    du: np.ndarray


def _scalars(model: ProjectiveModel, Z: np.ndarray) -> _Scalars:
    r, y = Z[..., 0], Z[..., 1:]
    u, du = model._u(r)
    return _Scalars(
        r=r,
        c1=model.c1(r, y),
        c1_r=model.c1.d_r(r, y),
        c1_y=model.c1.d_y(r, y),
        c2=model.c2(r, y),
        c2_r=model.c2.d_r(r, y),
        c2_y=model.c2.d_y(r, y),
        u=u,
        du=du,
    )


def _conformal_gamma(c, c_r, c_y, r, n: int) -> np.ndarray:
    """Symbols of the compactified connection for k = c * I, batched."""
    m = c.shape[0]
    dim = n + 1
    if np.any(c <= 0.0):
        raise SingularMetricError("k_r is not positive definite at a requested point")
    G = np.zeros((m, dim, dim, dim))
    eye = np.eye(n)
    G[:, 0, 1:, 1:] = (2.0 * (c - r * c_r))[:, None, None] * eye
    mixed = (0.5 * c_r / c)[:, None, None] * eye
    G[:, 1:, 0, 1:] = mixed
    G[:, 1:, 1:, 0] = mixed
    over = 1.0 / (2.0 * c)
    G[:, 1:, 1:, 1:] = (
        np.einsum("ga,mb->mgab", eye, c_y)
        + np.einsum("gb,ma->mgab", eye, c_y)
        - np.einsum("ab,mg->mgab", eye, c_y)
    ) * over[:, None, None, None]
    return G


def _conformal_acc(c, c_r, c_y, r, V) -> np.ndarray:
    """Acceleration -G(v, v) for k = c * I, batched."""
    v0, w = V[..., 0], V[..., 1:]
    w2 = np.einsum("...i,...i->...", w, w)
    cyw = np.einsum("...i,...i->...", c_y, w)
    inv2c = 0.5 / c
    acc = np.empty_like(V)
    acc[..., 0] = -2.0 * (c - r * c_r) * w2
    acc[..., 1:] = (
        -(2.0 * c_r * inv2c * v0 + 2.0 * cyw * inv2c)[..., None] * w
        + (w2 * inv2c)[..., None] * c_y
    )
    return acc


def _split_scalars(model: ProjectiveModel, s: _Scalars):
    """Closed-form split coefficients (conformal): B0, W-scalar, G-vector.

    B^0_{ab} = bB0 * delta_{ab},  B^c_{0b} = wB * delta^c_b,
    B^c_{ab} = delta^c_a Gv_b + delta^c_b Gv_a - delta_{ab} Gv^c.
    """
    N = float(model.N) if model.N is not None else 5.0
    c = s.c1 + s.u * s.c2
    bB0 = 2.0 * s.r * ((1.0 - 0.5 * N) * s.c2 - s.r * s.c2_r)
    wB = 0.5 * (0.5 * N * s.c2 + s.r * (s.c2_r - s.c2 * s.c1_r / s.c1)) / c
    Gv = (s.r / (2.0 * c))[..., None] * (s.c2_y - (s.c2 / s.c1)[..., None] * s.c1_y)
    return bB0, wB, Gv


def _b_tensor(model: ProjectiveModel, Z: np.ndarray) -> np.ndarray:
    """Full Heaviside coefficient tensor B^k_{ij}, batched."""
    s = _scalars(model, Z)
    bB0, wB, Gv = _split_scalars(model, s)
    m = Z.shape[0]
    n = model.n
    dim = n + 1
    eye = np.eye(n)
    B = np.zeros((m, dim, dim, dim))
    B[:, 0, 1:, 1:] = bB0[:, None, None] * eye
    mixed = wB[:, None, None] * eye
    B[:, 1:, 0, 1:] = mixed
    B[:, 1:, 1:, 0] = mixed
    B[:, 1:, 1:, 1:] = (
        np.einsum("ga,mb->mgab", eye, Gv)
        + np.einsum("gb,ma->mgab", eye, Gv)
        - np.einsum("ab,mg->mgab", eye, Gv)
    )
    return B


@dataclass(frozen=True)
class SplitData:
    """Everything the regularized geodesic system needs from the split."""

    model: ProjectiveModel
    N: int

    def u_pow(self, r):
        """(r^(N/2) H(r), r^(N/2-1) H(r)) with the cut at r = 0."""
        rp = np.maximum(np.asarray(r, dtype=float), 0.0)
        half = 0.5 * self.N
        return rp**half, rp ** (half - 1.0)

    def wB(self, Z: np.ndarray) -> np.ndarray:
        s = _scalars(self.model, Z)
        _, wB, _ = _split_scalars(self.model, s)
        return wB

    def wB_u(self, Z: np.ndarray):
        """(W-scalar, r^(N/2) H(r)) in one scalar pass."""
        s = _scalars(self.model, Z)
        _, wB, _ = _split_scalars(self.model, s)
        return wB, s.u

    def grad_wB(self, Z: np.ndarray, step: float = 1e-5) -> np.ndarray:
        """Central-difference gradient of the W-scalar in (r, y)."""
        m, dim = Z.shape
        out = np.empty((m, dim))
        for d in range(dim):
            zp = Z.copy()
            zm = Z.copy()
            zp[:, d] += step
            zm[:, d] -= step
            out[:, d] = (self.wB(zp) - self.wB(zm)) / (2.0 * step)
        return out

    def rest_contraction(self, Z: np.ndarray, V: np.ndarray) -> np.ndarray:
        """B_rest(v, v): the split tensor with its (0, beta) slots removed."""
        s = _scalars(self.model, Z)
        bB0, _, Gv = _split_scalars(self.model, s)
        w = V[..., 1:]
        w2 = np.sum(w * w, axis=-1)
        out = np.zeros_like(V)
        out[..., 0] = bB0 * w2
        out[..., 1:] = 2.0 * np.sum(Gv * w, axis=-1)[..., None] * w - w2[..., None] * Gv
        return out


class ChristoffelField:
    """Pointwise Christoffel symbols on the (extended) collar.

    regularity_tag is "smooth" (entire in r), "C1_split" (Heaviside split
    attached; C^1 across r = 0) or "direct" (raw formula, continuous only).
    """

    def __init__(
        self,
        model: ProjectiveModel,
        kind: str,
        r_range: tuple[float, float],
        split: SplitData | None = None,
    ):
        if kind not in ("hat", "bar"):
            raise ValueError("kind must be 'hat' or 'bar'")
        self.model = model
        self.kind = kind
        self.r_range = r_range
        self.split = split
        self.n = model.n
        self.dim = model.dim
        if split is not None:
            self.regularity_tag = "C1_split"
        elif kind == "bar" or model.c2.is_zero:
            self.regularity_tag = "smooth"
        else:
            self.regularity_tag = "direct"

    def _cs(self, Z: np.ndarray):
        s = _scalars(self.model, Z)
        if self.kind == "bar":
            return s.c1, s.c1_r, s.c1_y, s.r
        c = s.c1 + s.u * s.c2
        c_r = s.c1_r + s.du * s.c2 + s.u * s.c2_r
        c_y = s.c1_y + s.u[..., None] * s.c2_y
        return c, c_r, c_y, s.r

    def gamma_batch(self, Z) -> np.ndarray:
        Z, _ = _as_batch(Z)
        c, c_r, c_y, r = self._cs(Z)
        return _conformal_gamma(c, c_r, c_y, r, self.n)

    def gamma(self, z) -> np.ndarray:
        Zb, _ = _as_batch(z)
        return self.gamma_batch(Zb)[0]

    def acc(self, Z, V) -> np.ndarray:
        """Geodesic acceleration -G(z)(v, v), batched."""
        Z, squeeze = _as_batch(Z)
        V, _ = _as_batch(V)
        c, c_r, c_y, r = self._cs(Z)
        out = _conformal_acc(c, c_r, c_y, r, V)
        return out[0] if squeeze else out

    def contains(self, Z) -> np.ndarray:
        Z, _ = _as_batch(Z)
        r = Z[:, 0]
        ok_r = (r > self.r_range[0]) & (r < self.r_range[1])
        return ok_r & self.model.patch.contains_y(Z[:, 1:])

    def bar_view(self) -> "ChristoffelField":
        """The smooth-part field sharing this field's domain (cached)."""
        if self.kind == "bar":
            return self
        if getattr(self, "_bar_cache", None) is None:
            self._bar_cache = ChristoffelField(self.model, "bar", self.r_range)
        return self._bar_cache

    def acc_pieces(self, Z: np.ndarray, V: np.ndarray):
        """Fused bundle for the regularized system, one scalar pass.

        Returns (acc_full, acc_bar, rest_contraction, wB, u, u_m1) where u and
        u_m1 are the cut powers r^(N/2) H(r) and r^(N/2-1) H(r).
        """
        s = _scalars(self.model, Z)
        c = s.c1 + s.u * s.c2
        c_r = s.c1_r + s.du * s.c2 + s.u * s.c2_r
        c_y = s.c1_y + s.u[..., None] * s.c2_y
        acc_full = _conformal_acc(c, c_r, c_y, s.r, V)
        acc_bar = _conformal_acc(s.c1, s.c1_r, s.c1_y, s.r, V)
        bB0, wB, Gv = _split_scalars(self.model, s)
        w = V[..., 1:]
        w2 = np.sum(w * w, axis=-1)
        rest = np.zeros_like(V)
        rest[..., 0] = bB0 * w2
        rest[..., 1:] = 2.0 * np.sum(Gv * w, axis=-1)[..., None] * w - w2[..., None] * Gv
        N = float(self.model.N) if self.model.N is not None else 5.0
        rp = np.maximum(s.r, 0.0)
        return acc_full, acc_bar, rest, wB, rp ** (0.5 * N), rp ** (0.5 * N - 1.0)


def hat_christoffel(model: ProjectiveModel, z) -> np.ndarray:
    """Symbols of the compactified connection at a collar point z = (r, y)."""
    z = np.asarray(z, dtype=float)
    if z[0] < 0.0:
        raise DomainError("hat_christoffel requires r >= 0")
    if z[0] >= model.patch.collar_depth**2:
        raise DomainError("r outside the collar")
    return ChristoffelField(model, "hat", (-np.inf, np.inf)).gamma(z)


def hat_field(model: ProjectiveModel, eps0: float = 1.0) -> ChristoffelField:
    """The full connection field on the extended collar (no split attached)."""
    return ChristoffelField(model, "hat", (-eps0, model.patch.collar_depth**2))


@dataclass(frozen=True)
class ConnectionSplit:
    """Smooth part, Heaviside coefficient, and the evenness order."""

    gamma_bar: ChristoffelField
    model: ProjectiveModel
    N: int | None

    def B(self, z) -> np.ndarray:
        Zb, squeeze = _as_batch(z)
        out = _b_tensor(self.model, Zb)
        return out[0] if squeeze else out

    def composed(self, z) -> np.ndarray:
        """Gbar + r^(N/2-1) H(r) B; equals the direct field for r > 0."""
        Zb, squeeze = _as_batch(z)
        out = self.gamma_bar.gamma_batch(Zb).copy()
        if self.N is not None and not self.model.c2.is_zero:
            rp = np.maximum(Zb[:, 0], 0.0)
            out += (rp ** (0.5 * self.N - 1.0))[:, None, None, None] * _b_tensor(
                self.model, Zb
            )
        return out[0] if squeeze else out


def split_connection(model: ProjectiveModel, eps0: float = 1.0) -> ConnectionSplit:
    """Split G = Gbar + r^(N/2-1) H(r) B; rejected below the C^1 threshold.

    N < 5 would leave the connection short of C^1 across the boundary, outside
    the hypotheses everything downstream relies on.
    """
    if model.N is not None and model.N < 5:
        raise SplitRejectedError(
            f"evenness order N={model.N} < 5: the compactified connection is not C^1, "
            "no Heaviside split is attached"
        )
    gamma_bar = ChristoffelField(model, "bar", (-eps0, model.patch.collar_depth**2))
    return ConnectionSplit(gamma_bar=gamma_bar, model=model, N=model.N)


def extend_past_boundary(split: ConnectionSplit, eps0: float = 1.0) -> ChristoffelField:
    """C^1 field Gbar + r^(N/2-1) H(r) B on r in (-eps0, collar^2).

    Built-in families are entire in r, so the smooth part evaluates on the
    extension directly; a finiteness probe guards the requested eps0.
    """
    model = split.model
    r_hi = model.patch.collar_depth**2
    probe_r = np.linspace(-eps0 * 0.999, r_hi * 0.999, 7)
    probe = np.zeros((7, model.dim))
    probe[:, 0] = probe_r
    vals = split.gamma_bar.gamma_batch(probe)
    if not np.all(np.isfinite(vals)):
        raise ExtensionError("smooth part is not finite on the requested extension")
    sd = None
    if model.N is not None and not model.c2.is_zero:
        sd = SplitData(model=model, N=model.N)
    field = ChristoffelField(model, "hat", (-eps0, r_hi), split=sd)
    if sd is None:
        # even family: the Heaviside term vanishes identically
        field = ChristoffelField(model, "bar", (-eps0, r_hi))
    return field


def background_metric(dim: int) -> np.ndarray:
    """Flat reference metric in artificial-boundary chart coordinates."""
    return np.eye(dim)


def _e_metric(model: ProjectiveModel, z: np.ndarray) -> np.ndarray:
    """Compactified metric dr^2/(4 r^2) + k_r / r as a matrix; r > 0 only."""
    r, y = z[..., 0], z[..., 1:]
    n = model.n
    g = np.zeros(z.shape[:-1] + (n + 1, n + 1))
    g[..., 0, 0] = 1.0 / (4.0 * r * r)
    g[..., 1:, 1:] = (model.c(r, y) / r)[..., None, None] * np.eye(n)
    return g


def levi_civita_fd(metric_fn: Callable, z: np.ndarray, step: float = 1e-4) -> np.ndarray:
    """Levi-Civita symbols of a metric by 4th-order central differences."""
    z = np.asarray(z, dtype=float)
    dim = z.shape[0]
    g0 = metric_fn(z)
    dg = np.zeros((dim, dim, dim))  # dg[l, i, j] = d_l g_{ij}
    coeffs, offsets = _FD4
    for l in range(dim):
        acc = np.zeros((dim, dim))
        for c, o in zip(coeffs, offsets):
            zp = z.copy()
            zp[l] += o * step
            acc += c * metric_fn(zp)
        dg[l] = acc / step
    ginv = np.linalg.inv(g0)
    gam = 0.5 * (
        np.einsum("kl,ilj->kij", ginv, dg)
        + np.einsum("kl,jil->kij", ginv, dg)
        - np.einsum("kl,lij->kij", ginv, dg)
    )
    return gam


def projective_difference(
    model: ProjectiveModel, z, verify: bool = True, fd_step: float = 1e-4
):
    """Difference tensor D with G_hat = G_levi_civita(e_metric) + D.

    D^k_{ij} = (1/2)(v_i d^k_j + v_j d^k_i) with v = dr/r.  When ``verify`` is
    set, the identity is checked against a finite-difference Levi-Civita
    oracle of the compactified metric; returns (D, max residual | None).
    """
    z = np.asarray(z, dtype=float)
    r = z[0]
    if r <= 0.0:
        raise DomainError("projective difference is defined for r > 0")
    dim = model.dim
    D = np.zeros((dim, dim, dim))
    v0 = 1.0 / r
    D[0, 0, 0] = v0
    for g in range(1, dim):
        D[g, 0, g] = 0.5 * v0
        D[g, g, 0] = 0.5 * v0
    residual = None
    if verify:
        gam_e = levi_civita_fd(lambda p: _e_metric(model, p), z, step=fd_step)
        gam_hat = hat_christoffel(model, z)
        residual = float(np.max(np.abs(gam_hat - (gam_e + D))))
    return D, residual
