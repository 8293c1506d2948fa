"""Numerical injectivity certificates and regularized reconstruction.

The discretized conjugated operator maps samples on the lens region into
values on the surrounding output region; its smallest weighted singular value
(output in the discrete scattering H^{1,0} norm, input in L2 of the lens) is
the grid analogue of the stability constant.  Reconstruction solves the
regularized normal equations by conjugate gradients; a Landweber-style
fixed-point mode realizes the Neumann-series picture.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .normalop import OperatorMatrix, RadialGrid

__all__ = [
    "ReconstructionReport",
    "injectivity_certificate",
    "reconstruct",
    "stability_ratio",
    "probe_functions",
]


def _h10_weight_rows(grid: RadialGrid, beta: float = 0.0):
    """Stack T with ||u||_{H^{1,0}}^2 = |T u|^2 on grid functions."""
    X, _ = grid.nodes()
    w = grid.weights()
    sq = np.sqrt(w)
    xb = X ** (-beta) if beta != 0.0 else np.ones_like(X)
    m = grid.size
    Dx = np.zeros((m, m))
    Ds = np.zeros((m, m))
    # central differences, one-sided at edges, on the (nx, ns) product layout
    for i in range(grid.nx):
        for j in range(grid.ns):
            k = i * grid.ns + j
            if 0 < i < grid.nx - 1:
                Dx[k, (i + 1) * grid.ns + j] = 0.5 / grid.dx
                Dx[k, (i - 1) * grid.ns + j] = -0.5 / grid.dx
            elif i == 0 and grid.nx > 1:
                Dx[k, grid.ns + j] = 1.0 / grid.dx
                Dx[k, j] = -1.0 / grid.dx
            elif grid.nx > 1:
                Dx[k, k] = 1.0 / grid.dx
                Dx[k, (i - 1) * grid.ns + j] = -1.0 / grid.dx
            if 0 < j < grid.ns - 1:
                Ds[k, k + 1] = 0.5 / grid.ds
                Ds[k, k - 1] = -0.5 / grid.ds
            elif j == 0 and grid.ns > 1:
                Ds[k, k + 1] = 1.0 / grid.ds
                Ds[k, k] = -1.0 / grid.ds
            elif grid.ns > 1:
                Ds[k, k] = 1.0 / grid.ds
                Ds[k, k - 1] = -1.0 / grid.ds
    rows = [
        sq[:, None] * xb[:, None] * np.eye(m),
        sq[:, None] * (xb * X * X)[:, None] * Dx,
        sq[:, None] * (xb * X)[:, None] * Ds,
    ]
    return np.concatenate(rows, axis=0)


def injectivity_certificate(
    matrix: OperatorMatrix, u_mask: np.ndarray | None = None, beta: float = 0.0
) -> float:
    """Smallest singular value of the weighted operator L2(lens) -> H^{1,0}.

    Columns are restricted to the lens nodes (u_mask); the input is measured
    in the discrete L2 norm, the output in the discrete scattering H^{1,0}
    norm of the output grid.
    """
    grid = matrix.grid
    if u_mask is None:
        u_mask = grid.u_mask(matrix.config.boundary, matrix.config.eta)
    if not np.any(u_mask):
        raise ValueError("empty lens region on this grid")
    T = _h10_weight_rows(grid, beta)
    w_in = grid.weights()[u_mask]
    B = (T @ matrix.entries[:, u_mask]) / np.sqrt(w_in)[None, :]
    svals = np.linalg.svd(B, compute_uv=False)
    return float(svals[-1])


@dataclass
class ReconstructionReport:
    sigma_min: float
    stability_ratio: float
    rel_error: float
    iterations: int
    residuals: list = field(default_factory=list)
    converged: bool = True
    f_hat: np.ndarray | None = None


def _cg_normal(A: np.ndarray, data: np.ndarray, reg: float, tol: float, max_iter: int):
    """CG on (A^T A + reg I) x = A^T data with residual history."""
    b = A.T @ data
    x = np.zeros(A.shape[1])
    r = b.copy()
    p = r.copy()
    rs = float(r @ r)
    b_norm = np.sqrt(float(b @ b)) or 1.0
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        Ap = A.T @ (A @ p) + reg * p
        alpha = rs / float(p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        rs_new = float(r @ r)
        history.append(np.sqrt(rs_new) / b_norm)
        if history[-1] <= tol:
            return x, it, history, True
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x, it, history, False


def _norm_estimate(A: np.ndarray, iters: int = 25, seed: int = 1) -> float:
    """Power iteration estimate of ||A^T A||_2."""
    rng = np.random.default_rng(seed)
    v = rng.normal(size=A.shape[1])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = A.T @ (A @ v)
        lam = float(np.linalg.norm(w))
        if lam == 0.0:
            return 0.0
        v = w / lam
    return lam


def reconstruct(
    matrix: OperatorMatrix,
    data: np.ndarray,
    reg: float | None = None,
    u_mask: np.ndarray | None = None,
    tol: float = 1e-8,
    max_iter: int = 500,
    method: str = "cg",
) -> ReconstructionReport:
    """Recover lens samples from operator values on the output grid.

    Solves (A^T A + reg I) f = A^T data by conjugate gradients (reg defaults
    to 1e-6 times a power-iteration estimate of ||A^T A||).  method="neumann"
    runs the fixed-point iteration f <- f + c A^T (data - A f) instead, the
    Neumann-series realization, with c from the same norm estimate.
    Non-convergence is reported in the result, not raised.
    """
    grid = matrix.grid
    if u_mask is None:
        u_mask = grid.u_mask(matrix.config.boundary, matrix.config.eta)
    A = matrix.entries[:, u_mask]
    nrm = _norm_estimate(A)
    if reg is None:
        reg = 1e-6 * nrm
    if method == "neumann":
        c = 1.0 / (nrm + reg) if nrm > 0 else 1.0
        f = np.zeros(A.shape[1])
        b_norm = np.linalg.norm(A.T @ data) or 1.0
        history = []
        converged = False
        it = 0
        for it in range(1, max_iter + 1):
            g = A.T @ (data - A @ f) - reg * f
            f += c * g
            history.append(np.linalg.norm(g) / b_norm)
            if history[-1] <= tol:
                converged = True
                break
        x, iterations, residuals = f, it, history
    else:
        x, iterations, residuals, converged = _cg_normal(A, data, reg, tol, max_iter)
    full = np.zeros(grid.size)
    full[u_mask] = x
    return ReconstructionReport(
        sigma_min=float("nan"),
        stability_ratio=float("nan"),
        rel_error=float("nan"),
        iterations=iterations,
        residuals=residuals,
        converged=converged,
        f_hat=full,
    )


def stability_ratio(
    matrix: OperatorMatrix,
    probes: np.ndarray,
    u_mask: np.ndarray | None = None,
    beta: float = 0.0,
):
    """max over probes of ||u||_L2(lens) / ||A u||_{H^{1,0}}, the empirical
    counterpart of the stability constant.

    probes: (k, n_lens) samples on the lens nodes.  A zero image for a
    nonzero probe is reported as an infinite ratio with a failure flag.
    """
    grid = matrix.grid
    if u_mask is None:
        u_mask = grid.u_mask(matrix.config.boundary, matrix.config.eta)
    T = _h10_weight_rows(grid, beta)
    w_in = grid.weights()[u_mask]
    worst = 0.0
    failed = False
    for u in np.atleast_2d(probes):
        nu = np.sqrt(float(np.sum(w_in * u * u)))
        if nu == 0.0:
            continue
        img = T @ (matrix.entries[:, u_mask] @ u)
        na = np.linalg.norm(img)
        if na == 0.0:
            failed = True
            worst = np.inf
            continue
        worst = max(worst, nu / na)
    return worst, failed


def probe_functions(grid: RadialGrid, u_mask: np.ndarray, n_random: int = 20, seed: int = 0):
    """Random smooth bumps plus coordinate monomials, restricted to the lens."""
    from .families import smooth_bump

    X, S = grid.nodes()
    rng = np.random.default_rng(seed)
    xs, ss = X[u_mask], S[u_mask]
    out = []
    x_hi = xs.max()
    s_hi = ss.max()
    for _ in range(n_random):
        cx = rng.uniform(0.2, 0.8) * x_hi
        cs = rng.uniform(0.0, 0.7) * s_hi
        wx = rng.uniform(0.3, 0.8) * x_hi
        ws = rng.uniform(0.3, 0.8) * s_hi
        out.append(smooth_bump(np.hypot((xs - cx) / wx, (ss - cs) / ws)))
    for px, ps in ((0, 0), (1, 0), (0, 1), (1, 1), (2, 0)):
        out.append((xs / x_hi) ** px * (ss / s_hi) ** ps)
    return np.stack(out, axis=0)
