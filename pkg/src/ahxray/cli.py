"""Experiment runner: scenario JSON in, CSV/JSON/binary artifacts out.

Every CSV starts with a config-hash comment line and a header row; floats are
printed with 17 significant digits so reruns with the same scenario and seed
produce byte-identical bodies.  Exit codes: 2 for scenario schema violations,
3 for numerical failures inside an operation.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import blowup as bl
from . import inversion as inv
from . import normalop as no
from .errors import AHXrayError, ScenarioSchemaError
from .families import smooth_bump
from .geodesic import convexity_scan, exit_times, integrate
from .scenarios import Scenario, load_scenario
from .xray import ah_decay_bump, ah_unit_speed, verify_relation

SUBCOMMANDS = (
    "geodesics",
    "convexity",
    "xray",
    "kernel",
    "blowup",
    "schur-sweep",
    "assemble",
    "invert",
    "all",
)


def _fmt(value) -> str:
    return "%.17g" % float(value)


def _write_csv(path: Path, header: list, rows, config_hash: str):
    with open(path, "w") as fh:
        fh.write(f"# config_hash={config_hash}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _scenario_hash(sc: Scenario, extra: str = "") -> str:
    import hashlib

    blob = json.dumps(
        {k: str(v) for k, v in sorted(sc.__dict__.items())}, sort_keys=True
    ) + extra
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# subcommand implementations
# ---------------------------------------------------------------------------


def run_geodesics(sc: Scenario, out: Path) -> list:
    fld, _ = sc.fields()
    rng = sc.rng()
    h = _scenario_hash(sc, "geodesics")
    taus = np.linspace(-0.8, 0.8, 321)
    written = []
    for k in range(sc.n_geodesics):
        r0 = rng.uniform(0.003, 0.05)
        y0 = rng.uniform(-0.2, 0.2, size=sc.n)
        lam = rng.uniform(-0.2, 0.2)
        omega = rng.normal(size=sc.n)
        omega *= rng.uniform(0.5, 1.0) / np.linalg.norm(omega)
        z0 = np.concatenate([[r0], y0])
        v0 = np.concatenate([[lam], omega])
        path = integrate(fld, z0, v0, (-0.8, 0.8))
        zs = path.z_of(taus)
        vs = path.v_of(taus)
        rows = [np.concatenate([[t], z, v]) for t, z, v in zip(taus, zs, vs)]
        name = out / f"geodesic_{k:03d}.csv"
        header = ["tau", "r"] + [f"y{i+1}" for i in range(sc.n)]
        header += ["v0"] + [f"v{i+1}" for i in range(sc.n)]
        _write_csv(name, header, rows, h)
        written.append(name)
    return written


def run_convexity(sc: Scenario, out: Path) -> Path:
    fld, _ = sc.fields()
    rng = sc.rng()
    m = 100
    pts = np.zeros((m, sc.n + 1))
    pts[:, 1:] = rng.uniform(-0.3, 0.3, size=(m, sc.n))
    dirs = rng.normal(size=(m, sc.n))
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    ode_vals, fd_vals = convexity_scan(fld, pts, dirs)
    rows = [
        np.concatenate([pts[k, 1:], dirs[k], [ode_vals[k], fd_vals[k]]]) for k in range(m)
    ]
    header = [f"y{i+1}" for i in range(sc.n)] + [f"omega{i+1}" for i in range(sc.n)]
    header += ["d2r_ode", "d2r_fd"]
    path = out / "convexity.csv"
    _write_csv(path, header, rows, _scenario_hash(sc, "convexity"))
    return path


def run_xray(sc: Scenario, out: Path) -> Path:
    family = sc.family()
    model = sc.model()
    fld, _ = sc.fields()
    f = ah_decay_bump(decay=3, rho_sup=0.9 * sc.collar_depth, y_width=0.6, n=sc.n)
    rng = sc.rng()
    rows = []
    for k in range(sc.n_rays):
        rho0 = rng.uniform(0.05, 0.3)
        y0 = rng.uniform(-0.15, 0.15, size=sc.n)
        v = rng.normal(size=sc.n + 1)
        v[0] *= 0.6
        z0 = np.concatenate([[rho0], y0])
        v0 = ah_unit_speed(family, z0, v)
        rep = verify_relation(family, model, f, z0, v0, c=1.0, fld=fld)
        # exit times of the compactified-time curve, for the record
        r0 = rho0**2
        v_hat = np.concatenate([[2.0 * rho0 * v0[0]], v0[1:]]) / r0
        path = integrate(fld, np.concatenate([[r0], y0]), v_hat, (-2.0, 2.0))
        et = exit_times(path)
        rows.append(
            [k, et.tau_minus, et.tau_plus, rep.connection_value, rep.metric_value, rep.residual]
        )
    path_out = out / "xray.csv"
    _write_csv(
        path_out,
        ["id", "tau_minus", "tau_plus", "I_hat", "I", "residual"],
        rows,
        _scenario_hash(sc, "xray"),
    )
    return path_out


def run_kernel(sc: Scenario, out: Path) -> Path:
    fld, _ = sc.fields()
    eta = sc.eta_list[0] if sc.eta_list else 0.01
    cfg = sc.config(eta)
    gs = sc.op_grid
    z = np.array([0.5 * gs.x_max, 0.25 * gs.s_max, 0.0])
    xs = np.linspace(gs.x_max / gs.nx, gs.x_max, gs.nx)
    ss = np.linspace(gs.s_max / gs.ns, gs.s_max, gs.ns)
    XT, ST = np.meshgrid(xs, ss, indexing="ij")
    Zt = np.stack([XT.ravel(), ST.ravel(), np.zeros(XT.size)], axis=-1)
    Z = np.broadcast_to(z, Zt.shape).copy()
    keep = np.linalg.norm(Zt - Z, axis=1) > 1e-12
    vals = np.zeros(Zt.shape[0])
    vals[keep] = no.kernel_batch(fld, cfg, Z[keep], Zt[keep])
    rows = [
        np.concatenate([z, Zt[k], [vals[k]]]) for k in range(Zt.shape[0])
    ]
    path_out = out / "kernel.csv"
    _write_csv(
        path_out,
        ["x", "y1", "y2", "xt", "yt1", "yt2", "kappa"],
        rows,
        cfg.config_hash({"cmd": "kernel"}),
    )
    return path_out


def run_blowup(sc: Scenario, out: Path) -> Path:
    fld, _ = sc.fields()
    eta = sc.eta_list[0] if sc.eta_list else 0.01
    cfg = sc.config(eta)
    x = 0.25 * sc.op_grid.x_max
    y = np.zeros(sc.n)
    rng = sc.rng()
    rows = []
    for theta_seed in range(6):
        th = rng.normal(size=sc.n + 1)
        th[0] = abs(th[0])
        th /= np.linalg.norm(th)
        for R in np.linspace(0.02, 2.0, 25):
            K = bl.lifted_kernel_batch(fld, cfg, x, y, np.array([R]), th)[0]
            dlim = bl.diagonal_limit(x, y, th, cfg.chi, fld.n)
            x01, x10, x11 = bl.defining_functions(x, R, th[0])
            rows.append(np.concatenate([[x], y, [R], th, [K, dlim, x01, x10, x11]]))
    header = (
        ["x"] + [f"y{i+1}" for i in range(sc.n)] + ["R", "Xhat"]
        + [f"Yhat{i+1}" for i in range(sc.n)]
        + ["K", "diag_limit", "x01", "x10", "x11"]
    )
    path_out = out / "blowup.csv"
    _write_csv(path_out, header, rows, cfg.config_hash({"cmd": "blowup"}))
    return path_out


def _sweep_point(args):
    sc, eta = args
    fld, bar = sc.fields()
    cfg = sc.config(eta)
    grid = sc.schur_grid.build()
    mat_hat = no.assemble_matrix(fld, cfg, grid, field_tag="hat")
    if bar is None:
        rep = no.schur_estimate_E(mat_hat, mat_hat)
    else:
        mat_bar = no.assemble_matrix(bar, cfg, grid, field_tag="bar")
        rep = no.schur_estimate_E(mat_hat, mat_bar)
    return [eta, rep.l2_bound, rep.h10_bound, rep.row_sup, rep.col_sup]


def run_schur_sweep(sc: Scenario, out: Path, threads: int = 1) -> Path:
    etas = list(sc.eta_list)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_sweep_point, [(sc, e) for e in etas]))
    else:
        rows = [_sweep_point((sc, e)) for e in etas]
    path_out = out / "schur_sweep.csv"
    _write_csv(
        path_out,
        ["eta", "l2_bound", "h10_bound", "row_sup", "col_sup"],
        rows,
        _scenario_hash(sc, "schur"),
    )
    return path_out


def run_assemble(sc: Scenario, out: Path) -> Path:
    fld, _ = sc.fields()
    eta = sc.eta_list[0] if sc.eta_list else 0.01
    cfg = sc.config(eta)
    grid = sc.op_grid.build()
    mat = no.assemble_matrix(fld, cfg, grid, field_tag="hat")
    path_out = out / "operator_matrix.bin"
    header = {
        "rows": int(mat.entries.shape[0]),
        "cols": int(mat.entries.shape[1]),
        "dtype": "<f8",
        "order": "row-major",
        "config_hash": mat.config_hash,
    }
    with open(path_out, "wb") as fh:
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode())
        fh.write(mat.entries.astype("<f8").tobytes(order="C"))
    return path_out


def run_invert(sc: Scenario, out: Path) -> tuple:
    fld, _ = sc.fields()
    eta = sc.eta_list[-1] if sc.eta_list else 0.0025
    cfg = sc.config(eta)
    grid = sc.recon_grid.build()
    mat = no.assemble_matrix(fld, cfg, grid, field_tag="hat")
    u_mask = grid.u_mask(cfg.boundary, eta)
    X, S = grid.nodes()
    sigma_min = inv.injectivity_certificate(mat, u_mask)
    xs, ss = X[u_mask], S[u_mask]
    x_lens = max(xs.max(), 1e-12)
    s_lens = max(ss.max(), 1e-12)
    bump = smooth_bump(np.hypot((xs - 0.4 * x_lens) / (0.36 * x_lens), ss / (0.55 * s_lens)))
    f_true = np.zeros(grid.size)
    f_true[u_mask] = bump
    data = mat.apply(f_true)
    report = inv.reconstruct(mat, data)
    w = grid.weights()
    denom = float(np.sqrt(np.sum(w * f_true**2)))
    rel_err = float(np.sqrt(np.sum(w * (report.f_hat - f_true) ** 2))) / denom
    probes = inv.probe_functions(grid, u_mask, seed=sc.seed)
    ratio, failed = inv.stability_ratio(mat, probes)
    summary = {
        "sigma_min": sigma_min,
        "stability_ratio": ratio,
        "stability_failed": bool(failed),
        "rel_error": rel_err,
        "iterations": report.iterations,
        "converged": bool(report.converged),
        "eta": eta,
        "config_hash": mat.config_hash,
    }
    json_path = out / "invert_report.json"
    with open(json_path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    rows = [
        [X[k], S[k], f_true[k], report.f_hat[k]] for k in range(grid.size)
    ]
    csv_path = out / "reconstruction.csv"
    _write_csv(csv_path, ["x", "s", "f", "f_hat"], rows, mat.config_hash)
    return json_path, csv_path


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="ahxray",
        description="Local X-ray transform experiments for boundary-degenerate metrics",
    )
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("scenario", nargs="?", default="hyperbolic",
                        help="scenario JSON path or built-in name")
    parser.add_argument("--scenario", dest="scenario_flag", default=None,
                        help="scenario JSON path (alternative to the positional)")
    parser.add_argument("--out", default="ahxray_out", help="output directory")
    parser.add_argument("--threads", type=int, default=1, help="parallel sweep points")
    parser.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    args = parser.parse_args(argv)

    try:
        sc = load_scenario(args.scenario_flag or args.scenario)
        if args.seed is not None:
            sc.seed = args.seed
    except ScenarioSchemaError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return 2

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    try:
        if args.subcommand in ("geodesics", "all"):
            run_geodesics(sc, out)
            print(f"geodesics: wrote {sc.n_geodesics} files to {out}")
        if args.subcommand in ("convexity", "all"):
            print(f"convexity: {run_convexity(sc, out)}")
        if args.subcommand in ("xray", "all"):
            print(f"xray: {run_xray(sc, out)}")
        if args.subcommand in ("kernel", "all"):
            print(f"kernel: {run_kernel(sc, out)}")
        if args.subcommand in ("blowup", "all"):
            print(f"blowup: {run_blowup(sc, out)}")
        if args.subcommand in ("schur-sweep", "all"):
            print(f"schur-sweep: {run_schur_sweep(sc, out, args.threads)}")
        if args.subcommand in ("assemble", "all"):
            print(f"assemble: {run_assemble(sc, out)}")
        if args.subcommand in ("invert", "all"):
            print(f"invert: {run_invert(sc, out)}")
    except AHXrayError as exc:
        print(f"numerical failure in '{args.subcommand}': {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
