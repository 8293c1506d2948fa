"""Scenario files: named metric families plus all experiment constants.

A scenario binds a built-in boundary metric family to the locality constants,
cutoff, grids, and sweep parameters of one experiment run.  Scenarios are
plain JSON; validation errors carry a pointer-style path to the offending
entry.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .connection import ChristoffelField, hat_field, split_connection, extend_past_boundary
from .errors import ScenarioSchemaError, SplitRejectedError
from .families import RadialBump, ScalarRFamily
from .geometry import BoundaryMetricFamily, BoundaryPatch, ProjectiveModel, to_even_structure
from .normalop import ArtificialBoundary, CutoffProfile, NormalOperatorConfig, RadialGrid

__all__ = ["Scenario", "load_scenario", "builtin_scenario", "BUILTIN_NAMES"]

BUILTIN_NAMES = ("hyperbolic", "even_quadratic", "n5_bump", "n3_bump")


@dataclass(frozen=True)
class GridSpec:
    nx: int
    ns: int
    x_max: float
    s_max: float

    def build(self) -> RadialGrid:
        return RadialGrid(nx=self.nx, ns=self.ns, x_max=self.x_max, s_max=self.s_max)


@dataclass
class Scenario:
    """Everything one experiment run needs, resolved from JSON."""

    name: str
    family_kind: str
    n: int = 2
    N: int | None = None
    amplitude: float = 0.5
    bump_width: float = 0.25
    extent: float = 1.2
    collar_depth: float = 0.5
    eps0: float = 1.0
    sigma: float = 1.0
    eta_list: tuple = (0.02, 0.01, 0.005, 0.0025)
    M: float = 1.0
    q: float = 0.25
    c0: float = 0.05
    delta1: float = 0.35
    delta2: float = 0.7
    C_tilde: float = 1.0
    sphere_grid: tuple = (32, 64)
    t_steps: int = 160
    n_theta: int = 48
    schur_grid: GridSpec = field(default_factory=lambda: GridSpec(12, 12, 0.025, 0.3))
    op_grid: GridSpec = field(default_factory=lambda: GridSpec(20, 20, 0.05, 0.3))
    recon_grid: GridSpec = field(default_factory=lambda: GridSpec(30, 30, 0.004, 0.12))
    seed: int = 20240801
    n_geodesics: int = 20
    n_rays: int = 20

    # -- builders ---------------------------------------------------------

    def patch(self) -> BoundaryPatch:
        return BoundaryPatch(n=self.n, extent=self.extent, collar_depth=self.collar_depth)

    def family(self) -> BoundaryMetricFamily:
        patch = self.patch()
        kind = self.family_kind
        if kind == "hyperbolic":
            return BoundaryMetricFamily(
                name=self.name, patch=patch, c1=ScalarRFamily(const=1.0),
                c2=ScalarRFamily(), N=None,
            )
        if kind == "even_quadratic":
            prof = RadialBump(amplitude=self.amplitude, width=self.bump_width, shape="plateau")
            return BoundaryMetricFamily(
                name=self.name, patch=patch,
                c1=ScalarRFamily(const=1.0, r_coeff=1.0, profile=prof),
                c2=ScalarRFamily(), N=None,
            )
        if kind in ("n5_bump", "n3_bump"):
            N = self.N if self.N is not None else (5 if kind == "n5_bump" else 3)
            prof = RadialBump(amplitude=self.amplitude, width=self.bump_width)
            return BoundaryMetricFamily(
                name=self.name, patch=patch, c1=ScalarRFamily(const=1.0),
                c2=ScalarRFamily(w_coeff=1.0, profile=prof), N=N,
            )
        raise ScenarioSchemaError(f"family.kind: unknown family '{kind}'")

    def model(self) -> ProjectiveModel:
        return to_even_structure(self.family())

    def fields(self) -> tuple[ChristoffelField, ChristoffelField | None]:
        """(full connection field, smooth part or None for even families)."""
        model = self.model()
        try:
            sp = split_connection(model, self.eps0)
            fld = extend_past_boundary(sp, self.eps0)
            bar = sp.gamma_bar if not model.c2.is_zero else None
            return fld, bar
        except SplitRejectedError:
            return hat_field(model, self.eps0), None

    def boundary(self) -> ArtificialBoundary:
        return ArtificialBoundary(n=self.n, q=self.q)

    def config(self, eta: float) -> NormalOperatorConfig:
        return NormalOperatorConfig(
            boundary=self.boundary(),
            chi=CutoffProfile(M=self.M),
            sigma=self.sigma,
            eta=eta,
            c0=self.c0,
            delta1=self.delta1,
            delta2=self.delta2,
            C_tilde=self.C_tilde,
            n_polar=self.sphere_grid[0],
            n_azimuth=self.sphere_grid[1],
            t_steps=self.t_steps,
            n_theta=self.n_theta,
        )

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


def _require(cond: bool, pointer: str, message: str):
    if not cond:
        raise ScenarioSchemaError(f"{pointer}: {message}")


def _grid_spec(d: dict, pointer: str, default: GridSpec) -> GridSpec:
    if d is None:
        return default
    for key in ("nx", "ns", "x_max", "s_max"):
        _require(key in d, f"{pointer}.{key}", "missing required grid entry")
    _require(int(d["nx"]) > 1 and int(d["ns"]) > 1, f"{pointer}.nx", "grid must be at least 2x2")
    _require(d["x_max"] > 0 and d["s_max"] > 0, f"{pointer}.x_max", "grid extents must be positive")
    return GridSpec(int(d["nx"]), int(d["ns"]), float(d["x_max"]), float(d["s_max"]))


def parse_scenario(doc: dict, name_hint: str = "scenario") -> Scenario:
    """Validate a scenario document; errors carry pointer-style locations."""
    _require(isinstance(doc, dict), "", "scenario must be a JSON object")
    fam = doc.get("family")
    _require(isinstance(fam, dict), "family", "missing family object")
    kind = fam.get("kind")
    _require(kind in BUILTIN_NAMES, "family.kind", f"must be one of {BUILTIN_NAMES}")
    n = int(fam.get("n", 2))
    _require(n >= 2, "family.n", "boundary dimension must be >= 2")
    N = fam.get("N")
    if N is not None:
        N = int(N)
        _require(N >= 3 and N % 2 == 1, "family.N", "evenness order must be an odd integer >= 3")
    amp = float(fam.get("amplitude", 0.5))
    _require(abs(amp) < 1.0, "family.amplitude", "|amplitude| must stay below 1 for positivity")
    width = float(fam.get("bump_width", 0.25))
    _require(width > 0, "family.bump_width", "must be positive")
    patch = doc.get("patch", {})
    extent = float(patch.get("extent", 1.2))
    depth = float(patch.get("collar_depth", 0.5))
    _require(extent > 0 and depth > 0, "patch", "extent and collar_depth must be positive")
    op = doc.get("operator", {})
    eta_list = tuple(float(e) for e in op.get("eta_list", (0.02, 0.01, 0.005, 0.0025)))
    _require(all(e >= 0 for e in eta_list), "operator.eta_list", "entries must be nonnegative")
    _require(
        all(a > b for a, b in zip(eta_list, eta_list[1:])),
        "operator.eta_list",
        "must be sorted descending",
    )
    op_defaults = {"sigma": 1.0, "M": 1.0, "c0": 0.05, "delta1": 0.35, "C_tilde": 1.0}
    for key, dflt in op_defaults.items():
        _require(float(op.get(key, dflt)) > 0.0, f"operator.{key}", "must be positive")
    q = float(op.get("q", 0.25))
    _require(0.0 < q < 1.0, "operator.q", "concavity parameter must lie in (0, 1)")
    d1 = float(op.get("delta1", 0.35))
    d2 = float(op.get("delta2", 0.7))
    _require(d2 > d1 > 0, "operator.delta2", "need delta2 > delta1 > 0")
    sphere = tuple(int(v) for v in op.get("sphere_grid", (32, 64)))
    _require(len(sphere) == 2 and min(sphere) >= 4, "operator.sphere_grid", "need two counts >= 4")
    grids = doc.get("grids", {})
    sc = Scenario(
        name=str(doc.get("name", name_hint)),
        family_kind=kind,
        n=n,
        N=N,
        amplitude=amp,
        bump_width=width,
        extent=extent,
        collar_depth=depth,
        eps0=float(doc.get("connection", {}).get("eps0", 1.0)),
        sigma=float(op.get("sigma", 1.0)),
        eta_list=eta_list,
        M=float(op.get("M", 1.0)),
        q=q,
        c0=float(op.get("c0", 0.05)),
        delta1=d1,
        delta2=d2,
        C_tilde=float(op.get("C_tilde", 1.0)),
        sphere_grid=sphere,
        t_steps=int(op.get("t_steps", 160)),
        n_theta=int(op.get("n_theta", 48)),
        schur_grid=_grid_spec(grids.get("schur"), "grids.schur", GridSpec(12, 12, 0.025, 0.3)),
        op_grid=_grid_spec(grids.get("operator"), "grids.operator", GridSpec(20, 20, 0.05, 0.3)),
        recon_grid=_grid_spec(grids.get("recon"), "grids.recon", GridSpec(30, 30, 0.004, 0.12)),
        seed=int(doc.get("seed", 20240801)),
        n_geodesics=int(doc.get("n_geodesics", 20)),
        n_rays=int(doc.get("n_rays", 20)),
    )
    # cutoff band inside the locality condition on the operator grids
    for label, gs in (("grids.schur", sc.schur_grid), ("grids.operator", sc.op_grid)):
        _require(
            sc.M * np.sqrt(gs.x_max) <= sc.C_tilde + 1e-12,
            label,
            "cutoff band violates M x <= C_tilde sqrt(x) on this grid",
        )
    return sc


def builtin_scenario(name: str) -> Scenario:
    """One of the four built-in scenarios with default constants."""
    docs = {
        "hyperbolic": {"name": "hyperbolic", "family": {"kind": "hyperbolic"}},
        "even_quadratic": {
            "name": "even_quadratic",
            "family": {"kind": "even_quadratic", "amplitude": 0.3, "bump_width": 0.5},
        },
        "n5_bump": {"name": "n5_bump", "family": {"kind": "n5_bump", "N": 5, "amplitude": 0.5}},
        "n3_bump": {"name": "n3_bump", "family": {"kind": "n3_bump", "N": 3, "amplitude": 0.5}},
    }
    if name not in docs:
        raise ScenarioSchemaError(f"family.kind: unknown built-in scenario '{name}'")
    return parse_scenario(docs[name], name)


def load_scenario(path_or_name: str) -> Scenario:
    """Load a scenario JSON file, or resolve a built-in name."""
    if path_or_name in BUILTIN_NAMES:
        return builtin_scenario(path_or_name)
    try:
        with open(path_or_name) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ScenarioSchemaError(
            f"scenario: '{path_or_name}' is neither a file nor one of {BUILTIN_NAMES}"
        )
    except json.JSONDecodeError as exc:
        raise ScenarioSchemaError(f"scenario: invalid JSON ({exc})")
    return parse_scenario(doc, path_or_name)
