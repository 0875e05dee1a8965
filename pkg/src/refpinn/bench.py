"""Benchmark case wiring: geometry + editing + PDE + oracle in one place.

Each case bundles everything a solver run needs at desk scale.  Epoch
defaults follow the benchmark configurations (Laplace 1k, Poisson 3k,
Helmholtz 5k, channel flow 20k); collocation spacings are chosen so the
full comparison suite runs on a laptop CPU.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from . import oracle, pde
from .errors import ConfigurationError
from .pinn import ScaledMap

Array = np.ndarray

SHAPE_ALIASES = {
    "square": "unit_square", "unit": "unit_square", "unit_square": "unit_square",
    "perturbed": "perturbed_square", "perturbed_square": "perturbed_square",
    "u": "u_shape", "u_shape": "u_shape",
    "s": "s_shape", "s_shape": "s_shape",
    "t": "t_shape", "t_shape": "t_shape",
    "vessel": "vessel2d", "vessel2d": "vessel2d",
}

DEFAULT_SPACING = {
    "unit_square": 0.05,
    "perturbed_square": 0.05,
    "u_shape": 0.15,
    "s_shape": 0.1,
    "t_shape": 0.05,
    "vessel2d": 0.2,
}

DEFAULT_EPOCHS = {"laplace": 1000, "poisson": 3000, "helmholtz": 5000, "ns2d": 20000}

DEFAULT_PDE_FOR_SHAPE = {
    "unit_square": "poisson",
    "perturbed_square": "poisson",
    "u_shape": "laplace",
    "s_shape": "poisson",
    "t_shape": "helmholtz",
    "vessel2d": "ns2d",
}


def canonical_shape(name: str) -> str:
    key = name.strip().lower()
    if key not in SHAPE_ALIASES:
        raise ConfigurationError(f"unknown shape {name!r}")
    return SHAPE_ALIASES[key]


def make_spec(shape: str, params: dict = None) -> geo.DomainSpec:
    kind = canonical_shape(shape)
    params = dict(params or {})
    keep = {}
    if kind == "perturbed_square":
        keep = {k: params[k] for k in ("A", "omega") if k in params}
    if kind == "vessel2d":
        keep = {k: params[k] for k in ("length", "deform", "radius", "segment")
                if k in params}
    return geo.DomainSpec(kind, keep)


@dataclass
class BenchCase:
    """One solvable benchmark: geometry, editing, problem and oracle."""

    name: str
    spec: geo.DomainSpec
    editing: str
    pde_kind: str
    pde_params: dict = field(default_factory=dict)
    spacing: float = None
    epochs: int = None
    length_scale: float = 1.0   # physical -> solver frame divisor (channel flow)

    def __post_init__(self):
        if self.spacing is None:
            self.spacing = DEFAULT_SPACING[self.spec.kind]
        if self.epochs is None:
            self.epochs = DEFAULT_EPOCHS[self.pde_kind]

    # -- geometry ---------------------------------------------------------
    def cloud(self, spacing: float = None) -> geo.PointCloud:
        c = geo.sample_domain(self.spec, spacing or self.spacing)
        if self.length_scale != 1.0:
            s = self.length_scale
            return geo.PointCloud(c.interior / s, c.boundary / s, c.normals,
                                  c.edge_ids, c.arc_params, c.spacing / s)
        return c

    def pairs(self, spacing: float = None) -> geo.PointPairSet:
        # mapping supervision stays in physical units
        c = geo.sample_domain(self.spec, spacing or self.spacing)
        return geo.make_pairs(self.spec, c, self.editing)

    def analytic_map(self):
        amap = geo.analytic_forward_map(self.spec, self.editing)
        if self.length_scale != 1.0:
            return ScaledMap(amap, self.length_scale)
        return amap

    def wrap_mapper(self, mapper):
        """Adapt a physical-units mapping to the solver frame."""
        if self.length_scale != 1.0:
            return ScaledMap(mapper, self.length_scale)
        return mapper

    # -- problem and truth --------------------------------------------------
    def problem(self) -> pde.PdeProblem:
        return pde.build_problem(self.pde_kind, self.pde_params, self.spec)

    def reference(self, grid_n: int = None):
        """Truth callable pts -> (n, n_outputs), or None when no desk oracle."""
        kind = self.spec.kind
        if self.pde_kind == "poisson" and kind == "unit_square":
            _, u_exact, _ = oracle.mms_poisson("sinsin")
            return lambda pts: u_exact(pts)[:, None]
        if self.pde_kind == "poisson" and kind == "perturbed_square":
            fld = oracle.fem_direct_solve(self.problem(), self.spec, mesh_h=0.025)
            return fld.evaluate
        if self.pde_kind in ("poisson", "laplace", "helmholtz"):
            n = grid_n or (401 if self.pde_kind == "helmholtz" else 201)
            fld = oracle.fd_transformed_solve(self.problem(), self.spec,
                                              self.editing, n)
            return fld.evaluate
        if self.pde_kind == "ns2d":
            if abs(self.spec.param("deform", 0.0)) > 1e-12:
                return None  # no desk oracle for deformed channels
            re = self.pde_params.get("re", 100.0)
            length = self.spec.param("length", 10.0)
            u, v, p = oracle.poiseuille(1.0, 1.0, re=re,
                                        x_outlet=length / self.length_scale)
            return lambda pts: np.stack([u(pts), v(pts), p(pts)], axis=1)
        return None


def make_case(shape: str, pde_kind: str = None, shape_params: dict = None,
              pde_params: dict = None, spacing: float = None,
              epochs: int = None) -> BenchCase:
    spec = make_spec(shape, shape_params)
    kind = pde_kind or DEFAULT_PDE_FOR_SHAPE[spec.kind]
    if kind == "ns2d" and spec.kind != "vessel2d":
        raise ConfigurationError("channel flow is posed on the vessel geometry")
    if kind == "laplace" and spec.kind != "u_shape":
        raise ConfigurationError("the Laplace benchmark is posed on the u channel")
    length_scale = spec.param("radius", geo.VESSEL_DIAMETER_MM / 2.0) \
        if kind == "ns2d" else 1.0
    return BenchCase(
        name=f"{kind}-{spec.kind}",
        spec=spec,
        editing=geo.DEFAULT_EDITING[spec.kind],
        pde_kind=kind,
        pde_params=dict(pde_params or {}),
        spacing=spacing,
        epochs=epochs,
        length_scale=length_scale,
    )
