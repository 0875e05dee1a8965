"""PDE residual operators, boundary specifications and coordinate transforms.

Residuals are written against per-component scalar views (value, gradient,
Hessian per point).  The same formulas run on plain numpy bundles (oracles,
frozen mappings) and on recorded tape nodes (training), because the
structural ops in `net` dispatch on both.

The chain-rule path mirrors the conventional transformed-PINN workflow:
reference-domain derivatives are pulled back to physical space through

    grad_xy u = J^T grad_xieta u
    hess_xy u = J^T hess_xieta u J + grad_xieta u . hess_xy Phi

with J and the mapping Hessians either taken from the live computation
graph (end-to-end modes) or read from precomputed per-point tables
(comparison mode, optionally truncated to float32 or 3 decimals).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import net
from .errors import ConfigurationError
from .geometry import EAST, NORTH, SOUTH, WEST, DomainSpec

Array = np.ndarray


# ---------------------------------------------------------------------------
# scalar views over multi-output bundles
# ---------------------------------------------------------------------------

@dataclass
class ScalarView:
    """One output component of a bundle: value (n,), grad (n,2), hess (n,2,2)."""

    value: object
    grad: object
    hess: object


def component(bundle, i: int) -> ScalarView:
    return ScalarView(
        value=net.getitem(bundle.value, (slice(None), i)),
        grad=net.getitem(bundle.jacobian, (slice(None), i)),
        hess=net.getitem(bundle.hessian, (slice(None), i)),
    )


def split_components(bundle, n_outputs: int) -> list[ScalarView]:
    return [component(bundle, i) for i in range(n_outputs)]


def laplacian(view: ScalarView):
    return net.getitem(view.hess, (slice(None), 0, 0)) + net.getitem(view.hess, (slice(None), 1, 1))


# ---------------------------------------------------------------------------
# residual operators
# ---------------------------------------------------------------------------

def poisson_residual(view: ScalarView, f_vals):
    """div(grad u) - f."""
    return laplacian(view) - f_vals


def helmholtz_source(pts: Array, k: float, a1: float, a2: float) -> Array:
    coeff = k ** 2 - (a1 * math.pi) ** 2 - (a2 * math.pi) ** 2
    return coeff * np.sin(a1 * math.pi * pts[:, 0]) * np.sin(a2 * math.pi * pts[:, 1])


def helmholtz_residual(view: ScalarView, pts: Array, k: float, a1: float, a2: float):
    """div(grad u) + k^2 u - f, with the oscillatory manufactured source."""
    return laplacian(view) + (k ** 2) * view.value - helmholtz_source(pts, k, a1, a2)


def ns2d_residuals(u: ScalarView, v: ScalarView, p: ScalarView, re: float):
    """Steady incompressible Navier-Stokes, nondimensional form.

    Returns (continuity, momentum_x, momentum_y).
    """
    u_x = net.getitem(u.grad, (slice(None), 0))
    u_y = net.getitem(u.grad, (slice(None), 1))
    v_x = net.getitem(v.grad, (slice(None), 0))
    v_y = net.getitem(v.grad, (slice(None), 1))
    p_x = net.getitem(p.grad, (slice(None), 0))
    p_y = net.getitem(p.grad, (slice(None), 1))
    cont = u_x + v_y
    mom_x = u.value * u_x + v.value * u_y + p_x - laplacian(u) / re
    mom_y = u.value * v_x + v.value * v_y + p_y - laplacian(v) / re
    return cont, mom_x, mom_y


# ---------------------------------------------------------------------------
# chain rule pullbacks
# ---------------------------------------------------------------------------

def chain_rule_grad(ref_grad, jac):
    """grad_xy u = J^T grad_xieta u (batch or single point)."""
    if net.value_of(ref_grad).ndim == 1:
        return np.asarray(jac).T @ np.asarray(ref_grad)
    n = net.value_of(ref_grad).shape[0]
    col = net.reshape(ref_grad, (n, 2, 1))
    return net.reshape(net.bmm(net.transpose(jac), col), (n, 2))


def chain_rule_hess(ref_grad, ref_hess, jac, map_hess):
    """hess_xy u = J^T hess_ref u J + sum_p (grad_ref u)_p hess_xy Phi_p.

    For affine maps the correction term vanishes because hess_xy Phi = 0.
    """
    if net.value_of(ref_grad).ndim == 1:
        j = np.asarray(jac)
        term = np.einsum("p,pij->ij", np.asarray(ref_grad), np.asarray(map_hess))
        return j.T @ np.asarray(ref_hess) @ j + term
    n = net.value_of(ref_grad).shape[0]
    sandwich = net.bmm(net.bmm(net.transpose(jac), ref_hess), jac)
    row = net.reshape(ref_grad, (n, 1, 2))
    flat = net.reshape(map_hess, (n, 2, 4))
    corr = net.reshape(net.bmm(row, flat), (n, 2, 2))
    return sandwich + corr


def physical_views(ref_bundle, jac, map_hess, n_outputs: int) -> list[ScalarView]:
    """Pull every output component of a reference-side bundle back to (x, y)."""
    views = []
    for i in range(n_outputs):
        ref = component(ref_bundle, i)
        views.append(ScalarView(
            value=ref.value,
            grad=chain_rule_grad(ref.grad, jac),
            hess=chain_rule_hess(ref.grad, ref.hess, jac, map_hess),
        ))
    return views


def compose_bundles(outer, inner):
    """Bundle of outer(inner(.)) w.r.t. inner's input coordinates.

    `outer` is evaluated at inner's output; shapes (n, o, m) against
    (n, m, p).  Works on tape nodes and plain arrays alike.
    """
    jo, ji = outer.jacobian, inner.jacobian
    n, o, m = net.value_of(jo).shape
    p = net.value_of(ji).shape[-1]
    jac = net.bmm(jo, ji)
    t1 = net.reshape(net.bmm(net.reshape(outer.hessian, (n, o * m, m)), ji), (n, o, m, p))
    t1 = net.reshape(net.bmm(net.reshape(net.transpose(t1, (0, 1, 3, 2)), (n, o * p, m)), ji),
                     (n, o, p, p))
    t2 = net.reshape(net.bmm(jo, net.reshape(inner.hessian, (n, m, p * p))), (n, o, p, p))
    hess = net.add(t1, t2)
    cls = net.BundleVars if isinstance(jac, net.Node) else net.EvalBundle
    return cls(outer.value, jac, hess)


# ---------------------------------------------------------------------------
# problems
# ---------------------------------------------------------------------------

@dataclass
class BoundaryCondition:
    edge: int            # reference edge the segment maps to
    kind: str            # "dirichlet" | "neumann"
    component: int
    value: callable      # g(pts) -> (n,) target values


@dataclass
class PdeProblem:
    kind: str            # laplace | poisson | helmholtz | ns2d
    n_outputs: int
    params: dict = field(default_factory=dict)
    source: callable = None
    dirichlet: list = field(default_factory=list)
    neumann: list = field(default_factory=list)
    exact: callable = None      # closed-form solution when one exists

    @property
    def m_u(self) -> int:
        return 3 if self.kind == "ns2d" else 1

    def residuals(self, views: list[ScalarView], pts: Array) -> list:
        """Per-point residuals of every governing operator."""
        if self.kind == "ns2d":
            return list(ns2d_residuals(views[0], views[1], views[2],
                                       self.params["re"]))
        view = views[0]
        if self.kind == "laplace":
            return [laplacian(view)]
        if self.kind == "poisson":
            return [poisson_residual(view, self.source(pts))]
        if self.kind == "helmholtz":
            return [helmholtz_residual(view, pts, self.params["k"],
                                       self.params["a1"], self.params["a2"])]
        raise ConfigurationError(f"unknown pde kind {self.kind!r}")


def _zero(pts):
    return np.zeros(len(np.atleast_2d(pts)))


def poisson_problem(source=None, g=None, exact=None) -> PdeProblem:
    """Poisson with the oscillatory product source by default; u = g on all edges."""
    if source is None:
        def source(pts):
            return -2.0 * math.pi ** 2 * np.sin(math.pi * pts[:, 0]) * np.sin(math.pi * pts[:, 1])
    gfun = g if g is not None else _zero
    return PdeProblem(
        kind="poisson", n_outputs=1, source=source, exact=exact,
        dirichlet=[BoundaryCondition(e, "dirichlet", 0, gfun)
                   for e in (WEST, SOUTH, EAST, NORTH)],
    )


def laplace_problem(spec: DomainSpec) -> PdeProblem:
    """U-channel potential problem: u = -1 / +1 on the two end caps, zero
    normal derivative on the side walls."""
    if spec.kind != "u_shape":
        raise ConfigurationError("the Laplace benchmark is posed on the u channel")
    return PdeProblem(
        kind="laplace", n_outputs=1,
        dirichlet=[
            BoundaryCondition(WEST, "dirichlet", 0, lambda pts: -np.ones(len(pts))),
            BoundaryCondition(EAST, "dirichlet", 0, lambda pts: np.ones(len(pts))),
        ],
        neumann=[
            BoundaryCondition(SOUTH, "neumann", 0, _zero),
            BoundaryCondition(NORTH, "neumann", 0, _zero),
        ],
    )


def helmholtz_problem(k: float = 1.0, a1: float = 2.0, a2: float = 6.0,
                      g=None, exact=None) -> PdeProblem:
    gfun = g if g is not None else _zero
    return PdeProblem(
        kind="helmholtz", n_outputs=1, params={"k": k, "a1": a1, "a2": a2},
        exact=exact,
        dirichlet=[BoundaryCondition(e, "dirichlet", 0, gfun)
                   for e in (WEST, SOUTH, EAST, NORTH)],
    )


def ns2d_problem(re: float, u_max: float = 1.0) -> PdeProblem:
    """Channel flow in the nondimensional frame (walls at |eta| = 1).

    Points handed to the boundary data are nondimensional physical
    coordinates; the parabolic inlet profile is expressed through the
    mapped transverse coordinate by the caller where needed, so here the
    inlet condition uses the local transverse fraction directly.
    """

    def inlet_u(pts):
        # at the inlet the channel is undeformed: transverse fraction = y
        return u_max * (1.0 - pts[:, 1] ** 2)

    return PdeProblem(
        kind="ns2d", n_outputs=3, params={"re": re, "u_max": u_max},
        dirichlet=[
            BoundaryCondition(NORTH, "dirichlet", 0, _zero),
            BoundaryCondition(NORTH, "dirichlet", 1, _zero),
            BoundaryCondition(SOUTH, "dirichlet", 0, _zero),
            BoundaryCondition(SOUTH, "dirichlet", 1, _zero),
            BoundaryCondition(WEST, "dirichlet", 0, inlet_u),
            BoundaryCondition(WEST, "dirichlet", 1, _zero),
            BoundaryCondition(EAST, "dirichlet", 2, _zero),
        ],
    )


PROBLEM_BUILDERS = {
    "poisson": lambda params: poisson_problem(),
    "helmholtz": lambda params: helmholtz_problem(
        params.get("k", 1.0), params.get("a1", 2.0), params.get("a2", 6.0)),
    "ns2d": lambda params: ns2d_problem(params.get("re", 100.0),
                                        params.get("u_max", 1.0)),
}


def build_problem(kind: str, params: dict, spec: DomainSpec = None) -> PdeProblem:
    if kind == "laplace":
        return laplace_problem(spec)
    if kind in PROBLEM_BUILDERS:
        return PROBLEM_BUILDERS[kind](params)
    raise ConfigurationError(f"unknown pde {kind!r}")


# ---------------------------------------------------------------------------
# stored-Jacobian tables for the chain-rule comparison mode
# ---------------------------------------------------------------------------

PRECISIONS = ("f64", "f32", "mm")


def _quantize(arr: Array, precision: str) -> Array:
    if precision == "f64":
        return arr.astype(np.float64)
    if precision == "f32":
        return arr.astype(np.float32).astype(np.float64)
    if precision == "mm":
        return np.round(arr, 3)
    raise ConfigurationError(f"unknown storage precision {precision!r}")


@dataclass
class StoredMapTables:
    """Frozen per-point mapping data for the conventional workflow."""

    ref: Array           # (n, 2) mapped coordinates, the network inputs
    jac: Array           # (n, 2, 2)
    hess: Array          # (n, 2, 2, 2)
    precision: str = "f64"
    method: str = "fd"


def build_stored_tables(mapper, pts: Array, method: str = "fd",
                        fd_step: float = 1e-4, precision: str = "f64") -> StoredMapTables:
    """Tabulate Phi, J and the mapping Hessians at fixed points.

    `method="fd"` emulates numerical differentiation of a black-box mapping
    (second-order central differences); `method="exact"` stores the
    mapping's own analytic/autodiff derivatives.
    """
    pts = np.asarray(pts, dtype=float)
    ref = mapper.map(pts)
    if method == "exact":
        jac = mapper.jacobian(pts)
        hess = mapper.hessian(pts)
    elif method == "fd":
        h = fd_step
        ex = np.array([h, 0.0])
        ey = np.array([0.0, h])
        fxp, fxm = mapper.map(pts + ex), mapper.map(pts - ex)
        fyp, fym = mapper.map(pts + ey), mapper.map(pts - ey)
        jac = np.stack([(fxp - fxm) / (2 * h), (fyp - fym) / (2 * h)], axis=-1)
        hxx = (fxp - 2 * ref + fxm) / h ** 2
        hyy = (fyp - 2 * ref + fym) / h ** 2
        fpp = mapper.map(pts + ex + ey)
        fpm = mapper.map(pts + ex - ey)
        fmp = mapper.map(pts - ex + ey)
        fmm = mapper.map(pts - ex - ey)
        hxy = (fpp - fpm - fmp + fmm) / (4 * h ** 2)
        hess = np.empty((len(pts), 2, 2, 2))
        hess[:, :, 0, 0] = hxx
        hess[:, :, 1, 1] = hyy
        hess[:, :, 0, 1] = hess[:, :, 1, 0] = hxy
    else:
        raise ConfigurationError(f"unknown table method {method!r}")
    return StoredMapTables(ref=ref,
                           jac=_quantize(jac, precision),
                           hess=_quantize(hess, precision),
                           precision=precision, method=method)


def mean_square(residual_list) -> object:
    """(1/M)(1/N) sum_j sum_i r_ji^2, tape-aware."""
    total = None
    for r in residual_list:
        term = net.nmean(net.mul(r, r))
        total = term if total is None else total + term
    return total / len(residual_list)


def transformed_losses(problem: PdeProblem, ref_bundle_u, tables_u: StoredMapTables,
                       pts_u: Array, ref_bundle_b=None, tables_b: StoredMapTables = None,
                       pts_b: Array = None, normals_b: Array = None,
                       edge_ids_b: Array = None):
    """PDE and boundary losses computed from reference-domain derivatives
    plus stored per-point mapping data (the conventional workflow)."""
    if tables_u is None:
        raise ConfigurationError("chain-rule evaluation needs stored tables per point")
    views_u = physical_views(ref_bundle_u, tables_u.jac, tables_u.hess, problem.n_outputs)
    l_u = mean_square(problem.residuals(views_u, pts_u))
    l_b = None
    if ref_bundle_b is not None:
        views_b = physical_views(ref_bundle_b, tables_b.jac, tables_b.hess, problem.n_outputs)
        res_b = boundary_residuals(problem, views_b, pts_b, normals_b, edge_ids_b)
        l_b = mean_square([r for r, _ in res_b]) if res_b else None
    return l_u, l_b


def boundary_residuals(problem: PdeProblem, views: list[ScalarView], pts: Array,
                       normals: Array, edge_ids: Array):
    """Soft boundary residuals, one entry per active condition.

    Returns a list of (residual over the condition's points, mask).  The
    Neumann residual projects the physical gradient on the outward normal.
    """
    out = []
    for bc in problem.dirichlet + problem.neumann:
        mask = edge_ids == bc.edge
        if not np.any(mask):
            continue
        view = views[bc.component]
        if bc.kind == "dirichlet":
            res = net.getitem(view.value, mask) - bc.value(pts[mask])
        else:
            gn = net.getitem(view.grad, mask)
            n = normals[mask]
            res = (net.getitem(gn, (slice(None), 0)) * n[:, 0]
                   + net.getitem(gn, (slice(None), 1)) * n[:, 1]) - bc.value(pts[mask])
        out.append((res, mask))
    return out
