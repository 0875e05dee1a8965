"""Independent reference solutions for the benchmark problems.

Four routes, none of which ever sees a learned mapping or network:

* manufactured closed forms (`mms_*`) where the boundary data admits them;
* a second-order finite-difference solve of the *transformed* PDE on the
  reference square, with exact analytic metric terms from the geometry
  module (`fd_transformed_solve`);
* a direct P1 finite-element solve on a filtered Delaunay triangulation for
  irregular domains without an analytic editing map (`fem_direct_solve`);
* the closed-form channel flow (`poiseuille`).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.interpolate import LinearNDInterpolator, RegularGridInterpolator
from scipy.spatial import Delaunay, cKDTree

from . import geometry as geo
from .errors import ConfigurationError
from .geometry import EAST, NORTH, SOUTH, WEST, DomainSpec
from .pde import PdeProblem

Array = np.ndarray


@dataclass
class ReferenceField:
    """Reference solution sampled on its native support plus an evaluator."""

    points: Array            # (n, 2) physical support points
    values: Array            # (n, n_out)
    method: str              # MMS | Analytic | FdTransformed | FemDirect
    resolution: float
    residual: float = 0.0
    _evaluate: callable = None

    def evaluate(self, pts: Array) -> Array:
        return self._evaluate(np.atleast_2d(np.asarray(pts, dtype=float)))

    def export_csv(self, path):
        ncomp = self.values.shape[1]
        header = "x,y," + ",".join(["u", "v", "p"][:ncomp])
        with open(path, "w") as fh:
            fh.write(header + "\n")
            for i in range(len(self.points)):
                row = [repr(float(self.points[i, 0])), repr(float(self.points[i, 1]))]
                row += [repr(float(v)) for v in self.values[i]]
                fh.write(",".join(row) + "\n")
        with open(str(path) + ".provenance.json", "w") as fh:
            json.dump({"method": self.method, "resolution": self.resolution,
                       "residual": self.residual}, fh, indent=1)


# ---------------------------------------------------------------------------
# manufactured solutions
# ---------------------------------------------------------------------------

def mms_poisson(u_star: str = "sinsin"):
    """Source, Dirichlet data and exact field for a chosen closed form u*."""
    if u_star == "sinsin":
        def u_exact(pts):
            return np.sin(math.pi * pts[:, 0]) * np.sin(math.pi * pts[:, 1])

        def f(pts):
            return -2.0 * math.pi ** 2 * u_exact(pts)
    elif u_star == "quadratic":
        def u_exact(pts):
            return pts[:, 0] ** 2 + pts[:, 1] ** 2

        def f(pts):
            return 4.0 * np.ones(len(pts))
    elif u_star == "zero":
        def u_exact(pts):
            return np.zeros(len(pts))

        def f(pts):
            return np.zeros(len(pts))
    else:
        raise ConfigurationError(f"unknown manufactured solution {u_star!r}")
    return f, u_exact, u_exact  # g is the trace of u*


def mms_helmholtz(k: float, a1: float, a2: float):
    coeff = k ** 2 - (a1 * math.pi) ** 2 - (a2 * math.pi) ** 2

    def u_exact(pts):
        return np.sin(a1 * math.pi * pts[:, 0]) * np.sin(a2 * math.pi * pts[:, 1])

    def f(pts):
        return coeff * u_exact(pts)

    return f, u_exact, u_exact


def mms_field(u_exact, pts: Array) -> ReferenceField:
    vals = np.atleast_2d(u_exact(pts)).T if np.ndim(u_exact(pts)) == 1 else u_exact(pts)
    return ReferenceField(points=pts, values=vals, method="MMS", resolution=0.0,
                          _evaluate=lambda q: np.atleast_2d(u_exact(q)).T)


# ---------------------------------------------------------------------------
# transformed finite differences on the reference square
# ---------------------------------------------------------------------------

def fd_transformed_solve(problem: PdeProblem, spec: DomainSpec, editing: str,
                         grid_n: int = 201) -> ReferenceField:
    """Central-difference solve of the pulled-back scalar PDE.

    The physical operator is rewritten on the reference square through the
    exact editing map: Lap u = A11 u_xx' + 2 A12 u_xe + A22 u_ee + b1 u_x'
    + b2 u_e' with A = J J^T and b = Lap_xy of the map components.  The
    linear system is solved directly; the infinity-norm residual is recorded.
    """
    if problem.n_outputs != 1:
        raise ConfigurationError("the transformed FD oracle handles scalar PDEs")
    amap = geo.analytic_forward_map(spec, editing)
    n = grid_n
    h = 2.0 / (n - 1)
    xi = np.linspace(-1.0, 1.0, n)
    eta = np.linspace(-1.0, 1.0, n)
    ref = np.stack(np.meshgrid(xi, eta, indexing="ij"), axis=-1).reshape(-1, 2)
    phys = amap.inverse(ref)
    jac = amap.jacobian(phys)
    hess = amap.hessian(phys)
    a_mat = np.matmul(jac, np.swapaxes(jac, 1, 2))        # (N, 2, 2)
    b_vec = hess[:, :, 0, 0] + hess[:, :, 1, 1]           # (N, 2) Lap of map comps

    kk = float(problem.params.get("k", 0.0)) if problem.kind == "helmholtz" else 0.0
    if problem.kind in ("poisson", "helmholtz"):
        rhs_full = problem.source(phys) if problem.kind == "poisson" else None
        if problem.kind == "helmholtz":
            from .pde import helmholtz_source
            rhs_full = helmholtz_source(phys, problem.params["k"],
                                        problem.params["a1"], problem.params["a2"])
    else:
        rhs_full = np.zeros(len(phys))

    def idx(i, j):
        return i * n + j

    rows, cols, vals = [], [], []
    rhs = np.zeros(n * n)

    def put(r, c, v):
        rows.append(r)
        cols.append(c)
        vals.append(v)

    ii, jj = np.meshgrid(np.arange(1, n - 1), np.arange(1, n - 1), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    ctr = idx(ii, jj)
    a11, a12, a22 = a_mat[ctr, 0, 0], a_mat[ctr, 0, 1], a_mat[ctr, 1, 1]
    b1, b2 = b_vec[ctr, 0], b_vec[ctr, 1]
    inv_h2 = 1.0 / h ** 2
    inv_2h = 1.0 / (2.0 * h)

    def put_arr(r, c, v):
        rows.append(r)
        cols.append(c)
        vals.append(v)

    put_arr(ctr, ctr, -2.0 * (a11 + a22) * inv_h2 + kk ** 2)
    put_arr(ctr, idx(ii + 1, jj), a11 * inv_h2 + b1 * inv_2h)
    put_arr(ctr, idx(ii - 1, jj), a11 * inv_h2 - b1 * inv_2h)
    put_arr(ctr, idx(ii, jj + 1), a22 * inv_h2 + b2 * inv_2h)
    put_arr(ctr, idx(ii, jj - 1), a22 * inv_h2 - b2 * inv_2h)
    cross = 2.0 * a12 / (4.0 * h ** 2)
    put_arr(ctr, idx(ii + 1, jj + 1), cross)
    put_arr(ctr, idx(ii - 1, jj - 1), cross)
    put_arr(ctr, idx(ii + 1, jj - 1), -cross)
    put_arr(ctr, idx(ii - 1, jj + 1), -cross)
    rhs[ctr] = rhs_full[ctr]

    # boundary rows: Dirichlet pins the value, Neumann discretises the
    # transformed normal-derivative relation A21 u_xi + A22 u_eta = 0
    claimed = np.zeros(n * n, dtype=bool)

    edge_nodes = {
        WEST: idx(np.zeros(n, dtype=int), np.arange(n)),
        EAST: idx(np.full(n, n - 1), np.arange(n)),
        SOUTH: idx(np.arange(n), np.zeros(n, dtype=int)),
        NORTH: idx(np.arange(n), np.full(n, n - 1)),
    }

    for bc in problem.neumann:
        nodes = edge_nodes[bc.edge]
        inner = nodes[1:-1]  # leave corners for the Dirichlet caps
        take = inner[~claimed[inner]]
        claimed[take] = True
        a21, a22e = a_mat[take, 0, 1], a_mat[take, 1, 1]
        a11e, a12e = a_mat[take, 0, 0], a_mat[take, 0, 1]
        if bc.edge in (SOUTH, NORTH):
            sgn = 1.0 if bc.edge == SOUTH else -1.0  # inward eta direction
            put_arr(take, take, -3.0 * a22e * sgn * inv_2h)
            step = 1 if bc.edge == SOUTH else -1
            put_arr(take, take + step, 4.0 * a22e * sgn * inv_2h)
            put_arr(take, take + 2 * step, -a22e * sgn * inv_2h)
            # tangential (xi) term, central along the edge
            put_arr(take, take + n, a21 * inv_2h)
            put_arr(take, take - n, -a21 * inv_2h)
        else:
            sgn = 1.0 if bc.edge == WEST else -1.0
            put_arr(take, take, -3.0 * a11e * sgn * inv_2h)
            step = n if bc.edge == WEST else -n
            put_arr(take, take + step, 4.0 * a11e * sgn * inv_2h)
            put_arr(take, take + 2 * step, -a11e * sgn * inv_2h)
            put_arr(take, take + 1, a12e * inv_2h)
            put_arr(take, take - 1, -a12e * inv_2h)
        rhs[take] = 0.0

    for bc in problem.dirichlet:
        nodes = edge_nodes[bc.edge]
        take = nodes[~claimed[nodes]]
        claimed[take] = True
        put_arr(take, take, np.ones(len(take)))
        rhs[take] = bc.value(phys[take])

    rows = np.concatenate([np.atleast_1d(r) for r in rows])
    cols = np.concatenate([np.atleast_1d(c) for c in cols])
    vals = np.concatenate([np.atleast_1d(v) for v in vals])
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(n * n, n * n))
    sol = spla.spsolve(mat, rhs)
    res = float(np.max(np.abs(mat @ sol - rhs)))

    grid_vals = sol.reshape(n, n)
    interp = RegularGridInterpolator((xi, eta), grid_vals, bounds_error=False,
                                     fill_value=None)

    def evaluate(q):
        r = np.clip(amap.map(q), -1.0, 1.0)
        return interp(r)[:, None]

    return ReferenceField(points=phys, values=sol[:, None], method="FdTransformed",
                          resolution=h, residual=res, _evaluate=evaluate)


def fd_cartesian_solve(problem: PdeProblem, grid_n: int = 201) -> ReferenceField:
    """Plain Cartesian FD solve: the transformed solve with the identity map."""
    return fd_transformed_solve(problem, DomainSpec("unit_square"), "identity", grid_n)


# ---------------------------------------------------------------------------
# P1 FEM on a filtered Delaunay mesh (irregular domains, no analytic map)
# ---------------------------------------------------------------------------

def fem_direct_solve(problem: PdeProblem, spec: DomainSpec,
                     mesh_h: float = 0.025) -> ReferenceField:
    """Direct scalar solve on the physical domain.

    Nodes combine an interior grid with dense boundary samples; Delaunay
    triangles whose centroid falls outside the domain are discarded.  All
    boundary conditions must be Dirichlet.
    """
    if problem.neumann:
        raise ConfigurationError("the FEM oracle handles Dirichlet problems only")
    cloud = geo.sample_domain(spec, mesh_h)
    poly = geo.boundary_polyline(spec)
    interior = cloud.interior
    dist, _ = cKDTree(cloud.boundary).query(interior)
    interior = interior[dist > 0.25 * mesh_h]
    nodes = np.concatenate([interior, cloud.boundary])
    is_bd = np.zeros(len(nodes), dtype=bool)
    is_bd[len(interior):] = True

    tri = Delaunay(nodes)
    # a triangle stays only if its centroid and all edge midpoints are inside;
    # midpoints stop concave bays from being bridged by wide triangles
    probes = [nodes[tri.simplices].mean(axis=1)]
    for a, b in ((0, 1), (1, 2), (2, 0)):
        probes.append(0.5 * (nodes[tri.simplices[:, a]] + nodes[tri.simplices[:, b]]))
    flags = geo._winding_inside(np.concatenate(probes), poly)
    keep = flags.reshape(4, -1).all(axis=0)
    simplices = tri.simplices[keep]
    # drop nodes not referenced by any kept triangle (their rows would be empty)
    used = np.unique(simplices)
    remap = -np.ones(len(nodes), dtype=int)
    remap[used] = np.arange(len(used))
    nodes = nodes[used]
    is_bd = is_bd[used]
    simplices = remap[simplices]

    p1 = nodes[simplices[:, 0]]
    p2 = nodes[simplices[:, 1]]
    p3 = nodes[simplices[:, 2]]
    det = (p2[:, 0] - p1[:, 0]) * (p3[:, 1] - p1[:, 1]) \
        - (p3[:, 0] - p1[:, 0]) * (p2[:, 1] - p1[:, 1])
    area = 0.5 * np.abs(det)
    good = area > 1e-14
    simplices, p1, p2, p3, det, area = (a[good] for a in (simplices, p1, p2, p3, det, area))

    bmat = np.stack([p2[:, 1] - p3[:, 1], p3[:, 1] - p1[:, 1], p1[:, 1] - p2[:, 1]], axis=1)
    cmat = np.stack([p3[:, 0] - p2[:, 0], p1[:, 0] - p3[:, 0], p2[:, 0] - p1[:, 0]], axis=1)
    bmat /= det[:, None]
    cmat /= det[:, None]

    kk = float(problem.params.get("k", 0.0)) if problem.kind == "helmholtz" else 0.0
    if problem.kind == "poisson":
        f_nodes = problem.source(nodes)
    elif problem.kind == "helmholtz":
        from .pde import helmholtz_source
        f_nodes = helmholtz_source(nodes, problem.params["k"], problem.params["a1"],
                                   problem.params["a2"])
    elif problem.kind == "laplace":
        f_nodes = np.zeros(len(nodes))
    else:
        raise ConfigurationError("FEM oracle handles scalar PDEs only")

    rows, cols, vals = [], [], []
    rhs = np.zeros(len(nodes))
    for a in range(3):
        ia = simplices[:, a]
        np.add.at(rhs, ia, -f_nodes[ia] * area / 3.0)
        for b in range(3):
            ib = simplices[:, b]
            k_ab = area * (bmat[:, a] * bmat[:, b] + cmat[:, a] * cmat[:, b])
            if a == b and kk != 0.0:
                k_ab = k_ab - kk ** 2 * area / 3.0
            rows.append(ia)
            cols.append(ib)
            vals.append(k_ab)
    mat = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                        shape=(len(nodes), len(nodes))).tolil()

    g_vals = np.zeros(len(nodes))
    if problem.dirichlet:
        g_vals[is_bd] = problem.dirichlet[0].value(nodes[is_bd])
    bd_idx = np.where(is_bd)[0]
    # pin the boundary rows; the kept columns couple interior rows to g
    for i in bd_idx:
        mat.rows[i] = [int(i)]
        mat.data[i] = [1.0]
    rhs[bd_idx] = g_vals[bd_idx]
    mat = mat.tocsr()
    sol = spla.spsolve(mat, rhs)
    res = float(np.max(np.abs(mat @ sol - rhs)))

    interp = LinearNDInterpolator(nodes, sol, fill_value=0.0)

    def evaluate(q):
        return interp(q)[:, None]

    return ReferenceField(points=nodes, values=sol[:, None], method="FemDirect",
                          resolution=mesh_h, residual=res, _evaluate=evaluate)


# ---------------------------------------------------------------------------
# channel flow
# ---------------------------------------------------------------------------

def poiseuille(u_max: float, half_width: float, re: float = 100.0,
               x_outlet: float = 1.0, p_outlet: float = 0.0):
    """Exact straight-channel solution: parabolic u, zero v, linear p.

    The pressure slope makes the nondimensional momentum residual vanish:
    dp/dx = -2 u_max / (re * half_width^2).
    """
    slope = 2.0 * u_max / (re * half_width ** 2)

    def u(pts):
        return u_max * (1.0 - (pts[:, 1] / half_width) ** 2)

    def v(pts):
        return np.zeros(len(pts))

    def p(pts):
        return p_outlet + slope * (x_outlet - pts[:, 0])

    return u, v, p
