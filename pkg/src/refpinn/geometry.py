"""Benchmark domains, point-cloud sampling and supervised point pairs.

Every domain kind comes with a constructive boundary parameterisation and at
least one geometric-editing operation that carries it onto the reference
square [-1, 1]^2 with a closed-form forward map.  The maps expose exact
Jacobians and Hessians so that downstream solvers and oracles never rely on
numerical differentiation of the geometry.

Shapes (coordinates are domain units; the vessel family is in mm):

* unit_square / perturbed_square -- [-1,1]^2, optionally with sinusoidal
  edge perturbations gamma(s) = P_k + u D_k + A sin(omega pi u) N_k;
* u_shape   -- width-1 channel swept along a U centerline
               (legs 16.5, bend radius 2), unfolded along the centerline;
* s_shape   -- width-1 channel along two opposing half-annuli (radius 1);
* t_shape   -- two width-2 chambers joined by a width-0.2 throat, mapped by
               per-slice min-max stretching of each y-slice;
* vessel2d  -- straight channel of diameter 4.69 mm with a raised-cosine
               bump/dent, transversely normalised slice by slice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DomainError, EmptyCloudError
from .net import EvalBundle

Array = np.ndarray

WEST, SOUTH, EAST, NORTH = 0, 1, 2, 3
EDGE_NORMALS = {WEST: (-1.0, 0.0), SOUTH: (0.0, -1.0),
                EAST: (1.0, 0.0), NORTH: (0.0, 1.0)}

KINDS = ("unit_square", "perturbed_square", "u_shape", "s_shape",
         "t_shape", "vessel2d")
EDITINGS = ("identity", "fill", "unfold", "cut_unfold", "yslice", "radial")

VESSEL_DIAMETER_MM = 4.69
VESSEL_LENGTH_RANGE = (4.0, 17.0)
VESSEL_DEFORM_RANGE = (-0.90, 0.30)

_U_HALFWIDTH, _U_LEG, _U_RADIUS = 0.5, 16.5, 2.0
_S_HALFWIDTH, _S_RADIUS = 0.5, 1.0
# t-shape half-width profile w(y): chambers of half-width 1 joined by a
# 0.1 half-width throat through tapers; the throat spans y in [0, 0.6]
_T_BREAKS = np.array([-1.0, -0.5, 0.0, 0.6, 0.8, 1.0])
_T_WIDTHS = np.array([1.0, 1.0, 0.1, 0.1, 1.0, 1.0])

_ONBOUNDARY_TOL = 1e-9


@dataclass
class DomainSpec:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown domain kind {self.kind!r}")
        if self.kind == "perturbed_square":
            a = float(self.params.get("A", 0.0))
            omega = float(self.params.get("omega", 0.0))
            if a < 0:
                raise ConfigurationError("perturbation amplitude A must be >= 0")
            if a > 0 and abs(omega - round(omega)) > 1e-12:
                raise ConfigurationError(
                    "perturbed square needs integer omega so the boundary closes")
        if self.kind == "vessel2d":
            length = float(self.params.get("length", 10.0))
            deform = float(self.params.get("deform", 0.0))
            if not (VESSEL_LENGTH_RANGE[0] <= length <= VESSEL_LENGTH_RANGE[1]):
                raise ConfigurationError(f"vessel length {length} outside {VESSEL_LENGTH_RANGE} mm")
            if not (VESSEL_DEFORM_RANGE[0] <= deform <= VESSEL_DEFORM_RANGE[1]):
                raise ConfigurationError(f"deformation ratio {deform} outside {VESSEL_DEFORM_RANGE}")

    def param(self, name, default=0.0) -> float:
        return float(self.params.get(name, default))


@dataclass
class PointCloud:
    """Interior nodes plus boundary samples with outward physical normals."""

    interior: Array            # (n, 2)
    boundary: Array            # (m, 2)
    normals: Array             # (m, 2) outward unit normals
    edge_ids: Array            # (m,) reference edge each sample maps to
    arc_params: Array          # (m,) normalised arc position along its edge
    spacing: float


@dataclass
class PointPairSet:
    """Bijective (physical, reference) supervision pairs."""

    physical: Array            # (n, 2)
    reference: Array           # (n, 2) in [-1, 1]^2
    is_boundary: Array         # (n,) bool
    ref_normals: Array         # (n, 2) reference-edge normals, 0 for interior


# ---------------------------------------------------------------------------
# perturbed square boundary
# ---------------------------------------------------------------------------

_P = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])
_D = np.array([[2.0, 0.0], [0.0, 2.0], [-2.0, 0.0], [0.0, -2.0]])
_N = np.array([[0.0, -1.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])


def perturbed_square_boundary(s, a: float, omega: float):
    """Boundary point gamma(s) of the sinusoidally perturbed square.

    s in [0, 4) selects edge k = floor(s) (bottom, right, top, left) with
    local parameter u = s - k; the perturbation A sin(omega pi u) acts along
    the outward edge normal.
    """
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr < 0) or np.any(s_arr >= 4):
        raise DomainError("boundary parameter s must lie in [0, 4)")
    k = np.floor(s_arr).astype(int)
    u = s_arr - k
    pts = _P[k] + u[..., None] * _D[k] + (a * np.sin(omega * np.pi * u))[..., None] * _N[k]
    return pts


def _perturbed_square_tangent(s, a, omega):
    s_arr = np.asarray(s, dtype=float)
    k = np.floor(s_arr).astype(int)
    u = s_arr - k
    return _D[k] + (a * omega * np.pi * np.cos(omega * np.pi * u))[..., None] * _N[k]


def _perturbed_square_curvature(s, a, omega):
    s_arr = np.asarray(s, dtype=float)
    k = np.floor(s_arr).astype(int)
    u = s_arr - k
    d1 = _perturbed_square_tangent(s_arr, a, omega)
    d2 = (-a * (omega * np.pi) ** 2 * np.sin(omega * np.pi * u))[..., None] * _N[k]
    cross = d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0]
    speed = np.hypot(d1[..., 0], d1[..., 1])
    return np.abs(cross) / np.maximum(speed, 1e-30) ** 3


# ---------------------------------------------------------------------------
# channel centerlines (u and s shapes)
# ---------------------------------------------------------------------------

@dataclass
class _Leg:
    a: Array
    b: Array

    @property
    def length(self):
        return float(np.hypot(*(self.b - self.a)))

    def point(self, t):
        t = np.asarray(t, dtype=float)
        return self.a + t[..., None] * (self.b - self.a)

    def tangent(self, t):
        d = (self.b - self.a) / self.length
        return np.broadcast_to(d, np.shape(t) + (2,)).copy()

    curvature = 0.0


@dataclass
class _Arc:
    center: Array
    radius: float
    th0: float
    th1: float   # signed sweep; th1 < th0 means clockwise

    @property
    def length(self):
        return abs(self.th1 - self.th0) * self.radius

    def point(self, t):
        t = np.asarray(t, dtype=float)
        th = self.th0 + t * (self.th1 - self.th0)
        return self.center + self.radius * np.stack([np.cos(th), np.sin(th)], axis=-1)

    def tangent(self, t):
        t = np.asarray(t, dtype=float)
        th = self.th0 + t * (self.th1 - self.th0)
        e_th = np.stack([-np.sin(th), np.cos(th)], axis=-1)
        return e_th if self.th1 > self.th0 else -e_th

    @property
    def curvature(self):
        return 1.0 / self.radius


def _rot90(v):
    return np.stack([-v[..., 1], v[..., 0]], axis=-1)


@dataclass
class _Channel:
    pieces: list
    halfwidth: float

    def __post_init__(self):
        self.lengths = np.array([p.length for p in self.pieces])
        self.cum = np.concatenate([[0.0], np.cumsum(self.lengths)])
        self.total = float(self.cum[-1])

    def centerline(self, t):
        """Point and left normal at global arc fraction t in [0, 1]."""
        t = np.asarray(t, dtype=float)
        s = t * self.total
        idx = np.clip(np.searchsorted(self.cum, s, side="right") - 1, 0, len(self.pieces) - 1)
        pts = np.empty(np.shape(t) + (2,))
        nrm = np.empty_like(pts)
        for i, piece in enumerate(self.pieces):
            m = idx == i
            if not np.any(m):
                continue
            tl = (s[m] - self.cum[i]) / self.lengths[i]
            pts[m] = piece.point(tl)
            nrm[m] = _rot90(piece.tangent(tl))
        return pts, nrm


def _u_channel(spec: DomainSpec = None) -> _Channel:
    p = spec.params if spec is not None else {}
    rad = float(p.get("radius", _U_RADIUS))
    leg = float(p.get("leg", _U_LEG))
    half = float(p.get("halfwidth", _U_HALFWIDTH))
    return _Channel([
        _Leg(np.array([-rad, leg]), np.array([-rad, 0.0])),
        _Arc(np.array([0.0, 0.0]), rad, math.pi, 2 * math.pi),
        _Leg(np.array([rad, 0.0]), np.array([rad, leg])),
    ], half)


def _s_channel(spec: DomainSpec = None) -> _Channel:
    p = spec.params if spec is not None else {}
    rad = float(p.get("radius", _S_RADIUS))
    half = float(p.get("halfwidth", _S_HALFWIDTH))
    return _Channel([
        _Arc(np.array([0.0, -rad]), rad, 1.5 * math.pi, 0.5 * math.pi),
        _Arc(np.array([0.0, rad]), rad, 1.5 * math.pi, 2.5 * math.pi),
    ], half)


def _channel_for(kind: str, spec: DomainSpec = None) -> _Channel:
    return _u_channel(spec) if kind == "u_shape" else _s_channel(spec)


# ---------------------------------------------------------------------------
# t-shape and vessel half-width profiles
# ---------------------------------------------------------------------------

def _piecewise_width(y, breaks, widths):
    """Piecewise-linear half-width profile and its first derivative."""
    y = np.asarray(y, dtype=float)
    idx = np.clip(np.searchsorted(breaks, y, side="right") - 1, 0, len(breaks) - 2)
    y0, y1 = breaks[idx], breaks[idx + 1]
    w0, w1 = widths[idx], widths[idx + 1]
    slope = (w1 - w0) / (y1 - y0)
    return w0 + slope * (y - y0), slope


def _t_width(y):
    return _piecewise_width(y, _T_BREAKS, _T_WIDTHS)


def _vessel_geometry(spec: DomainSpec):
    length = spec.param("length", 10.0)
    deform = spec.param("deform", 0.0)
    radius = spec.param("radius", VESSEL_DIAMETER_MM / 2.0)
    seg = spec.param("segment", 0.6 * length)
    return length, deform, radius, seg


def _vessel_halfwidth(x, spec: DomainSpec):
    """Raised-cosine half-width profile h(x) and derivatives h', h''."""
    length, deform, radius, seg = _vessel_geometry(spec)
    x = np.asarray(x, dtype=float)
    xc = length / 2.0
    arg = 2.0 * np.pi * (x - xc) / seg
    inside = np.abs(x - xc) <= seg / 2.0
    bump = np.where(inside, 0.5 * (1.0 + np.cos(arg)), 0.0)
    dbump = np.where(inside, -(np.pi / seg) * np.sin(arg), 0.0)
    d2bump = np.where(inside, -(2.0 * np.pi ** 2 / seg ** 2) * np.cos(arg), 0.0)
    h = radius * (1.0 + deform * bump)
    return h, radius * deform * dbump, radius * deform * d2bump


# ---------------------------------------------------------------------------
# boundary description: list of parametric edges
# ---------------------------------------------------------------------------

@dataclass
class _BoundaryEdge:
    """One boundary piece: point(t), outward normal(t), curvature(t), edge id."""

    point: callable
    normal: callable
    curvature: callable
    edge_id: int


def _edge_from_offsets(channel: _Channel, side: int) -> _BoundaryEdge:
    """Channel wall at left-normal offset side*h -> reference edge eta=side."""
    h = channel.halfwidth

    def point(t):
        c, n = channel.centerline(t)
        return c + side * h * n

    def normal(t):
        _, n = channel.centerline(t)
        return side * n

    def curvature(t):
        t = np.asarray(t, dtype=float)
        s = t * channel.total
        idx = np.clip(np.searchsorted(channel.cum, s, side="right") - 1,
                      0, len(channel.pieces) - 1)
        out = np.zeros(np.shape(t))
        for i, piece in enumerate(channel.pieces):
            if isinstance(piece, _Arc):
                m = idx == i
                # offset curve radius: left normal points toward -e_r on ccw arcs
                sgn = -1.0 if piece.th1 > piece.th0 else 1.0
                out[m] = 1.0 / abs(piece.radius + sgn * side * h)
        return out

    return _BoundaryEdge(point, normal, curvature, NORTH if side > 0 else SOUTH)


def _edge_cap(channel: _Channel, end: int) -> _BoundaryEdge:
    h = channel.halfwidth
    t_end = 1.0 if end > 0 else 0.0
    c, n = channel.centerline(np.array([t_end]))
    c, n = c[0], n[0]
    tang = _rot90(-n)  # tangent = -rot90(left normal)

    def point(t):
        t = np.asarray(t, dtype=float)
        d = (2.0 * t - 1.0) * h
        return c + d[..., None] * n

    def normal(t):
        out_dir = end * tang
        return np.broadcast_to(out_dir, np.shape(t) + (2,)).copy()

    return _BoundaryEdge(point, normal, lambda t: np.zeros(np.shape(t)),
                         EAST if end > 0 else WEST)


def _channel_edges(kind: str, spec: DomainSpec = None) -> list[_BoundaryEdge]:
    ch = _channel_for(kind, spec)
    return [
        _edge_cap(ch, -1),
        _edge_from_offsets(ch, -1),
        _edge_cap(ch, +1),
        _edge_from_offsets(ch, +1),
    ]


def _square_edges(a: float, omega: float) -> list[_BoundaryEdge]:
    edges = []
    ids = (SOUTH, EAST, NORTH, WEST)
    for k in range(4):
        def point(t, k=k):
            t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0 - 1e-15)
            return perturbed_square_boundary(t + k, a, omega)

        def normal(t, k=k):
            tang = _perturbed_square_tangent(np.clip(np.asarray(t, dtype=float), 0.0, 1.0 - 1e-15) + k, a, omega)
            n = -_rot90(tang)
            return n / np.linalg.norm(n, axis=-1, keepdims=True)

        def curvature(t, k=k):
            return _perturbed_square_curvature(np.clip(np.asarray(t, dtype=float), 0.0, 1.0 - 1e-15) + k, a, omega)

        edges.append(_BoundaryEdge(point, normal, curvature, ids[k]))
    return edges


def _profile_edges(kind: str, spec: DomainSpec) -> list[_BoundaryEdge]:
    """Walls x = +/- w(y) plus bottom/top caps (t-shape), or the vessel walls."""
    if kind == "t_shape":
        y_lo, y_hi = -1.0, 1.0

        def width(y):
            return _t_width(y)
    else:
        length = _vessel_geometry(spec)[0]
        y_lo, y_hi = 0.0, length

        def width(x):
            h, dh, _ = _vessel_halfwidth(x, spec)
            return h, dh

    # for the t-shape the profile axis is y (walls are east/west); for the
    # vessel the axis is x (walls are north/south)
    axis_is_y = kind == "t_shape"
    edges = []

    def wall(side):
        def point(t):
            t = np.asarray(t, dtype=float)
            u = y_lo + t * (y_hi - y_lo)
            w, _ = width(u)
            if axis_is_y:
                return np.stack([side * w, u], axis=-1)
            return np.stack([u, side * w], axis=-1)

        def normal(t):
            t = np.asarray(t, dtype=float)
            u = y_lo + t * (y_hi - y_lo)
            _, dw = width(u)
            if axis_is_y:
                n = np.stack([side * np.ones_like(u), -dw], axis=-1)
            else:
                n = np.stack([-dw, side * np.ones_like(u)], axis=-1)
            return n / np.linalg.norm(n, axis=-1, keepdims=True)

        def curvature(t):
            # piecewise linear/cosine walls; use |w''| / (1+w'^2)^(3/2)
            t = np.asarray(t, dtype=float)
            u = y_lo + t * (y_hi - y_lo)
            if axis_is_y:
                return np.zeros(np.shape(u))
            h, dh, d2h = _vessel_halfwidth(u, spec)
            return np.abs(d2h) / (1.0 + dh ** 2) ** 1.5

        eid = (EAST if side > 0 else WEST) if axis_is_y else (NORTH if side > 0 else SOUTH)
        return _BoundaryEdge(point, normal, curvature, eid)

    def cap(end):
        u_end = y_hi if end > 0 else y_lo
        w_end = width(np.asarray(u_end))[0]

        def point(t):
            t = np.asarray(t, dtype=float)
            v = (2.0 * t - 1.0) * w_end
            if axis_is_y:
                return np.stack([v, np.full_like(v, u_end)], axis=-1)
            return np.stack([np.full_like(v, u_end), v], axis=-1)

        def normal(t):
            n = np.array([0.0, float(end)]) if axis_is_y else np.array([float(end), 0.0])
            return np.broadcast_to(n, np.shape(t) + (2,)).copy()

        eid = (NORTH if end > 0 else SOUTH) if axis_is_y else (EAST if end > 0 else WEST)
        return _BoundaryEdge(point, normal, lambda t: np.zeros(np.shape(t)), eid)

    edges.extend([cap(-1), wall(+1), cap(+1), wall(-1)])
    return edges


def boundary_edges(spec: DomainSpec) -> list[_BoundaryEdge]:
    if spec.kind in ("unit_square", "perturbed_square"):
        a = spec.param("A") if spec.kind == "perturbed_square" else 0.0
        omega = spec.param("omega") if spec.kind == "perturbed_square" else 0.0
        return _square_edges(a, omega)
    if spec.kind in ("u_shape", "s_shape"):
        return _channel_edges(spec.kind, spec)
    return _profile_edges(spec.kind, spec)


# ---------------------------------------------------------------------------
# point-in-domain via winding number on a dense boundary polyline
# ---------------------------------------------------------------------------

def _boundary_loop(spec: DomainSpec):
    """Edges with direction flags forming one consistent closed walk."""
    edges = boundary_edges(spec)
    if spec.kind in ("unit_square", "perturbed_square"):
        return [(e, False) for e in edges]
    if spec.kind in ("u_shape", "s_shape"):
        # [cap_w, wall_s, cap_e, wall_n]; caps sweep -h -> +h of the left normal
        return [(edges[1], False), (edges[2], False), (edges[3], True), (edges[0], True)]
    # profile shapes: [cap_lo, wall_+, cap_hi, wall_-]; caps sweep -w -> +w
    return [(edges[1], False), (edges[2], True), (edges[3], True), (edges[0], False)]


def boundary_polyline(spec: DomainSpec, samples_per_edge: int = 1024) -> Array:
    pts = []
    for edge, rev in _boundary_loop(spec):
        t = np.linspace(0.0, 1.0, samples_per_edge, endpoint=False)
        if rev:
            t = 1.0 - t
        pts.append(edge.point(t))
    return np.concatenate(pts, axis=0)


def _winding_inside(points: Array, poly: Array, tol: float = _ONBOUNDARY_TOL):
    """Inside-or-on test: winding number plus a distance-to-polyline guard."""
    inside = np.zeros(len(points), dtype=bool)
    seg_a = poly
    seg_b = np.roll(poly, -1, axis=0)
    seg_d = seg_b - seg_a
    seg_len2 = np.maximum((seg_d ** 2).sum(axis=1), 1e-30)
    for lo in range(0, len(points), 512):
        p = points[lo:lo + 512]
        va = seg_a[None] - p[:, None]
        vb = seg_b[None] - p[:, None]
        cross = va[..., 0] * vb[..., 1] - va[..., 1] * vb[..., 0]
        dot = (va * vb).sum(axis=-1)
        ang = np.arctan2(cross, dot).sum(axis=1)
        wind = np.abs(ang) > math.pi  # ~2*pi inside, ~0 outside
        # distance to the polyline for the on-boundary tolerance
        tproj = np.clip(-(va * seg_d[None]).sum(axis=-1) / seg_len2[None], 0.0, 1.0)
        closest = seg_a[None] + tproj[..., None] * seg_d[None]
        dmin = np.sqrt(((closest - p[:, None]) ** 2).sum(axis=-1)).min(axis=1)
        inside[lo:lo + 512] = wind | (dmin <= tol)
    return inside


def _bbox(poly: Array):
    return poly.min(axis=0), poly.max(axis=0)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def sample_domain(spec: DomainSpec, spacing: float,
                  boundary_factor: float = 1.0) -> PointCloud:
    """Uniform interior grid clipped to the domain plus arc-uniform boundary.

    Boundary sampling density is doubled on pieces whose curvature radius
    falls below five grid spacings, so corner-heavy metrics stay meaningful.
    `boundary_factor` > 1 densifies the boundary relative to the interior
    (used by mapping supervision, which leans on boundary accuracy).
    """
    if spacing <= 0:
        raise ConfigurationError("spacing must be positive")
    poly = boundary_polyline(spec)
    lo, hi = _bbox(poly)
    nx = int(math.floor((hi[0] - lo[0]) / spacing + 1e-9)) + 1
    ny = int(math.floor((hi[1] - lo[1]) / spacing + 1e-9)) + 1
    gx = lo[0] + spacing * np.arange(nx)
    gy = lo[1] + spacing * np.arange(ny)
    grid = np.stack(np.meshgrid(gx, gy, indexing="ij"), axis=-1).reshape(-1, 2)
    interior = grid[_winding_inside(grid, poly)]
    if len(interior) == 0:
        raise EmptyCloudError(f"spacing {spacing} leaves no sample points in {spec.kind}")

    bpts, bnrm, bedge, barc = [], [], [], []
    for edge in boundary_edges(spec):
        tfine = np.linspace(0.0, 1.0, 2048)
        fine = edge.point(tfine)
        seglen = np.hypot(*np.diff(fine, axis=0).T)
        arc = np.concatenate([[0.0], np.cumsum(seglen)])
        total = arc[-1]
        if total <= 0:
            continue
        step = spacing / boundary_factor
        kappa = np.max(edge.curvature(tfine))
        if kappa > 0 and 1.0 / kappa < 5.0 * spacing:
            step /= 2.0
        n_pts = max(int(round(total / step)), 1)
        marks = np.arange(n_pts) * (total / n_pts)
        t_marks = np.interp(marks, arc, tfine)
        bpts.append(edge.point(t_marks))
        bnrm.append(edge.normal(t_marks))
        bedge.append(np.full(n_pts, edge.edge_id))
        barc.append(t_marks)
    boundary = np.concatenate(bpts)
    normals = np.concatenate(bnrm)
    edge_ids = np.concatenate(bedge)
    arc_params = np.concatenate(barc)
    # adjacent edges share their corner point; keep one instance
    from scipy.spatial import cKDTree
    keep = np.ones(len(boundary), dtype=bool)
    pairs_close = cKDTree(boundary).query_pairs(1e-9, output_type="ndarray")
    if len(pairs_close):
        keep[pairs_close.max(axis=1)] = False
    return PointCloud(
        interior=interior,
        boundary=boundary[keep],
        normals=normals[keep],
        edge_ids=edge_ids[keep],
        arc_params=arc_params[keep],
        spacing=spacing,
    )


# ---------------------------------------------------------------------------
# analytic editing maps
# ---------------------------------------------------------------------------

class AnalyticMap:
    """Closed-form (x, y) -> (xi, eta) with exact Jacobian and Hessian."""

    def map(self, pts: Array) -> Array:
        raise NotImplementedError

    def jacobian(self, pts: Array) -> Array:
        raise NotImplementedError

    def hessian(self, pts: Array) -> Array:
        raise NotImplementedError

    def inverse(self, ref: Array) -> Array:
        raise NotImplementedError

    def bundle(self, pts: Array) -> EvalBundle:
        return EvalBundle(self.map(pts), self.jacobian(pts), self.hessian(pts))


class IdentityMap(AnalyticMap):
    def map(self, pts):
        return np.asarray(pts, dtype=float).copy()

    def jacobian(self, pts):
        n = len(np.atleast_2d(pts))
        return np.broadcast_to(np.eye(2), (n, 2, 2)).copy()

    def hessian(self, pts):
        n = len(np.atleast_2d(pts))
        return np.zeros((n, 2, 2, 2))

    def inverse(self, ref):
        return np.asarray(ref, dtype=float).copy()


class AffineMap(AnalyticMap):
    """ref = A @ (x, y) + c; used for bounding-box normalisation."""

    def __init__(self, a: Array, c: Array):
        self.a = np.asarray(a, dtype=float)
        self.c = np.asarray(c, dtype=float)

    @classmethod
    def bbox_normalizer(cls, pts: Array) -> "AffineMap":
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        span = np.maximum(hi - lo, 1e-30)
        return cls(np.diag(2.0 / span), -(hi + lo) / span)

    def map(self, pts):
        return np.asarray(pts, dtype=float) @ self.a.T + self.c

    def jacobian(self, pts):
        n = len(np.atleast_2d(pts))
        return np.broadcast_to(self.a, (n, 2, 2)).copy()

    def hessian(self, pts):
        return np.zeros((len(np.atleast_2d(pts)), 2, 2, 2))

    def inverse(self, ref):
        return (np.asarray(ref, dtype=float) - self.c) @ np.linalg.inv(self.a).T


class ChannelUnfoldMap(AnalyticMap):
    """Unfold a swept channel: xi = centerline arc fraction, eta = offset/h."""

    def __init__(self, kind: str, spec: DomainSpec = None):
        self.channel = _channel_for(kind, spec)

    def _locate(self, pts):
        """Per-point piece index, local data; joints resolve to either side.

        A piece claims a point by combined angular/longitudinal slack plus
        transverse slack beyond the channel half-width, so points near a
        joint or cap land on the piece whose band actually contains them.
        """
        ch = self.channel
        h = ch.halfwidth
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        n = len(pts)
        piece_idx = np.full(n, -1, dtype=int)
        t_local = np.zeros(n)
        best_slack = np.full(n, np.inf)
        for i, piece in enumerate(ch.pieces):
            if isinstance(piece, _Leg):
                direction = (piece.b - piece.a) / piece.length
                s_along = (pts - piece.a) @ direction
                tl = s_along / piece.length
                offset = np.abs((pts - piece.a) @ _rot90(direction))
            else:
                d = pts - piece.center
                th = np.arctan2(d[:, 1], d[:, 0])
                mid = 0.5 * (piece.th0 + piece.th1)
                th = th + 2 * math.pi * np.round((mid - th) / (2 * math.pi))
                tl = (th - piece.th0) / (piece.th1 - piece.th0)
                offset = np.abs(np.hypot(d[:, 0], d[:, 1]) - piece.radius)
            slack = (np.maximum(tl - 1.0, 0.0) + np.maximum(-tl, 0.0)
                     + np.maximum(offset - h, 0.0) / h)
            take = slack < best_slack
            piece_idx[take] = i
            # unclamped: the piece formula extends smoothly past caps/joints
            t_local[take] = tl[take]
            best_slack[take] = slack[take]
        return pts, piece_idx, t_local

    def map(self, pts):
        ch = self.channel
        pts, idx, tl = self._locate(pts)
        xi = np.empty(len(pts))
        eta = np.empty(len(pts))
        for i, piece in enumerate(ch.pieces):
            m = idx == i
            if not m.any():
                continue
            s = ch.cum[i] + tl[m] * ch.lengths[i]
            xi[m] = 2.0 * s / ch.total - 1.0
            if isinstance(piece, _Leg):
                direction = (piece.b - piece.a) / piece.length
                nleft = _rot90(direction)
                eta[m] = (pts[m] - piece.a) @ nleft / ch.halfwidth
            else:
                r = np.hypot(*(pts[m] - piece.center).T)
                sgn = -1.0 if piece.th1 > piece.th0 else 1.0
                eta[m] = sgn * (r - piece.radius) / ch.halfwidth
        return np.stack([xi, eta], axis=-1)

    def jacobian(self, pts):
        ch = self.channel
        pts, idx, _ = self._locate(pts)
        jac = np.zeros((len(pts), 2, 2))
        for i, piece in enumerate(ch.pieces):
            m = idx == i
            if not m.any():
                continue
            if isinstance(piece, _Leg):
                direction = (piece.b - piece.a) / piece.length
                nleft = _rot90(direction)
                jac[m, 0, :] = (2.0 / ch.total) * direction
                jac[m, 1, :] = nleft / ch.halfwidth
            else:
                d = pts[m] - piece.center
                r2 = (d ** 2).sum(axis=1)
                r = np.sqrt(r2)
                dth = piece.th1 - piece.th0
                k_xi = 2.0 * ch.lengths[i] / (ch.total * dth)
                grad_th = np.stack([-d[:, 1], d[:, 0]], axis=-1) / r2[:, None]
                sgn = -1.0 if dth > 0 else 1.0
                jac[m, 0, :] = k_xi * grad_th
                jac[m, 1, :] = sgn * d / (r[:, None] * ch.halfwidth)
        return jac

    def hessian(self, pts):
        ch = self.channel
        pts, idx, _ = self._locate(pts)
        hess = np.zeros((len(pts), 2, 2, 2))
        for i, piece in enumerate(ch.pieces):
            m = idx == i
            if not m.any() or isinstance(piece, _Leg):
                continue
            d = pts[m] - piece.center
            dx, dy = d[:, 0], d[:, 1]
            r2 = dx ** 2 + dy ** 2
            r = np.sqrt(r2)
            dth = piece.th1 - piece.th0
            k_xi = 2.0 * ch.lengths[i] / (ch.total * dth)
            hess[m, 0, 0, 0] = k_xi * 2 * dx * dy / r2 ** 2
            hess[m, 0, 0, 1] = hess[m, 0, 1, 0] = k_xi * (dy ** 2 - dx ** 2) / r2 ** 2
            hess[m, 0, 1, 1] = -k_xi * 2 * dx * dy / r2 ** 2
            sgn = -1.0 if dth > 0 else 1.0
            c = sgn / ch.halfwidth
            hess[m, 1, 0, 0] = c * dy ** 2 / r ** 3
            hess[m, 1, 0, 1] = hess[m, 1, 1, 0] = -c * dx * dy / r ** 3
            hess[m, 1, 1, 1] = c * dx ** 2 / r ** 3
        return hess

    def inverse(self, ref):
        ref = np.atleast_2d(np.asarray(ref, dtype=float))
        t = (ref[:, 0] + 1.0) / 2.0
        pts, nleft = self.channel.centerline(t)
        return pts + (ref[:, 1] * self.channel.halfwidth)[:, None] * nleft


class SliceStretchMap(AnalyticMap):
    """Per-slice min-max stretch: one coordinate kept, the other x / w(axis)."""

    def __init__(self, spec: DomainSpec):
        self.kind = spec.kind
        self.spec = spec
        if spec.kind == "vessel2d":
            self.axis = 0      # slices along x, stretch y
            length = _vessel_geometry(spec)[0]
            self.axis_lo, self.axis_hi = 0.0, length
        elif spec.kind == "t_shape":
            self.axis = 1      # slices along y, stretch x
            self.axis_lo, self.axis_hi = -1.0, 1.0
        else:
            raise ConfigurationError(f"slice stretching undefined for {spec.kind}")

    def _width(self, coord):
        if self.kind == "t_shape":
            w, dw = _t_width(coord)
            return w, dw, np.zeros_like(np.asarray(coord, dtype=float))
        return _vessel_halfwidth(coord, self.spec)

    def map(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        a, t = pts[:, self.axis], pts[:, 1 - self.axis]
        w, _, _ = self._width(a)
        axis_ref = 2.0 * (a - self.axis_lo) / (self.axis_hi - self.axis_lo) - 1.0
        stretch_ref = t / w
        out = np.empty_like(pts)
        # axis coordinate keeps its reference slot (x->xi, y->eta)
        out[:, self.axis] = axis_ref
        out[:, 1 - self.axis] = stretch_ref
        return out

    def jacobian(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        a, t = pts[:, self.axis], pts[:, 1 - self.axis]
        w, dw, _ = self._width(a)
        jac = np.zeros((len(pts), 2, 2))
        scale = 2.0 / (self.axis_hi - self.axis_lo)
        jac[:, self.axis, self.axis] = scale
        jac[:, 1 - self.axis, 1 - self.axis] = 1.0 / w
        jac[:, 1 - self.axis, self.axis] = -t * dw / w ** 2
        return jac

    def hessian(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        a, t = pts[:, self.axis], pts[:, 1 - self.axis]
        w, dw, d2w = self._width(a)
        hess = np.zeros((len(pts), 2, 2, 2))
        s, o = 1 - self.axis, self.axis
        hess[:, s, o, o] = t * (2.0 * dw ** 2 / w ** 3 - d2w / w ** 2)
        hess[:, s, o, s] = hess[:, s, s, o] = -dw / w ** 2
        return hess

    def inverse(self, ref):
        ref = np.atleast_2d(np.asarray(ref, dtype=float))
        a_ref, s_ref = ref[:, self.axis], ref[:, 1 - self.axis]
        a = self.axis_lo + (a_ref + 1.0) / 2.0 * (self.axis_hi - self.axis_lo)
        w, _, _ = self._width(a)
        out = np.empty_like(ref)
        out[:, self.axis] = a
        out[:, 1 - self.axis] = s_ref * w
        return out


class CoonsFillMap(AnalyticMap):
    """Fill a perturbed square via a transfinite blend of its four edges.

    The closed form lives in the reference-to-physical direction; the forward
    direction is a vectorised Newton solve, with Jacobian and Hessian exact
    through the inverse-function theorem.  Construction audits det J > 0 on a
    dense parameter grid and refuses folded configurations.
    """

    def __init__(self, a: float, omega: float):
        self.a = float(a)
        self.omega = float(omega)
        if self.a > 0:
            uu, vv = np.meshgrid(np.linspace(0, 1, 201), np.linspace(0, 1, 201))
            det = self._det_inv(uu.ravel(), vv.ravel())
            if det.min() <= 0:
                raise ConfigurationError(
                    f"fill map folds for A={a}, omega={omega}; "
                    "use a lower amplitude-frequency product")

    # inverse map (u, v in [0,1]^2 -> physical), see module docstring
    def _sin(self, t):
        return np.sin(self.omega * np.pi * t)

    def _dsin(self, t):
        return self.omega * np.pi * np.cos(self.omega * np.pi * t)

    def _d2sin(self, t):
        return -(self.omega * np.pi) ** 2 * np.sin(self.omega * np.pi * t)

    def _inv_point(self, u, v):
        a = self.a
        x = (2 * u - 1) - (1 - u) * a * self._sin(1 - v) + u * a * self._sin(v)
        y = (2 * v - 1) - (1 - v) * a * self._sin(u) + v * a * self._sin(1 - u)
        return np.stack([x, y], axis=-1)

    def _inv_jac(self, u, v):
        a = self.a
        j = np.empty(np.shape(u) + (2, 2))
        j[..., 0, 0] = 2 + a * (self._sin(1 - v) + self._sin(v))
        j[..., 0, 1] = (1 - u) * a * self._dsin(1 - v) + u * a * self._dsin(v)
        j[..., 1, 0] = -(1 - v) * a * self._dsin(u) - v * a * self._dsin(1 - u)
        j[..., 1, 1] = 2 + a * (self._sin(u) + self._sin(1 - u))
        return j

    def _inv_hess(self, u, v):
        a = self.a
        h = np.zeros(np.shape(u) + (2, 2, 2))
        x_uv = a * (self._dsin(v) - self._dsin(1 - v))
        x_vv = -(1 - u) * a * self._d2sin(1 - v) + u * a * self._d2sin(v)
        y_uu = -(1 - v) * a * self._d2sin(u) + v * a * self._d2sin(1 - u)
        y_uv = a * (self._dsin(u) - self._dsin(1 - u))
        h[..., 0, 0, 1] = h[..., 0, 1, 0] = x_uv
        h[..., 0, 1, 1] = x_vv
        h[..., 1, 0, 0] = y_uu
        h[..., 1, 0, 1] = h[..., 1, 1, 0] = y_uv
        return h

    def _det_inv(self, u, v):
        j = self._inv_jac(u, v)
        return j[..., 0, 0] * j[..., 1, 1] - j[..., 0, 1] * j[..., 1, 0]

    def _solve_uv(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        uv = np.clip((pts + 1.0) / 2.0, 0.0, 1.0)
        for _ in range(80):
            res = self._inv_point(uv[:, 0], uv[:, 1]) - pts
            if np.max(np.abs(res)) < 1e-14:
                break
            j = self._inv_jac(uv[:, 0], uv[:, 1])
            det = j[:, 0, 0] * j[:, 1, 1] - j[:, 0, 1] * j[:, 1, 0]
            du = (j[:, 1, 1] * res[:, 0] - j[:, 0, 1] * res[:, 1]) / det
            dv = (-j[:, 1, 0] * res[:, 0] + j[:, 0, 0] * res[:, 1]) / det
            uv = uv - np.stack([du, dv], axis=-1)
        return pts, uv

    def map(self, pts):
        _, uv = self._solve_uv(pts)
        return 2.0 * uv - 1.0

    def jacobian(self, pts):
        _, uv = self._solve_uv(pts)
        j_inv = self._inv_jac(uv[:, 0], uv[:, 1])
        # d(xi,eta)/d(x,y) = 2 * d(u,v)/d(x,y) = 2 * inv(d(x,y)/d(u,v))
        return 2.0 * np.linalg.inv(j_inv)

    def hessian(self, pts):
        _, uv = self._solve_uv(pts)
        j_uv = np.linalg.inv(self._inv_jac(uv[:, 0], uv[:, 1]))  # d(u,v)/d(x,y)
        h_inv = self._inv_hess(uv[:, 0], uv[:, 1])
        # second derivative of the inverse function:
        # H_uv^i[a,b] = - J_uv[i,c] H_inv^c[p,q] J_uv[p,a] J_uv[q,b]
        h_uv = -np.einsum("nic,ncpq,npa,nqb->niab", j_uv, h_inv, j_uv, j_uv)
        return 2.0 * h_uv

    def inverse(self, ref):
        ref = np.atleast_2d(np.asarray(ref, dtype=float))
        uv = (ref + 1.0) / 2.0
        return self._inv_point(uv[:, 0], uv[:, 1])


_EDIT_ALIASES = {"cut_unfold": "unfold"}

_SUPPORTED = {
    ("unit_square", "identity"): lambda spec: IdentityMap(),
    ("unit_square", "fill"): lambda spec: CoonsFillMap(0.0, 0.0),
    ("perturbed_square", "fill"): lambda spec: CoonsFillMap(spec.param("A"), spec.param("omega")),
    ("u_shape", "unfold"): lambda spec: ChannelUnfoldMap("u_shape", spec),
    ("s_shape", "unfold"): lambda spec: ChannelUnfoldMap("s_shape", spec),
    ("t_shape", "yslice"): lambda spec: SliceStretchMap,
    ("vessel2d", "radial"): lambda spec: SliceStretchMap,
}

DEFAULT_EDITING = {
    "unit_square": "identity",
    "perturbed_square": "fill",
    "u_shape": "unfold",
    "s_shape": "unfold",
    "t_shape": "yslice",
    "vessel2d": "radial",
}


def analytic_forward_map(spec: DomainSpec, editing: str) -> AnalyticMap:
    """Exact editing map for the (domain, operation) combination."""
    editing = _EDIT_ALIASES.get(editing, editing)
    if editing not in EDITINGS:
        raise ConfigurationError(f"unknown editing operation {editing!r}")
    key = (spec.kind, editing)
    if key not in _SUPPORTED:
        raise ConfigurationError(f"editing {editing!r} undefined for {spec.kind!r}")
    factory = _SUPPORTED[key]
    made = factory(spec)
    if made is SliceStretchMap:
        made = SliceStretchMap(spec)
    return made


def reference_edge_normals(ref: Array, tol: float = 1e-9) -> Array:
    """Outward reference-square normals; corner points average both edges."""
    ref = np.atleast_2d(np.asarray(ref, dtype=float))
    normals = np.zeros_like(ref)
    normals[:, 0] += np.where(ref[:, 0] >= 1.0 - tol, 1.0, 0.0)
    normals[:, 0] -= np.where(ref[:, 0] <= -1.0 + tol, 1.0, 0.0)
    normals[:, 1] += np.where(ref[:, 1] >= 1.0 - tol, 1.0, 0.0)
    normals[:, 1] -= np.where(ref[:, 1] <= -1.0 + tol, 1.0, 0.0)
    norm = np.linalg.norm(normals, axis=1, keepdims=True)
    ok = norm[:, 0] > 0
    normals[ok] /= norm[ok]
    return normals


def make_pairs(spec: DomainSpec, cloud: PointCloud, editing: str) -> PointPairSet:
    """Supervised (physical, reference) pairs under the chosen editing.

    Interior grid nodes coinciding with a boundary sample are dropped so the
    pairing stays injective.
    """
    from scipy.spatial import cKDTree

    amap = analytic_forward_map(spec, editing)
    interior = cloud.interior
    if len(cloud.boundary):
        dist, _ = cKDTree(cloud.boundary).query(interior)
        interior = interior[dist > 1e-9]
    phys = np.concatenate([interior, cloud.boundary])
    ref = amap.map(phys)
    if np.max(np.abs(ref)) > 1.0 + 1e-7:
        raise ConfigurationError("editing produced reference points outside [-1,1]^2")
    ref = np.clip(ref, -1.0, 1.0)
    is_bd = np.zeros(len(phys), dtype=bool)
    is_bd[len(interior):] = True
    ref_normals = np.zeros_like(ref)
    ref_normals[is_bd] = reference_edge_normals(ref[is_bd])
    return PointPairSet(phys, ref, is_bd, ref_normals)


def vessel_features(spec: DomainSpec,
                    length_range=VESSEL_LENGTH_RANGE,
                    deform_range=VESSEL_DEFORM_RANGE) -> Array:
    """Min-max scaled (length, deformation) identifier for family training."""
    if spec.kind != "vessel2d":
        raise ConfigurationError("vessel_features requires a vessel2d spec")
    length, deform = _vessel_geometry(spec)[:2]

    def scale(v, rng):
        return 2.0 * (v - rng[0]) / (rng[1] - rng[0]) - 1.0

    return np.array([scale(length, length_range), scale(deform, deform_range)])


# ---------------------------------------------------------------------------
# CSV export / import of pair sets
# ---------------------------------------------------------------------------

PAIRS_HEADER = "x,y,xi,eta,is_boundary,nx,ny"


def fmt(x) -> str:
    """Shortest round-trip decimal of a float (plain Python repr)."""
    return repr(float(x))


def write_pairs_csv(path, pairs: PointPairSet):
    with open(path, "w") as fh:
        fh.write(PAIRS_HEADER + "\n")
        for i in range(len(pairs.physical)):
            fh.write("%s,%s,%s,%s,%d,%s,%s\n" % (
                fmt(pairs.physical[i, 0]), fmt(pairs.physical[i, 1]),
                fmt(pairs.reference[i, 0]), fmt(pairs.reference[i, 1]),
                int(pairs.is_boundary[i]),
                fmt(pairs.ref_normals[i, 0]), fmt(pairs.ref_normals[i, 1])))


def read_pairs_csv(path) -> PointPairSet:
    raw = np.genfromtxt(path, delimiter=",", skip_header=1)
    raw = np.atleast_2d(raw)
    return PointPairSet(
        physical=raw[:, 0:2].copy(),
        reference=raw[:, 2:4].copy(),
        is_boundary=raw[:, 4] > 0.5,
        ref_normals=raw[:, 5:7].copy(),
    )
