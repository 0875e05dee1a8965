"""Physics-informed solvers in four comparable modes.

* baseline   -- the network sees min-max normalised physical coordinates;
                every boundary condition is a soft loss term.
* transform  -- the network sees learned reference coordinates; physical
                derivatives chain through the frozen mapping's bundles
                inside the computation graph; soft boundary conditions.
* chainrule  -- the conventional workflow: the network sees precomputed
                mapped coordinates and physical derivatives are rebuilt from
                stored per-point Jacobian/Hessian tables (optionally
                truncated to float32 or 3 decimals).
* hard       -- transform plus closed-form trial functions
                u = P + D * N built in the reference domain, so constrained
                Dirichlet values hold to round-off at every epoch.

All four share one loss assembly and one training loop, so mode differences
are exactly the mapping/constraint differences.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import net, pde
from .errors import ConfigurationError, ShapeError
from .geometry import EAST, NORTH, SOUTH, WEST, AffineMap, PointCloud
from .pde import PdeProblem, ScalarView

logger = logging.getLogger(__name__)

Array = np.ndarray

MODE_ALIASES = {
    "baseline": "baseline",
    "transform": "transform",
    "transform-only": "transform",
    "transformonly": "transform",
    "chainrule": "chainrule",
    "chain-rule": "chainrule",
    "hard": "hard",
    "mapped-hard": "hard",
    "jacobinet": "hard",
}

DIRICHLET_EDGES = {
    "poisson": (WEST, SOUTH, EAST, NORTH),
    "helmholtz": (WEST, SOUTH, EAST, NORTH),
    "laplace": (WEST, EAST),
}


def canonical_mode(mode: str) -> str:
    key = mode.strip().lower()
    if key not in MODE_ALIASES:
        raise ConfigurationError(f"unknown solver mode {mode!r}")
    return MODE_ALIASES[key]


# ---------------------------------------------------------------------------
# scalar-view algebra (value, gradient, Hessian per point; tape-aware)
# ---------------------------------------------------------------------------

def _n_of(view: ScalarView) -> int:
    return net.value_of(view.value).shape[0]


def view_const(c: float, n: int) -> ScalarView:
    return ScalarView(np.full(n, float(c)), np.zeros((n, 2)), np.zeros((n, 2, 2)))


def view_add(a: ScalarView, b: ScalarView) -> ScalarView:
    return ScalarView(net.add(a.value, b.value), net.add(a.grad, b.grad),
                      net.add(a.hess, b.hess))


def view_scale(a: ScalarView, c: float) -> ScalarView:
    return ScalarView(net.mul(a.value, c), net.mul(a.grad, c), net.mul(a.hess, c))


def view_mul(a: ScalarView, b: ScalarView) -> ScalarView:
    """Product rule up to second order."""
    n = _n_of(a)
    av = net.reshape(a.value, (n, 1))
    bv = net.reshape(b.value, (n, 1))
    grad = net.add(net.mul(av, b.grad), net.mul(bv, a.grad))
    outer = net.mul(net.reshape(a.grad, (n, 2, 1)), net.reshape(b.grad, (n, 1, 2)))
    sym = net.add(outer, net.transpose(outer, (0, 2, 1)))
    hess = net.add(net.add(net.mul(net.reshape(a.value, (n, 1, 1)), b.hess),
                           net.mul(net.reshape(b.value, (n, 1, 1)), a.hess)), sym)
    return ScalarView(net.mul(a.value, b.value), grad, hess)


def view_chain_scalar(t: ScalarView, f, fp, fpp) -> ScalarView:
    """f(t) for a closed-form scalar function with derivatives fp, fpp."""
    n = _n_of(t)
    tv = net.value_of(t.value)
    fv, fpv, fppv = f(tv), fp(tv), fpp(tv)
    grad = net.mul(fpv[:, None], t.grad)
    outer = net.mul(net.reshape(t.grad, (n, 2, 1)), net.reshape(t.grad, (n, 1, 2)))
    hess = net.add(net.mul(fpv[:, None, None], t.hess), net.mul(fppv[:, None, None], outer))
    return ScalarView(fv, grad, hess)


# ---------------------------------------------------------------------------
# trial functions (hard Dirichlet constraints in reference coordinates)
# ---------------------------------------------------------------------------

_AXIS_OF_EDGE = {WEST: (0, -1.0), EAST: (0, 1.0), SOUTH: (1, -1.0), NORTH: (1, 1.0)}


def edge_distance_values(ref: Array, edges, form: str) -> Array:
    """Closed-form D(xi, eta): product of per-edge vanishing factors."""
    ref = np.atleast_2d(np.asarray(ref, dtype=float))
    out = np.ones(len(ref))
    for e in edges:
        axis, sign = _AXIS_OF_EDGE[e]
        c = ref[:, axis]
        if form == "linear":
            out = out * (1.0 - sign * c)
        elif form == "exponential":
            out = out * (1.0 - np.exp(sign * c - 1.0))
        else:
            raise ConfigurationError(f"unknown trial form {form!r}")
    return out


@dataclass
class TrialFunction:
    """Pair (P, D): boundary-value field and a reference-edge distance factor.

    D vanishes on the constrained reference edges and stays strictly
    positive inside; both are composed with the exact editing map so the
    constraint holds to round-off regardless of training state.
    """

    edges: tuple
    form: str = "exponential"
    p_builder: callable = None    # map_bundle -> ScalarView, default zero

    def d_view(self, map_bundle) -> ScalarView:
        view = None
        for e in self.edges:
            axis, sign = _AXIS_OF_EDGE[e]
            t = pde.component(map_bundle, axis)
            if self.form == "linear":
                factor = view_chain_scalar(
                    t, lambda c: 1.0 - sign * c,
                    lambda c: np.full_like(c, -sign),
                    lambda c: np.zeros_like(c))
            else:
                factor = view_chain_scalar(
                    t, lambda c: 1.0 - np.exp(sign * c - 1.0),
                    lambda c: -sign * np.exp(sign * c - 1.0),
                    lambda c: -np.exp(sign * c - 1.0))
            view = factor if view is None else view_mul(view, factor)
        return view

    def p_view(self, map_bundle) -> ScalarView:
        if self.p_builder is None:
            return view_const(0.0, net.value_of(map_bundle.value).shape[0])
        return self.p_builder(map_bundle)

    def audit(self, ref_samples: Array, tol: float = 1e-10):
        """Setup check: D = 0 on constrained edges, D > 0 strictly inside."""
        d = edge_distance_values(ref_samples, self.edges, self.form)
        on_edge = np.zeros(len(ref_samples), dtype=bool)
        for e in self.edges:
            axis, sign = _AXIS_OF_EDGE[e]
            on_edge |= np.abs(ref_samples[:, axis] - sign) < 1e-12
        if np.any(np.abs(d[on_edge]) > tol):
            raise ConfigurationError("trial distance does not vanish on its edges")
        if np.any(d[~on_edge] <= 0):
            raise ConfigurationError("trial distance is not positive inside the domain")


def hard_constrain(trial: TrialFunction, raw: ScalarView, map_bundle) -> ScalarView:
    """u = P + D * N with derivatives by the product rule over both bundles."""
    return view_add(trial.p_view(map_bundle), view_mul(trial.d_view(map_bundle), raw))


def scalar_trial_for(problem: PdeProblem, form: str = "exponential") -> TrialFunction:
    if problem.kind not in DIRICHLET_EDGES:
        raise ConfigurationError(f"no scalar trial for pde {problem.kind!r}")
    edges = DIRICHLET_EDGES[problem.kind]
    p_builder = None
    if problem.kind == "laplace":
        # boundary data -1/+1 on the caps extends smoothly as P = xi
        def p_builder(map_bundle):
            return pde.component(map_bundle, 0)
    return TrialFunction(edges=edges, form=form, p_builder=p_builder)


def vessel_trial_2d(map_bundle, raw_u: ScalarView, raw_v: ScalarView,
                    raw_p: ScalarView, u_max: float):
    """Hard-constrained channel-flow fields.

    With walls on eta = +/-1, inlet at xi = -1 and outlet at xi = +1:
    phi_wall = 1 - eta^2 kills the velocity at the walls, phi_in = (1-xi)/2
    blends the parabolic inlet into the axial velocity and pins the outlet
    pressure to zero.
    """
    xi = pde.component(map_bundle, 0)
    eta = pde.component(map_bundle, 1)
    phi_wall = view_chain_scalar(eta, lambda e: 1.0 - e * e,
                                 lambda e: -2.0 * e, lambda e: -2.0 * np.ones_like(e))
    phi_in = view_chain_scalar(xi, lambda x: 0.5 * (1.0 - x),
                               lambda x: np.full_like(x, -0.5),
                               lambda x: np.zeros_like(x))
    one_minus_in = view_chain_scalar(xi, lambda x: 0.5 * (1.0 + x),
                                     lambda x: np.full_like(x, 0.5),
                                     lambda x: np.zeros_like(x))
    u_hat = view_add(view_mul(view_mul(phi_wall, one_minus_in), raw_u),
                     view_scale(view_mul(phi_wall, phi_in), u_max))
    v_hat = view_mul(view_mul(phi_wall, one_minus_in), raw_v)
    p_hat = view_mul(phi_in, raw_p)
    return u_hat, v_hat, p_hat


# ---------------------------------------------------------------------------
# random Fourier features
# ---------------------------------------------------------------------------

@dataclass
class RffEmbedding:
    b_matrix: Array      # (m, d_in), Gaussian with scale sigma
    sigma: float = 1.0

    @property
    def m(self) -> int:
        return self.b_matrix.shape[0]

    @property
    def out_dim(self) -> int:
        return 2 * self.m

    def embed(self, x: Array) -> Array:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        t = 2.0 * math.pi * x @ self.b_matrix.T
        return np.concatenate([np.cos(t), np.sin(t)], axis=1)

    def bundle(self, x: Array) -> net.EvalBundle:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n, d = x.shape
        w = 2.0 * math.pi * self.b_matrix          # (m, d)
        t = x @ w.T                                # (n, m)
        cos_t, sin_t = np.cos(t), np.sin(t)
        val = np.concatenate([cos_t, sin_t], axis=1)
        jac = np.concatenate([-sin_t[:, :, None] * w[None],
                              cos_t[:, :, None] * w[None]], axis=1)
        ww = w[:, :, None] * w[:, None, :]         # (m, d, d)
        hess = np.concatenate([-cos_t[:, :, None, None] * ww[None],
                               -sin_t[:, :, None, None] * ww[None]], axis=1)
        return net.EvalBundle(val, jac, hess)


def rff_embed(emb: RffEmbedding, x: Array) -> Array:
    """[cos(2 pi B x), sin(2 pi B x)] feature vector."""
    out = emb.embed(x)
    return out[0] if np.asarray(x).ndim == 1 else out


def make_rff(m: int = 64, sigma: float = 1.0, seed: int = 0, d_in: int = 2) -> RffEmbedding:
    rng = np.random.default_rng(seed)
    return RffEmbedding(rng.normal(0.0, sigma, size=(m, d_in)), sigma)


# ---------------------------------------------------------------------------
# configuration and report
# ---------------------------------------------------------------------------

@dataclass
class LossWeights:
    lam_u: float = 1.0
    lam_b: float = 1.0
    lam_d: float = 0.0
    gradnorm_enabled: bool = False
    update_period: int = 100
    window: float = 0.9


@dataclass
class SolverConfig:
    mode: str = "baseline"
    epochs: int = 3000
    lr0: float = 1e-3
    lr_min: float = 1e-5
    seed: int = 0
    hidden: tuple = (64, 64, 64)
    activation: str = "silu"
    rff: bool = False
    rff_m: int = 64
    rff_sigma: float = 1.0
    weights: LossWeights = field(default_factory=LossWeights)
    trial_form: str = "exponential"
    store_method: str = "fd"      # chainrule: fd | exact
    store_precision: str = "f64"  # chainrule: f64 | f32 | mm
    log_every: int = 10
    deterministic: bool = False
    divergence_limit: float = 1e6


@dataclass
class RunReport:
    mode: str
    seed: int
    epochs: list = field(default_factory=list)
    l_u: list = field(default_factory=list)
    l_b: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    r_loss: list = field(default_factory=list)
    r_grad: list = field(default_factory=list)
    bc_share: list = field(default_factory=list)
    wall_ms_forward: list = field(default_factory=list)
    wall_ms_loss: list = field(default_factory=list)
    wall_ms_backward: list = field(default_factory=list)
    wall_ms_total: list = field(default_factory=list)
    final: dict = field(default_factory=dict)
    aborted: bool = False

    TRACE_HEADER = ("epoch,L_u,L_b,lr,R_loss,R_grad,"
                    "wall_ms_forward,wall_ms_loss,wall_ms_backward,wall_ms_total")

    def trace_rows(self, deterministic: bool = False):
        rows = [self.TRACE_HEADER]
        for i, ep in enumerate(self.epochs):
            t = (0.0, 0.0, 0.0, 0.0) if deterministic else (
                self.wall_ms_forward[i], self.wall_ms_loss[i],
                self.wall_ms_backward[i], self.wall_ms_total[i])
            from .geometry import fmt
            vals = [self.l_u[i], self.l_b[i], self.lr[i],
                    self.r_loss[i], self.r_grad[i], *t]
            rows.append(str(ep) + "," + ",".join(fmt(v) for v in vals))
        return rows


def l2_rel(pred: Array, truth: Array) -> float:
    """Relative L2 error: ||truth - pred|| / ||truth||."""
    pred = np.asarray(pred, dtype=float).ravel()
    truth = np.asarray(truth, dtype=float).ravel()
    if pred.shape != truth.shape:
        raise ShapeError("prediction and truth must have equal length")
    denom = math.sqrt(float(np.sum(truth ** 2)))
    if denom == 0.0:
        raise ConfigurationError("relative L2 error undefined for all-zero truth")
    return math.sqrt(float(np.sum((truth - pred) ** 2))) / denom


def gradnorm_update(running: float, ratio: float, window: float) -> float:
    """Exponential running average of the gradient-norm ratio."""
    if running is None:
        return ratio
    return window * running + (1.0 - window) * ratio


# ---------------------------------------------------------------------------
# mode context: everything frozen before the training loop
# ---------------------------------------------------------------------------

class ScaledMap:
    """Mapper reparameterised to rescaled physical inputs x -> mapper(s*x)."""

    def __init__(self, base, scale: float):
        self.base = base
        self.scale = float(scale)

    def map(self, pts):
        return self.base.map(np.asarray(pts, dtype=float) * self.scale)

    def jacobian(self, pts):
        return self.base.jacobian(np.asarray(pts, dtype=float) * self.scale) * self.scale

    def hessian(self, pts):
        return self.base.hessian(np.asarray(pts, dtype=float) * self.scale) * self.scale ** 2

    def bundle(self, pts):
        return net.EvalBundle(self.map(pts), self.jacobian(pts), self.hessian(pts))


@dataclass
class SolveContext:
    problem: PdeProblem
    config: SolverConfig
    pts_u: Array
    pts_b: Array
    normals_b: Array
    edge_ids_b: Array
    net_in_u: Array
    net_in_b: Array
    inner_u: object = None        # EvalBundle of the mapping at pts_u
    inner_b: object = None
    tables_u: object = None       # chainrule mode
    tables_b: object = None
    rff: RffEmbedding = None
    rff_bundle_u: object = None
    rff_bundle_b: object = None
    trial: TrialFunction = None
    trial_bundle_u: object = None  # exact-map bundle for the trial factors
    trial_bundle_b: object = None
    soft_bcs: list = None
    hard_bcs: list = None

    @property
    def d_in(self) -> int:
        return self.net_in_u.shape[1] if self.rff is None else self.rff.out_dim


def build_context(problem: PdeProblem, cloud: PointCloud, config: SolverConfig,
                  mapper=None, trial_map=None) -> SolveContext:
    """Freeze collocation, mapping bundles and trial factors for one run."""
    mode = canonical_mode(config.mode)
    pts_u = np.asarray(cloud.interior, dtype=float)
    pts_b = np.asarray(cloud.boundary, dtype=float)
    normals = np.asarray(cloud.normals, dtype=float)
    edge_ids = np.asarray(cloud.edge_ids)
    if len(pts_u) == 0:
        raise ConfigurationError("empty PDE collocation set")

    if mode == "baseline":
        mapper = AffineMap.bbox_normalizer(np.concatenate([pts_u, pts_b]))
    if mapper is None:
        raise ConfigurationError(f"mode {mode!r} requires a mapping")

    ctx = SolveContext(problem=problem, config=config, pts_u=pts_u, pts_b=pts_b,
                       normals_b=normals, edge_ids_b=edge_ids,
                       net_in_u=None, net_in_b=None)

    if mode == "chainrule":
        ctx.tables_u = pde.build_stored_tables(mapper, pts_u, config.store_method,
                                               precision=config.store_precision)
        ctx.tables_b = pde.build_stored_tables(mapper, pts_b, config.store_method,
                                               precision=config.store_precision)
        ctx.net_in_u = ctx.tables_u.ref
        ctx.net_in_b = ctx.tables_b.ref
    else:
        ctx.inner_u = mapper.bundle(pts_u)
        ctx.inner_b = mapper.bundle(pts_b)
        ctx.net_in_u = net.value_of(ctx.inner_u.value)
        ctx.net_in_b = net.value_of(ctx.inner_b.value)

    if config.rff:
        ctx.rff = make_rff(config.rff_m, config.rff_sigma, seed=config.seed,
                           d_in=ctx.net_in_u.shape[1])
        ctx.rff_bundle_u = ctx.rff.bundle(ctx.net_in_u)
        ctx.rff_bundle_b = ctx.rff.bundle(ctx.net_in_b)

    hard = mode == "hard"
    if hard:
        if trial_map is None:
            raise ConfigurationError("hard constraints need the exact editing map")
        ctx.trial_bundle_u = trial_map.bundle(pts_u)
        ctx.trial_bundle_b = trial_map.bundle(pts_b)
        if problem.kind != "ns2d":
            ctx.trial = scalar_trial_for(problem, config.trial_form)
            ref_samples = np.concatenate([net.value_of(ctx.trial_bundle_u.value),
                                          net.value_of(ctx.trial_bundle_b.value)])
            ctx.trial.audit(np.clip(ref_samples, -1.0, 1.0))
        ctx.hard_bcs = [bc for bc in problem.dirichlet]
        ctx.soft_bcs = list(problem.neumann)
    else:
        ctx.hard_bcs = []
        ctx.soft_bcs = list(problem.dirichlet) + list(problem.neumann)
    return ctx


def _net_views(ctx: SolveContext, params, boundary: bool):
    """Physical-derivative views of the solution network at one point set."""
    cfg = ctx.config
    x_in = ctx.net_in_b if boundary else ctx.net_in_u
    raw_in = ctx.rff.embed(x_in) if ctx.rff is not None else x_in
    netb = net.bundle_graph_fused(params, cfg.activation, raw_in)
    if ctx.rff is not None:
        netb = pde.compose_bundles(netb, ctx.rff_bundle_b if boundary else ctx.rff_bundle_u)
    if ctx.tables_u is not None:
        tables = ctx.tables_b if boundary else ctx.tables_u
        return pde.physical_views(netb, tables.jac, tables.hess, ctx.problem.n_outputs)
    inner = ctx.inner_b if boundary else ctx.inner_u
    full = pde.compose_bundles(netb, inner)
    return pde.split_components(full, ctx.problem.n_outputs)


def _apply_trial(ctx: SolveContext, views, boundary: bool):
    map_bundle = ctx.trial_bundle_b if boundary else ctx.trial_bundle_u
    if ctx.problem.kind == "ns2d":
        u, v, p = vessel_trial_2d(map_bundle, views[0], views[1], views[2],
                                  ctx.problem.params.get("u_max", 1.0))
        return [u, v, p]
    return [hard_constrain(ctx.trial, views[0], map_bundle)]


def assemble_loss(ctx: SolveContext, params):
    """Total loss node plus components; returns (total, l_u, l_b)."""
    views_u = _net_views(ctx, params, boundary=False)
    if ctx.trial is not None or (ctx.hard_bcs and ctx.problem.kind == "ns2d"):
        views_u = _apply_trial(ctx, views_u, boundary=False)
    l_u = pde.mean_square(ctx.problem.residuals(views_u, ctx.pts_u))
    l_b = None
    if ctx.soft_bcs:
        views_b = _net_views(ctx, params, boundary=True)
        if ctx.hard_bcs and ctx.problem.kind != "ns2d":
            views_b = _apply_trial(ctx, views_b, boundary=True)
        res = []
        for bc in ctx.soft_bcs:
            mask = ctx.edge_ids_b == bc.edge
            if not np.any(mask):
                raise ConfigurationError(f"no boundary samples on edge {bc.edge}")
            view = views_b[bc.component]
            if bc.kind == "dirichlet":
                res.append(net.getitem(view.value, mask) - bc.value(ctx.pts_b[mask]))
            else:
                gsel = net.getitem(view.grad, mask)
                nvec = ctx.normals_b[mask]
                res.append(net.getitem(gsel, (slice(None), 0)) * nvec[:, 0]
                           + net.getitem(gsel, (slice(None), 1)) * nvec[:, 1]
                           - bc.value(ctx.pts_b[mask]))
        l_b = pde.mean_square(res)
    w = ctx.config.weights
    total = net.mul(l_u, w.lam_u)
    if l_b is not None:
        total = net.add(total, net.mul(l_b, w.lam_b))
    return total, l_u, l_b


def boundary_violation(ctx: SolveContext, mlp: net.Mlp) -> float:
    """Max |u - g| over constrained Dirichlet boundary samples (value path)."""
    if not ctx.hard_bcs:
        return 0.0
    x_in = ctx.rff.embed(ctx.net_in_b) if ctx.rff is not None else ctx.net_in_b
    raw = net.forward(mlp, x_in)
    map_bundle = ctx.trial_bundle_b
    ref = net.value_of(map_bundle.value)
    worst = 0.0
    if ctx.problem.kind == "ns2d":
        phi_wall = 1.0 - ref[:, 1] ** 2
        phi_in = 0.5 * (1.0 - ref[:, 0])
        u_hat = phi_wall * (1.0 - phi_in) * raw[:, 0] \
            + phi_wall * phi_in * ctx.problem.params.get("u_max", 1.0)
        v_hat = phi_wall * (1.0 - phi_in) * raw[:, 1]
        p_hat = phi_in * raw[:, 2]
        comp_vals = {0: u_hat, 1: v_hat, 2: p_hat}
        for bc in ctx.hard_bcs:
            mask = ctx.edge_ids_b == bc.edge
            if mask.any():
                worst = max(worst, float(np.max(np.abs(
                    comp_vals[bc.component][mask] - bc.value(ctx.pts_b[mask])))))
        return worst
    d = edge_distance_values(ref, ctx.trial.edges, ctx.trial.form)
    if ctx.problem.kind == "laplace":
        p_vals = ref[:, 0]
    else:
        p_vals = np.zeros(len(ref))
    u_hat = p_vals + d * raw[:, 0]
    for bc in ctx.hard_bcs:
        mask = ctx.edge_ids_b == bc.edge
        if mask.any():
            worst = max(worst, float(np.max(np.abs(u_hat[mask] - bc.value(ctx.pts_b[mask])))))
    return worst


def train_pinn(problem: PdeProblem, cloud: PointCloud, config: SolverConfig,
               mapper=None, trial_map=None, reference=None):
    """Train one solver run and log the spec'd per-epoch trace.

    `reference` is an optional callable pts -> (n, n_outputs) truth used for
    the final relative L2 error (pressure excluded for channel flow, where
    the gauge is pinned only at the outlet).
    """
    mode = canonical_mode(config.mode)
    config = replace(config, mode=mode, weights=replace(config.weights))
    ctx = build_context(problem, cloud, config, mapper=mapper, trial_map=trial_map)
    mlp = net.init_mlp([ctx.d_in, *config.hidden, problem.n_outputs],
                       config.activation, seed=config.seed)
    state = net.AdamState.for_params(mlp.flat_params())
    report = RunReport(mode=mode, seed=config.seed)
    w = ctx.config.weights
    gradnorm_running = None
    mid_epoch = config.epochs // 2
    violations = {}
    t_start = time.perf_counter()

    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        params = net.param_nodes(mlp)
        total, l_u, l_b = assemble_loss(ctx, params)
        t1 = time.perf_counter()
        lval = float(net.value_of(total))
        if not np.isfinite(lval) or lval > config.divergence_limit:
            report.aborted = True
            report.final["abort_epoch"] = epoch
            logger.warning("run diverged at epoch %d (loss %.3g)", epoch, lval)
            break

        log_now = epoch % config.log_every == 0 or epoch == config.epochs - 1
        r_grad = float("nan")
        if log_now and l_b is not None:
            gu = net.backprop_scalar(l_u, params)
            gb = net.backprop_scalar(l_b, params)
            nu, nb = net.grad_norm(gu), net.grad_norm(gb)
            r_grad = nu / nb if nb > 0 else float("inf")
        if w.gradnorm_enabled and l_b is not None and epoch % w.update_period == 0:
            gu = net.backprop_scalar(l_u, params)
            gb = net.backprop_scalar(l_b, params)
            nu, nb = net.grad_norm(gu), net.grad_norm(gb)
            if nb == 0.0 or nu == 0.0:
                logger.warning("gradnorm: zero-gradient component, holding weight")
            else:
                gradnorm_running = gradnorm_update(gradnorm_running, nu / nb, w.window)
                w.lam_b = gradnorm_running
        t2 = time.perf_counter()
        grads = net.backprop_scalar(total, params)
        lr = net.cosine_lr(epoch, config.epochs, config.lr0, config.lr_min)
        mlp.set_flat_params(net.adam_step(mlp.flat_params(), grads, state, lr))
        t3 = time.perf_counter()

        if epoch in (0, mid_epoch, config.epochs - 1):
            violations[epoch] = boundary_violation(ctx, mlp)
        if log_now:
            lu_v = float(net.value_of(l_u))
            lb_v = float(net.value_of(l_b)) if l_b is not None else 0.0
            report.epochs.append(epoch)
            report.l_u.append(lu_v)
            report.l_b.append(lb_v)
            report.lr.append(lr)
            report.r_loss.append(lu_v / lb_v if lb_v > 0 else float("inf"))
            report.r_grad.append(r_grad)
            report.bc_share.append(w.lam_b * lb_v / lval if lval > 0 else 0.0)
            report.wall_ms_forward.append((t1 - t0) * 1e3)
            report.wall_ms_loss.append((t2 - t1) * 1e3)
            report.wall_ms_backward.append((t3 - t2) * 1e3)
            report.wall_ms_total.append((t3 - t0) * 1e3)

    report.final["seconds"] = time.perf_counter() - t_start
    report.final["epochs"] = config.epochs
    report.final["l_u"] = report.l_u[-1] if report.l_u else float("nan")
    report.final["l_b"] = report.l_b[-1] if report.l_b else 0.0
    report.final["bc_violation"] = violations
    report.final["lam_b_final"] = w.lam_b

    pred = predict(ctx, mlp)
    report.final["residual_rms"] = residual_rms(ctx, mlp)
    if reference is not None:
        truth = np.atleast_2d(np.asarray(reference(ctx.pts_u), dtype=float))
        if truth.shape[0] != len(ctx.pts_u):
            truth = truth.T
        if problem.kind == "ns2d":
            report.final["l2_rel"] = l2_rel(pred[:, :2], truth[:, :2])
            if truth.shape[1] > 2:
                report.final["l2_rel_p"] = l2_rel(pred[:, 2], truth[:, 2])
        else:
            report.final["l2_rel"] = l2_rel(pred[:, 0], truth[:, 0])
    return mlp, report


def predict(ctx: SolveContext, mlp: net.Mlp) -> Array:
    """Constrained solution values at the PDE collocation points."""
    x_in = ctx.rff.embed(ctx.net_in_u) if ctx.rff is not None else ctx.net_in_u
    raw = net.forward(mlp, x_in)
    if ctx.trial is None and not (ctx.hard_bcs and ctx.problem.kind == "ns2d"):
        return raw
    ref = net.value_of(ctx.trial_bundle_u.value)
    if ctx.problem.kind == "ns2d":
        phi_wall = 1.0 - ref[:, 1] ** 2
        phi_in = 0.5 * (1.0 - ref[:, 0])
        u_max = ctx.problem.params.get("u_max", 1.0)
        out = np.stack([
            phi_wall * (1.0 - phi_in) * raw[:, 0] + phi_wall * phi_in * u_max,
            phi_wall * (1.0 - phi_in) * raw[:, 1],
            phi_in * raw[:, 2],
        ], axis=1)
        return out
    d = edge_distance_values(ref, ctx.trial.edges, ctx.trial.form)
    p = ref[:, 0] if ctx.problem.kind == "laplace" else np.zeros(len(ref))
    return (p + d * raw[:, 0])[:, None]


def residual_rms(ctx: SolveContext, mlp: net.Mlp) -> dict:
    """Root-mean-square of each governing residual at the collocation set."""
    params = [net.Node(p) for p in mlp.flat_params()]
    views = _net_views(ctx, params, boundary=False)
    if ctx.trial is not None or (ctx.hard_bcs and ctx.problem.kind == "ns2d"):
        views = _apply_trial(ctx, views, boundary=False)
    res = ctx.problem.residuals(views, ctx.pts_u)
    vals = [net.value_of(r) for r in res]
    names = ["continuity", "momentum_x", "momentum_y"] if ctx.problem.kind == "ns2d" \
        else ["pde"]
    return {name: float(np.sqrt(np.mean(v ** 2))) for name, v in zip(names, vals)}
