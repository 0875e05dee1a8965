"""Trial functions, solver modes, embeddings, reweighting and reports."""

import numpy as np
import pytest

from refpinn import bench
from refpinn import geometry as geo
from refpinn import net, pde, pinn
from refpinn.errors import ConfigurationError, ShapeError


@pytest.fixture(scope="module")
def s_case():
    return bench.make_case("s", "poisson")


@pytest.fixture(scope="module")
def s_cloud(s_case):
    return s_case.cloud(0.25)


def test_canonical_modes():
    assert pinn.canonical_mode("Baseline") == "baseline"
    assert pinn.canonical_mode("transform-only") == "transform"
    assert pinn.canonical_mode("chain-rule") == "chainrule"
    assert pinn.canonical_mode("hard") == "hard"
    with pytest.raises(ConfigurationError):
        pinn.canonical_mode("magic")


# -- trial functions ---------------------------------------------------------

def test_edge_distance_exponential_collapse():
    # at xi = 1 the east factor is 1 - e^0 = 0
    d = pinn.edge_distance_values(np.array([[1.0, 0.0]]), (geo.EAST,), "exponential")
    assert d[0] == pytest.approx(0.0, abs=1e-15)


def test_edge_distance_linear_hand_value():
    # linear factor (1 - xi): at xi = 0 with raw value 3 the product is 3
    d = pinn.edge_distance_values(np.array([[0.0, 0.5]]), (geo.EAST,), "linear")
    assert d[0] * 3.0 == pytest.approx(3.0)


def test_trial_audit_positive_inside_and_zero_on_edges():
    trial = pinn.TrialFunction(edges=(geo.WEST, geo.SOUTH, geo.EAST, geo.NORTH))
    grid = np.stack(np.meshgrid(np.linspace(-1, 1, 21), np.linspace(-1, 1, 21),
                                indexing="ij"), axis=-1).reshape(-1, 2)
    trial.audit(grid)
    bad = pinn.TrialFunction(edges=(geo.EAST,), form="linear")
    # points beyond the east edge make the linear factor negative
    with pytest.raises(ConfigurationError):
        bad.audit(np.array([[1.5, 0.0], [0.0, 0.0]]))


def test_hard_constrain_boundary_collapse_and_p_passthrough():
    amap = geo.IdentityMap()
    pts = np.array([[1.0, 0.0], [0.5, -0.2], [0.0, 0.0]])
    bundle = amap.bundle(pts)
    trial = pinn.TrialFunction(edges=(geo.EAST,), form="exponential")
    raw = pde.ScalarView(np.array([3.0, 3.0, 3.0]), np.zeros((3, 2)), np.zeros((3, 2, 2)))
    out = pinn.hard_constrain(trial, raw, bundle)
    vals = net.value_of(out.value)
    assert vals[0] == pytest.approx(0.0, abs=1e-12)     # on the constrained edge
    assert vals[2] == pytest.approx(3.0 * (1 - np.exp(-1.0)))
    # raw == 0 leaves exactly P everywhere
    zero = pde.ScalarView(np.zeros(3), np.zeros((3, 2)), np.zeros((3, 2, 2)))
    p_only = pinn.hard_constrain(trial, zero, bundle)
    assert np.allclose(net.value_of(p_only.value), 0.0)


def test_hard_constrain_derivatives_match_fd():
    """u = P + D N derivatives from the product rule vs finite differences."""
    spec = geo.DomainSpec("s_shape")
    amap = geo.analytic_forward_map(spec, "unfold")
    solution = net.init_mlp([2, 8, 1], "tanh", seed=2)
    trial = pinn.TrialFunction(edges=(geo.WEST, geo.SOUTH, geo.EAST, geo.NORTH))

    def u_hat(pts):
        ref = amap.map(pts)
        d = pinn.edge_distance_values(ref, trial.edges, trial.form)
        return d * net.forward(solution, ref)[:, 0]

    cloud = geo.sample_domain(spec, 0.3)
    pts = cloud.interior[np.abs(cloud.interior[:, 0]) > 0.05][:40]
    map_bundle = amap.bundle(pts)
    netb = net.forward_bundle(solution, map_bundle.value)
    full = pde.compose_bundles(netb, map_bundle)
    view = pinn.hard_constrain(trial, pde.split_components(full, 1)[0], map_bundle)
    h = 1e-5
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        fd = (u_hat(pts + e) - u_hat(pts - e)) / (2 * h)
        assert np.abs(fd - net.value_of(view.grad)[:, j]).max() < 1e-7
        fd2 = (u_hat(pts + e) - 2 * u_hat(pts) + u_hat(pts - e)) / h ** 2
        assert np.abs(fd2 - net.value_of(view.hess)[:, j, j]).max() < 1e-4


def test_vessel_trial_boundary_values():
    # reference bundle standing in for a mapped vessel
    ref = np.array([[-1.0, 0.0],   # inlet centerline
                    [0.3, 1.0],    # wall
                    [1.0, 0.2]])   # outlet
    bundle = net.EvalBundle(ref, np.broadcast_to(np.eye(2), (3, 2, 2)).copy(),
                            np.zeros((3, 2, 2, 2)))
    mk = lambda c: pde.ScalarView(np.full(3, c), np.zeros((3, 2)), np.zeros((3, 2, 2)))
    u, v, p = pinn.vessel_trial_2d(bundle, mk(0.7), mk(-0.4), mk(2.0), u_max=1.0)
    uv = net.value_of(u.value)
    vv = net.value_of(v.value)
    pv = net.value_of(p.value)
    assert uv[0] == pytest.approx(1.0)        # parabolic peak at the inlet
    assert uv[1] == pytest.approx(0.0)        # no-slip at the wall
    assert vv[1] == pytest.approx(0.0)
    assert pv[2] == pytest.approx(0.0)        # outlet pressure pinned


# -- embeddings and reweighting ----------------------------------------------

def test_rff_zero_matrix():
    emb = pinn.RffEmbedding(np.zeros((3, 2)))
    out = pinn.rff_embed(emb, np.array([0.7, -0.3]))
    assert np.allclose(out[:3], 1.0)   # cos 0
    assert np.allclose(out[3:], 0.0)   # sin 0


def test_rff_quarter_period():
    emb = pinn.RffEmbedding(np.array([[1.0, 0.0]]))
    out = pinn.rff_embed(emb, np.array([0.25, 123.0]))
    assert out[0] == pytest.approx(0.0, abs=1e-12)  # cos(pi/2)
    assert out[1] == pytest.approx(1.0)             # sin(pi/2)


def test_rff_bounded_and_shapes():
    emb = pinn.make_rff(m=16, sigma=2.0, seed=1)
    x = np.random.default_rng(0).normal(scale=50, size=(40, 2))
    out = emb.embed(x)
    assert out.shape == (40, 32)
    assert np.all(out >= -1.0) and np.all(out <= 1.0)


def test_rff_bundle_matches_fd():
    emb = pinn.make_rff(m=4, sigma=1.0, seed=2)
    x = np.random.default_rng(1).normal(size=(6, 2))
    b = emb.bundle(x)
    h = 1e-6
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        fd = (emb.embed(x + e) - emb.embed(x - e)) / (2 * h)
        assert np.abs(fd - b.jacobian[:, :, j]).max() < 1e-6


def test_gradnorm_update_rule():
    assert pinn.gradnorm_update(None, 1.0, 0.9) == pytest.approx(1.0)
    running = None
    for _ in range(200):
        running = pinn.gradnorm_update(running, 10.0, 0.9)
    assert running == pytest.approx(10.0)
    # equal norms drive the weight to 1
    running = 5.0
    for _ in range(400):
        running = pinn.gradnorm_update(running, 1.0, 0.9)
    assert running == pytest.approx(1.0, rel=1e-6)


# -- relative error -----------------------------------------------------------

def test_l2_rel_basics():
    truth = np.array([1.0, -2.0, 0.5])
    assert pinn.l2_rel(truth, truth) == pytest.approx(0.0)
    assert pinn.l2_rel(np.zeros(3), truth) == pytest.approx(1.0)
    assert pinn.l2_rel(2 * truth, truth) == pytest.approx(1.0)
    with pytest.raises(ConfigurationError):
        pinn.l2_rel(truth, np.zeros(3))
    with pytest.raises(ShapeError):
        pinn.l2_rel(np.zeros(2), truth)


# -- mode machinery ------------------------------------------------------------

def test_assemble_loss_zero_for_exact_solution(s_case, s_cloud):
    """A network reproducing the manufactured solution gives zero PDE loss."""
    # unit square with the oscillatory source: sin sin solves it with u=0 edges
    case = bench.make_case("square", "poisson")
    cloud = case.cloud(0.2)
    prob = case.problem()
    # build views straight from the closed form
    import math
    pts = cloud.interior
    pi = math.pi
    x, y = pts[:, 0], pts[:, 1]
    u = np.sin(pi * x) * np.sin(pi * y)
    grad = np.stack([pi * np.cos(pi * x) * np.sin(pi * y),
                     pi * np.sin(pi * x) * np.cos(pi * y)], axis=1)
    hess = np.empty((len(pts), 2, 2))
    hess[:, 0, 0] = hess[:, 1, 1] = -pi ** 2 * u
    hess[:, 0, 1] = hess[:, 1, 0] = pi ** 2 * np.cos(pi * x) * np.cos(pi * y)
    views = [pde.ScalarView(u, grad, hess)]
    l_u = pde.mean_square(prob.residuals(views, pts))
    assert float(net.value_of(l_u)) < 1e-12


def test_mode_equivalence_baseline_vs_transform_identity(s_case, s_cloud):
    prob = s_case.problem()
    affine = geo.AffineMap.bbox_normalizer(
        np.concatenate([s_cloud.interior, s_cloud.boundary]))
    cfg_t = pinn.SolverConfig(mode="transform", epochs=40, seed=1, log_every=10)
    cfg_b = pinn.SolverConfig(mode="baseline", epochs=40, seed=1, log_every=10)
    _, rep_t = pinn.train_pinn(prob, s_cloud, cfg_t, mapper=affine)
    _, rep_b = pinn.train_pinn(prob, s_cloud, cfg_b)
    assert max(abs(a - b) for a, b in zip(rep_t.l_u, rep_b.l_u)) < 1e-10
    assert max(abs(a - b) for a, b in zip(rep_t.l_b, rep_b.l_b)) < 1e-10


def test_chainrule_matches_transform_for_affine_map(s_case, s_cloud):
    """Exactly stored affine tables reproduce the end-to-end residuals."""
    prob = s_case.problem()
    affine = geo.AffineMap(np.array([[0.31, 0.0], [0.0, 0.44]]),
                           np.array([0.0, 0.1]))
    cfg_c = pinn.SolverConfig(mode="chainrule", epochs=25, seed=2, log_every=5,
                              store_method="exact")
    cfg_t = pinn.SolverConfig(mode="transform", epochs=25, seed=2, log_every=5)
    _, rep_c = pinn.train_pinn(prob, s_cloud, cfg_c, mapper=affine)
    _, rep_t = pinn.train_pinn(prob, s_cloud, cfg_t, mapper=affine)
    for a, b in zip(rep_c.l_u, rep_t.l_u):
        assert abs(a - b) <= 1e-10 * max(1.0, abs(b))


def test_hard_mode_exactness_any_epoch(s_case):
    cloud = s_case.cloud(0.3)
    amap = s_case.analytic_map()
    cfg = pinn.SolverConfig(mode="hard", epochs=30, seed=0, log_every=10)
    _, rep = pinn.train_pinn(s_case.problem(), cloud, cfg, mapper=amap,
                             trial_map=amap)
    assert max(rep.final["bc_violation"].values()) < 1e-8


def test_hard_mode_requires_maps(s_case):
    cloud = s_case.cloud(0.4)
    cfg = pinn.SolverConfig(mode="hard", epochs=5)
    with pytest.raises(ConfigurationError):
        pinn.train_pinn(s_case.problem(), cloud, cfg)  # no mapper at all


def test_report_trace_and_determinism(s_case):
    cloud = s_case.cloud(0.35)
    amap = s_case.analytic_map()
    cfg = pinn.SolverConfig(mode="hard", epochs=25, seed=3, log_every=5,
                            deterministic=True)
    _, rep1 = pinn.train_pinn(s_case.problem(), cloud, cfg, mapper=amap, trial_map=amap)
    _, rep2 = pinn.train_pinn(s_case.problem(), cloud, cfg, mapper=amap, trial_map=amap)
    assert rep1.trace_rows(True) == rep2.trace_rows(True)
    header = rep1.trace_rows(True)[0].split(",")
    assert header == ["epoch", "L_u", "L_b", "lr", "R_loss", "R_grad",
                      "wall_ms_forward", "wall_ms_loss", "wall_ms_backward",
                      "wall_ms_total"]


def test_divergence_aborts_with_report(s_case, s_cloud):
    cfg = pinn.SolverConfig(mode="baseline", epochs=200, seed=0,
                            divergence_limit=1e-9)  # absurd limit forces abort
    _, rep = pinn.train_pinn(s_case.problem(), s_cloud, cfg)
    assert rep.aborted
    assert "abort_epoch" in rep.final


def test_run_report_losses_finite(s_case, s_cloud):
    cfg = pinn.SolverConfig(mode="baseline", epochs=60, seed=0, log_every=10)
    _, rep = pinn.train_pinn(s_case.problem(), s_cloud, cfg)
    assert all(np.isfinite(v) for v in rep.l_u)
    assert all(np.isfinite(v) for v in rep.l_b)
