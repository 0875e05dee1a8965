"""Residual operators, chain-rule pullbacks and stored-table transforms."""

import math

import numpy as np
import pytest

from refpinn import geometry as geo
from refpinn import net, pde
from refpinn.errors import ConfigurationError


def view_from(u, grad, hess):
    return pde.ScalarView(np.asarray(u, dtype=float), np.asarray(grad, dtype=float),
                          np.asarray(hess, dtype=float))


def exact_view(u_fn, grad_fn, hess_fn, pts):
    return view_from(u_fn(pts), grad_fn(pts), hess_fn(pts))


def sinsin_views(pts):
    pi = math.pi
    x, y = pts[:, 0], pts[:, 1]
    u = np.sin(pi * x) * np.sin(pi * y)
    grad = np.stack([pi * np.cos(pi * x) * np.sin(pi * y),
                     pi * np.sin(pi * x) * np.cos(pi * y)], axis=1)
    hess = np.empty((len(pts), 2, 2))
    hess[:, 0, 0] = -pi ** 2 * u
    hess[:, 1, 1] = -pi ** 2 * u
    hess[:, 0, 1] = hess[:, 1, 0] = pi ** 2 * np.cos(pi * x) * np.cos(pi * y)
    return view_from(u, grad, hess)


def test_poisson_residual_harmonic():
    pts = np.random.default_rng(0).uniform(-1, 1, (50, 2))
    # u = x*y is harmonic
    view = view_from(pts[:, 0] * pts[:, 1],
                     np.stack([pts[:, 1], pts[:, 0]], axis=1),
                     np.broadcast_to(np.array([[0.0, 1.0], [1.0, 0.0]]), (50, 2, 2)))
    res = pde.poisson_residual(view, np.zeros(50))
    assert np.abs(res).max() < 1e-12


def test_poisson_residual_manufactured_zero():
    pts = np.random.default_rng(1).uniform(-1, 1, (80, 2))
    view = sinsin_views(pts)
    f = -2.0 * math.pi ** 2 * np.sin(math.pi * pts[:, 0]) * np.sin(math.pi * pts[:, 1])
    res = pde.poisson_residual(view, f)
    assert np.abs(res).max() < 1e-8


def test_poisson_source_value_at_center():
    prob = pde.poisson_problem()
    val = prob.source(np.array([[0.5, 0.5]]))[0]
    assert val == pytest.approx(-2.0 * math.pi ** 2)


def test_helmholtz_manufactured_zero_and_coefficient():
    k, a1, a2 = 1.0, 2.0, 6.0
    pts = np.random.default_rng(2).uniform(-1, 1, (60, 2))
    pi = math.pi
    x, y = pts[:, 0], pts[:, 1]
    u = np.sin(a1 * pi * x) * np.sin(a2 * pi * y)
    grad = np.stack([a1 * pi * np.cos(a1 * pi * x) * np.sin(a2 * pi * y),
                     a2 * pi * np.sin(a1 * pi * x) * np.cos(a2 * pi * y)], axis=1)
    hess = np.zeros((len(pts), 2, 2))
    hess[:, 0, 0] = -(a1 * pi) ** 2 * u
    hess[:, 1, 1] = -(a2 * pi) ** 2 * u
    hess[:, 0, 1] = hess[:, 1, 0] = a1 * a2 * pi ** 2 \
        * np.cos(a1 * pi * x) * np.cos(a2 * pi * y)
    res = pde.helmholtz_residual(view_from(u, grad, hess), pts, k, a1, a2)
    assert np.abs(res).max() < 1e-8
    # coefficient k^2 - (a1 pi)^2 - (a2 pi)^2 = 1 - 40 pi^2
    coeff = 1.0 - 40.0 * math.pi ** 2
    src = pde.helmholtz_source(np.array([[0.125, 1.0 / 12.0]]), k, a1, a2)
    expect = coeff * math.sin(a1 * math.pi * 0.125) * math.sin(a2 * math.pi / 12.0)
    assert src[0] == pytest.approx(expect)
    assert coeff == pytest.approx(-393.784, abs=0.001)


def test_helmholtz_zero_everything():
    view = view_from(np.zeros(5), np.zeros((5, 2)), np.zeros((5, 2, 2)))
    pts = np.zeros((5, 2))  # sin(0) source vanishes
    res = pde.helmholtz_residual(view, pts, 1.0, 2.0, 6.0)
    assert np.abs(res).max() == 0.0


def test_laplace_problem_edges():
    prob = pde.laplace_problem(geo.DomainSpec("u_shape"))
    d = {bc.edge: bc for bc in prob.dirichlet}
    assert d[geo.WEST].value(np.zeros((3, 2)))[0] == -1.0
    assert d[geo.EAST].value(np.zeros((3, 2)))[0] == 1.0
    edges_n = {bc.edge for bc in prob.neumann}
    assert edges_n == {geo.SOUTH, geo.NORTH}
    with pytest.raises(ConfigurationError):
        pde.laplace_problem(geo.DomainSpec("s_shape"))


def test_ns_residuals_zero_fields():
    z = view_from(np.zeros(4), np.zeros((4, 2)), np.zeros((4, 2, 2)))
    cont, mx, my = pde.ns2d_residuals(z, z, z, 100.0)
    assert np.abs(cont).max() == 0 and np.abs(mx).max() == 0 and np.abs(my).max() == 0


def test_ns_residuals_rigid_translation():
    n = 6
    u = view_from(np.full(n, 3.0), np.zeros((n, 2)), np.zeros((n, 2, 2)))
    z = view_from(np.zeros(n), np.zeros((n, 2)), np.zeros((n, 2, 2)))
    p = view_from(np.full(n, 7.0), np.zeros((n, 2)), np.zeros((n, 2, 2)))
    cont, mx, my = pde.ns2d_residuals(u, z, p, 50.0)
    assert np.abs(cont).max() == 0 and np.abs(mx).max() == 0 and np.abs(my).max() == 0


def test_ns_residuals_poiseuille_zero():
    from refpinn import oracle
    re, u_max, half, x_out = 150.0, 1.0, 1.0, 5.0
    u_fn, v_fn, p_fn = oracle.poiseuille(u_max, half, re, x_out)
    pts = np.random.default_rng(3).uniform([0, -1], [5, 1], (40, 2))
    u = view_from(u_fn(pts),
                  np.stack([np.zeros(40), -2 * u_max * pts[:, 1] / half ** 2], axis=1),
                  np.broadcast_to(np.array([[0.0, 0.0], [0.0, -2 * u_max / half ** 2]]),
                                  (40, 2, 2)))
    v = view_from(v_fn(pts), np.zeros((40, 2)), np.zeros((40, 2, 2)))
    p = view_from(p_fn(pts),
                  np.stack([np.full(40, -2 * u_max / (re * half ** 2)), np.zeros(40)],
                           axis=1), np.zeros((40, 2, 2)))
    cont, mx, my = pde.ns2d_residuals(u, v, p, re)
    assert np.abs(cont).max() < 1e-12
    assert np.abs(mx).max() < 1e-12
    assert np.abs(my).max() < 1e-12


def test_ns_continuity_antisymmetric():
    rng = np.random.default_rng(4)
    n = 10
    mk = lambda: view_from(rng.normal(size=n), rng.normal(size=(n, 2)),
                           rng.normal(size=(n, 2, 2)))
    u, v, p = mk(), mk(), mk()
    cont1, _, _ = pde.ns2d_residuals(u, v, p, 10.0)
    neg = lambda a: view_from(-net.value_of(a.value), -net.value_of(a.grad),
                              -net.value_of(a.hess))
    cont2, _, _ = pde.ns2d_residuals(neg(u), neg(v), p, 10.0)
    assert np.allclose(cont1, -cont2)


def test_chain_rule_grad_cases():
    assert np.allclose(pde.chain_rule_grad(np.array([3.0, 5.0]), np.eye(2)), [3, 5])
    j = np.array([[2.0, 0.0], [0.0, 1.0]])
    assert np.allclose(pde.chain_rule_grad(np.array([3.0, 5.0]), j), [6, 5])
    rot = np.array([[0.0, 1.0], [-1.0, 0.0]])  # 90 degree rotation
    assert np.allclose(pde.chain_rule_grad(np.array([1.0, 0.0]), rot), [0, 1])


def test_chain_rule_hess_cases():
    h_ref = np.array([[1.0, 0.5], [0.5, 2.0]])
    g_ref = np.array([0.7, -0.3])
    # identity map passes the reference Hessian through
    out = pde.chain_rule_hess(g_ref, h_ref, np.eye(2), np.zeros((2, 2, 2)))
    assert np.allclose(out, h_ref)
    # affine xi = 2x: u_xx = 4 u_xixi
    j = np.array([[2.0, 0.0], [0.0, 1.0]])
    out = pde.chain_rule_hess(g_ref, h_ref, j, np.zeros((2, 2, 2)))
    assert out[0, 0] == pytest.approx(4 * h_ref[0, 0])
    # linear u in reference coords: only the mapping curvature remains
    hmap = np.random.default_rng(5).normal(size=(2, 2, 2))
    hmap = hmap + np.swapaxes(hmap, 1, 2)
    out = pde.chain_rule_hess(g_ref, np.zeros((2, 2)), j, hmap)
    assert np.allclose(out, np.einsum("p,pij->ij", g_ref, hmap))


def test_compose_bundles_matches_manual():
    rng = np.random.default_rng(6)
    m_out = net.init_mlp([2, 8, 1], "tanh", seed=1)
    m_in = net.init_mlp([2, 6, 2], "tanh", seed=2)
    x = rng.normal(size=(12, 2)) * 0.4
    inner = net.forward_bundle(m_in, x)
    outer = net.forward_bundle(m_out, inner.value)
    comp = pde.compose_bundles(outer, inner)

    def composed(pts):
        return net.forward(m_out, net.forward(m_in, pts))

    h = 1e-5
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        fd = (composed(x + e) - composed(x - e)) / (2 * h)
        assert np.abs(fd - comp.jacobian[:, :, j]).max() < 1e-8
        fd2 = (composed(x + e) - 2 * composed(x) + composed(x - e)) / h ** 2
        assert np.abs(fd2 - comp.hessian[:, :, j, j]).max() < 1e-4


def test_stored_tables_affine_equivalence():
    """Chain-rule path with exactly stored affine J equals the direct path."""
    amap = geo.AffineMap(np.array([[2.0, 0.3], [0.0, 1.0]]), np.array([0.1, -0.2]))
    rng = np.random.default_rng(7)
    pts = rng.uniform(-0.8, 0.8, (30, 2))
    tables = pde.build_stored_tables(amap, pts, method="exact", precision="f64")
    solution = net.init_mlp([2, 10, 1], "tanh", seed=3)
    ref_b = net.forward_bundle(solution, tables.ref)
    views_stored = pde.physical_views(ref_b, tables.jac, tables.hess, 1)
    direct = pde.compose_bundles(ref_b, amap.bundle(pts))
    dview = pde.split_components(direct, 1)[0]
    for a, b in ((views_stored[0].grad, dview.grad), (views_stored[0].hess, dview.hess)):
        num = np.abs(net.value_of(a) - net.value_of(b)).max()
        assert num <= 1e-12 * max(1.0, np.abs(net.value_of(b)).max())


def test_stored_precision_ordering_on_smooth_map():
    """Residual error vs the in-graph path: f64 <= f32 <= 3-decimal."""
    rng = np.random.default_rng(8)
    spec = geo.DomainSpec("s_shape")
    amap = geo.analytic_forward_map(spec, "unfold")
    cloud = geo.sample_domain(spec, 0.2)
    pts = cloud.interior[np.abs(cloud.interior[:, 0]) > 0.05][:150]
    solution = net.init_mlp([2, 12, 1], "tanh", seed=4)
    prob = pde.poisson_problem()

    exact_tables = pde.build_stored_tables(amap, pts, method="exact")
    ref_b = net.forward_bundle(solution, exact_tables.ref)
    direct = pde.split_components(pde.compose_bundles(ref_b, amap.bundle(pts)), 1)
    res_direct = net.value_of(prob.residuals(direct, pts)[0])

    errs = {}
    for prec in ("f64", "f32", "mm"):
        tables = pde.build_stored_tables(amap, pts, method="fd", precision=prec)
        views = pde.physical_views(ref_b, tables.jac, tables.hess, 1)
        res = net.value_of(prob.residuals(views, pts)[0])
        errs[prec] = float(np.mean(np.abs(res - res_direct)))
    assert errs["f64"] <= errs["f32"] <= errs["mm"]


def test_mean_square_matches_definition():
    r1 = np.array([1.0, 2.0])
    r2 = np.array([3.0, 0.0])
    val = pde.mean_square([r1, r2])
    assert val == pytest.approx(0.5 * (np.mean(r1 ** 2) + np.mean(r2 ** 2)))


def test_quantize_px():
    arr = np.array([1.23456789])
    assert pde._quantize(arr, "mm")[0] == pytest.approx(1.235)
    assert pde._quantize(arr, "f32")[0] == pytest.approx(arr[0], abs=1e-7)
    with pytest.raises(ConfigurationError):
        pde._quantize(arr, "half")
