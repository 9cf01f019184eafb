"""Field reconstruction, Heaviside, oracles and initialization tests."""

import numpy as np
import pytest

from dccvt import fields, geometry
from dccvt.autodiff import value


def test_classify_crossing():
    assert fields.classify_crossing([-1, 1, 1, 1]) is True
    assert fields.classify_crossing([0.1, 0.2, 0.3, 0.4]) is False
    # strict inequality: an exact zero does not make a tet crossing
    assert fields.classify_crossing([0, 0.5, 1, 2]) is False
    assert fields.classify_crossing([0, -0.5, -1, -2]) is False


def test_tet_gradient_exact_on_linear_field():
    rng = np.random.default_rng(0)
    for _ in range(20):
        pts = rng.uniform(-1, 1, size=(4, 3))
        if geometry.tet_volume(*pts) < 1e-3:
            continue
        n = rng.normal(size=3)
        c = rng.normal()
        phis = pts @ n + c
        grad, W, singular = fields.tet_gradient(pts, phis)
        assert not singular
        np.testing.assert_allclose(grad, n, atol=1e-10)


def test_tet_gradient_constant_field_zero():
    pts = np.random.default_rng(1).uniform(-1, 1, size=(4, 3))
    grad, _, singular = fields.tet_gradient(pts, [3.3] * 4)
    assert not singular
    np.testing.assert_allclose(grad, 0, atol=1e-12)


def test_tet_gradient_w_reproduces_gradient():
    rng = np.random.default_rng(2)
    pts = rng.uniform(-1, 1, size=(4, 3))
    phis = rng.normal(size=4)
    grad, W, _ = fields.tet_gradient(pts, phis)
    np.testing.assert_allclose(W @ (phis - phis.mean()), grad, atol=1e-14)


def test_tet_gradient_beats_random_search():
    rng = np.random.default_rng(3)
    for trial in range(10):
        pts = rng.uniform(-1, 1, size=(4, 3))
        if geometry.tet_volume(*pts) < 1e-3:
            continue
        phis = rng.normal(size=4)
        grad, _, singular = fields.tet_gradient(pts, phis)
        assert not singular
        s_bar = pts.mean(axis=0)
        phi_bar = phis.mean()

        def residual(g):
            pred = phi_bar + (pts - s_bar) @ g
            return np.mean((pred - phis) ** 2)

        base = residual(grad)
        for _ in range(1000):
            assert base <= residual(grad + rng.normal(size=3) * rng.uniform(1e-4, 1.0)) + 1e-15


def test_tet_gradient_translation_invariance():
    rng = np.random.default_rng(4)
    pts = rng.uniform(-1, 1, size=(4, 3))
    phis = rng.normal(size=4)
    g0, _, _ = fields.tet_gradient(pts, phis)
    g1, _, _ = fields.tet_gradient(pts + np.array([10.0, -5.0, 2.0]), phis)
    np.testing.assert_allclose(g0, g1, atol=1e-10)


def test_tet_gradient_singular_gram_flagged():
    # 4 nearly collinear points
    pts = np.array([[0, 0, 0], [1, 0, 0], [2, 1e-9, 0], [3, 0, 1e-9]], float)
    grad, W, singular = fields.tet_gradient(pts, [0.0, 1.0, 2.0, 3.0])
    assert singular
    np.testing.assert_allclose(grad, 0)


def test_site_gradient_linear_field_and_oracle():
    rng = np.random.default_rng(5)
    pts = rng.uniform(-1, 1, size=(40, 3))
    tri = geometry.delaunay(pts)
    n = np.array([0.3, -1.1, 0.7])
    sdf = pts @ n + 0.1
    cache = fields.build_field_cache(pts, sdf, tri)
    sg = value(cache.site_grad)
    for i in range(40):
        np.testing.assert_allclose(sg[i], n, atol=1e-9)

    # direct weighted-sum oracle on a random field
    sdf = rng.normal(size=40)
    cache = fields.build_field_cache(pts, sdf, tri)
    sg = value(cache.site_grad)
    tg = value(cache.tet_grad)
    vol = value(cache.volumes)
    for i in range(0, 40, 7):
        inc = tri.incident_tets(i)
        inc = inc[cache.gram_ok[inc]]
        want = (vol[inc, None] * tg[inc]).sum(axis=0) / vol[inc].sum()
        np.testing.assert_allclose(sg[i], want, atol=1e-12)
        assert np.allclose(sg[i], fields.site_gradient(pts, sdf, tri, i))


def test_site_gradient_single_tet():
    pts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], float)
    tri = geometry.delaunay(pts)
    sdf = np.array([0.0, 1.0, 2.0, 3.0])
    g, _, _ = fields.tet_gradient(pts, sdf)
    for i in range(4):
        np.testing.assert_allclose(fields.site_gradient(pts, sdf, tri, i), g, atol=1e-12)


def test_heaviside_values():
    eps = 0.25
    assert fields.heaviside(0.0, eps) == 0.5
    assert fields.heaviside(-2 * eps, eps) == 0.0
    assert fields.heaviside(2 * eps, eps) == 1.0
    want = 0.75 + 1.0 / (2.0 * np.pi)
    assert abs(fields.heaviside(eps / 2, eps) - want) < 1e-12


def test_heaviside_monotone_and_symmetric():
    eps = 0.1
    x = np.linspace(-0.5, 0.5, 1001)
    h = fields.heaviside(x, eps)
    assert np.all(np.diff(h) >= -1e-15)
    np.testing.assert_allclose(h + fields.heaviside(-x, eps), 1.0, atol=1e-12)


def test_heaviside_continuous_at_band_edges():
    eps = 0.3
    for edge in (-eps, eps):
        lo = fields.heaviside(edge - 1e-12, eps)
        hi = fields.heaviside(edge + 1e-12, eps)
        assert abs(hi - lo) < 1e-9


def test_eps_h_all_equal_edges():
    assert fields.trimmed_edge_mean(np.full(50, 0.37)) == pytest.approx(0.37)


def test_eps_h_drops_single_outlier():
    lengths = np.concatenate([np.ones(19), [100.0]])
    assert fields.trimmed_edge_mean(lengths) == pytest.approx(1.0)


def test_eps_h_matches_sort_trim_oracle():
    rng = np.random.default_rng(6)
    for _ in range(20):
        e = rng.integers(1, 400)
        lengths = rng.uniform(0.01, 2.0, size=e)
        srt = np.sort(lengths)
        import math

        keep = max(e - math.ceil(0.05 * e), 1)
        assert fields.trimmed_edge_mean(lengths) == pytest.approx(srt[:keep].mean())


def test_eps_h_from_triangulation():
    rng = np.random.default_rng(7)
    pts = rng.uniform(-1, 1, size=(30, 3))
    tri = geometry.delaunay(pts)
    lengths = np.linalg.norm(pts[tri.edges[:, 0]] - pts[tri.edges[:, 1]], axis=1)
    assert fields.compute_eps_h(pts, tri) == pytest.approx(fields.trimmed_edge_mean(lengths))


def test_init_grid_sites_corners():
    sites = fields.init_grid_sites(2, 0.0, 0)
    want = {(-1.0, -1.0, -1.0), (1.0, -1.0, -1.0), (-1.0, 1.0, -1.0), (1.0, 1.0, -1.0),
            (-1.0, -1.0, 1.0), (1.0, -1.0, 1.0), (-1.0, 1.0, 1.0), (1.0, 1.0, 1.0)}
    assert set(map(tuple, sites.tolist())) == want
    # x varies fastest
    assert sites[1][0] != sites[0][0]
    assert sites[1][1] == sites[0][1]


def test_init_grid_sites_perturbation_bound_and_determinism():
    a = fields.init_grid_sites(5, 0.005, 42)
    b = fields.init_grid_sites(5, 0.005, 42)
    assert np.array_equal(a, b)
    lattice = fields.init_grid_sites(5, 0.0, 0)
    assert np.max(np.abs(a - lattice)) <= 0.005
    assert np.all(a >= -1) and np.all(a <= 1)


def test_init_sdf_sphere():
    oracle = fields.SphereOracle(0.6)
    sdf = fields.init_sdf(np.array([[0, 0, 0], [0.6, 0, 0], [1, 0, 0]]), oracle)
    np.testing.assert_allclose(sdf, [-0.6, 0.0, 0.4], atol=1e-15)


def test_noisy_oracle_bounded_and_deterministic():
    base = fields.SphereOracle(0.6)
    noisy = fields.NoisyOracle(base, 0.05, 3)
    rng = np.random.default_rng(8)
    pts = rng.uniform(-1, 1, size=(500, 3))
    v0, _ = base.evaluate(pts)
    v1, _ = noisy.evaluate(pts)
    assert np.max(np.abs(v1 - v0)) <= 0.05
    v2, _ = fields.NoisyOracle(base, 0.05, 3).evaluate(pts)
    assert np.array_equal(v1, v2)


def test_oracle_gradients_unit_norm_away_from_medial_axis():
    rng = np.random.default_rng(9)
    pts = rng.uniform(-0.95, 0.95, size=(300, 3))
    for oracle in (fields.SphereOracle(0.6), fields.TorusOracle(0.5, 0.2), fields.BoxOracle([0.4, 0.5, 0.3])):
        val, grad = oracle.evaluate(pts)
        norms = np.linalg.norm(grad, axis=1)
        # keep clearly off-axis samples
        if isinstance(oracle, fields.SphereOracle):
            keep = np.linalg.norm(pts, axis=1) > 0.05
        elif isinstance(oracle, fields.TorusOracle):
            keep = np.abs(np.hypot(np.hypot(pts[:, 0], pts[:, 1]) - 0.5, pts[:, 2])) > 0.02
        else:
            keep = np.abs(val) > 0.02
        assert np.all(np.abs(norms[keep] - 1.0) < 1e-9)


def test_oracle_gradients_match_finite_differences():
    rng = np.random.default_rng(10)
    pts = rng.uniform(-0.9, 0.9, size=(40, 3))
    oracles = [
        fields.SphereOracle(0.6),
        fields.TorusOracle(0.5, 0.2),
        fields.NoisyOracle(fields.SphereOracle(0.6), 0.1, 1),
    ]
    h = 1e-6
    for oracle in oracles:
        _, g = oracle.evaluate(pts)
        for ax in range(3):
            dp = pts.copy()
            dp[:, ax] += h
            dm = pts.copy()
            dm[:, ax] -= h
            fd = (oracle.evaluate(dp)[0] - oracle.evaluate(dm)[0]) / (2 * h)
            np.testing.assert_allclose(g[:, ax], fd, atol=1e-5)


def test_grid_oracle_reproduces_trilinear_field():
    # a field that is trilinear per cell is reproduced exactly
    g = np.linspace(-1, 1, 9)
    X, Y, Z = np.meshgrid(g, g, g, indexing="ij")
    vals = 0.3 * X - 0.7 * Y + 0.2 * Z + 0.05
    oracle = fields.GridOracle(vals)
    rng = np.random.default_rng(11)
    pts = rng.uniform(-1, 1, size=(200, 3))
    v, grad = oracle.evaluate(pts)
    np.testing.assert_allclose(v, 0.3 * pts[:, 0] - 0.7 * pts[:, 1] + 0.2 * pts[:, 2] + 0.05, atol=1e-12)
    np.testing.assert_allclose(grad, np.tile([0.3, -0.7, 0.2], (200, 1)), atol=1e-10)


def test_grid_oracle_approximates_sphere():
    g = np.linspace(-1, 1, 33)
    X, Y, Z = np.meshgrid(g, g, g, indexing="ij")
    vals = np.sqrt(X**2 + Y**2 + Z**2) - 0.6
    oracle = fields.GridOracle(vals)
    rng = np.random.default_rng(12)
    pts = rng.uniform(-0.8, 0.8, size=(100, 3))
    ref, _ = fields.SphereOracle(0.6).evaluate(pts)
    v, _ = oracle.evaluate(pts)
    assert np.max(np.abs(v - ref)) < 5e-3


def test_parse_oracle_specs():
    o = fields.parse_oracle("sphere:0.8")
    assert isinstance(o, fields.SphereOracle) and o.radius == 0.8
    o = fields.parse_oracle("sphere:0.1,0.2,0.3,0.5")
    np.testing.assert_allclose(o.center, [0.1, 0.2, 0.3])
    o = fields.parse_oracle("torus:0.5,0.2")
    assert isinstance(o, fields.TorusOracle)
    o = fields.parse_oracle("noisy:0.1:7:sphere:0.6")
    assert isinstance(o, fields.NoisyOracle) and o.amplitude == 0.1
    with pytest.raises(ValueError):
        fields.parse_oracle("blob:1")
