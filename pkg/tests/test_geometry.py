"""Triangulation, circumcenter, volume and adjacency tests."""

import itertools

import numpy as np
import pytest

from dccvt import geometry
from dccvt.errors import DegenerateInput, DuplicateSites, NearDegenerate


def brute_force_delaunay(pts, tol=1e-12):
    """All 4-subsets whose circumsphere is empty of other sites."""
    n = len(pts)
    out = []
    for combo in itertools.combinations(range(n), 4):
        quad = np.array(combo)
        try:
            c = geometry.circumcenter(*pts[quad])
        except NearDegenerate:
            continue
        r = np.linalg.norm(pts[quad[0]] - c)
        others = np.setdiff1d(np.arange(n), quad)
        d = np.linalg.norm(pts[others] - c, axis=1)
        if np.all(d >= r - tol):
            out.append(sorted(combo))
    return sorted(out)


def canonical_sets(tri):
    return sorted(sorted(row) for row in tri.tets.tolist())


def test_four_noncoplanar_points_single_tet():
    pts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], float)
    tri = geometry.delaunay(pts)
    assert tri.n_tets == 1
    assert sorted(tri.tets[0].tolist()) == [0, 1, 2, 3]


def test_five_points_interior_site_gives_four_tets():
    pts = np.array(
        [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [0.2, 0.2, 0.2]], float
    )
    tri = geometry.delaunay(pts)
    assert tri.n_tets == 4
    assert all(4 in row for row in tri.tets.tolist())
    assert canonical_sets(tri) == brute_force_delaunay(pts)


def test_coplanar_points_raise():
    pts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], float)
    with pytest.raises(DegenerateInput):
        geometry.delaunay(pts)


def test_duplicate_sites_raise():
    pts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [1e-13, 0, 0]], float)
    with pytest.raises(DuplicateSites):
        geometry.delaunay(pts)


def test_matches_brute_force_on_small_random_sets():
    for seed in range(8):
        rng = np.random.default_rng(seed)
        pts = rng.uniform(-1, 1, size=(rng.integers(6, 12), 3))
        tri = geometry.delaunay(pts)
        assert canonical_sets(tri) == brute_force_delaunay(pts)


def test_empty_circumsphere_property_random():
    for seed, n in [(0, 30), (1, 80), (2, 200)]:
        rng = np.random.default_rng(seed)
        pts = rng.uniform(-1, 1, size=(n, 3))
        tri = geometry.delaunay(pts)
        centers, ok = geometry.circumcenters(pts, tri.tets)
        assert np.all(ok)
        radii = np.linalg.norm(pts[tri.tets[:, 0]] - centers, axis=1)
        # every site at distance >= radius - tol from every circumcenter
        d = np.linalg.norm(pts[None, :, :] - centers[:, None, :], axis=2)
        inside = d < radii[:, None] - 1e-9
        inside[np.arange(len(tri.tets))[:, None], tri.tets] = False
        assert not inside.any()


def test_union_of_volumes_equals_hull_volume():
    from scipy.spatial import ConvexHull

    for seed in range(4):
        rng = np.random.default_rng(100 + seed)
        pts = rng.uniform(-1, 1, size=(60, 3))
        tri = geometry.delaunay(pts)
        vol = geometry.tet_volumes(pts, tri.tets).sum()
        hull = ConvexHull(pts).volume
        assert abs(vol - hull) <= 1e-9 * max(1.0, hull)


def test_deterministic_given_identical_input():
    rng = np.random.default_rng(7)
    pts = rng.uniform(-1, 1, size=(120, 3))
    t1 = geometry.delaunay(pts.copy())
    t2 = geometry.delaunay(pts.copy())
    assert np.array_equal(t1.tets, t2.tets)
    assert np.array_equal(t1.neighbors, t2.neighbors)
    assert np.array_equal(t1.edges, t2.edges)


def test_interior_faces_shared_by_exactly_two_tets():
    rng = np.random.default_rng(11)
    pts = rng.uniform(-1, 1, size=(70, 3))
    tri = geometry.delaunay(pts)
    faces = {}
    for ti, row in enumerate(tri.tets.tolist()):
        for f in itertools.combinations(sorted(row), 3):
            faces.setdefault(f, []).append(ti)
    counts = np.array([len(v) for v in faces.values()])
    assert counts.max() <= 2
    # neighbor symmetry
    for ti in range(tri.n_tets):
        for k in range(4):
            nb = tri.neighbors[ti, k]
            if nb >= 0:
                assert ti in tri.neighbors[nb]


def test_positive_orientation_after_canonicalization():
    rng = np.random.default_rng(13)
    pts = rng.uniform(-1, 1, size=(50, 3))
    tri = geometry.delaunay(pts)
    assert np.all(geometry.signed_triple(pts, tri.tets) > 0)


def test_one_ring_single_tet():
    pts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], float)
    tri = geometry.delaunay(pts)
    for i in range(4):
        assert sorted(tri.one_ring(i).tolist()) == sorted(set(range(4)) - {i})


def test_one_ring_symmetry_and_brute_force():
    rng = np.random.default_rng(17)
    pts = rng.uniform(-1, 1, size=(30, 3))
    tri = geometry.delaunay(pts)
    # brute force from tet scan
    rings = {i: set() for i in range(30)}
    for row in tri.tets.tolist():
        for a in row:
            for b in row:
                if a != b:
                    rings[a].add(b)
    for i in range(30):
        got = tri.one_ring(i).tolist()
        assert len(got) == len(set(got))
        assert sorted(got) == sorted(rings[i])
        for j in got:
            assert i in tri.one_ring(j)


def test_circumcenter_unit_corner():
    c = geometry.circumcenter([0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1])
    np.testing.assert_allclose(c, [0.5, 0.5, 0.5], atol=1e-15)


def test_circumcenter_translation_equivariance():
    rng = np.random.default_rng(19)
    quad = rng.normal(size=(4, 3))
    t = np.array([0.3, -1.2, 2.5])
    c0 = geometry.circumcenter(*quad)
    c1 = geometry.circumcenter(*(quad + t))
    np.testing.assert_allclose(c1, c0 + t, atol=1e-12)


def test_circumcenter_equidistance_random():
    rng = np.random.default_rng(23)
    worst = 0.0
    for _ in range(100):
        quad = rng.uniform(-1, 1, size=(4, 3))
        try:
            c = geometry.circumcenter(*quad)
        except NearDegenerate:
            continue
        d = np.linalg.norm(quad - c, axis=1)
        worst = max(worst, np.ptp(d))
    assert worst < 1e-9


def test_circumcenter_near_degenerate_raises():
    with pytest.raises(NearDegenerate):
        geometry.circumcenter([0, 0, 0], [1, 0, 0], [0, 1, 0], [0.5, 0.5, 1e-14])


def test_tet_volume_examples_and_oracle():
    assert abs(geometry.tet_volume([0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]) - 1 / 6) < 1e-15
    assert geometry.tet_volume([0, 0, 0], [1, 0, 0], [0, 1, 0], [0.3, 0.7, 0]) == 0.0
    rng = np.random.default_rng(29)
    for _ in range(50):
        q = rng.normal(size=(4, 3))
        det = np.linalg.det(q[1:] - q[0])
        assert abs(geometry.tet_volume(*q) - abs(det) / 6.0) < 1e-12


def test_grid_with_jitter_triangulates():
    rng = np.random.default_rng(31)
    g = np.linspace(-1, 1, 8)
    base = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3)
    pts = np.clip(base + rng.uniform(-0.005, 0.005, base.shape), -1, 1)
    tri = geometry.delaunay(pts)
    centers, ok = geometry.circumcenters(pts, tri.tets)
    radii = np.linalg.norm(pts[tri.tets[:, 0]] - centers, axis=1)
    d = np.linalg.norm(pts[None, :, :] - centers[:, None, :], axis=2)
    inside = d < radii[:, None] - 1e-9
    inside[np.arange(len(tri.tets))[:, None], tri.tets] = False
    inside[~ok] = False
    assert not inside.any()
