"""Delaunay triangulation, circumcenters, volumes and adjacency queries.

The triangulation is rebuilt from scratch whenever sites move; all query
structures below are immutable after construction and safe to read from
multiple threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import _delaunay_nb as nb
from .errors import DegenerateInput, DuplicateSites, NearDegenerate

DUPLICATE_TOL = 1e-12
DEGENERATE_TET_EPS = 1e-12


@dataclass(frozen=True)
class Tetrahedralization:
    """Delaunay tetrahedra over a site set, with adjacency queries.

    tets          (M, 4) site indices, canonical: ascending order with the
                  last two swapped when needed for positive orientation
    neighbors     (M, 4) tet id opposite each vertex slot, -1 on the hull
    edges         (E, 2) unique Delaunay edges, each row sorted, rows sorted
    n_sites       number of sites triangulated
    """

    tets: np.ndarray
    neighbors: np.ndarray
    edges: np.ndarray
    n_sites: int
    _ring_ptr: np.ndarray = field(repr=False)
    _ring_idx: np.ndarray = field(repr=False)
    _s2t_ptr: np.ndarray = field(repr=False)
    _s2t_idx: np.ndarray = field(repr=False)

    def one_ring(self, i: int) -> np.ndarray:
        """Sites sharing a Delaunay edge with site i (sorted, no duplicates)."""
        return self._ring_idx[self._ring_ptr[i]:self._ring_ptr[i + 1]]

    def incident_tets(self, i: int) -> np.ndarray:
        """Tet ids incident to site i."""
        return self._s2t_idx[self._s2t_ptr[i]:self._s2t_ptr[i + 1]]

    def ring_counts(self) -> np.ndarray:
        return np.diff(self._ring_ptr)

    @property
    def n_tets(self) -> int:
        return len(self.tets)


def _csr_from_pairs(keys, vals, n):
    order = np.lexsort((vals, keys))
    keys = keys[order]
    vals = vals[order]
    ptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(ptr, keys + 1, 1)
    np.cumsum(ptr, out=ptr)
    return ptr, vals


def one_ring(tri: Tetrahedralization, i: int) -> np.ndarray:
    return tri.one_ring(i)


def delaunay(sites: np.ndarray) -> Tetrahedralization:
    """Delaunay tetrahedralization of the given sites.

    Deterministic for bitwise-identical input.  Raises DegenerateInput when
    the sites are all coplanar (or fewer than 4), DuplicateSites when two
    sites coincide within 1e-12.
    """
    pts = np.ascontiguousarray(sites, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError("sites must have shape (N, 3)")
    n = len(pts)
    if n < 4:
        raise DegenerateInput(f"need at least 4 sites, got {n}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("sites contain non-finite coordinates")

    pairs = cKDTree(pts).query_pairs(DUPLICATE_TOL, output_type="ndarray")
    if len(pairs):
        i, j = pairs[0]
        raise DuplicateSites(f"sites {i} and {j} coincide within {DUPLICATE_TOL}")

    # one padding row for the symbolic infinite vertex
    P = np.vstack([pts, np.zeros((1, 3))])
    cap = 12 * n + 2048
    for _ in range(3):
        status, tets, neigh, alive, n_slots, _ = nb._build(P, n, cap)
        if status != nb.STATUS_CAPACITY:
            break
        cap *= 2
    if status == nb.STATUS_LOST:
        raise DegenerateInput("sites are coplanar or collinear")
    if status != nb.STATUS_OK:
        raise RuntimeError("triangulation failed (capacity)")

    live = np.flatnonzero(alive[:n_slots].astype(bool))
    raw = tets[live]
    finite = raw[np.all(raw != n, axis=1)]
    if len(finite) == 0:
        raise DegenerateInput("no finite tetrahedron produced")

    return _finalize(pts, finite.astype(np.int64))


def _finalize(pts, raw_tets):
    """Canonicalize tets, sort rows, rebuild adjacency in vectorized numpy."""
    t = np.sort(raw_tets, axis=1)
    o = _orient_batch(pts, t)
    flip = o < 0
    t[flip, 2], t[flip, 3] = t[flip, 3], t[flip, 2].copy()
    order = np.lexsort((t[:, 3], t[:, 2], t[:, 1], t[:, 0]))
    t = np.ascontiguousarray(t[order])
    m = len(t)
    n = len(pts)

    # neighbors from shared faces, keyed by packed sorted vertex triples
    face_local = np.array(
        [[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]], dtype=np.int64
    )
    f = t[:, face_local].reshape(-1, 3)  # (4M, 3)
    lo = np.min(f, axis=1)
    hi = np.max(f, axis=1)
    mid = f[:, 0] + f[:, 1] + f[:, 2] - lo - hi
    fkey = (lo * n + mid) * n + hi
    owner = np.repeat(np.arange(m, dtype=np.int64), 4)
    slot = np.tile(np.arange(4, dtype=np.int64), m)
    fo = np.argsort(fkey, kind="stable")
    ks = fkey[fo]
    same = ks[1:] == ks[:-1]
    neighbors = np.full((m, 4), -1, dtype=np.int64)
    a = fo[:-1][same]
    b = fo[1:][same]
    neighbors[owner[a], slot[a]] = owner[b]
    neighbors[owner[b], slot[b]] = owner[a]

    # unique edges via packed sorted pairs
    pair_local = np.array(
        [[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]], dtype=np.int64
    )
    e = t[:, pair_local].reshape(-1, 2)
    elo = np.minimum(e[:, 0], e[:, 1])
    ehi = np.maximum(e[:, 0], e[:, 1])
    ekey = np.unique(elo * n + ehi)
    edges = np.stack([ekey // n, ekey % n], axis=1)

    # rings (CSR over both directions of each edge)
    keys = np.concatenate([edges[:, 0], edges[:, 1]])
    vals = np.concatenate([edges[:, 1], edges[:, 0]])
    ring_ptr, ring_idx = _csr_from_pairs(keys, vals, n)

    # site -> incident tets
    s2t_ptr, s2t_idx = _csr_from_pairs(t.ravel(), np.repeat(np.arange(m), 4), n)

    return Tetrahedralization(
        tets=t,
        neighbors=neighbors,
        edges=edges,
        n_sites=n,
        _ring_ptr=ring_ptr,
        _ring_idx=ring_idx,
        _s2t_ptr=s2t_ptr,
        _s2t_idx=s2t_idx,
    )


def _orient_batch(pts, tets):
    a = pts[tets[:, 0]]
    p = pts[tets[:, 1]] - a
    q = pts[tets[:, 2]] - a
    r = pts[tets[:, 3]] - a
    return np.einsum("ij,ij->i", p, np.cross(q, r))


def signed_triple(pts, tets):
    """p . (q x r) for every tet; positive for canonical orientation."""
    return _orient_batch(pts, tets)


def tet_volumes(pts, tets) -> np.ndarray:
    """Volumes |p . (q x r)| / 6 for an (M, 4) index array."""
    return np.abs(_orient_batch(pts, tets)) / 6.0


def tet_volume(a, b, c, d) -> float:
    """Volume of a single tetrahedron given its four corners."""
    p = np.asarray(b, float) - a
    q = np.asarray(c, float) - a
    r = np.asarray(d, float) - a
    return abs(float(np.dot(p, np.cross(q, r)))) / 6.0


def circumcenters(pts, tets, eps: float = DEGENERATE_TET_EPS):
    """Circumcenters for an (M, 4) index array.

    Returns (centers, ok) where ok is False for near-degenerate tets whose
    triple product magnitude falls below `eps`; their center row is the
    first corner (a finite placeholder the caller must mask out).
    """
    a = pts[tets[:, 0]]
    p = pts[tets[:, 1]] - a
    q = pts[tets[:, 2]] - a
    r = pts[tets[:, 3]] - a
    qr = np.cross(q, r)
    rp = np.cross(r, p)
    pq = np.cross(p, q)
    alpha = np.einsum("ij,ij->i", p, p)
    beta = np.einsum("ij,ij->i", q, q)
    gamma = np.einsum("ij,ij->i", r, r)
    denom = 2.0 * np.einsum("ij,ij->i", p, qr)
    ok = np.abs(denom) >= 2.0 * eps
    safe = np.where(ok, denom, 1.0)
    centers = a + (alpha[:, None] * qr + beta[:, None] * rp + gamma[:, None] * pq) / safe[:, None]
    centers = np.where(ok[:, None], centers, a)
    return centers, ok


def circumcenter(a, b, c, d, eps: float = DEGENERATE_TET_EPS) -> np.ndarray:
    """Circumcenter of a single tetrahedron.

    Raises NearDegenerate when the triple product magnitude is below `eps`;
    callers must skip or regularize such tets.
    """
    pts = np.asarray([a, b, c, d], dtype=np.float64)
    centers, ok = circumcenters(pts, np.array([[0, 1, 2, 3]]), eps)
    if not ok[0]:
        raise NearDegenerate("tetrahedron is too flat for a stable circumcenter")
    return centers[0]
