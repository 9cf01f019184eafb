"""Projections of sites, dual vertices and edge midpoints onto the zero level.

Three vertex-projection modes:

* robust       fit a plane to the zero-level projections of the tet's four
               sites and drop the dual vertex orthogonally onto it
* barycentric  interpolate field value and gradient at the dual vertex from
               barycentric coordinates (extrapolates outside the tet) and
               take one Newton step
* hybrid       barycentric inside the tet, robust fallback outside

All functions accept plain arrays or autodiff Vars and operate on batches;
the K=1 wrappers serve scalar use.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import value
from .fields import crossing_edge_mask, crossing_tet_mask
from .geometry import Tetrahedralization

NEWTON_EPS = 1e-8
EIGENGAP_GUARD = 1e-8

MODES = ("robust", "barycentric", "hybrid")


@dataclass(frozen=True)
class ZeroCrossingSet:
    """Tets and Delaunay edges straddling the zero level (strict signs)."""

    crossing_tets: np.ndarray   # indices into tri.tets
    crossing_edges: np.ndarray  # (E0, 2) site index pairs

    @property
    def n_tets(self):
        return len(self.crossing_tets)

    @property
    def n_edges(self):
        return len(self.crossing_edges)


def zero_crossings(tri: Tetrahedralization, sdf) -> ZeroCrossingSet:
    tmask = crossing_tet_mask(sdf, tri.tets)
    emask = crossing_edge_mask(sdf, tri.edges)
    return ZeroCrossingSet(np.flatnonzero(tmask), tri.edges[emask])


def newton_project(point, phi, grad, eps: float = NEWTON_EPS):
    """One Newton step toward the zero level: p - grad/(|grad|+eps) * phi."""
    n = ad.norm_last(grad, keepdims=True)
    if np.ndim(value(phi)) == np.ndim(value(point)) - 1:
        phi = ad.reshape(phi, value(phi).shape + (1,)) if isinstance(phi, ad.Var) else np.expand_dims(phi, -1)
    return point - grad / (n + eps) * phi


def project_site(s, phi, grad, eps: float = NEWTON_EPS):
    """Project a site onto the zero level along its (regularized) gradient."""
    return newton_project(s, phi, grad, eps)


def project_midpoint(p_i, p_j, phi_i, phi_j, grad_i, grad_j, eps: float = NEWTON_EPS):
    """Project the midpoint of a crossing edge using averaged value/gradient."""
    b = (p_i + p_j) * 0.5
    phi = (phi_i + phi_j) * 0.5
    g = (grad_i + grad_j) * 0.5
    return newton_project(b, phi, g, eps)


# ---------------------------------------------------------------------------
# plane fitting
# ---------------------------------------------------------------------------

@dataclass
class PlaneFrozen:
    """Discrete choices pinned for replayed (finite-difference) evaluations."""

    cols: np.ndarray          # eigenvector extraction column per tet
    base_normals: np.ndarray  # canonical normals at the base evaluation
    degenerate: np.ndarray    # eigengap below guard: gradient frozen


def fit_planes(projected, mean_grads=None, frozen: PlaneFrozen | None = None):
    """Least-squares planes through batches of 4 projected sites.

    Returns (centroids, normals, eigvals, frozen_out).  The normal sign is
    canonicalized against `mean_grads` (or lexicographically when absent /
    orthogonal); a replay aligns signs with the recorded base normals
    instead, so the output is continuous around the base point.
    """
    k = value(projected).shape[0]
    centroids = ad.mean(projected, axis=1)  # (K,3)
    centered = projected - ad.reshape(centroids, (k, 1, 3))
    cov = ad.einsum2("kia,kib->kab", centered, centered) / 4.0

    if frozen is None:
        # probe on plain values to fix the extraction column and the
        # degeneracy flags, then record a single graph node
        _, _, gap, cols = ad.smallest_eigvec3(value(cov))
        degenerate = gap < EIGENGAP_GUARD
    else:
        degenerate = frozen.degenerate
        cols = frozen.cols
    n_raw, eigvals, _, cols_used = ad.smallest_eigvec3(
        cov, frozen_mask=degenerate, col_choice=cols
    )

    nv = value(n_raw)
    if frozen is not None:
        sign = np.where(np.einsum("kj,kj->k", nv, frozen.base_normals) < 0.0, -1.0, 1.0)
    elif mean_grads is not None:
        d = np.einsum("kj,kj->k", nv, value(mean_grads))
        sign = np.where(d < 0.0, -1.0, np.where(d > 0.0, 1.0, _lex_sign(nv)))
    else:
        sign = _lex_sign(nv)
    normals = n_raw * sign[:, None]

    frozen_out = PlaneFrozen(
        cols=np.asarray(cols_used),
        base_normals=np.asarray(value(normals)).copy(),
        degenerate=degenerate,
    )
    return centroids, normals, eigvals, frozen_out


def _lex_sign(n):
    """+1/-1 so the first component of nonzero magnitude is positive."""
    sign = np.ones(len(n))
    for k in range(len(n)):
        for c in n[k]:
            if c != 0.0:
                sign[k] = 1.0 if c > 0.0 else -1.0
                break
    return sign


def fit_plane(points):
    """Plane through 4 points: (centroid, unit normal, residual, degenerate).

    The residual is the mean squared distance of the points to the plane and
    equals the smallest eigenvalue of the centered covariance.  `degenerate`
    reports an eigengap below 1e-8, where the normal direction is not a
    differentiable function of the inputs.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(1, 4, 3)
    centroids, normals, eigvals, frozen = fit_planes(pts)
    return centroids[0], normals[0], float(eigvals[0, 2]), bool(frozen.degenerate[0])


def project_vertex_robust(v, centroid, normal):
    """Orthogonal projection of v onto the plane (centroid, unit normal)."""
    d = ad.dot_last(v - centroid, normal, keepdims=True)
    return v - d * normal


# ---------------------------------------------------------------------------
# barycentric / hybrid
# ---------------------------------------------------------------------------

def barycentric_coords(v, tet_points):
    """Barycentric coordinates of v in each tet (extrapolation allowed)."""
    k = value(tet_points).shape[0]
    a = tet_points[:, 0, :]
    E = ad.stack(
        [tet_points[:, 1, :] - a, tet_points[:, 2, :] - a, tet_points[:, 3, :] - a],
        axis=2,
    )  # (K,3,3) columns are edges
    rhs = v - a
    w123 = ad.einsum2("kab,kb->ka", ad.inv3(E), rhs)  # (K,3)
    w0 = 1.0 - ad.sum_(w123, axis=1, keepdims=True)
    return ad.concat([w0, w123], axis=1)  # (K,4)


def project_vertex_barycentric(v, tet_points, tet_phis, tet_grads, eps: float = NEWTON_EPS):
    """Newton step at v with barycentrically interpolated value and gradient."""
    w = barycentric_coords(v, tet_points)
    phi = ad.sum_(w * tet_phis, axis=1)
    grad = ad.einsum2("ki,kia->ka", w, tet_grads)
    return newton_project(v, phi, grad, eps)


def project_vertex_hybrid(
    v, tet_points, tet_phis, tet_grads, centroid, normal,
    eps: float = NEWTON_EPS, use_bary=None,
):
    """Barycentric projection inside the tet, robust fallback outside.

    `use_bary` replays a recorded branch; otherwise the branch is chosen by
    whether all barycentric coordinates lie in [0, 1].
    """
    w = barycentric_coords(v, tet_points)
    if use_bary is None:
        wv = value(w)
        use_bary = np.all((wv >= 0.0) & (wv <= 1.0), axis=1)
    phi = ad.sum_(w * tet_phis, axis=1)
    grad = ad.einsum2("ki,kia->ka", w, tet_grads)
    bary = newton_project(v, phi, grad, eps)
    robust = project_vertex_robust(v, centroid, normal)
    return ad.where(use_bary[:, None], bary, robust), use_bary
