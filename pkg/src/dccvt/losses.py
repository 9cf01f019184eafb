"""Forward evaluation of the four loss terms over a state snapshot.

`run_pipeline` is the single source of truth: fed plain arrays it is a cheap
forward pass, fed autodiff Vars it records the graph for the backward pass.
Every discrete decision (crossing sets, nearest-neighbor pairs, branch
choices, degeneracy flags, the Heaviside band width) is captured in a
`FrozenChoices` snapshot; re-running the pipeline with a snapshot replays
those decisions so the evaluation is a smooth function of the continuous
inputs around the snapshot point.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial import cKDTree

from . import autodiff as ad
from . import fields as fd
from . import projection as pj
from .autodiff import value
from .errors import EmptyReconstruction
from .geometry import Tetrahedralization

CHAMFER_MODES = ("symmetric", "one-sided", "off")


@dataclass(frozen=True)
class LossWeights:
    lam_cvt: float = 0.1
    lam_eik: float = 0.02
    lam_h: float = 0.1


@dataclass(frozen=True)
class LossTerms:
    cd: float
    cvt: float
    eik: float
    mbmc: float
    total: float
    weights: LossWeights

    def as_row(self):
        return (self.cd, self.cvt, self.eik, self.mbmc, self.total)


@dataclass(frozen=True)
class ReconstructedSamples:
    """Projected dual vertices and edge midpoints with provenance."""

    points: np.ndarray
    vertex_tets: np.ndarray
    midpoint_edges: np.ndarray

    @property
    def n_vertices(self):
        return len(self.vertex_tets)


@dataclass
class FrozenChoices:
    """Discrete structure captured during a base evaluation."""

    tri: Tetrahedralization
    valid: np.ndarray
    gram_ok: np.ndarray
    crossing_tets: np.ndarray
    crossing_edges: np.ndarray
    plane: pj.PlaneFrozen | None
    hybrid_use_bary: np.ndarray | None
    eps_h: float | None
    heaviside_branch: np.ndarray | None
    nn_target_to_sample: np.ndarray | None
    nn_sample_to_target: np.ndarray | None


@dataclass
class PipelineResult:
    loss: object  # Var or float
    terms: LossTerms
    samples: ReconstructedSamples
    frozen: FrozenChoices
    cache: fd.FieldCache
    centroids: object


def nearest_indices(queries: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Index of the exact nearest row of `points` for every query row."""
    if len(points) == 0:
        raise ValueError("empty point set")
    return cKDTree(points).query(queries)[1]


def run_pipeline(
    pos,
    sdf,
    tri: Tetrahedralization,
    targets: np.ndarray,
    weights: LossWeights = LossWeights(),
    mode: str = "robust",
    chamfer_mode: str = "symmetric",
    use_midpoints: bool = True,
    frozen: FrozenChoices | None = None,
    eps: float = pj.NEWTON_EPS,
) -> PipelineResult:
    """Classify, project, and evaluate the total loss in one pass."""
    if mode not in pj.MODES:
        raise ValueError(f"unknown projection mode {mode!r}")
    if chamfer_mode not in CHAMFER_MODES:
        raise ValueError(f"unknown chamfer mode {chamfer_mode!r}")

    n = tri.n_sites
    m = tri.n_tets
    masks = None if frozen is None else (frozen.valid, frozen.gram_ok)
    cache = fd.build_field_cache(pos, sdf, tri, masks=masks)
    sdf_v = value(sdf)
    pos_v = value(pos)

    if frozen is None:
        cross_mask = fd.crossing_tet_mask(sdf_v, tri.tets)
        active = np.flatnonzero(cross_mask & cache.valid)
        edges = tri.edges[fd.crossing_edge_mask(sdf_v, tri.edges)]
    else:
        active = frozen.crossing_tets
        edges = frozen.crossing_edges

    # ---- project dual vertices of crossing tets ----------------------------
    k = len(active)
    if k:
        tets_a = tri.tets[active]
        P = ad.take(pos, tets_a)           # (K,4,3)
        F = ad.take(sdf, tets_a)           # (K,4)
        G = ad.take(cache.site_grad, tets_a)  # (K,4,3)
        s_proj = pj.project_site(P, F, G, eps)
        mean_g = ad.mean(G, axis=1)
        plane_frozen = None if frozen is None else frozen.plane
        centroids_p, normals, _, plane_out = pj.fit_planes(s_proj, mean_g, plane_frozen)
        v_raw = ad.take(cache.centers, active)
        use_bary = None
        if mode == "robust":
            v_proj = pj.project_vertex_robust(v_raw, centroids_p, normals)
        elif mode == "barycentric":
            v_proj = pj.project_vertex_barycentric(v_raw, P, F, G, eps)
        else:
            replay_mask = None if frozen is None else frozen.hybrid_use_bary
            v_proj, use_bary = pj.project_vertex_hybrid(
                v_raw, P, F, G, centroids_p, normals, eps, replay_mask
            )
    else:
        v_proj = np.zeros((0, 3))
        plane_out = None
        use_bary = None

    # ---- project crossing-edge midpoints ------------------------------------
    if len(edges):
        pi = ad.take(pos, edges[:, 0])
        pj_ = ad.take(pos, edges[:, 1])
        fi = ad.take(sdf, edges[:, 0])
        fj = ad.take(sdf, edges[:, 1])
        gi = ad.take(cache.site_grad, edges[:, 0])
        gj = ad.take(cache.site_grad, edges[:, 1])
        b_proj = pj.project_midpoint(pi, pj_, fi, fj, gi, gj, eps)
    else:
        b_proj = np.zeros((0, 3))

    samples = ad.concat([v_proj, b_proj], axis=0) if use_midpoints else v_proj
    samples_v = np.asarray(value(samples))

    # ---- Chamfer -------------------------------------------------------------
    if chamfer_mode != "off":
        if k == 0:
            raise EmptyReconstruction("no tetrahedron crosses the zero level")
        if frozen is None:
            nn_ts = nearest_indices(targets, samples_v)
            nn_st = nearest_indices(samples_v, targets)
        else:
            nn_ts = frozen.nn_target_to_sample
            nn_st = frozen.nn_sample_to_target
        d_ts = targets - ad.take(samples, nn_ts)
        to_samples = ad.mean(ad.dot_last(d_ts, d_ts))
        if chamfer_mode == "symmetric":
            d_st = samples - targets[nn_st]
            cd = 0.5 * to_samples + 0.5 * ad.mean(ad.dot_last(d_st, d_st))
        else:
            cd = to_samples
    else:
        nn_ts = None
        nn_st = None
        cd = 0.0

    # ---- CVT (approximate centroids from projected/raw dual vertices) --------
    if k:
        dual = ad.where(
            _mask_from(active, m)[:, None],
            ad.segment_sum(v_proj, active, m),
            cache.centers,
        )
    else:
        dual = cache.centers
    w_valid = cache.valid.astype(np.float64)
    rep = np.repeat(np.arange(m), 4)
    ids = tri.tets.ravel()
    dual4 = ad.take(dual, rep) * w_valid[rep][:, None]
    numer = ad.segment_sum(dual4, ids, n)
    count = np.bincount(ids, weights=w_valid[rep], minlength=n)[:, None]
    has = count[:, 0] > 0
    centroids = ad.where(has[:, None], numer / np.maximum(count, 1.0), pos)
    cvt = ad.mean(ad.norm_last(pos - centroids))

    # ---- Eikonal --------------------------------------------------------------
    g4 = ad.take(cache.site_grad, ids)  # (4M,3)
    sq = ad.dot_last(g4, g4)
    v4 = ad.take(ad.reshape(cache.volumes, (m, 1)), rep)
    eik = ad.sum_(v4[:, 0] * (sq - 1.0) ** 2) / (4.0 * m)

    # ---- motion by mean curvature ---------------------------------------------
    if frozen is None:
        eps_h = fd.compute_eps_h(pos_v, tri)
        branch = fd.heaviside_branch(sdf_v, eps_h)
    else:
        eps_h = frozen.eps_h
        branch = frozen.heaviside_branch
    h_sites = fd.heaviside_on_branch(sdf, eps_h, branch)
    h_tet = ad.take(h_sites, tri.tets)  # (M,4)
    dh = h_tet - ad.mean(h_tet, axis=1, keepdims=True)
    grad_h = ad.einsum2("kai,ki->ka", cache.w_matrix, dh)
    mbmc = ad.sum_(cache.volumes * ad.norm_last(grad_h)) / m

    total = cd + weights.lam_cvt * cvt + weights.lam_eik * eik + weights.lam_h * mbmc

    terms = LossTerms(
        cd=float(value(cd)),
        cvt=float(value(cvt)),
        eik=float(value(eik)),
        mbmc=float(value(mbmc)),
        total=float(value(total)),
        weights=weights,
    )
    out_frozen = frozen if frozen is not None else FrozenChoices(
        tri=tri,
        valid=cache.valid,
        gram_ok=cache.gram_ok,
        crossing_tets=active,
        crossing_edges=edges,
        plane=plane_out,
        hybrid_use_bary=use_bary,
        eps_h=eps_h,
        heaviside_branch=branch,
        nn_target_to_sample=nn_ts,
        nn_sample_to_target=nn_st,
    )
    return PipelineResult(
        loss=total,
        terms=terms,
        samples=ReconstructedSamples(
            points=samples_v, vertex_tets=active, midpoint_edges=edges
        ),
        frozen=out_frozen,
        cache=cache,
        centroids=centroids,
    )


def _mask_from(idx, m):
    mask = np.zeros(m, dtype=bool)
    mask[idx] = True
    return mask


def total_loss(
    state: fd.SiteState,
    tri: Tetrahedralization,
    targets: np.ndarray,
    weights: LossWeights = LossWeights(),
    **kw,
) -> tuple[LossTerms, ReconstructedSamples, FrozenChoices]:
    """Evaluate the full pipeline on plain arrays; returns the breakdown."""
    res = run_pipeline(state.positions, state.sdf, tri, targets, weights, **kw)
    return res.terms, res.samples, res.frozen


# ---------------------------------------------------------------------------
# standalone operations (mirrors of the pipeline pieces, for direct use)
# ---------------------------------------------------------------------------

def chamfer_loss(samples: np.ndarray, targets: np.ndarray, mode: str = "symmetric") -> float:
    """Mean squared nearest-neighbor distance between two point sets.

    symmetric: 0.5 * mean over targets + 0.5 * mean over samples;
    one-sided: mean over targets of the squared distance to samples.
    """
    samples = np.atleast_2d(samples)
    targets = np.atleast_2d(targets)
    if len(samples) == 0:
        raise EmptyReconstruction("no reconstructed samples")
    d_ts = targets - samples[nearest_indices(targets, samples)]
    to_samples = float(np.mean(np.einsum("ij,ij->i", d_ts, d_ts)))
    if mode == "one-sided":
        return to_samples
    d_st = samples - targets[nearest_indices(samples, targets)]
    return 0.5 * to_samples + 0.5 * float(np.mean(np.einsum("ij,ij->i", d_st, d_st)))


def approx_cell_centroid(i: int, tri: Tetrahedralization, dual_vertices, positions, valid=None):
    """Mean of the (possibly projected) dual vertices of site i's tets."""
    inc = tri.incident_tets(i)
    if valid is not None:
        inc = inc[valid[inc]]
    if len(inc) == 0:
        return np.asarray(positions[i], dtype=np.float64)
    return np.mean(np.asarray(dual_vertices)[inc], axis=0)


def cvt_loss(positions, centroids) -> float:
    """Mean distance of each site to its (approximate) cell centroid."""
    d = np.asarray(positions, float) - np.asarray(centroids, float)
    return float(np.mean(np.linalg.norm(d, axis=1)))


def eikonal_loss(cache: fd.FieldCache) -> float:
    """Volume-weighted unit-norm penalty over per-corner site gradients."""
    m = cache.n_tets
    g4 = value(cache.site_grad)[cache.tets.ravel()]
    sq = np.einsum("ij,ij->i", g4, g4)
    v4 = np.repeat(value(cache.volumes), 4)
    return float(np.sum(v4 * (sq - 1.0) ** 2) / (4.0 * m))


def mean_curvature_grad(w_matrix, h_values):
    """W @ (H - mean(H)) for one tet: the smeared-interface gradient."""
    h = np.asarray(h_values, dtype=np.float64)
    return np.asarray(w_matrix) @ (h - h.mean())


def mbmc_loss(cache: fd.FieldCache, sdf, eps_h: float) -> float:
    """Volume-weighted norm of the smeared-Heaviside gradient, averaged."""
    m = cache.n_tets
    h = fd.heaviside(np.asarray(sdf, float), eps_h)
    h_tet = h[cache.tets]
    dh = h_tet - h_tet.mean(axis=1, keepdims=True)
    gh = np.einsum("kai,ki->ka", value(cache.w_matrix), dh)
    return float(np.sum(value(cache.volumes) * np.linalg.norm(gh, axis=1)) / m)
