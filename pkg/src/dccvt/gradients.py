"""Analytic gradients of the total loss and their finite-difference check.

The differentiation contract: all discrete structure (triangulation,
crossing classification, nearest-neighbor pairs, projection branches,
Heaviside pieces, degeneracy flags, the Heaviside band width) is held
constant within one evaluation.  `backward` runs the pipeline over autodiff
Vars and accumulates per-site gradients; `verify_fd` replays the pipeline
with the frozen snapshot at probed states and compares central differences
against the analytic result, rejecting probes that flip any frozen choice.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import fields as fd
from . import geometry
from . import losses as ls
from .errors import AllProbesFlipped, EmptyReconstruction
from .geometry import Tetrahedralization


@dataclass
class GradientBuffers:
    d_pos: np.ndarray
    d_sdf: np.ndarray
    terms: ls.LossTerms
    frozen: ls.FrozenChoices


def backward(
    state: fd.SiteState,
    tri: Tetrahedralization,
    targets: np.ndarray,
    weights: ls.LossWeights = ls.LossWeights(),
    frozen: ls.FrozenChoices | None = None,
    **kw,
) -> GradientBuffers:
    """Gradients of the total loss w.r.t. positions and SDF values."""
    pos = ad.Var(state.positions)
    sdf = ad.Var(state.sdf)
    res = ls.run_pipeline(pos, sdf, tri, targets, weights, frozen=frozen, **kw)
    n = state.n_sites
    if isinstance(res.loss, ad.Var):
        res.loss.backward()
        d_pos = pos.grad if pos.grad is not None else np.zeros((n, 3))
        d_sdf = sdf.grad if sdf.grad is not None else np.zeros(n)
    else:
        d_pos = np.zeros((n, 3))
        d_sdf = np.zeros(n)
    return GradientBuffers(
        d_pos=np.asarray(d_pos), d_sdf=np.asarray(d_sdf),
        terms=res.terms, frozen=res.frozen,
    )


@dataclass
class FdReport:
    max_rel_err: float
    n_accepted: int
    n_rejected: int
    worst_kind: str
    worst_index: int

    def ok(self, tol: float) -> bool:
        return self.n_accepted > 0 and self.max_rel_err < tol


def _choice_signature(pos, sdf, tri, targets, weights, check_tri, **kw):
    """Fresh discrete choices at a state, for flip detection."""
    sig = {}
    if check_tri:
        try:
            t2 = geometry.delaunay(pos)
            sig["tets"] = t2.tets
        except Exception:
            sig["tets"] = None
    try:
        res = ls.run_pipeline(pos, sdf, tri, targets, weights, **kw)
        f = res.frozen
        sig["valid"] = f.valid
        sig["gram"] = f.gram_ok
        sig["cross_t"] = f.crossing_tets
        sig["cross_e"] = f.crossing_edges
        sig["branch"] = f.heaviside_branch
        sig["hybrid"] = f.hybrid_use_bary
        sig["degen"] = None if f.plane is None else f.plane.degenerate
        sig["nn_ts"] = f.nn_target_to_sample
        sig["nn_st"] = f.nn_sample_to_target
        sig["orient"] = geometry.signed_triple(pos, tri.tets) > 0
    except EmptyReconstruction:
        sig["empty"] = True
    return sig


def _same_signature(a, b) -> bool:
    if a.keys() != b.keys():
        return False
    for k, va in a.items():
        vb = b[k]
        if va is None or vb is None:
            if va is not vb:
                return False
            continue
        if isinstance(va, bool):
            if va != vb:
                return False
            continue
        if not np.array_equal(va, vb):
            return False
    return True


def verify_fd(
    state: fd.SiteState,
    tri: Tetrahedralization,
    targets: np.ndarray,
    weights: ls.LossWeights = ls.LossWeights(),
    h: float = 1e-5,
    n_probes: int = 50,
    seed=0,
    check_tri: bool | None = None,
    rel_floor: float = 1e-6,
    **kw,
) -> FdReport:
    """Compare analytic gradients against central finite differences.

    Probes are random coordinates (position components and SDF entries);
    a probe is rejected when either perturbed state changes any frozen
    discrete choice relative to the base snapshot.  The relative error of a
    probe is |analytic - fd| / max(|analytic|, |fd|, rel_floor).
    """
    if not (1e-7 <= h <= 1e-4):
        raise ValueError("h must lie in [1e-7, 1e-4]")
    if check_tri is None:
        check_tri = state.n_sites <= 512

    base = backward(state, tri, targets, weights, **kw)
    frozen = base.frozen
    base_sig = _choice_signature(
        state.positions, state.sdf, tri, targets, weights, check_tri, **kw
    )

    rng = np.random.default_rng(seed)
    n = state.n_sites
    n_coords = 3 * n + n
    order = rng.permutation(n_coords)

    accepted = 0
    rejected = 0
    max_err = 0.0
    worst = ("none", -1)
    for coord in order:
        if accepted >= n_probes:
            break
        if coord < 3 * n:
            kind = "pos"
            i, ax = divmod(int(coord), 3)
            analytic = base.d_pos[i, ax]
        else:
            kind = "sdf"
            i = int(coord) - 3 * n
            analytic = base.d_sdf[i]

        vals = []
        flipped = False
        for s in (+1.0, -1.0):
            p = state.positions.copy()
            f = state.sdf.copy()
            if kind == "pos":
                p[i, ax] += s * h
            else:
                f[i] += s * h
            probe_tri_check = check_tri and kind == "pos"
            sig = _choice_signature(p, f, tri, targets, weights, probe_tri_check, **kw)
            ref = base_sig if probe_tri_check else {k: v for k, v in base_sig.items() if k != "tets"}
            if not _same_signature(sig, ref):
                flipped = True
                break
            res = ls.run_pipeline(p, f, tri, targets, weights, frozen=frozen, **kw)
            vals.append(res.terms.total)
        if flipped:
            rejected += 1
            continue
        fd_val = (vals[0] - vals[1]) / (2.0 * h)
        err = abs(analytic - fd_val) / max(abs(analytic), abs(fd_val), rel_floor)
        if err > max_err:
            max_err = err
            worst = (kind, i)
        accepted += 1

    if accepted == 0:
        raise AllProbesFlipped(
            f"all {rejected} probes changed a frozen choice; retry with smaller h"
        )
    return FdReport(
        max_rel_err=max_err,
        n_accepted=accepted,
        n_rejected=rejected,
        worst_kind=worst[0],
        worst_index=worst[1],
    )
