"""Numba kernels for incremental 3D Delaunay triangulation.

Bowyer-Watson insertion with a single symbolic vertex "at infinity": every
hull facet is glued to an infinite tetrahedron, so hull growth needs no
special cases in the cavity/fill logic.  Predicates are float64 determinants
with a small degeneracy band; ties inside the band are resolved by a
deterministic index hash, which keeps construction total on exactly
degenerate inputs (at the price of flat tets that downstream code flags).

Coordinates are assumed to be roughly unit scale (the optimization domain is
the cube [-1, 1]^3), so the bands are absolute.
"""

import numpy as np
from numba import njit
from numba.typed import Dict
from numba.types import int64

INSPHERE_BAND = 1e-10
ORIENT_BAND = 1e-13
CIRCLE_BAND = 1e-12

STATUS_OK = 0
STATUS_CAPACITY = 1
STATUS_LOST = 2


@njit(cache=True, inline="always")
def _orient3d(ax, ay, az, bx, by, bz, cx, cy, cz, dx, dy, dz):
    adx = ax - dx
    ady = ay - dy
    adz = az - dz
    bdx = bx - dx
    bdy = by - dy
    bdz = bz - dz
    cdx = cx - dx
    cdy = cy - dy
    cdz = cz - dz
    return (
        adx * (bdy * cdz - bdz * cdy)
        + ady * (bdz * cdx - bdx * cdz)
        + adz * (bdx * cdy - bdy * cdx)
    )


@njit(cache=True, inline="always")
def _orient_pts(P, a, b, c, d):
    return _orient3d(
        P[a, 0], P[a, 1], P[a, 2],
        P[b, 0], P[b, 1], P[b, 2],
        P[c, 0], P[c, 1], P[c, 2],
        P[d, 0], P[d, 1], P[d, 2],
    )


@njit(cache=True, inline="always")
def _insphere(P, a, b, c, d, e):
    """Positive when e is inside the circumsphere of the positively
    oriented tet (a, b, c, d)."""
    aex = P[a, 0] - P[e, 0]
    aey = P[a, 1] - P[e, 1]
    aez = P[a, 2] - P[e, 2]
    bex = P[b, 0] - P[e, 0]
    bey = P[b, 1] - P[e, 1]
    bez = P[b, 2] - P[e, 2]
    cex = P[c, 0] - P[e, 0]
    cey = P[c, 1] - P[e, 1]
    cez = P[c, 2] - P[e, 2]
    dex = P[d, 0] - P[e, 0]
    dey = P[d, 1] - P[e, 1]
    dez = P[d, 2] - P[e, 2]

    ab = aex * bey - bex * aey
    bc = bex * cey - cex * bey
    cd = cex * dey - dex * cey
    da = dex * aey - aex * dey
    ac = aex * cey - cex * aey
    bd = bex * dey - dex * bey

    abc = aez * bc - bez * ac + cez * ab
    bcd = bez * cd - cez * bd + dez * bc
    cda = cez * da + dez * ac + aez * cd
    dab = dez * ab + aez * bd + bez * da

    alift = aex * aex + aey * aey + aez * aez
    blift = bex * bex + bey * bey + bez * bez
    clift = cex * cex + cey * cey + cez * cez
    dlift = dex * dex + dey * dey + dez * dez

    return dlift * abc - clift * dab + blift * cda - alift * bcd


@njit(cache=True, inline="always")
def _tie_bit(a, b, c, d, e):
    x = np.int64(a) * np.int64(6364136223846793005) + np.int64(b)
    x ^= x >> 27
    x = x * np.int64(1442695040888963407) + np.int64(c)
    x ^= x >> 31
    x = x * np.int64(2862933555777941757) + np.int64(d)
    x ^= x >> 29
    x = x + np.int64(e) * np.int64(3202034522624059733)
    x ^= x >> 33
    return (x & np.int64(1)) == np.int64(1)


@njit(cache=True)
def _circumcircle_conflict(P, a, b, c, e):
    """For e nearly coplanar with hull face (a,b,c): inside-circumcircle test."""
    ux = P[b, 0] - P[a, 0]
    uy = P[b, 1] - P[a, 1]
    uz = P[b, 2] - P[a, 2]
    vx = P[c, 0] - P[a, 0]
    vy = P[c, 1] - P[a, 1]
    vz = P[c, 2] - P[a, 2]
    wx = uy * vz - uz * vy
    wy = uz * vx - ux * vz
    wz = ux * vy - uy * vx
    w2 = wx * wx + wy * wy + wz * wz
    if w2 < 1e-300:
        return 0.0
    u2 = ux * ux + uy * uy + uz * uz
    v2 = vx * vx + vy * vy + vz * vz
    tx = u2 * vx - v2 * ux
    ty = u2 * vy - v2 * uy
    tz = u2 * vz - v2 * uz
    ccx = P[a, 0] + (ty * wz - tz * wy) / (2.0 * w2)
    ccy = P[a, 1] + (tz * wx - tx * wz) / (2.0 * w2)
    ccz = P[a, 2] + (tx * wy - ty * wx) / (2.0 * w2)
    r2 = (P[a, 0] - ccx) ** 2 + (P[a, 1] - ccy) ** 2 + (P[a, 2] - ccz) ** 2
    d2 = (P[e, 0] - ccx) ** 2 + (P[e, 1] - ccy) ** 2 + (P[e, 2] - ccz) ** 2
    return r2 - d2


@njit(cache=True)
def _conflict(P, tets, t, p, inf_id):
    """Does inserting point p destroy tet t?"""
    v0 = tets[t, 0]
    v1 = tets[t, 1]
    v2 = tets[t, 2]
    v3 = tets[t, 3]
    if v3 == inf_id:
        # Infinite tet: conflict when p sees the hull face (v0, v1, v2),
        # stored so the face normal points away from the hull interior.
        o = _orient_pts(P, v0, v1, v2, p)
        if o > ORIENT_BAND:
            return True
        if o < -ORIENT_BAND:
            return False
        cc = _circumcircle_conflict(P, v0, v1, v2, p)
        if cc > CIRCLE_BAND:
            return True
        if cc < -CIRCLE_BAND:
            return False
        return _tie_bit(v0, v1, v2, inf_id, p)
    d = _insphere(P, v0, v1, v2, v3, p)
    if d > INSPHERE_BAND:
        return True
    if d < -INSPHERE_BAND:
        return False
    return _tie_bit(v0, v1, v2, v3, p)


@njit(cache=True)
def _build(P, n_real, cap):
    """Incremental construction.  P has n_real rows; index n_real is the
    symbolic infinite vertex.  Returns (status, tets, neigh, alive, n_slots,
    anchor)."""
    inf_id = n_real
    tets = np.empty((cap, 4), dtype=np.int64)
    neigh = np.full((cap, 4), -1, dtype=np.int64)
    alive = np.zeros(cap, dtype=np.uint8)
    free = np.empty(cap, dtype=np.int64)
    n_free = 0
    n_slots = 0

    stamp = np.zeros(cap, dtype=np.int64)
    in_cav = np.zeros(cap, dtype=np.uint8)
    blocked = np.zeros(cap, dtype=np.uint8)
    epoch = 0

    bfs = np.empty(cap, dtype=np.int64)
    cav = np.empty(cap, dtype=np.int64)
    bnd_tet = np.empty(cap, dtype=np.int64)
    bnd_face = np.empty(cap, dtype=np.int64)

    anchor = np.zeros(3, dtype=np.float64)

    # ---- bootstrap: first four affinely independent points -----------------
    i0 = 0
    i1 = -1
    for i in range(1, n_real):
        dx = P[i, 0] - P[i0, 0]
        dy = P[i, 1] - P[i0, 1]
        dz = P[i, 2] - P[i0, 2]
        if dx * dx + dy * dy + dz * dz > 1e-24:
            i1 = i
            break
    if i1 < 0:
        return STATUS_LOST, tets, neigh, alive, n_slots, anchor
    i2 = -1
    for i in range(i1 + 1, n_real):
        ux = P[i1, 0] - P[i0, 0]
        uy = P[i1, 1] - P[i0, 1]
        uz = P[i1, 2] - P[i0, 2]
        vx = P[i, 0] - P[i0, 0]
        vy = P[i, 1] - P[i0, 1]
        vz = P[i, 2] - P[i0, 2]
        cx = uy * vz - uz * vy
        cy = uz * vx - ux * vz
        cz = ux * vy - uy * vx
        if cx * cx + cy * cy + cz * cz > 1e-24:
            i2 = i
            break
    if i2 < 0:
        return STATUS_LOST, tets, neigh, alive, n_slots, anchor
    i3 = -1
    for i in range(i2 + 1, n_real):
        if abs(_orient_pts(P, i0, i1, i2, i)) > 1e-12:
            i3 = i
            break
    if i3 < 0:
        return STATUS_LOST, tets, neigh, alive, n_slots, anchor

    if _orient_pts(P, i0, i1, i2, i3) < 0.0:
        i0, i1 = i1, i0
    for k in range(3):
        anchor[k] = (P[i0, k] + P[i1, k] + P[i2, k] + P[i3, k]) / 4.0
    ax, ay, az = anchor[0], anchor[1], anchor[2]

    # root tet + 4 infinite tets glued on its faces
    tets[0, 0], tets[0, 1], tets[0, 2], tets[0, 3] = i0, i1, i2, i3
    # face opposite slot k of the root, oriented outward
    faces = ((i1, i3, i2), (i0, i2, i3), (i0, i3, i1), (i0, i1, i2))
    for k in range(4):
        f = faces[k]
        t = 1 + k
        a, b, c = f
        if _orient3d(
            P[a, 0], P[a, 1], P[a, 2],
            P[b, 0], P[b, 1], P[b, 2],
            P[c, 0], P[c, 1], P[c, 2],
            ax, ay, az,
        ) > 0.0:
            a, b = b, a
        tets[t, 0], tets[t, 1], tets[t, 2], tets[t, 3] = a, b, c, inf_id
        neigh[t, 3] = 0
        neigh[0, k] = t
        alive[t] = 1
    alive[0] = 1
    n_slots = 5
    # wire the infinite tets to each other: faces (u, v, inf)
    for t in range(1, 5):
        for s in range(3):
            # face of tet t opposite base vertex s contains inf + other two
            u = tets[t, (s + 1) % 3]
            v = tets[t, (s + 2) % 3]
            for t2 in range(1, 5):
                if t2 == t:
                    continue
                hit = 0
                for s2 in range(3):
                    if tets[t2, s2] == u or tets[t2, s2] == v:
                        hit += 1
                if hit == 2:
                    neigh[t, s] = t2
                    break

    last_finite = 0
    used0, used1, used2, used3 = i0, i1, i2, i3

    for p in range(n_real):
        if p == used0 or p == used1 or p == used2 or p == used3:
            continue

        # ---- locate by walking over finite tets -----------------------------
        seed = -1
        t = last_finite
        if alive[t] == 0 or tets[t, 3] == inf_id:
            for s in range(n_slots):
                if alive[s] == 1 and tets[s, 3] != inf_id:
                    t = s
                    break
        steps = 0
        max_steps = 4 * n_slots + 64
        while True:
            steps += 1
            if steps > max_steps:
                t = -1
                break
            moved = False
            for k in range(4):
                f0 = tets[t, (k + 1) & 3]
                f1 = tets[t, (k + 2) & 3]
                f2 = tets[t, (k + 3) & 3]
                op = _orient_pts(P, f0, f1, f2, p)
                ov = _orient_pts(P, f0, f1, f2, tets[t, k])
                if op * ov < 0.0 and abs(op) > ORIENT_BAND:
                    nb = neigh[t, k]
                    if tets[nb, 3] == inf_id:
                        seed = nb
                        moved = False
                        break
                    t = nb
                    moved = True
                    break
            if seed >= 0 or not moved:
                break
        if seed < 0:
            if t >= 0:
                seed = t
            else:
                # exhaustive fallback: first finite tet containing p, else
                # first visible infinite tet
                for s in range(n_slots):
                    if alive[s] == 0:
                        continue
                    if tets[s, 3] == inf_id:
                        continue
                    ok = True
                    for k in range(4):
                        f0 = tets[s, (k + 1) & 3]
                        f1 = tets[s, (k + 2) & 3]
                        f2 = tets[s, (k + 3) & 3]
                        op = _orient_pts(P, f0, f1, f2, p)
                        ov = _orient_pts(P, f0, f1, f2, tets[s, k])
                        if op * ov < -ORIENT_BAND:
                            ok = False
                            break
                    if ok:
                        seed = s
                        break
                if seed < 0:
                    for s in range(n_slots):
                        if alive[s] == 0 or tets[s, 3] != inf_id:
                            continue
                        if _orient_pts(P, tets[s, 0], tets[s, 1], tets[s, 2], p) > -ORIENT_BAND:
                            seed = s
                            break
                if seed < 0:
                    return STATUS_LOST, tets, neigh, alive, n_slots, anchor

        # ---- conflict cavity (BFS, seed forced) ------------------------------
        epoch += 1
        n_cav = 0
        n_bfs = 0
        bfs[n_bfs] = seed
        n_bfs += 1
        stamp[seed] = epoch
        in_cav[seed] = 1
        blocked[seed] = 0
        cav[n_cav] = seed
        n_cav += 1
        while n_bfs > 0:
            n_bfs -= 1
            t = bfs[n_bfs]
            for k in range(4):
                nb = neigh[t, k]
                if nb < 0 or stamp[nb] == epoch:
                    continue
                stamp[nb] = epoch
                blocked[nb] = 0
                if _conflict(P, tets, nb, p, inf_id):
                    in_cav[nb] = 1
                    cav[n_cav] = nb
                    n_cav += 1
                    bfs[n_bfs] = nb
                    n_bfs += 1
                else:
                    in_cav[nb] = 0

        # ---- repair: keep the cavity star-shaped around p --------------------
        while True:
            # connected component of the seed
            for idx in range(n_cav):
                t = cav[idx]
                if stamp[t] == epoch and in_cav[t] == 1 and blocked[t] == 0:
                    in_cav[t] = 2  # pending
            in_cav[seed] = 1
            n_bfs = 0
            bfs[n_bfs] = seed
            n_bfs += 1
            while n_bfs > 0:
                n_bfs -= 1
                t = bfs[n_bfs]
                for k in range(4):
                    nb = neigh[t, k]
                    if nb < 0 or stamp[nb] != epoch:
                        continue
                    if in_cav[nb] == 2:
                        in_cav[nb] = 1
                        bfs[n_bfs] = nb
                        n_bfs += 1
            for idx in range(n_cav):
                t = cav[idx]
                if in_cav[t] == 2:
                    in_cav[t] = 0
                    blocked[t] = 1

            # boundary scan + validity
            evicted = False
            n_bnd = 0
            for idx in range(n_cav):
                t = cav[idx]
                if in_cav[t] != 1 or blocked[t] == 1:
                    continue
                for k in range(4):
                    nb = neigh[t, k]
                    inside = False
                    if nb >= 0 and stamp[nb] == epoch and in_cav[nb] == 1 and blocked[nb] == 0:
                        inside = True
                    if inside:
                        continue
                    # face (t, k) is a cavity boundary face
                    f0 = tets[t, (k + 1) & 3]
                    f1 = tets[t, (k + 2) & 3]
                    f2 = tets[t, (k + 3) & 3]
                    valid = True
                    if f0 != inf_id and f1 != inf_id and f2 != inf_id:
                        if tets[t, 3] == inf_id and k == 3:
                            valid = _orient_pts(P, tets[t, 0], tets[t, 1], tets[t, 2], p) > 0.0
                        else:
                            op = _orient_pts(P, f0, f1, f2, p)
                            ov = _orient_pts(P, f0, f1, f2, tets[t, k])
                            valid = op * ov > 0.0
                    if not valid and t != seed:
                        in_cav[t] = 0
                        blocked[t] = 1
                        evicted = True
                        break
                    bnd_tet[n_bnd] = t
                    bnd_face[n_bnd] = k
                    n_bnd += 1
                if evicted:
                    break
            if not evicted:
                break

        # ---- fill ------------------------------------------------------------
        fmap = Dict.empty(key_type=int64, value_type=int64)
        stride = np.int64(n_real + 2)
        first_new = -1
        for ib in range(n_bnd):
            t = bnd_tet[ib]
            k = bnd_face[ib]
            nb = neigh[t, k]
            f0 = tets[t, (k + 1) & 3]
            f1 = tets[t, (k + 2) & 3]
            f2 = tets[t, (k + 3) & 3]

            if n_free > 0:
                n_free -= 1
                nt = free[n_free]
            else:
                if n_slots >= cap:
                    return STATUS_CAPACITY, tets, neigh, alive, n_slots, anchor
                nt = n_slots
                n_slots += 1

            if f0 == inf_id or f1 == inf_id or f2 == inf_id:
                # build (x, y, p, inf) with outward base
                if f0 == inf_id:
                    u, v = f1, f2
                elif f1 == inf_id:
                    u, v = f2, f0
                else:
                    u, v = f0, f1
                a, b, c, d = u, v, p, inf_id
                if _orient3d(
                    P[a, 0], P[a, 1], P[a, 2],
                    P[b, 0], P[b, 1], P[b, 2],
                    P[c, 0], P[c, 1], P[c, 2],
                    ax, ay, az,
                ) > 0.0:
                    a, b = b, a
            else:
                a, b, c, d = f0, f1, f2, p
                if _orient_pts(P, a, b, c, d) < 0.0:
                    a, b = b, a
            tets[nt, 0], tets[nt, 1], tets[nt, 2], tets[nt, 3] = a, b, c, d
            alive[nt] = 1
            stamp[nt] = 0
            in_cav[nt] = 0
            blocked[nt] = 0

            # external neighbor across the base face
            slot_p = 0
            for s in range(4):
                if tets[nt, s] == p:
                    slot_p = s
                    break
            neigh[nt, slot_p] = nb
            for s in range(4):
                if neigh[nb, s] == t:
                    neigh[nb, s] = nt
                    break

            # internal faces: contain p, keyed by the other two vertices
            for s in range(4):
                if s == slot_p:
                    continue
                g0 = tets[nt, (s + 1) & 3]
                g1 = tets[nt, (s + 2) & 3]
                g2 = tets[nt, (s + 3) & 3]
                # drop p from the face, key on remaining pair + stride trick
                if g0 == p:
                    u, v = g1, g2
                elif g1 == p:
                    u, v = g0, g2
                else:
                    u, v = g0, g1
                if u > v:
                    u, v = v, u
                key = np.int64(u) * stride + np.int64(v)
                if key in fmap:
                    other = fmap[key]
                    ot = other // 4
                    os_ = other % 4
                    neigh[nt, s] = ot
                    neigh[ot, os_] = nt
                else:
                    fmap[key] = nt * 4 + s

            if d != inf_id:
                first_new = nt

        # free cavity slots
        for idx in range(n_cav):
            t = cav[idx]
            if in_cav[t] == 1 and blocked[t] == 0:
                alive[t] = 0
                free[n_free] = t
                n_free += 1
                in_cav[t] = 0
        if first_new >= 0:
            last_finite = first_new

    return STATUS_OK, tets, neigh, alive, n_slots, anchor
