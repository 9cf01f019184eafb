"""Per-site signed-distance values, per-tet field reconstruction, oracles.

The cache builder below is written against :mod:`dccvt.autodiff` operations,
so it serves both plain numpy evaluation and the differentiated pass
depending on what the caller feeds it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import value
from .geometry import DEGENERATE_TET_EPS, Tetrahedralization

GRAM_GUARD = 1e-14
GRAD_EPS = 1e-8


@dataclass
class SiteState:
    """Optimization unknowns: N site positions and N per-site SDF values."""

    positions: np.ndarray
    sdf: np.ndarray
    generation: int = 0

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64)
        self.sdf = np.ascontiguousarray(self.sdf, dtype=np.float64)
        if len(self.positions) != len(self.sdf):
            raise ValueError("positions and sdf must have the same length")

    @property
    def n_sites(self) -> int:
        return len(self.sdf)

    def copy(self) -> "SiteState":
        return SiteState(self.positions.copy(), self.sdf.copy(), self.generation)


# ---------------------------------------------------------------------------
# crossing classification
# ---------------------------------------------------------------------------

def classify_crossing(phis) -> bool:
    """True when the four values strictly straddle zero (min < 0 < max)."""
    phis = np.asarray(phis, dtype=np.float64)
    return bool(phis.min() < 0.0 < phis.max())


def crossing_tet_mask(sdf, tets) -> np.ndarray:
    f = sdf[tets]
    return (f.min(axis=1) < 0.0) & (f.max(axis=1) > 0.0)


def crossing_edge_mask(sdf, edges) -> np.ndarray:
    return sdf[edges[:, 0]] * sdf[edges[:, 1]] < 0.0


# ---------------------------------------------------------------------------
# per-tet least-squares gradient and the field cache
# ---------------------------------------------------------------------------

@dataclass
class FieldCache:
    """Per-tet geometry and field reconstruction over one triangulation.

    Discrete masks are plain boolean arrays; numeric members mirror the type
    of the inputs (ndarray or autodiff Var).  `valid` excludes near-flat
    tets, `gram_ok` additionally excludes tets whose Gram matrix is close to
    singular (their gradient is pinned to zero).
    """

    tets: np.ndarray
    valid: np.ndarray
    gram_ok: np.ndarray
    centers: object
    volumes: object
    w_matrix: object
    tet_grad: object
    phi_bar: object
    s_bar: object
    site_grad: object
    site_vol: np.ndarray = field(repr=False, default=None)

    @property
    def n_tets(self) -> int:
        return len(self.tets)


def build_field_cache(pos, sdf, tri: Tetrahedralization, masks=None) -> FieldCache:
    """Circumcenters, volumes, per-tet gradients and per-site gradients.

    `masks`, when given, replays previously recorded (valid, gram_ok)
    choices instead of re-deriving them from current values.
    """
    tets = tri.tets
    m = len(tets)
    n = tri.n_sites
    P = ad.take(pos, tets)  # (M,4,3)
    F = ad.take(sdf, tets)  # (M,4)

    a = P[:, 0, :]
    p = P[:, 1, :] - a
    q = P[:, 2, :] - a
    r = P[:, 3, :] - a
    qr = ad.cross(q, r)
    spt = ad.dot_last(p, qr)  # positive on canonical tets
    spt_v = value(spt)

    if masks is None:
        valid = spt_v > DEGENERATE_TET_EPS
    else:
        valid = masks[0]

    volumes = spt / 6.0

    # circumcenter of every valid tet
    rp = ad.cross(r, p)
    pq = ad.cross(p, q)
    alpha = ad.dot_last(p, p, keepdims=True)
    beta = ad.dot_last(q, q, keepdims=True)
    gamma = ad.dot_last(r, r, keepdims=True)
    denom = ad.where(valid[:, None], 2.0 * ad.dot_last(p, qr, keepdims=True), np.ones((m, 1)))
    centers_raw = a + (alpha * qr + beta * rp + gamma * pq) / denom
    centers = ad.where(valid[:, None], centers_raw, a)

    # centered least-squares gradient: grad = G^-1 dS^T dPhi = W dPhi
    s_bar = ad.mean(P, axis=1)  # (M,3)
    phi_bar = ad.mean(F, axis=1)  # (M,)
    ds = P - ad.reshape(s_bar, (m, 1, 3))
    dphi = F - ad.reshape(phi_bar, (m, 1))
    G = ad.einsum2("kia,kib->kab", ds, ds)  # (M,3,3)
    gram_eigs = ad._symeig3_values(value(G))
    if masks is None:
        gram_ok = valid & (gram_eigs[:, 2] >= GRAM_GUARD)
    else:
        gram_ok = masks[1]
    eye = np.broadcast_to(np.eye(3), (m, 3, 3))
    G_safe = ad.where(gram_ok[:, None, None], G, eye)
    W = ad.einsum2("kab,kib->kai", ad.inv3(G_safe), ds)  # (M,3,4)
    W = ad.where(gram_ok[:, None, None], W, np.zeros(()))
    tet_grad = ad.einsum2("kai,ki->ka", W, dphi)  # (M,3)

    # volume-weighted per-site gradient over incident usable tets
    w_tet = ad.where(gram_ok, volumes, np.zeros(()))
    ids = tets.ravel()
    contrib = tet_grad * ad.reshape(w_tet, (m, 1))
    # each tet contributes once per corner
    rep = np.repeat(np.arange(m), 4)
    contrib4 = ad.take(contrib, rep)
    w4 = ad.take(ad.reshape(w_tet, (m, 1)), rep)
    numer = ad.segment_sum(contrib4, ids, n)  # (N,3)
    denom_site = ad.segment_sum(w4, ids, n)  # (N,1)
    denom_v = value(denom_site)
    has_mass = denom_v > 0.0
    denom_safe = ad.where(has_mass, denom_site, np.ones((n, 1)))
    site_grad = ad.where(has_mass, numer / denom_safe, np.zeros(()))

    return FieldCache(
        tets=tets,
        valid=valid,
        gram_ok=gram_ok,
        centers=centers,
        volumes=volumes,
        w_matrix=W,
        tet_grad=tet_grad,
        phi_bar=phi_bar,
        s_bar=s_bar,
        site_grad=site_grad,
        site_vol=denom_v[:, 0],
    )


def tet_gradient(points, phis):
    """Least-squares constant gradient of the field over one tet.

    Returns (gradient, W, singular).  For a nearly singular Gram matrix the
    gradient is pinned to zero and `singular` is True.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(1, 4, 3)
    f = np.asarray(phis, dtype=np.float64).reshape(1, 4)
    s_bar = pts.mean(axis=1, keepdims=True)
    ds = pts - s_bar
    G = np.einsum("kia,kib->kab", ds, ds)
    lam = ad._symeig3_values(G)
    if lam[0, 2] < GRAM_GUARD:
        return np.zeros(3), np.zeros((3, 4)), True
    W = np.einsum("kab,kib->kai", ad._inv3(G), ds)[0]
    grad = W @ (f[0] - f[0].mean())
    return grad, W, False


def site_gradient(pos, sdf, tri: Tetrahedralization, i: int) -> np.ndarray:
    """Volume-weighted average of incident tet gradients at site i."""
    cache = build_field_cache(pos, sdf, tri)
    return np.asarray(value(cache.site_grad))[i]


# ---------------------------------------------------------------------------
# smeared Heaviside
# ---------------------------------------------------------------------------

def heaviside_branch(phi, eps_h) -> np.ndarray:
    """-1 / 0 / +1 for the three pieces of the smeared Heaviside."""
    phi = np.asarray(phi, dtype=np.float64)
    out = np.zeros(phi.shape, dtype=np.int8)
    out[phi < -eps_h] = -1
    out[phi > eps_h] = 1
    return out


def heaviside_on_branch(phi, eps_h, branch):
    """Smeared Heaviside with a pinned branch assignment (tape friendly)."""
    mid = 0.5 + phi / (2.0 * eps_h) + ad.sin(np.pi / eps_h * phi) / (2.0 * np.pi)
    out = ad.where(branch == 0, mid, np.zeros(()))
    return ad.where(branch == 1, np.ones(()), out)


def heaviside(phi, eps_h: float):
    """C1 ramp from 0 to 1 over [-eps_h, eps_h]."""
    if eps_h <= 0:
        raise ValueError("eps_h must be positive")
    scalar = np.ndim(phi) == 0 and not isinstance(phi, ad.Var)
    branch = heaviside_branch(value(phi), eps_h)
    out = heaviside_on_branch(phi, eps_h, branch)
    return float(value(out)) if scalar else out


def compute_eps_h(pos, tri: Tetrahedralization) -> float:
    """Mean Delaunay edge length after dropping the longest 5% (ceil count)."""
    pv = value(pos)
    d = pv[tri.edges[:, 0]] - pv[tri.edges[:, 1]]
    lengths = np.sqrt(np.einsum("ij,ij->i", d, d))
    return trimmed_edge_mean(lengths)


def trimmed_edge_mean(lengths) -> float:
    lengths = np.sort(np.asarray(lengths, dtype=np.float64))
    e = len(lengths)
    if e == 0:
        raise ValueError("need at least one edge")
    keep = max(e - math.ceil(0.05 * e), 1)
    return float(lengths[:keep].mean())


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

def init_grid_sites(resolution: int, perturbation: float, seed) -> np.ndarray:
    """resolution^3 lattice sites over [-1,1]^3 with uniform jitter, clamped."""
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    g = np.linspace(-1.0, 1.0, resolution)
    base = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1)
    base = base.transpose(2, 1, 0, 3).reshape(-1, 3)  # x fastest
    if perturbation > 0:
        rng = np.random.default_rng(seed)
        base = base + rng.uniform(-perturbation, perturbation, base.shape)
    return np.clip(base, -1.0, 1.0)


def init_sdf(sites, oracle) -> np.ndarray:
    """Sample the oracle's value at every site."""
    return oracle.evaluate(np.asarray(sites, dtype=np.float64))[0]


# ---------------------------------------------------------------------------
# analytic / sampled oracles (stand-ins for a learned field)
# ---------------------------------------------------------------------------

class SdfOracle:
    """Evaluable signed-distance source: points (K,3) -> (values, gradients)."""

    def evaluate(self, points):
        raise NotImplementedError

    def __call__(self, points):
        return self.evaluate(points)


class SphereOracle(SdfOracle):
    def __init__(self, radius, center=(0.0, 0.0, 0.0)):
        self.radius = float(radius)
        self.center = np.asarray(center, dtype=np.float64)

    def evaluate(self, points):
        u = np.atleast_2d(points) - self.center
        d = np.linalg.norm(u, axis=1)
        safe = np.maximum(d, 1e-30)
        return d - self.radius, u / safe[:, None]


class TorusOracle(SdfOracle):
    """Torus around the z axis with ring radius R and tube radius r."""

    def __init__(self, major_radius, minor_radius, center=(0.0, 0.0, 0.0)):
        self.major_radius = float(major_radius)
        self.minor_radius = float(minor_radius)
        self.center = np.asarray(center, dtype=np.float64)

    def evaluate(self, points):
        u = np.atleast_2d(points) - self.center
        rho = np.hypot(u[:, 0], u[:, 1])
        qx = rho - self.major_radius
        qz = u[:, 2]
        ell = np.hypot(qx, qz)
        val = ell - self.minor_radius
        safe_l = np.maximum(ell, 1e-30)
        safe_r = np.maximum(rho, 1e-30)
        g = np.empty_like(u)
        g[:, 0] = qx / safe_l * u[:, 0] / safe_r
        g[:, 1] = qx / safe_l * u[:, 1] / safe_r
        g[:, 2] = qz / safe_l
        return val, g


class BoxOracle(SdfOracle):
    def __init__(self, half_extents, center=(0.0, 0.0, 0.0)):
        self.half = np.asarray(half_extents, dtype=np.float64)
        self.center = np.asarray(center, dtype=np.float64)

    def evaluate(self, points):
        u = np.atleast_2d(points) - self.center
        d = np.abs(u) - self.half
        outside = np.maximum(d, 0.0)
        out_norm = np.linalg.norm(outside, axis=1)
        inner = np.minimum(d.max(axis=1), 0.0)
        val = out_norm + inner
        g = np.zeros_like(u)
        is_out = out_norm > 0
        safe = np.maximum(out_norm, 1e-30)
        g[is_out] = (np.sign(u[is_out]) * outside[is_out]) / safe[is_out, None]
        ins = ~is_out
        if np.any(ins):
            ax = np.argmax(d[ins], axis=1)
            rows = np.flatnonzero(ins)
            g[rows, ax] = np.sign(u[rows, ax])
            z = u[rows, ax] == 0
            g[rows[z], ax[z]] = 1.0
        return val, g


class GridOracle(SdfOracle):
    """Trilinear interpolation of values sampled on a regular grid.

    `values` has shape (nx, ny, nz) over the box [lo, hi]; gradients are the
    analytic derivative of the trilinear interpolant.  Queries are clamped
    onto the box.
    """

    def __init__(self, values, lo=(-1.0, -1.0, -1.0), hi=(1.0, 1.0, 1.0)):
        self.values = np.ascontiguousarray(values, dtype=np.float64)
        if self.values.ndim != 3 or min(self.values.shape) < 2:
            raise ValueError("grid must be 3-D with at least 2 samples per axis")
        self.lo = np.asarray(lo, dtype=np.float64)
        self.hi = np.asarray(hi, dtype=np.float64)
        self.h = (self.hi - self.lo) / (np.array(self.values.shape) - 1)

    def evaluate(self, points):
        pts = np.clip(np.atleast_2d(points), self.lo, self.hi)
        t = (pts - self.lo) / self.h
        n = np.array(self.values.shape)
        i = np.clip(t.astype(np.int64), 0, n - 2)
        f = t - i
        ix, iy, iz = i[:, 0], i[:, 1], i[:, 2]
        fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
        V = self.values
        c000 = V[ix, iy, iz]
        c100 = V[ix + 1, iy, iz]
        c010 = V[ix, iy + 1, iz]
        c110 = V[ix + 1, iy + 1, iz]
        c001 = V[ix, iy, iz + 1]
        c101 = V[ix + 1, iy, iz + 1]
        c011 = V[ix, iy + 1, iz + 1]
        c111 = V[ix + 1, iy + 1, iz + 1]
        c00 = c000 * (1 - fx) + c100 * fx
        c10 = c010 * (1 - fx) + c110 * fx
        c01 = c001 * (1 - fx) + c101 * fx
        c11 = c011 * (1 - fx) + c111 * fx
        c0 = c00 * (1 - fy) + c10 * fy
        c1 = c01 * (1 - fy) + c11 * fy
        val = c0 * (1 - fz) + c1 * fz
        dx0 = c100 - c000
        dx1 = c110 - c010
        dx2 = c101 - c001
        dx3 = c111 - c011
        ddx = ((dx0 * (1 - fy) + dx1 * fy) * (1 - fz) + (dx2 * (1 - fy) + dx3 * fy) * fz) / self.h[0]
        ddy = ((c10 - c00) * (1 - fz) + (c11 - c01) * fz) / self.h[1]
        ddz = (c1 - c0) / self.h[2]
        return val, np.stack([ddx, ddy, ddz], axis=1)


class NoisyOracle(SdfOracle):
    """Base oracle plus smooth low-frequency noise (8 seeded sinusoids).

    The perturbation is bounded by `amplitude` in absolute value and is a
    deterministic function of the seed.
    """

    N_WAVES = 8

    def __init__(self, base: SdfOracle, amplitude: float, seed):
        self.base = base
        self.amplitude = float(amplitude)
        rng = np.random.default_rng(seed)
        d = rng.normal(size=(self.N_WAVES, 3))
        self.directions = d / np.linalg.norm(d, axis=1, keepdims=True)
        self.freqs = rng.uniform(2.0, 6.0, size=self.N_WAVES)
        self.phases = rng.uniform(0.0, 2.0 * np.pi, size=self.N_WAVES)

    def evaluate(self, points):
        pts = np.atleast_2d(points)
        val, grad = self.base.evaluate(pts)
        val = val.copy()
        grad = grad.copy()
        proj = pts @ self.directions.T  # (K, W)
        arg = proj * self.freqs + self.phases
        val += self.amplitude * np.mean(np.sin(arg), axis=1)
        gterm = np.cos(arg) * self.freqs  # (K, W)
        grad += self.amplitude / self.N_WAVES * gterm @ self.directions
        return val, grad


def parse_oracle(spec: str) -> SdfOracle:
    """Build an oracle from a CLI spec string.

    Forms: sphere:R | sphere:cx,cy,cz,R | torus:R,r | box:hx,hy,hz |
    grid:path | noisy:amplitude:seed:<inner spec>
    """
    kind, _, rest = spec.partition(":")
    kind = kind.strip().lower()
    if kind == "sphere":
        nums = [float(x) for x in rest.split(",")]
        if len(nums) == 1:
            return SphereOracle(nums[0])
        if len(nums) == 4:
            return SphereOracle(nums[3], nums[:3])
        raise ValueError(f"bad sphere spec: {spec!r}")
    if kind == "torus":
        nums = [float(x) for x in rest.split(",")]
        if len(nums) == 2:
            return TorusOracle(nums[0], nums[1])
        if len(nums) == 5:
            return TorusOracle(nums[3], nums[4], nums[:3])
        raise ValueError(f"bad torus spec: {spec!r}")
    if kind == "box":
        nums = [float(x) for x in rest.split(",")]
        if len(nums) != 3:
            raise ValueError(f"bad box spec: {spec!r}")
        return BoxOracle(nums)
    if kind == "grid":
        from .fileio import read_grid_sdf

        values, lo, hi = read_grid_sdf(rest)
        return GridOracle(values, lo, hi)
    if kind == "noisy":
        amp_s, _, rest2 = rest.partition(":")
        seed_s, _, inner = rest2.partition(":")
        if not inner:
            raise ValueError(f"bad noisy spec (want noisy:amp:seed:<inner>): {spec!r}")
        return NoisyOracle(parse_oracle(inner), float(amp_s), int(seed_s))
    raise ValueError(f"unknown oracle kind: {spec!r}")
