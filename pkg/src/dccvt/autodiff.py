"""Minimal reverse-mode automatic differentiation over numpy arrays.

Every operation below accepts either plain ndarrays or :class:`Var` wrappers
and only records the computation graph when at least one input is a ``Var``.
This lets the same pipeline code serve both a cheap forward-only evaluation
and a differentiated pass.

Gradient accumulation happens in reverse creation order, which keeps the
reduction order deterministic run to run.
"""

from __future__ import annotations

import numpy as np

_TINY = 1e-300


def value(x):
    """Unwrap a Var (or return the input unchanged)."""
    return x.data if isinstance(x, Var) else x


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Var:
    """A node in the computation graph wrapping a float64 ndarray."""

    # Make `ndarray <op> Var` defer to our reflected operators instead of
    # producing an object array.
    __array_ufunc__ = None
    __slots__ = ("data", "parents", "grad")

    def __init__(self, data, parents=()):
        self.data = np.asarray(data, dtype=np.float64)
        self.parents = parents
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Var(shape={self.data.shape})"

    # -- arithmetic ---------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, k):
        return powk(self, k)

    def __getitem__(self, key):
        return getitem(self, key)

    def backward(self):
        """Accumulate d(self)/d(leaf) into .grad of every reachable Var."""
        if self.data.shape != ():
            raise ValueError("backward() requires a scalar loss")
        order = _toposort(self)
        self.grad = np.ones(())
        for node in order:
            g = node.grad
            if g is None:
                continue
            for parent, vjp in node.parents:
                pg = vjp(g)
                if parent.grad is None:
                    parent.grad = pg
                else:
                    parent.grad = parent.grad + pg


def _toposort(root):
    """Nodes reachable from root, root first (reverse topological order)."""
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    order.reverse()
    return order


def _record(out, *pairs):
    """Build a Var for `out` if any (var, vjp) pair involves a Var."""
    parents = tuple((v, f) for v, f in pairs if isinstance(v, Var))
    if parents:
        return Var(out, parents)
    return out


# -- elementwise ops ---------------------------------------------------------

def add(a, b):
    av, bv = value(a), value(b)
    out = av + bv
    return _record(
        out,
        (a, lambda g: _unbroadcast(g, np.shape(av))),
        (b, lambda g: _unbroadcast(g, np.shape(bv))),
    )


def sub(a, b):
    av, bv = value(a), value(b)
    out = av - bv
    return _record(
        out,
        (a, lambda g: _unbroadcast(g, np.shape(av))),
        (b, lambda g: _unbroadcast(-g, np.shape(bv))),
    )


def mul(a, b):
    av, bv = value(a), value(b)
    out = av * bv
    return _record(
        out,
        (a, lambda g: _unbroadcast(g * bv, np.shape(av))),
        (b, lambda g: _unbroadcast(g * av, np.shape(bv))),
    )


def div(a, b):
    av, bv = value(a), value(b)
    out = av / bv
    return _record(
        out,
        (a, lambda g: _unbroadcast(g / bv, np.shape(av))),
        (b, lambda g: _unbroadcast(-g * av / (bv * bv), np.shape(bv))),
    )


def powk(a, k):
    """a ** k for a constant exponent k."""
    av = value(a)
    out = av**k
    return _record(out, (a, lambda g: _unbroadcast(g * k * av ** (k - 1), np.shape(av))))


def sqrt(a):
    av = value(a)
    out = np.sqrt(av)
    return _record(out, (a, lambda g: g * (0.5 / np.maximum(out, _TINY))))


def sin(a):
    av = value(a)
    return _record(np.sin(av), (a, lambda g: g * np.cos(av)))


def where(mask, a, b):
    """Select by a constant boolean mask; gradients flow to both branches."""
    av, bv = value(a), value(b)
    out = np.where(mask, av, bv)
    zero = np.zeros(())
    return _record(
        out,
        (a, lambda g: _unbroadcast(np.where(mask, g, zero), np.shape(av))),
        (b, lambda g: _unbroadcast(np.where(mask, zero, g), np.shape(bv))),
    )


# -- reductions ---------------------------------------------------------------

def sum_(a, axis=None, keepdims=False):
    av = value(a)

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, av.shape)
        gg = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gg, av.shape)

    return _record(np.sum(av, axis=axis, keepdims=keepdims), (a, vjp))


def mean(a, axis=None, keepdims=False):
    av = value(a)
    n = av.size if axis is None else av.shape[axis]
    return div(sum_(a, axis=axis, keepdims=keepdims), float(n))


# -- shape / indexing ---------------------------------------------------------

def reshape(a, shape):
    av = value(a)
    return _record(av.reshape(shape), (a, lambda g: g.reshape(av.shape)))


def getitem(a, key):
    """Basic indexing only (ints, slices, Ellipsis, None)."""
    av = value(a)

    def vjp(g):
        out = np.zeros(av.shape)
        out[key] = g
        return out

    return _record(av[key], (a, vjp))


def take(a, idx):
    """Gather rows along axis 0 with an integer index array (any shape)."""
    av = value(a)
    idx = np.asarray(idx)

    def vjp(g):
        out = np.zeros(av.shape)
        flat_idx = idx.ravel()
        tail = int(np.prod(av.shape[1:], dtype=np.int64)) if av.ndim > 1 else 1
        gf = g.reshape(-1, tail) if av.ndim > 1 else g.reshape(-1, 1)
        of = out.reshape(av.shape[0], tail) if av.ndim > 1 else out.reshape(-1, 1)
        for c in range(tail):
            of[:, c] = np.bincount(flat_idx, weights=gf[:, c], minlength=av.shape[0])
        return out

    return _record(av[idx], (a, vjp))


def segment_sum(a, seg, n):
    """out[k] = sum of a[i] over i with seg[i] == k, for k in [0, n)."""
    av = value(a)
    seg = np.asarray(seg)
    tail_shape = av.shape[1:]
    tail = int(np.prod(tail_shape, dtype=np.int64)) if tail_shape else 1
    af = av.reshape(len(seg), tail)
    out = np.empty((n, tail))
    for c in range(tail):
        out[:, c] = np.bincount(seg, weights=af[:, c], minlength=n)
    out = out.reshape((n,) + tail_shape)
    return _record(out, (a, lambda g: g[seg]))


def concat(parts, axis=0):
    vals = [value(p) for p in parts]
    out = np.concatenate(vals, axis=axis)
    pairs = []
    start = 0
    for p, v in zip(parts, vals):
        n = v.shape[axis]
        sl = [slice(None)] * out.ndim
        sl[axis] = slice(start, start + n)
        sl = tuple(sl)
        pairs.append((p, lambda g, sl=sl: g[sl]))
        start += n
    return _record(out, *pairs)


def stack(parts, axis=0):
    vals = [value(p) for p in parts]
    out = np.stack(vals, axis=axis)
    pairs = []
    for i, p in enumerate(parts):
        sl = [slice(None)] * out.ndim
        sl[axis] = i
        sl = tuple(sl)
        pairs.append((p, lambda g, sl=sl: g[sl]))
    return _record(out, *pairs)


# -- linear algebra -----------------------------------------------------------

def einsum2(spec, a, b):
    """Two-operand einsum with derived vector-Jacobian products.

    Restriction: no index may repeat inside a single operand, and every
    input index must appear in the output or in the other operand.
    """
    av, bv = value(a), value(b)
    lhs, out_spec = spec.split("->")
    a_spec, b_spec = lhs.split(",")
    for s in (a_spec, b_spec):
        if len(set(s)) != len(s):
            raise ValueError(f"repeated index inside operand: {spec}")
    for ch in a_spec:
        if ch not in out_spec and ch not in b_spec:
            raise ValueError(f"index {ch} summed within one operand: {spec}")
    for ch in b_spec:
        if ch not in out_spec and ch not in a_spec:
            raise ValueError(f"index {ch} summed within one operand: {spec}")
    out = np.einsum(spec, av, bv)
    return _record(
        out,
        (a, lambda g: np.einsum(f"{out_spec},{b_spec}->{a_spec}", g, bv)),
        (b, lambda g: np.einsum(f"{out_spec},{a_spec}->{b_spec}", g, av)),
    )


def cross(a, b):
    """Cross product along the last axis (size 3)."""
    av, bv = value(a), value(b)
    out = np.cross(av, bv)
    return _record(
        out,
        (a, lambda g: _unbroadcast(np.cross(bv, g), np.shape(av))),
        (b, lambda g: _unbroadcast(np.cross(g, av), np.shape(bv))),
    )


def dot_last(a, b, keepdims=False):
    """Inner product along the last axis."""
    return sum_(mul(a, b), axis=-1, keepdims=keepdims)


def norm_last(a, keepdims=False):
    """Euclidean norm along the last axis; gradient is 0 at the origin."""
    av = value(a)
    n = np.sqrt(np.sum(av * av, axis=-1, keepdims=keepdims))

    def vjp(g):
        safe = np.maximum(n, _TINY)
        gg = g if keepdims else np.expand_dims(g, -1)
        nn = safe if keepdims else np.expand_dims(safe, -1)
        return gg * av / nn

    return _record(n, (a, vjp))


def smallest_eigvec3(C, frozen_mask=None, col_choice=None):
    """Unit eigenvector of the smallest eigenvalue of symmetric 3x3 batches.

    Uses the closed-form trigonometric eigenvalue solution, then extracts the
    eigenvector from the Cayley-Hamilton product (C - l1 I)(C - l2 I).

    The backward rule is the implicit-function form dn = (l3 I - C)^+ dC n;
    rows flagged in `frozen_mask` get zero gradient.  `col_choice` optionally
    pins the internal column selection so a replayed evaluation is a
    continuous function of C near the base point.

    Returns (n, eigvals, gap, col_used) where only `n` participates in the
    graph; eigvals has shape (K, 3) sorted descending, gap = l2 - l3.
    """
    Cv = value(C)
    K = Cv.shape[0]
    eigvals = _symeig3_values(Cv)
    l1, l2, l3 = eigvals[:, 0], eigvals[:, 1], eigvals[:, 2]
    gap = l2 - l3

    eye = np.eye(3)
    M = np.matmul(Cv - l1[:, None, None] * eye, Cv - l2[:, None, None] * eye)
    col_norms = np.sqrt(np.sum(M * M, axis=1))  # (K, 3) norms of columns
    if col_choice is None:
        col_used = np.argmax(col_norms, axis=1)
    else:
        col_used = np.asarray(col_choice)
    n = M[np.arange(K), :, col_used]
    nn = np.sqrt(np.sum(n * n, axis=1))
    bad = nn < 1e-30
    if np.any(bad):
        # Rank-deficient product: fall back to a row cross of (C - l3 I),
        # then to a fixed axis.  Only reachable with a tiny eigengap, where
        # gradients are frozen anyway.
        A = Cv[bad] - l3[bad, None, None] * eye
        alt = np.cross(A[:, 0, :], A[:, 1, :])
        alt2 = np.cross(A[:, 0, :], A[:, 2, :])
        use2 = np.sum(alt * alt, axis=1) < np.sum(alt2 * alt2, axis=1)
        alt[use2] = alt2[use2]
        tiny = np.sqrt(np.sum(alt * alt, axis=1)) < 1e-30
        alt[tiny] = (0.0, 0.0, 1.0)
        n = n.copy()
        n[bad] = alt
        nn = np.sqrt(np.sum(n * n, axis=1))
    n = n / nn[:, None]

    if frozen_mask is None:
        frozen_mask = np.zeros(K, dtype=bool)

    def vjp(g):
        # P = (l3 I - C)^+ computed as inv(l3 I - C + n n^T) - n n^T.
        A = l3[:, None, None] * eye - Cv
        nnT = n[:, :, None] * n[:, None, :]
        P = _inv3(A + nnT) - nnT
        Pg = np.einsum("kij,kj->ki", P, g)
        Cbar = Pg[:, :, None] * n[:, None, :]
        Cbar[frozen_mask] = 0.0
        return Cbar

    out = _record(n, (C, vjp))
    return out, eigvals, gap, col_used


def _symeig3_values(C):
    """Eigenvalues of symmetric 3x3 batches, descending, closed form."""
    K = C.shape[0]
    q = np.trace(C, axis1=1, axis2=2) / 3.0
    off = C[:, 0, 1] ** 2 + C[:, 0, 2] ** 2 + C[:, 1, 2] ** 2
    dq = C[:, (0, 1, 2), (0, 1, 2)] - q[:, None]
    p2 = np.sum(dq * dq, axis=1) + 2.0 * off
    p = np.sqrt(np.maximum(p2, 0.0) / 6.0)
    vals = np.empty((K, 3))
    iso = p < 1e-300
    safe_p = np.where(iso, 1.0, p)
    B = (C - q[:, None, None] * np.eye(3)) / safe_p[:, None, None]
    r = _det3(B) / 2.0
    r = np.clip(r, -1.0, 1.0)
    phi = np.arccos(r) / 3.0
    e1 = q + 2.0 * p * np.cos(phi)
    e3 = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    e2 = 3.0 * q - e1 - e3
    vals[:, 0], vals[:, 1], vals[:, 2] = e1, e2, e3
    vals[iso] = q[iso, None]
    return vals


def _det3(A):
    return (
        A[:, 0, 0] * (A[:, 1, 1] * A[:, 2, 2] - A[:, 1, 2] * A[:, 2, 1])
        - A[:, 0, 1] * (A[:, 1, 0] * A[:, 2, 2] - A[:, 1, 2] * A[:, 2, 0])
        + A[:, 0, 2] * (A[:, 1, 0] * A[:, 2, 1] - A[:, 1, 1] * A[:, 2, 0])
    )


def _inv3(A):
    """Closed-form inverse of 3x3 batches (adjugate over determinant)."""
    inv = np.empty_like(A)
    inv[:, 0, 0] = A[:, 1, 1] * A[:, 2, 2] - A[:, 1, 2] * A[:, 2, 1]
    inv[:, 0, 1] = A[:, 0, 2] * A[:, 2, 1] - A[:, 0, 1] * A[:, 2, 2]
    inv[:, 0, 2] = A[:, 0, 1] * A[:, 1, 2] - A[:, 0, 2] * A[:, 1, 1]
    inv[:, 1, 0] = A[:, 1, 2] * A[:, 2, 0] - A[:, 1, 0] * A[:, 2, 2]
    inv[:, 1, 1] = A[:, 0, 0] * A[:, 2, 2] - A[:, 0, 2] * A[:, 2, 0]
    inv[:, 1, 2] = A[:, 0, 2] * A[:, 1, 0] - A[:, 0, 0] * A[:, 1, 2]
    inv[:, 2, 0] = A[:, 1, 0] * A[:, 2, 1] - A[:, 1, 1] * A[:, 2, 0]
    inv[:, 2, 1] = A[:, 0, 1] * A[:, 2, 0] - A[:, 0, 0] * A[:, 2, 1]
    inv[:, 2, 2] = A[:, 0, 0] * A[:, 1, 1] - A[:, 0, 1] * A[:, 1, 0]
    det = (
        A[:, 0, 0] * inv[:, 0, 0]
        + A[:, 0, 1] * inv[:, 1, 0]
        + A[:, 0, 2] * inv[:, 2, 0]
    )
    return inv / det[:, None, None]


def inv3(A):
    """Differentiable closed-form inverse of symmetric-or-not 3x3 batches."""
    Av = value(A)
    out = _inv3(Av)

    def vjp(g):
        # d(A^-1) = -A^-1 dA A^-1  =>  Abar = -A^-T g A^-T
        outT = np.swapaxes(out, 1, 2)
        return -np.matmul(outT, np.matmul(g, outT))

    return _record(out, (A, vjp))
