"""Forward/backward pairs for every differentiable operation the model uses.

All ops accept Tensors, numpy arrays or Python scalars and return Tensors.
Shapes follow numpy broadcasting unless stated otherwise.
"""

from __future__ import annotations

import contextlib

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, as_array

_surrogate = {"forward": False}


@contextlib.contextmanager
def surrogate_forward():
    """Replace every spike's step with its smooth surrogate primitive.

    Only meant for finite-difference checks: inside the block, ``spike``
    returns the antiderivative of its surrogate gradient.
    """
    old = _surrogate["forward"]
    _surrogate["forward"] = True
    try:
        yield
    finally:
        _surrogate["forward"] = old


def tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcast(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    _check_broadcast("add", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    _check_broadcast("sub", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    _check_broadcast("mul", a, b)

    def bw(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)

    return Tensor._make(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    _check_broadcast("div", a, b)
    out = a.data / b.data

    def bw(g):
        return (_unbroadcast(g / b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None)

    return Tensor._make(out, (a, b), bw, "div")


def neg(a) -> Tensor:
    a = tensor(a)
    return Tensor._make(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, p: float) -> Tensor:
    a = tensor(a)

    def bw(g):
        return (g * p * a.data ** (p - 1),)

    return Tensor._make(a.data ** p, (a,), bw, "pow")


def exp(a) -> Tensor:
    a = tensor(a)
    out = np.exp(a.data)
    return Tensor._make(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = tensor(a)
    return Tensor._make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def _sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = tensor(a)
    out = _sigmoid(a.data)
    return Tensor._make(out, (a,), lambda g: (g * out * (1 - out),), "sigmoid")


def softplus(a) -> Tensor:
    a = tensor(a)
    x = a.data
    out = np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))
    return Tensor._make(out, (a,), lambda g: (g * _sigmoid(x),), "softplus")


def silu(a) -> Tensor:
    a = tensor(a)
    sig = _sigmoid(a.data)
    out = a.data * sig

    def bw(g):
        return (g * sig * (1 + a.data * (1 - sig)),)

    return Tensor._make(out, (a,), bw, "silu")


def tanh(a) -> Tensor:
    a = tensor(a)
    out = np.tanh(a.data)
    return Tensor._make(out, (a,), lambda g: (g * (1 - out * out),), "tanh")


def spike(a, threshold: float = 1.0, width: float = 1.0) -> Tensor:
    """Heaviside step ``x >= threshold`` with a triangular surrogate gradient.

    Backward uses ``max(0, 1 - |x - threshold| / width) / width``.
    """
    if width <= 0:
        raise ValueError("surrogate width must be positive")
    a = tensor(a)
    z = a.data - threshold
    if _surrogate["forward"]:
        r = np.clip(z / width, -1.0, 1.0)
        out = np.where(r <= 0, 0.5 * (1 + r) ** 2, 1 - 0.5 * (1 - r) ** 2).astype(a.dtype)
    else:
        out = (z >= 0).astype(a.dtype)

    def bw(g):
        return (g * np.maximum(0.0, 1.0 - np.abs(z) / width) / width,)

    return Tensor._make(out, (a,), bw, "spike")


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    """Batched matrix product with numpy ``@`` semantics (operands of rank >= 2,
    or a 1-D right operand)."""
    a, b = tensor(a), tensor(b)
    if a.ndim < 2 or b.ndim < 1 or a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = a.data @ b.data
    vec = b.ndim == 1

    def bw(g):
        ga = gb = None
        if vec:
            if a.requires_grad:
                ga = g[..., None] * b.data
            if b.requires_grad:
                gb = np.einsum("...i,...ij->j", g, a.data)
            return ga, gb
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            if a.ndim > 2 and b.ndim == 2:
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return Tensor._make(out, (a, b), bw, "matmul")


def linear(x, w, b=None) -> Tensor:
    y = matmul(x, w)
    return y if b is None else add(y, b)


# ---------------------------------------------------------------- reductions


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(a, axis=None, keepdims=False) -> Tensor:  # noqa: A001
    a = tensor(a)
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor._make(np.asarray(out), (a,), bw, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = tensor(a)
    axes = _norm_axis(axis, a.ndim)
    n = 1
    for ax in axes:
        n *= a.shape[ax]
    return mul(sum(a, axis=axes, keepdims=keepdims), 1.0 / n)


# ---------------------------------------------------------------- shape


def reshape(a, shape) -> Tensor:
    a = tensor(a)
    return Tensor._make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = tensor(a)
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inv = np.argsort(axes)
    return Tensor._make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def getitem(a, idx) -> Tensor:
    a = tensor(a)
    if isinstance(idx, Tensor):
        idx = idx.data
    out = a.data[idx]
    basic = _is_basic_index(idx)

    def bw(g):
        full = np.zeros_like(a.data)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return Tensor._make(out, (a,), bw, "getitem")


def _is_basic_index(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, slice, type(None), type(Ellipsis))) for i in items)


def take(a, indices, axis: int) -> Tensor:
    """Gather along one axis with an integer index array (permutations, tables)."""
    a = tensor(a)
    indices = np.asarray(indices)
    axis = axis % a.ndim
    out = np.take(a.data, indices, axis=axis)

    def bw(g):
        full = np.zeros_like(a.data)
        moved = np.moveaxis(full, axis, 0)
        gm = np.moveaxis(g, list(range(axis, axis + indices.ndim)), list(range(indices.ndim)))
        np.add.at(moved, indices, gm)
        return (full,)

    return Tensor._make(out, (a,), bw, "take")


def concat(tensors, axis: int = 0) -> Tensor:
    ts = [tensor(t) for t in tensors]
    ref = ts[0].shape
    ax = axis % len(ref)
    for t in ts[1:]:
        if len(t.shape) != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError(f"concat: incompatible shapes {ref} and {t.shape} along axis {axis}")
    out = np.concatenate([t.data for t in ts], axis=ax)
    edges = np.cumsum([0] + [t.shape[ax] for t in ts])

    def bw(g):
        return tuple(np.take(g, np.arange(edges[i], edges[i + 1]), axis=ax) if t.requires_grad else None
                     for i, t in enumerate(ts))

    return Tensor._make(out, ts, bw, "concat")


def stack(tensors, axis: int = 0) -> Tensor:
    ts = [tensor(t) for t in tensors]
    for t in ts[1:]:
        if t.shape != ts[0].shape:
            raise ShapeError(f"stack: incompatible shapes {ts[0].shape} and {t.shape}")
    out = np.stack([t.data for t in ts], axis=axis)

    def bw(g):
        parts = np.moveaxis(g, axis, 0)
        return tuple(parts[i] if t.requires_grad else None for i, t in enumerate(ts))

    return Tensor._make(out, ts, bw, "stack")


def broadcast_to(a, shape) -> Tensor:
    a = tensor(a)
    out = np.broadcast_to(a.data, shape)
    return Tensor._make(out, (a,), lambda g: (_unbroadcast(g, a.shape),), "broadcast_to")


def pad(a, pad_width) -> Tensor:
    a = tensor(a)
    out = np.pad(a.data, pad_width)
    sl = tuple(slice(lo, lo + n) for (lo, _), n in zip(pad_width, a.shape))
    return Tensor._make(out, (a,), lambda g: (g[sl],), "pad")


# ---------------------------------------------------------------- normalization


def softmax(a, axis: int = -1) -> Tensor:
    a = tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._make(out, (a,), bw, "softmax")


def log_softmax(a, axis: int = -1) -> Tensor:
    a = tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    sm = np.exp(out)

    def bw(g):
        return (g - sm * g.sum(axis=axis, keepdims=True),)

    return Tensor._make(out, (a,), bw, "log_softmax")


def layer_norm(a, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    a, gamma, beta = tensor(a), tensor(gamma), tensor(beta)
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * rstd
    out = xhat * gamma.data + beta.data
    n = x.shape[-1]

    def bw(g):
        gg = _unbroadcast(g * xhat, gamma.shape) if gamma.requires_grad else None
        gb = _unbroadcast(g, beta.shape) if beta.requires_grad else None
        ga = None
        if a.requires_grad:
            gx = g * gamma.data
            ga = rstd / n * (n * gx - gx.sum(-1, keepdims=True) - xhat * (gx * xhat).sum(-1, keepdims=True))
        return ga, gg, gb

    return Tensor._make(out, (a, gamma, beta), bw, "layer_norm")


def l2_normalize(a, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """``x / max(||x||, eps)``; all-zero rows stay zero."""
    a = tensor(a)
    x = a.data
    norm = np.sqrt((x * x).sum(axis=axis, keepdims=True))
    denom = np.maximum(norm, eps)
    out = x / denom

    def bw(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        live = norm > eps
        return (np.where(live, (g - out * dot) / denom, g / denom),)

    return Tensor._make(out, (a,), bw, "l2_normalize")


# ---------------------------------------------------------------- convolution


def _pairs(v, nd):
    if isinstance(v, int):
        return [(v, v)] * nd
    out = []
    for p in v:
        out.append((p, p) if isinstance(p, int) else tuple(p))
    return out


def conv(x, w, b=None, stride=1, padding=0, groups: int = 1) -> Tensor:
    """N-d cross-correlation, channels first.

    x: (B, C, *S); w: (O, C // groups, *K); b: (O,).
    ``padding`` is an int, or one int / (lo, hi) pair per spatial dim.
    """
    x, w = tensor(x), tensor(w)
    nd = w.ndim - 2
    if x.ndim != nd + 2:
        raise ShapeError(f"conv: input {x.shape} does not match kernel {w.shape}")
    B, C = x.shape[:2]
    O, Cg = w.shape[:2]
    K = w.shape[2:]
    if C % groups or O % groups or C // groups != Cg:
        raise ShapeError(f"conv: input {x.shape} and kernel {w.shape} disagree for groups={groups}")
    strides = (stride,) * nd if isinstance(stride, int) else tuple(stride)
    pads = _pairs(padding, nd)
    xp = np.pad(x.data, [(0, 0), (0, 0)] + pads) if any(p != (0, 0) for p in pads) else x.data
    sp_axes = tuple(range(2, 2 + nd))
    win = sliding_window_view(xp, K, axis=sp_axes)
    win = win[(slice(None), slice(None)) + tuple(slice(None, None, s) for s in strides)]
    So = win.shape[2:2 + nd]
    if any(n <= 0 for n in So):
        raise ShapeError(f"conv: kernel {K} larger than padded input {xp.shape[2:]}")
    g, Og = groups, O // groups
    nK = int(np.prod(K))
    nS = int(np.prod(So))
    # (B, g, Cg, *So, *K) -> (g, B, *So, Cg, *K)
    perm = (1, 0) + tuple(range(3, 3 + nd)) + (2,) + tuple(range(3 + nd, 3 + 2 * nd))
    cols = win.reshape((B, g, Cg) + So + K).transpose(perm).reshape(g, B * nS, Cg * nK)
    wm = w.data.reshape(g, Og, Cg * nK).transpose(0, 2, 1)
    out = cols @ wm  # (g, B*nS, Og)
    y = out.reshape((g, B) + So + (Og,))
    y = np.moveaxis(y, -1, 2).transpose((1, 0, 2) + tuple(range(3, 3 + nd))).reshape((B, O) + So)
    parents = (x, w) if b is None else (x, w, tensor(b))
    if b is not None:
        y = y + parents[2].data.reshape((1, O) + (1,) * nd)

    def bw(gy):
        gm = gy.reshape((B, g, Og) + So).transpose((1, 0) + tuple(range(3, 3 + nd)) + (2,)).reshape(g, B * nS, Og)
        gx = gw = None
        if w.requires_grad:
            gw = (cols.transpose(0, 2, 1) @ gm).transpose(0, 2, 1).reshape(w.shape)
        if x.requires_grad:
            gcols = (gm @ wm.transpose(0, 2, 1)).reshape((g, B) + So + (Cg,) + K)
            inv = np.argsort(perm)
            gwin = gcols.transpose(inv).reshape((B, C) + So + K)
            gxp = np.zeros(xp.shape, dtype=gy.dtype)
            for k in np.ndindex(*K):
                dst = (slice(None), slice(None)) + tuple(
                    slice(k[i], k[i] + strides[i] * (So[i] - 1) + 1, strides[i]) for i in range(nd))
                gxp[dst] += gwin[(Ellipsis,) + k]
            crop = (slice(None), slice(None)) + tuple(
                slice(lo, xp.shape[2 + i] - hi) for i, (lo, hi) in enumerate(pads))
            gx = gxp[crop]
        if b is None:
            return gx, gw
        gb = gy.sum(axis=(0,) + sp_axes) if parents[2].requires_grad else None
        return gx, gw, gb

    return Tensor._make(y, parents, bw, "conv")


def causal_depthwise_conv1d(x, w, b=None) -> Tensor:
    """Per-channel causal convolution over a (B, L, C) sequence.

    w: (C, K); output[t] = sum_k w[:, k] * x[t - (K - 1) + k] (+ b).
    """
    x, w = tensor(x), tensor(w)
    if x.ndim != 3 or w.ndim != 2 or w.shape[0] != x.shape[2]:
        raise ShapeError(f"causal_depthwise_conv1d: input {x.shape} and kernel {w.shape} disagree")
    K = w.shape[1]
    L = x.shape[1]
    xp = np.pad(x.data, ((0, 0), (K - 1, 0), (0, 0)))
    y = np.zeros_like(x.data)
    for k in range(K):
        y += xp[:, k:k + L, :] * w.data[:, k]
    parents = (x, w) if b is None else (x, w, tensor(b))
    if b is not None:
        y = y + parents[2].data

    def bw(g):
        gx = gw = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for k in range(K):
                gxp[:, k:k + L, :] += g * w.data[:, k]
            gx = gxp[:, K - 1:, :]
        if w.requires_grad:
            gw = np.stack([(g * xp[:, k:k + L, :]).sum(axis=(0, 1)) for k in range(K)], axis=1)
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 1)) if parents[2].requires_grad else None

    return Tensor._make(y, parents, bw, "causal_dwconv1d")


# ---------------------------------------------------------------- selective scan


def _linear_scan_parallel(a, b, axis=1):
    """Inclusive scan of h_t = a_t * h_{t-1} + b_t (h_{-1} = 0) by log-depth doubling."""
    a = np.moveaxis(a, axis, 0).copy()
    h = np.moveaxis(b, axis, 0).copy()
    L = a.shape[0]
    step = 1
    while step < L:
        # combine each element with the one `step` positions earlier
        h[step:] = a[step:] * h[:-step] + h[step:]
        a[step:] = a[step:] * a[:-step]
        step *= 2
    return np.moveaxis(h, 0, axis)


def _linear_scan_sequential(a, b, axis=1):
    a = np.moveaxis(a, axis, 0)
    b = np.moveaxis(b, axis, 0)
    h = np.empty_like(b)
    prev = np.zeros_like(b[0])
    for t in range(b.shape[0]):
        prev = a[t] * prev + b[t]
        h[t] = prev
    return np.moveaxis(h, 0, axis)


def linear_scan(a, b, mode: str = "sequential", axis: int = 1) -> np.ndarray:
    if mode == "sequential":
        return _linear_scan_sequential(a, b, axis)
    if mode == "parallel":
        return _linear_scan_parallel(a, b, axis)
    raise ValueError(f"unknown scan mode {mode!r}")


def selective_scan(x, delta, A, Bm, Cm, Dskip, mode: str = "sequential") -> Tensor:
    """Input-dependent diagonal state-space recurrence.

    x, delta: (B, L, E); A: (E, N), negative; Bm, Cm: (B, L, N); Dskip: (E,).

        h_t = exp(delta_t * A) * h_{t-1} + (delta_t * B_t) * x_t
        y_t = <C_t, h_t> + Dskip * x_t
    """
    x, delta, A, Bm, Cm, Dskip = (tensor(t) for t in (x, delta, A, Bm, Cm, Dskip))
    xd, dd = x.data, delta.data
    if dd.shape != xd.shape or Bm.shape != Cm.shape or Bm.shape[:2] != xd.shape[:2] \
            or A.shape != (xd.shape[2], Bm.shape[2]) or Dskip.shape != (xd.shape[2],):
        raise ShapeError(
            f"selective_scan: x {x.shape}, delta {delta.shape}, A {A.shape}, B {Bm.shape}, C {Cm.shape}, D {Dskip.shape}")
    dA = np.exp(dd[..., None] * A.data)                      # (B, L, E, N)
    u = (dd * xd)[..., None] * Bm.data[:, :, None, :]          # (B, L, E, N)
    h = linear_scan(dA, u, mode)
    y = np.einsum("blen,bln->ble", h, Cm.data) + xd * Dskip.data

    def bw(g):
        gC = np.einsum("ble,blen->bln", g, h)
        gh_direct = g[..., None] * Cm.data[:, :, None, :]
        # adjoint runs backwards: lam_t = gh_t + dA_{t+1} * lam_{t+1}
        a_next = np.concatenate([dA[:, 1:], np.zeros_like(dA[:, :1])], axis=1)
        lam = linear_scan(a_next[:, ::-1], gh_direct[:, ::-1], mode)[:, ::-1]
        h_prev = np.concatenate([np.zeros_like(h[:, :1]), h[:, :-1]], axis=1)
        g_dA = lam * h_prev * dA                                  # d/d(delta*A)
        gA = np.einsum("blen,ble->en", g_dA, dd)
        lam_B = np.einsum("blen,bln->ble", lam, Bm.data)
        gdelta = np.einsum("blen,en->ble", g_dA, A.data) + lam_B * xd
        gx = lam_B * dd + g * Dskip.data
        gB = np.einsum("blen,ble->bln", lam, dd * xd)
        gD = (g * xd).sum(axis=(0, 1))
        return gx, gdelta, gA, gB, gC, gD

    return Tensor._make(y, (x, delta, A, Bm, Cm, Dskip), bw, "selective_scan")


# ---------------------------------------------------------------- operator binding


def _bind():
    T = Tensor
    T.__add__ = lambda s, o: add(s, o)
    T.__radd__ = lambda s, o: add(o, s)
    T.__sub__ = lambda s, o: sub(s, o)
    T.__rsub__ = lambda s, o: sub(o, s)
    T.__mul__ = lambda s, o: mul(s, o)
    T.__rmul__ = lambda s, o: mul(o, s)
    T.__truediv__ = lambda s, o: div(s, o)
    T.__rtruediv__ = lambda s, o: div(o, s)
    T.__neg__ = lambda s: neg(s)
    T.__pow__ = lambda s, p: power(s, p)
    T.__matmul__ = lambda s, o: matmul(s, o)
    T.__rmatmul__ = lambda s, o: matmul(o, s)
    T.__getitem__ = lambda s, i: getitem(s, i)
    T.sum = lambda s, axis=None, keepdims=False: sum(s, axis, keepdims)
    T.mean = lambda s, axis=None, keepdims=False: mean(s, axis, keepdims)
    T.reshape = lambda s, *shape: reshape(s, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)
    T.transpose = lambda s, *axes: transpose(s, axes if axes else None)
    T.exp = lambda s: exp(s)
    T.log = lambda s: log(s)


_bind()

__all__ = [
    "add", "sub", "mul", "div", "neg", "power", "exp", "log", "sigmoid", "softplus", "silu", "tanh",
    "spike", "matmul", "linear", "sum", "mean", "reshape", "transpose", "getitem", "take", "concat",
    "stack", "broadcast_to", "pad", "softmax", "log_softmax", "layer_norm", "l2_normalize", "conv",
    "causal_depthwise_conv1d", "selective_scan", "linear_scan", "surrogate_forward", "tensor",
]
