"""Differentiable operations used by the network.

Every op takes and returns :class:`Tensor` objects in NCHW layout where
spatial structure matters. No implicit broadcasting: shapes are checked
and mismatches raise ``ValueError`` naming the offending dimension.
"""

from __future__ import annotations

from functools import lru_cache
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, as_tensor

UPSAMPLE_FACTORS = (2, 4, 8)


def _check_ndim(x: Tensor, ndim: int, what: str) -> None:
    if x.ndim != ndim:
        raise ValueError(f"{what}: expected {ndim}-D input, got shape {x.shape}")


def _same_shape(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        for axis, (p, q) in enumerate(zip(a.shape, b.shape)):
            if p != q:
                raise ValueError(f"{what}: dimension {axis} differs ({p} vs {q})")
        raise ValueError(f"{what}: rank differs ({a.ndim} vs {b.ndim})")


# ---------------------------------------------------------------- convolution


def _windows(xp: np.ndarray, k: int, stride: int) -> np.ndarray:
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation, ``x`` is N×C×H×W and ``w`` is O×C×K×K."""
    _check_ndim(x, 4, "conv2d input")
    _check_ndim(w, 4, "conv2d weight")
    if stride < 1:
        raise ValueError(f"conv2d: stride must be >= 1, got {stride}")
    if pad < 0:
        raise ValueError(f"conv2d: pad must be >= 0, got {pad}")
    n, c, h, wd = x.shape
    o, ci, k, k2 = w.shape
    if k != k2:
        raise ValueError(f"conv2d: kernel must be square, got {k}x{k2}")
    if ci != c:
        raise ValueError(f"conv2d: channel dimension 1 differs (input {c} vs weight {ci})")
    if b is not None and b.shape != (o,):
        raise ValueError(f"conv2d: bias dimension 0 must be {o}, got {b.shape}")
    if h + 2 * pad < k or wd + 2 * pad < k:
        raise ValueError(f"conv2d: kernel {k} larger than padded input {h + 2 * pad}x{wd + 2 * pad}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    win = _windows(xp, k, stride)  # n, c, ho, wo, k, k
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
    wmat = w.data.reshape(o, c * k * k)
    out = cols @ wmat.T
    if b is not None:
        out += b.data
    out = out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)

    def _bw(g):
        gm = g.transpose(0, 2, 3, 1).reshape(-1, o)
        gx = gw = gb = None
        if w.requires_grad:
            gw = (gm.T @ cols).reshape(w.shape)
        if b is not None and b.requires_grad:
            gb = gm.sum(axis=0)
        if x.requires_grad:
            # (c, k, k, n, ho, wo) so each kernel tap is a contiguous block
            dcols = (wmat.T @ gm.T).reshape(c, k, k, n, ho, wo)
            dxp = np.zeros((c, n) + xp.shape[2:])
            for i in range(k):
                for j in range(k):
                    dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[:, i, j]
            dxp = dxp.transpose(1, 0, 2, 3)
            gx = dxp[:, :, pad : pad + h, pad : pad + wd] if pad else dxp
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return Tensor._result(out, parents, _bw)


# ---------------------------------------------------------------- pooling


def pool2d(x: Tensor, kind: str = "max", k: int = 2, stride: int | None = None, pad: int = 0) -> Tensor:
    """Window reduction over H and W. Average pooling counts padded zeros."""
    _check_ndim(x, 4, "pool2d input")
    if kind not in ("max", "avg"):
        raise ValueError(f"pool2d: unknown kind {kind!r}")
    stride = k if stride is None else stride
    n, c, h, w = x.shape
    if k > h + 2 * pad or k > w + 2 * pad:
        raise ValueError(f"pool2d: window {k} larger than input {h}x{w}")
    fill = -np.inf if kind == "max" else 0.0
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=fill) if pad else x.data
    win = _windows(xp, k, stride)
    ho, wo = win.shape[2], win.shape[3]
    flat = win.reshape(n, c, ho, wo, k * k)
    if kind == "max":
        idx = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    else:
        out = flat.mean(axis=-1)

    def _bw(g):
        dxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                if kind == "max":
                    part = np.where(idx == i * k + j, g, 0.0)
                else:
                    part = g / (k * k)
                dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += part
        return (dxp[:, :, pad : pad + h, pad : pad + w] if pad else dxp,)

    return Tensor._result(np.ascontiguousarray(out), (x,), _bw)


# ---------------------------------------------------------------- resizing


@lru_cache(maxsize=64)
def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic 1-D linear interpolation weights, half-pixel centres."""
    m = np.zeros((n_out, n_in))
    ratio = n_in / n_out
    for o in range(n_out):
        src = max((o + 0.5) * ratio - 0.5, 0.0)
        i0 = min(int(np.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        lam = src - i0
        m[o, i0] += 1.0 - lam
        m[o, i1] += lam
    m.setflags(write=False)
    return m


def resize(x: Tensor, size: tuple[int, int]) -> Tensor:
    """Separable bilinear resize (align_corners=False) to an explicit size."""
    _check_ndim(x, 4, "resize input")
    h, w = x.shape[2:]
    if (h, w) == tuple(size):
        return x
    ah = _interp_matrix(h, size[0])
    aw = _interp_matrix(w, size[1])
    out = ah @ x.data @ aw.T

    def _bw(g):
        return (ah.T @ g @ aw,)

    return Tensor._result(out, (x,), _bw)


def bilinear_resize(x: Tensor, factor: int) -> Tensor:
    """Upsample H and W by ``factor`` in {2, 4, 8}."""
    if factor not in UPSAMPLE_FACTORS:
        raise ValueError(f"bilinear_resize: factor must be one of {UPSAMPLE_FACTORS}, got {factor}")
    _check_ndim(x, 4, "bilinear_resize input")
    h, w = x.shape[2:]
    return resize(x, (h * factor, w * factor))


# ---------------------------------------------------------------- dense layers


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map over the last dimension, ``w`` is D_in×D_out."""
    if w.ndim != 2:
        raise ValueError(f"linear: weight must be 2-D, got {w.shape}")
    if x.shape[-1] != w.shape[0]:
        raise ValueError(f"linear: inner dimension differs (input {x.shape[-1]} vs weight {w.shape[0]})")
    if b is not None and b.shape != (w.shape[1],):
        raise ValueError(f"linear: bias dimension 0 must be {w.shape[1]}, got {b.shape}")
    out = x.data @ w.data
    if b is not None:
        out = out + b.data

    def _bw(g):
        gx = g @ w.data.T if x.requires_grad else None
        gw = x.data.reshape(-1, w.shape[0]).T @ g.reshape(-1, w.shape[1]) if w.requires_grad else None
        if b is None:
            return gx, gw
        gb = g.reshape(-1, w.shape[1]).sum(axis=0) if b.requires_grad else None
        return gx, gw, gb

    parents = (x, w, b) if b is not None else (x, w)
    return Tensor._result(out, parents, _bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes (leading axes must match)."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[:-2] != b.shape[:-2]:
        raise ValueError(f"matmul: batch dimensions differ ({a.shape} vs {b.shape})")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: inner dimension differs ({a.shape[-1]} vs {b.shape[-2]})")
    out = a.data @ b.data

    def _bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(a.data, -1, -2) @ g if b.requires_grad else None
        return ga, gb

    return Tensor._result(out, (a, b), _bw)


def transpose_last(x: Tensor) -> Tensor:
    out = np.swapaxes(x.data, -1, -2)

    def _bw(g):
        return (np.swapaxes(g, -1, -2),)

    return Tensor._result(out, (x,), _bw)


def softmax_lastdim(x: Tensor) -> Tensor:
    if x.ndim == 0 or x.shape[-1] == 0:
        raise ValueError("softmax_lastdim: last dimension must be non-empty")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def _bw(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return Tensor._result(s, (x,), _bw)


# ---------------------------------------------------------------- normalisation


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ValueError(f"layer_norm: affine parameters must have shape ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def _bw(g):
        gx = None
        if x.requires_grad:
            dxhat = g * gamma.data
            gx = inv * (
                dxhat
                - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
            )
        gg = (g * xhat).reshape(-1, d).sum(axis=0) if gamma.requires_grad else None
        gb = g.reshape(-1, d).sum(axis=0) if beta.requires_grad else None
        return gx, gg, gb

    return Tensor._result(out, (x, gamma, beta), _bw)


def batch_norm_infer(
    x: Tensor, mean: Tensor, var: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5
) -> Tensor:
    """Channelwise ``(x - mean) / sqrt(var + eps) * gamma + beta`` with frozen statistics."""
    _check_ndim(x, 4, "batch_norm_infer input")
    c = x.shape[1]
    for name, t in (("mean", mean), ("var", var), ("gamma", gamma), ("beta", beta)):
        if t.shape != (c,):
            raise ValueError(f"batch_norm_infer: {name} must have shape ({c},), got {t.shape}")
    inv = 1.0 / np.sqrt(var.data + eps)
    xhat = (x.data - mean.data[:, None, None]) * inv[:, None, None]
    out = xhat * gamma.data[:, None, None] + beta.data[:, None, None]

    def _bw(g):
        gx = g * (gamma.data * inv)[:, None, None] if x.requires_grad else None
        gg = (g * xhat).sum(axis=(0, 2, 3)) if gamma.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if beta.requires_grad else None
        return gx, None, None, gg, gb

    return Tensor._result(out, (x, mean, var, gamma, beta), _bw)


# ---------------------------------------------------------------- pointwise


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        mask = x.data > 0
        out = np.where(mask, x.data, 0.0)

        def _bw(g):
            return (np.where(mask, g, 0.0),)

    elif kind == "sigmoid":
        out = _sigmoid(x.data)

        def _bw(g):
            return (g * out * (1.0 - out),)

    else:
        raise ValueError(f"activation: unknown kind {kind!r}")
    return Tensor._result(out, (x,), _bw)


def relu(x: Tensor) -> Tensor:
    return activation(x, "relu")


def sigmoid(x: Tensor) -> Tensor:
    return activation(x, "sigmoid")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def eltwise(a: Tensor, b: Tensor, kind: str) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, f"eltwise {kind}")
    if kind == "add":
        out = a.data + b.data

        def _bw(g):
            return g, g

    elif kind == "sub":
        out = a.data - b.data

        def _bw(g):
            return g, -g

    elif kind == "mul":
        out = a.data * b.data

        def _bw(g):
            return g * b.data, g * a.data

    elif kind == "max":
        pick_a = a.data >= b.data
        out = np.where(pick_a, a.data, b.data)

        def _bw(g):
            return np.where(pick_a, g, 0.0), np.where(pick_a, 0.0, g)

    else:
        raise ValueError(f"eltwise: unknown kind {kind!r}")
    return Tensor._result(out, (a, b), _bw)


def maximum(a: Tensor, b: Tensor) -> Tensor:
    return eltwise(a, b, "max")


def scale(x: Tensor, c: float) -> Tensor:
    def _bw(g):
        return (g * c,)

    return Tensor._result(x.data * c, (x,), _bw)


def expand_channels(x: Tensor, channels: int) -> Tensor:
    """Repeat a single-channel N×1×H×W map across ``channels``."""
    _check_ndim(x, 4, "expand_channels input")
    if x.shape[1] != 1:
        raise ValueError(f"expand_channels: channel dimension must be 1, got {x.shape[1]}")
    out = np.repeat(x.data, channels, axis=1)

    def _bw(g):
        return (g.sum(axis=1, keepdims=True),)

    return Tensor._result(out, (x,), _bw)


def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    if not xs:
        raise ValueError("concat_channels: need at least one tensor")
    ref = xs[0]
    for i, t in enumerate(xs):
        _check_ndim(t, 4, f"concat_channels input {i}")
        for axis in (0, 2, 3):
            if t.shape[axis] != ref.shape[axis]:
                raise ValueError(
                    f"concat_channels: dimension {axis} of input {i} is {t.shape[axis]}, expected {ref.shape[axis]}"
                )
    if len(xs) == 1:
        return xs[0]
    sizes = [t.shape[1] for t in xs]
    bounds = np.cumsum([0] + sizes)
    out = np.concatenate([t.data for t in xs], axis=1)

    def _bw(g):
        return tuple(g[:, bounds[i] : bounds[i + 1]] for i in range(len(xs)))

    return Tensor._result(out, tuple(xs), _bw)


# ---------------------------------------------------------------- layout


def flatten_permute(x: Tensor) -> Tensor:
    """C×H×W (or N×C×H×W) to (H·W)×C tokens; pixel (h, w) becomes row h·W + w."""
    if x.ndim == 3:
        c, h, w = x.shape
        out = x.data.reshape(c, h * w).T.copy()

        def _bw(g):
            return (g.T.reshape(c, h, w),)

    elif x.ndim == 4:
        n, c, h, w = x.shape
        out = x.data.reshape(n, c, h * w).transpose(0, 2, 1).copy()

        def _bw(g):
            return (g.transpose(0, 2, 1).reshape(n, c, h, w),)

    else:
        raise ValueError(f"flatten_permute: expected 3-D or 4-D input, got shape {x.shape}")
    return Tensor._result(out, (x,), _bw)


def unflatten_permute(x: Tensor, h: int, w: int) -> Tensor:
    """Inverse of :func:`flatten_permute`."""
    if x.shape[-2] != h * w:
        raise ValueError(f"unflatten_permute: token dimension {x.shape[-2]} != {h}*{w}")
    if x.ndim == 2:
        c = x.shape[1]
        out = x.data.T.reshape(c, h, w).copy()

        def _bw(g):
            return (g.reshape(c, h * w).T,)

    elif x.ndim == 3:
        n, _, c = x.shape
        out = x.data.transpose(0, 2, 1).reshape(n, c, h, w).copy()

        def _bw(g):
            return (g.reshape(n, c, h * w).transpose(0, 2, 1),)

    else:
        raise ValueError(f"unflatten_permute: expected 2-D or 3-D input, got shape {x.shape}")
    return Tensor._result(out, (x,), _bw)


# ---------------------------------------------------------------- reductions


def tsum(x: Tensor) -> Tensor:
    def _bw(g):
        return (np.broadcast_to(g, x.shape).copy(),)

    return Tensor._result(np.array(x.data.sum()), (x,), _bw)


def tmean(x: Tensor) -> Tensor:
    n = x.data.size

    def _bw(g):
        return (np.full(x.shape, float(g) / n),)

    return Tensor._result(np.array(x.data.mean()), (x,), _bw)


def add_scalars(terms: Sequence[tuple[float, Tensor]]) -> Tensor:
    """Weighted sum of scalar tensors."""
    out = np.array(sum(c * t.data.reshape(()) for c, t in terms), dtype=np.float64)

    def _bw(g):
        return tuple(g * c * np.ones_like(t.data) for c, t in terms)

    return Tensor._result(out, tuple(t for _, t in terms), _bw)
