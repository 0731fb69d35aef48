"""Layer operations on 5-D ``(batch, channel, x, y, z)`` tensors."""
from __future__ import annotations

import numpy as np

from ..errors import DomainError
from .tensor import Tensor

__all__ = [
    "conv3d",
    "group_norm",
    "leaky_relu",
    "tanh",
    "sigmoid",
    "trilinear_upsample",
    "concat_channels",
]


def _check5(x: Tensor, what: str):
    if x.ndim != 5:
        raise DomainError(f"{what} expects a (batch, channel, x, y, z) tensor, got shape {x.shape}")


_CHUNK_BYTES = 32 * 2**20


def _im2col(xp, k, stride, out_sp, x0, x1):
    """Columns ``(B, Ci * k**3, n)`` for output x-slices ``x0:x1``."""
    b, ci = xp.shape[:2]
    oy, oz = out_sp[1:]
    cols = np.empty((b, ci, k, k, k, x1 - x0, oy, oz), dtype=xp.dtype)
    for a in range(k):
        for bb in range(k):
            for c in range(k):
                cols[:, :, a, bb, c] = xp[:, :,
                                          a + stride * x0 : a + stride * x1 : stride,
                                          bb : bb + stride * oy : stride,
                                          c : c + stride * oz : stride]
    return cols.reshape(b, ci * k**3, -1)


def _col2im_add(gxp, gcols, k, stride, out_sp, x0, x1):
    b, ci = gxp.shape[:2]
    oy, oz = out_sp[1:]
    gcols = gcols.reshape(b, ci, k, k, k, x1 - x0, oy, oz)
    for a in range(k):
        for bb in range(k):
            for c in range(k):
                gxp[:, :,
                    a + stride * x0 : a + stride * x1 : stride,
                    bb : bb + stride * oy : stride,
                    c : c + stride * oz : stride] += gcols[:, :, a, bb, c]


def conv3d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int | None = None) -> Tensor:
    """Cross-correlation with a cubic kernel.

    ``padding`` defaults to ``(k - 1) // 2`` at stride 1 (size preserving) and
    to 0 otherwise. A stride-2 call with a 2x2x2 kernel halves each axis.
    Columns are built in x-slabs so memory stays bounded on large inputs.
    """
    _check5(x, "conv3d")
    co, ci, kx, ky, kz = kernel.shape
    if not kx == ky == kz:
        raise DomainError(f"kernel must be cubic, got {kernel.shape[2:]}")
    if x.shape[1] != ci:
        raise DomainError(f"input has {x.shape[1]} channels, kernel expects {ci}")
    if bias is not None and bias.shape != (co,):
        raise DomainError(f"bias shape {bias.shape} does not match {co} output channels")
    k = kx
    if padding is None:
        padding = (k - 1) // 2 if stride == 1 else 0
    b = x.shape[0]
    spatial = x.shape[2:]
    out_sp = tuple((n + 2 * padding - k) // stride + 1 for n in spatial)
    if any(n < 1 for n in out_sp) or (stride > 1 and any((n + 2 * padding - k) % stride for n in spatial)):
        raise DomainError(f"spatial shape {spatial} incompatible with kernel {k}, stride {stride}")
    xp = np.pad(x.data, ((0, 0), (0, 0)) + ((padding, padding),) * 3) if padding else x.data
    w2 = kernel.data.reshape(co, -1)
    dtype = np.result_type(x.data, kernel.data)
    slab_bytes = b * ci * k**3 * out_sp[1] * out_sp[2] * dtype.itemsize
    step = max(1, min(out_sp[0], _CHUNK_BYTES // max(1, slab_bytes)))
    slabs = [(x0, min(x0 + step, out_sp[0])) for x0 in range(0, out_sp[0], step)]

    out = np.empty((b, co) + out_sp, dtype=dtype)
    for x0, x1 in slabs:
        cols = _im2col(xp, k, stride, out_sp, x0, x1)
        out[:, :, x0:x1] = (w2 @ cols).reshape((b, co, x1 - x0) + out_sp[1:])
    if bias is not None:
        out += bias.data.reshape(1, co, 1, 1, 1)

    def backward(g):
        gxp = np.zeros_like(xp) if x.requires_grad else None
        gw = np.zeros_like(w2) if kernel.requires_grad else None
        for x0, x1 in slabs:
            gs = g[:, :, x0:x1].reshape(b, co, -1)
            if gw is not None:
                cols = _im2col(xp, k, stride, out_sp, x0, x1)
                gw += (gs @ cols.transpose(0, 2, 1)).sum(axis=0)
            if gxp is not None:
                _col2im_add(gxp, w2.T @ gs, k, stride, out_sp, x0, x1)
        gx = gxp
        if gx is not None and padding:
            gx = gx[:, :, padding:-padding, padding:-padding, padding:-padding]
        gk = gw.reshape(kernel.shape) if gw is not None else None
        gb = g.sum(axis=(0, 2, 3, 4)) if bias is not None and bias.requires_grad else None
        return gx, gk, gb

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return Tensor.from_op(out, parents, backward)


def group_norm(x: Tensor, groups: int, scale: Tensor, shift: Tensor, eps: float = 1e-5) -> Tensor:
    """Standardize each (sample, channel group) then apply a per-channel affine map."""
    _check5(x, "group_norm")
    b, c = x.shape[:2]
    if groups < 1 or c % groups:
        raise DomainError(f"{c} channels are not divisible into {groups} groups")
    if scale.shape != (c,) or shift.shape != (c,):
        raise DomainError(f"scale/shift must have shape ({c},)")
    xg = x.data.reshape(b, groups, -1)
    n = xg.shape[2]
    mean = xg.mean(axis=2, keepdims=True)
    centred = xg - mean
    var = (centred * centred).mean(axis=2, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (centred * inv_std).reshape(x.shape)
    bshape = (1, c, 1, 1, 1)
    out = xhat * scale.data.reshape(bshape) + shift.data.reshape(bshape)

    def backward(g):
        gscale = (g * xhat).sum(axis=(0, 2, 3, 4)) if scale.requires_grad else None
        gshift = g.sum(axis=(0, 2, 3, 4)) if shift.requires_grad else None
        gx = None
        if x.requires_grad:
            dxhat = (g * scale.data.reshape(bshape)).reshape(b, groups, n)
            xh = xhat.reshape(b, groups, n)
            gx = inv_std * (dxhat - dxhat.mean(axis=2, keepdims=True)
                            - xh * (dxhat * xh).mean(axis=2, keepdims=True))
            gx = gx.reshape(x.shape)
        return gx, gscale, gshift

    return Tensor.from_op(out, (x, scale, shift), backward)


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    pos = x.data > 0
    out = np.where(pos, x.data, slope * x.data)
    return Tensor.from_op(out, (x,), lambda g: (np.where(pos, g, slope * g),))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return Tensor.from_op(out, (x,), lambda g: (g * (1.0 - out * out),))


def sigmoid(x: Tensor) -> Tensor:
    t = x.data
    e = np.exp(-np.abs(t))
    out = np.where(t >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return Tensor.from_op(out, (x,), lambda g: (g * out * (1.0 - out),))


def _up_axis(a: np.ndarray, axis: int) -> np.ndarray:
    # align_corners=False, factor 2: each sample splits into 0.75/0.25 blends
    # with its neighbours, edges clamped
    a = np.moveaxis(a, axis, -1)
    lo = np.concatenate([a[..., :1], a[..., :-1]], axis=-1)
    hi = np.concatenate([a[..., 1:], a[..., -1:]], axis=-1)
    out = np.empty(a.shape[:-1] + (2 * a.shape[-1],), dtype=a.dtype)
    out[..., 0::2] = 0.75 * a + 0.25 * lo
    out[..., 1::2] = 0.75 * a + 0.25 * hi
    return np.moveaxis(out, -1, axis)


def _up_axis_t(g: np.ndarray, axis: int) -> np.ndarray:
    g = np.moveaxis(g, axis, -1)
    even, odd = g[..., 0::2], g[..., 1::2]
    out = 0.75 * (even + odd)
    out[..., :-1] += 0.25 * even[..., 1:]
    out[..., 0] += 0.25 * even[..., 0]
    out[..., 1:] += 0.25 * odd[..., :-1]
    out[..., -1] += 0.25 * odd[..., -1]
    return np.moveaxis(out, -1, axis)


def trilinear_upsample(x: Tensor) -> Tensor:
    """Double every spatial axis by trilinear interpolation (half-pixel centres)."""
    _check5(x, "trilinear_upsample")
    out = x.data
    for axis in (2, 3, 4):
        out = _up_axis(out, axis)

    def backward(g):
        for axis in (4, 3, 2):
            g = _up_axis_t(g, axis)
        return (g,)

    return Tensor.from_op(out, (x,), backward)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != b.ndim or a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise DomainError(f"cannot concatenate {a.shape} and {b.shape} on channels")
    ca = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)
    return Tensor.from_op(out, (a, b), lambda g: (g[:, :ca], g[:, ca:]))
