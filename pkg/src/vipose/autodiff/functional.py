"""Differentiable layers used by the pose network.

Convolutions are cross-correlations lowered to one matmul over strided
windows (im2col). Gradients for the input scatter back one kernel tap at a
time.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, as_tensor, grad_enabled, make_result


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested op."""


def _pair(v):
    return (v, v) if isinstance(v, int) else tuple(v)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=1, pad=0) -> Tensor:
    """x: (N, C, H, W), weight: (O, C, kh, kw) -> (N, O, H', W')."""
    sh, sw = _pair(stride)
    ph, pw = _pair(pad)
    n, c, h, w = x.shape
    o, c2, kh, kw = weight.shape
    if c != c2:
        raise ShapeError(f"conv2d: input has {c} channels, weight expects {c2}")
    hp, wp = h + 2 * ph, w + 2 * pw
    if hp < kh or wp < kw:
        raise ShapeError("conv2d: kernel larger than padded input")
    ho, wo = (hp - kh) // sh + 1, (wp - kw) // sw + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw][:, :, :ho, :wo]
    # channel-major columns (c*kh*kw, n*ho*wo): both matmuls and the input scatter stay contiguous
    cols = win.transpose(1, 4, 5, 0, 2, 3).reshape(c * kh * kw, n * ho * wo)
    wmat = weight.data.reshape(o, -1)
    out = wmat @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = np.ascontiguousarray(out.reshape(o, n, ho, wo).transpose(1, 0, 2, 3))
    parents = (x, weight) if bias is None else (x, weight, bias)
    if not grad_enabled():
        return Tensor(out)

    def backward(g):
        g2 = g.transpose(1, 0, 2, 3).reshape(o, -1)
        if weight.requires_grad:
            weight.accumulate((g2 @ cols.T).reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            bias.accumulate(g2.sum(axis=1))
        if x.requires_grad:
            dcols = (wmat.T @ g2).reshape(c, kh, kw, n, ho, wo)
            dxp = np.zeros((c, n, hp, wp), dtype=x.dtype)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw] += dcols[:, i, j]
            x.accumulate(dxp[:, :, ph:ph + h, pw:pw + w].transpose(1, 0, 2, 3))

    return make_result(out, parents, backward)


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """x: (N, C, L), weight: (O, C, k) -> (N, O, L')."""
    if x.data.ndim != 3 or weight.data.ndim != 3:
        raise ShapeError("conv1d expects 3-d input and weight")
    n, c, length = x.shape
    o, _, k = weight.shape
    y = conv2d(x.reshape(n, c, 1, length), weight.reshape(o, weight.shape[1], 1, k), bias,
               stride=(1, stride), pad=(0, pad))
    return y.reshape(n, o, y.shape[3])


def correlation(f1: Tensor, f2: Tensor, max_disp: int = 3, stride: int = 1) -> Tensor:
    """Channel-normalized inner products of f1(p) with f2(p + displacement).

    Output channel ``i * (2d + 1) + j`` holds displacement
    (dy, dx) = ((i - d) * stride, (j - d) * stride). Samples of f2 falling
    outside the map read as zero.
    """
    if f1.shape != f2.shape:
        raise ShapeError(f"correlation: {f1.shape} vs {f2.shape}")
    n, c, h, w = f1.shape
    d = max_disp
    span = 2 * d + 1
    pad = d * stride
    f2p = np.pad(f2.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.empty((n, span * span, h, w), dtype=f1.dtype)
    scale = 1.0 / c
    for i in range(span):
        for j in range(span):
            dy, dx = (i - d) * stride + pad, (j - d) * stride + pad
            out[:, i * span + j] = np.einsum("nchw,nchw->nhw", f1.data, f2p[:, :, dy:dy + h, dx:dx + w]) * scale

    def backward(g):
        g = g * scale
        df1 = np.zeros_like(f1.data) if f1.requires_grad else None
        df2p = np.zeros_like(f2p) if f2.requires_grad else None
        for i in range(span):
            for j in range(span):
                dy, dx = (i - d) * stride + pad, (j - d) * stride + pad
                gk = g[:, i * span + j][:, None]
                if df1 is not None:
                    df1 += gk * f2p[:, :, dy:dy + h, dx:dx + w]
                if df2p is not None:
                    df2p[:, :, dy:dy + h, dx:dx + w] += gk * f1.data
        if df1 is not None:
            f1.accumulate(df1)
        if df2p is not None:
            f2.accumulate(df2p[:, :, pad:pad + h, pad:pad + w])

    return make_result(out, (f1, f2), backward)


def leaky_relu(x: Tensor, slope: float = 0.1) -> Tensor:
    pos = x.data > 0
    factor = np.where(pos, 1.0, slope).astype(x.dtype)

    def backward(g):
        x.accumulate(g * factor)

    return make_result(x.data * factor, (x,), backward)


def relu(x: Tensor) -> Tensor:
    return leaky_relu(x, 0.0)


def batch_norm_1d(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray, running_var: np.ndarray,
                  training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel normalization of (N, C, L); updates running stats in place when training."""
    n, c, length = x.shape
    shape = (1, c, 1)
    if training:
        m = n * length
        if m < 2:
            raise ShapeError("batch_norm_1d needs more than one value per channel in training mode")
        mean = x.data.mean(axis=(0, 2))
        var = x.data.var(axis=(0, 2))
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * var * (m / (m - 1))
    else:
        mean, var = running_mean, running_var
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x.data - mean.reshape(shape).astype(x.dtype)) * inv_std.reshape(shape)
    out = xhat * gamma.data.reshape(shape) + beta.data.reshape(shape)

    def backward(g):
        if gamma.requires_grad:
            gamma.accumulate((g * xhat).sum(axis=(0, 2)))
        if beta.requires_grad:
            beta.accumulate(g.sum(axis=(0, 2)))
        if x.requires_grad:
            gx = g * gamma.data.reshape(shape)
            if training:
                gx = (gx - gx.mean(axis=(0, 2), keepdims=True)
                      - xhat * (gx * xhat).mean(axis=(0, 2), keepdims=True))
            x.accumulate(gx * inv_std.reshape(shape))

    return make_result(out, (x, gamma, beta), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x: (N, F_in), weight: (F_out, F_in) -> (N, F_out)."""
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: input width {x.shape[-1]} vs weight {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        if x.requires_grad:
            x.accumulate(g @ weight.data)
        if weight.requires_grad:
            weight.accumulate(g.T @ x.data)
        if bias is not None and bias.requires_grad:
            bias.accumulate(g.sum(axis=0))

    return make_result(out, parents, backward)


def flatten(x: Tensor) -> Tensor:
    return x.reshape(x.shape[0], -1)


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        for t, part in zip(tensors, np.split(g, sizes, axis=axis)):
            if t.requires_grad:
                t.accumulate(part)

    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def row_norm(x: Tensor) -> Tensor:
    """Euclidean norm of each row of (N, D); subgradient 0 at the origin."""
    nrm = np.sqrt((x.data * x.data).sum(axis=1))

    def backward(g):
        safe = np.where(nrm > 0, nrm, 1.0)
        x.accumulate(np.where(nrm[:, None] > 0, x.data / safe[:, None], 0.0) * g[:, None])

    return make_result(nrm, (x,), backward)
