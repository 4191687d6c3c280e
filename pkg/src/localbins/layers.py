"""Layer primitives on top of :mod:`localbins.tensor`."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, _record, linear, relu, reshape, softmax, transpose


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of [N, C, H, W] with a [C', C, kh, kw] kernel."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError("conv2d expects 4-D input and kernel")
    n, c, h, w = x.shape
    c_out, c_in, kh, kw = weight.shape
    if c != c_in:
        raise ShapeError(f"conv2d channel mismatch: input has {c}, kernel expects {c_in}")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"conv2d output extent would be {ho}x{wo}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"conv2d bias shape {bias.shape}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    # cols: [N, Ho, Wo, C, kh, kw] flattened to rows for one GEMM
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * kh * kw)
    wmat = weight.data.reshape(c_out, -1)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(out.reshape(n, ho, wo, c_out).transpose(0, 3, 1, 2))

    def bw(g):
        grows = g.transpose(0, 2, 3, 1).reshape(-1, c_out)
        gw = (grows.T @ cols).reshape(weight.shape)
        gcols = (grows @ wmat).reshape(n, ho, wo, c, kh, kw)
        gxp = np.zeros(xp.shape, dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += gcols[:, :, :, :, i, j].transpose(
                    0, 3, 1, 2
                )
        gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
        grads = [gx, gw]
        if bias is not None:
            grads.append(grows.sum(axis=0))
        return tuple(grads)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _record(out, parents, bw, "conv2d")


def _upsample_matrix(n: int, dtype) -> np.ndarray:
    """Dense [2n, n] interpolation matrix; reference for the stencil path."""
    # align_corners=False: source = (dst + 0.5) / 2 - 0.5, clamped at the borders
    u = np.zeros((2 * n, n), dtype=dtype)
    for dst in range(2 * n):
        src = max((dst + 0.5) / 2 - 0.5, 0.0)
        lo = min(int(np.floor(src)), n - 1)
        hi = min(lo + 1, n - 1)
        frac = src - lo
        u[dst, lo] += 1.0 - frac
        u[dst, hi] += frac
    return u


def _up_axis(a: np.ndarray, axis: int) -> np.ndarray:
    # each source sample feeds two outputs with 0.75 / 0.25 taps, edges clamped
    a = np.moveaxis(a, axis, -1)
    left = np.concatenate([a[..., :1], a[..., :-1]], axis=-1)
    right = np.concatenate([a[..., 1:], a[..., -1:]], axis=-1)
    out = np.empty(a.shape[:-1] + (2 * a.shape[-1],), dtype=a.dtype)
    out[..., 0::2] = 0.75 * a + 0.25 * left
    out[..., 1::2] = 0.75 * a + 0.25 * right
    return np.moveaxis(out, -1, axis)


def _up_axis_adjoint(g: np.ndarray, axis: int) -> np.ndarray:
    g = np.moveaxis(g, axis, -1)
    ge, go = g[..., 0::2], g[..., 1::2]
    gx = 0.75 * (ge + go)
    gx[..., :-1] += 0.25 * ge[..., 1:]
    gx[..., 0] += 0.25 * ge[..., 0]
    gx[..., 1:] += 0.25 * go[..., :-1]
    gx[..., -1] += 0.25 * go[..., -1]
    return np.moveaxis(gx, -1, axis)


def bilinear_upsample2x(x: Tensor) -> Tensor:
    """Bilinear 2x upsampling of [N, C, H, W] with align_corners=False."""
    if x.ndim != 4:
        raise ShapeError("bilinear_upsample2x expects [N, C, H, W]")
    out = np.ascontiguousarray(_up_axis(_up_axis(x.data, 2), 3))

    def bw(g):
        return (np.ascontiguousarray(_up_axis_adjoint(_up_axis_adjoint(g, 3), 2)),)

    return _record(out, (x,), bw, "upsample2x")


def softmax_channel(x: Tensor) -> Tensor:
    """Softmax over axis 1 of [N, C, H, W] (or [B, C])."""
    return softmax(x, axis=1)


def pointwise_mlp(x: Tensor, params: dict, prefix: str) -> Tensor:
    """Three-layer MLP (two hidden ReLU layers) applied per location.

    Works on spatial maps [N, C, H, W] (as a stack of 1x1 convolutions) and on
    flat batches [B, C] with the same weights ``{prefix}.w{1,2,3}`` and
    ``{prefix}.b{1,2,3}``.
    """
    w1 = params[f"{prefix}.w1"]
    if x.shape[1] != w1.shape[1]:
        raise ShapeError(f"{prefix}: input has {x.shape[1]} channels, MLP expects {w1.shape[1]}")
    spatial = x.ndim == 4
    if spatial:
        n, c, h, w = x.shape
        rows = reshape(transpose(x, (0, 2, 3, 1)), (n * h * w, c))
    elif x.ndim == 2:
        rows = x
    else:
        raise ShapeError(f"pointwise_mlp expects 2-D or 4-D input, got {x.shape}")
    hdn = relu(linear(rows, w1, params[f"{prefix}.b1"]))
    hdn = relu(linear(hdn, params[f"{prefix}.w2"], params[f"{prefix}.b2"]))
    out = linear(hdn, params[f"{prefix}.w3"], params[f"{prefix}.b3"])
    if spatial:
        out = transpose(reshape(out, (n, h, w, out.shape[1])), (0, 3, 1, 2))
    return out


def init_mlp(params: dict, prefix: str, rng: np.random.Generator, c_in: int, hidden: int, c_out: int, dtype) -> None:
    for i, (fi, fo) in enumerate([(c_in, hidden), (hidden, hidden), (hidden, c_out)], start=1):
        params[f"{prefix}.w{i}"] = kaiming_uniform(rng, (fo, fi), fi, dtype)
        params[f"{prefix}.b{i}"] = bias_uniform(rng, fo, fi, dtype)


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> Tensor:
    bound = np.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, dtype=dtype)


def bias_uniform(rng: np.random.Generator, n: int, fan_in: int, dtype) -> Tensor:
    # nonzero biases keep pre-activations off the ReLU kink when an input vector is all zeros
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=n), requires_grad=True, dtype=dtype)
