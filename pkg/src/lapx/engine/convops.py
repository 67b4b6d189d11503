"""Spatial primitives: grouped 2-D convolution, 2x2 max-pool, nearest
upsampling, and batch normalization.

Convolution is cross-correlation (no kernel flip).  Three forward paths keep
the pure-numpy engine fast enough for desk-scale training: a GEMM path for
1x1 pointwise, an einsum path for depthwise, and grouped im2col for the rest.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, ShapeError, _make, accumulate

__all__ = ["conv2d", "maxpool2x2", "upsample_nearest2x", "batchnorm"]


def _pad_pair(pad) -> tuple[int, int]:
    if isinstance(pad, tuple):
        ph, pw = pad
    else:
        ph = pw = int(pad)
    if ph < 0 or pw < 0:
        raise ShapeError("pad must be non-negative")
    return ph, pw


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1,
           pad=0, groups: int = 1) -> Tensor:
    """Grouped cross-correlation.

    x: (N, Cin, H, W); w: (Cout, Cin/groups, kH, kW); b: (Cout,) or None.
    ``pad`` is a single int applied to both axes, or an (padH, padW) pair.
    Output spatial extent: floor((H + 2*pad - kH) / stride) + 1.
    """
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError("conv2d expects rank-4 input and weight")
    n, cin, h, wd = x.data.shape
    cout, cg, kh, kw = w.data.shape
    if stride < 1 or groups < 1:
        raise ShapeError("stride and groups must be positive")
    if cin % groups or cout % groups:
        raise ShapeError(
            f"channels not divisible by groups: Cin={cin}, Cout={cout}, groups={groups}")
    if cg != cin // groups:
        raise ShapeError(
            f"weight expects Cin/groups={cg}, input gives {cin // groups}")
    ph, pw = _pad_pair(pad)
    if h + 2 * ph < kh or wd + 2 * pw < kw:
        raise ShapeError("padded extent smaller than kernel extent")
    ho = (h + 2 * ph - kh) // stride + 1
    wo = (wd + 2 * pw - kw) // stride + 1

    xd = x.data
    if ph or pw:
        xp = np.pad(xd, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    else:
        xp = xd

    macs = n * cout * ho * wo * cg * kh * kw

    if kh == 1 and kw == 1 and groups == 1 and stride == 1:
        # pointwise: one batched GEMM
        w2 = w.data.reshape(cout, cin)
        xm = xp.reshape(n, cin, ho * wo)
        out = np.matmul(w2, xm).reshape(n, cout, ho, wo)
        if b is not None:
            out = out + b.data.reshape(1, cout, 1, 1)

        def bw(g):
            gm = g.reshape(n, cout, ho * wo)
            accumulate(x, np.matmul(w2.T, gm).reshape(n, cin, h, wd))
            gw = np.einsum("nof,ncf->oc", gm, xm, optimize=True)
            accumulate(w, gw.reshape(w.data.shape))
            if b is not None:
                accumulate(b, g.sum(axis=(0, 2, 3)))

        return _make(out, "conv1x1", _conv_parents(x, w, b), bw, macs=macs)

    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # win: (N, Cin, Ho, Wo, kH, kW)

    if groups == cin and cout == cin:
        wk = w.data.reshape(cin, kh, kw)
        out = np.einsum("nchwij,cij->nchw", win, wk, optimize=True)
        if b is not None:
            out = out + b.data.reshape(1, cout, 1, 1)

        def bw(g):
            gw = np.einsum("nchw,nchwij->cij", g, win, optimize=True)
            accumulate(w, gw.reshape(w.data.shape))
            gx = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += (
                        g * wk[:, i, j].reshape(1, cin, 1, 1))
            accumulate(x, gx[:, :, ph:ph + h, pw:pw + wd] if (ph or pw) else gx)
            if b is not None:
                accumulate(b, g.sum(axis=(0, 2, 3)))

        return _make(out, "convdw", _conv_parents(x, w, b), bw, macs=macs)

    # general grouped path via im2col
    og = cout // groups
    cols = win.reshape(n, groups, cg, ho, wo, kh, kw)
    cols = cols.transpose(1, 0, 3, 4, 2, 5, 6).reshape(groups, n * ho * wo, cg * kh * kw)
    wg = w.data.reshape(groups, og, cg * kh * kw)
    out = np.matmul(cols, wg.swapaxes(1, 2))          # (G, N*Ho*Wo, Og)
    out = out.reshape(groups, n, ho, wo, og).transpose(1, 0, 4, 2, 3)
    out = np.ascontiguousarray(out).reshape(n, cout, ho, wo)
    if b is not None:
        out = out + b.data.reshape(1, cout, 1, 1)

    def bw(g):
        gg = g.reshape(n, groups, og, ho, wo).transpose(1, 0, 3, 4, 2)
        gg = np.ascontiguousarray(gg).reshape(groups, n * ho * wo, og)
        gw = np.matmul(gg.swapaxes(1, 2), cols)       # (G, Og, Cg*kH*kW)
        accumulate(w, gw.reshape(w.data.shape))
        gcols = np.matmul(gg, wg)                     # (G, N*Ho*Wo, Cg*kH*kW)
        gcols = gcols.reshape(groups, n, ho, wo, cg, kh, kw)
        gx = np.zeros_like(xp).reshape(n, groups, cg, h + 2 * ph, wd + 2 * pw)
        for i in range(kh):
            for j in range(kw):
                gx[:, :, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += (
                    gcols[:, :, :, :, :, i, j].transpose(1, 0, 4, 2, 3))
        gx = gx.reshape(n, cin, h + 2 * ph, wd + 2 * pw)
        accumulate(x, gx[:, :, ph:ph + h, pw:pw + wd] if (ph or pw) else gx)
        if b is not None:
            accumulate(b, g.sum(axis=(0, 2, 3)))

    return _make(out, "conv2d", _conv_parents(x, w, b), bw, macs=macs)


def _conv_parents(x, w, b):
    return (x, w) if b is None else (x, w, b)


def maxpool2x2(x: Tensor):
    """2x2/stride-2 max pool.

    Returns (pooled, indices); indices give each maximum's flat row-major
    position in its input H*W plane (first occurrence wins ties) and are
    what routes the gradient.
    """
    n, c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2x2 needs even spatial extent, got {h}x{w}")
    ho, wo = h // 2, w // 2
    win = x.data.reshape(n, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5)
    win = np.ascontiguousarray(win).reshape(n, c, ho, wo, 4)
    idx4 = np.argmax(win, axis=-1)
    out = np.take_along_axis(win, idx4[..., None], axis=-1)[..., 0]

    py, px = np.meshgrid(np.arange(ho), np.arange(wo), indexing="ij")
    rows = 2 * py[None, None] + idx4 // 2
    colv = 2 * px[None, None] + idx4 % 2
    indices = rows * w + colv

    def bw(g):
        buf = np.zeros((n, c, ho, wo, 4), dtype=g.dtype)
        np.put_along_axis(buf, idx4[..., None], g[..., None], axis=-1)
        gx = buf.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        accumulate(x, gx)

    return _make(out, "maxpool2x2", (x,), bw, eops=x.data.size), indices


def upsample_nearest2x(x: Tensor) -> Tensor:
    """Replicate each element into a 2x2 block."""
    n, c, h, w = x.data.shape
    out = np.broadcast_to(x.data[:, :, :, None, :, None], (n, c, h, 2, w, 2))
    out = np.ascontiguousarray(out).reshape(n, c, 2 * h, 2 * w)

    def bw(g):
        accumulate(x, g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)))

    return _make(out, "upsample2x", (x,), bw, eops=out.size)


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
              running_var: np.ndarray, training: bool, momentum: float = 0.1,
              eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization over (N, H, W).

    Train mode normalizes by batch statistics and updates the running
    buffers in place (unbiased variance for the running estimate, biased for
    normalization).  Eval mode normalizes by the running buffers.
    """
    if eps <= 0:
        raise ShapeError("batchnorm eps must be positive")
    n, c, h, w = x.data.shape
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeError("batchnorm parameter extent must equal channel count")
    cnt = n * h * w

    if training:
        mu = x.data.mean(axis=(0, 2, 3))
        diff = x.data - mu.reshape(1, c, 1, 1)
        var = np.mean(diff * diff, axis=(0, 2, 3))
        unbiased = var * (cnt / (cnt - 1)) if cnt > 1 else var
        running_mean *= (1.0 - momentum)
        running_mean += momentum * mu
        running_var *= (1.0 - momentum)
        running_var += momentum * unbiased
        ivstd = 1.0 / np.sqrt(var + eps)
        xhat = diff * ivstd.reshape(1, c, 1, 1)
        out = gamma.data.reshape(1, c, 1, 1) * xhat + beta.data.reshape(1, c, 1, 1)

        def bw(g):
            accumulate(gamma, (g * xhat).sum(axis=(0, 2, 3)))
            accumulate(beta, g.sum(axis=(0, 2, 3)))
            gxh = g * gamma.data.reshape(1, c, 1, 1)
            s1 = gxh.sum(axis=(0, 2, 3), keepdims=True)
            s2 = (gxh * xhat).sum(axis=(0, 2, 3), keepdims=True)
            gx = (gxh - s1 / cnt - xhat * s2 / cnt) * ivstd.reshape(1, c, 1, 1)
            accumulate(x, gx)

        return _make(out, "batchnorm", (x, gamma, beta), bw, eops=4 * x.data.size)

    ivstd = 1.0 / np.sqrt(running_var + eps)
    xhat = (x.data - running_mean.reshape(1, c, 1, 1)) * ivstd.reshape(1, c, 1, 1)
    out = gamma.data.reshape(1, c, 1, 1) * xhat + beta.data.reshape(1, c, 1, 1)

    def bw(g):
        accumulate(gamma, (g * xhat).sum(axis=(0, 2, 3)))
        accumulate(beta, g.sum(axis=(0, 2, 3)))
        accumulate(x, g * (gamma.data * ivstd).reshape(1, c, 1, 1))

    return _make(out, "batchnorm", (x, gamma, beta), bw, eops=2 * x.data.size)
