"""Attention modules: channel attention with dual pooling, a spatial gate
over pooled channel maps, their cascade, and all-pairs spatial attention
with a learnable residual weight, plus the channel+all-pairs cascade.
"""

from __future__ import annotations

import numpy as np

from .engine import (
    Tensor, Param, ShapeError,
    add, mul, sigmoid, softmax_rows, reshape, transpose, concat,
    reduce_mean, reduce_max, matmul, conv2d,
)
from .nn import Module, Conv2d

__all__ = [
    "EcaChannel", "CbamSpatial", "EcaCbam", "NonLocalSpatial", "EcaNonLocal",
]


class EcaChannel(Module):
    """Channel attention from a shared 1-D convolution over both the
    average-pooled and max-pooled channel descriptors.

    The two filtered descriptors are summed, squashed by a sigmoid, and
    applied as a per-channel scale.  The kernel is shared between the two
    pools and has no bias, so the module costs k parameters total.
    """

    def __init__(self, rng, k: int = 7):
        super().__init__()
        if k % 2 == 0:
            raise ShapeError("channel-attention kernel size must be odd")
        self.k = k
        std = np.sqrt(2.0 / k)
        self.kernel = Param(rng.normal(0.0, std, size=(1, 1, k)).astype(np.float32),
                            name="kernel")

    def _filter(self, d: Tensor, n: int, c: int) -> Tensor:
        # 1-D conv over the channel axis, realized as a 1xk 2-D conv on a
        # (N, 1, 1, C) view with zero padding (k-1)/2
        row = reshape(d, (n, 1, 1, c))
        w = reshape(self.kernel, (1, 1, 1, self.k))
        return conv2d(row, w, None, stride=1, pad=(0, (self.k - 1) // 2))

    def forward(self, x: Tensor) -> Tensor:
        n, c, h, w = x.data.shape
        flat = reshape(x, (n, c, h * w))
        d_avg = reduce_mean(flat, axis=2)
        d_max = reduce_max(flat, axis=2)
        gate = sigmoid(add(self._filter(d_avg, n, c), self._filter(d_max, n, c)))
        return mul(x, reshape(gate, (n, c, 1, 1)))


class CbamSpatial(Module):
    """Spatial attention: a 7x7 convolution over the concatenated
    channel-mean and channel-max maps, sigmoid-squashed and applied as a
    per-position scale."""

    def __init__(self, rng, k: int = 7):
        super().__init__()
        if k % 2 == 0:
            raise ShapeError("spatial-attention kernel size must be odd")
        self.conv = Conv2d(rng, 2, 1, k, pad=(k - 1) // 2, bias=False)

    def forward(self, x: Tensor) -> Tensor:
        pooled = concat([reduce_mean(x, axis=1, keepdims=True),
                         reduce_max(x, axis=1, keepdims=True)], axis=1)
        gate = sigmoid(self.conv(pooled))
        return mul(x, gate)


class EcaCbam(Module):
    """Channel attention first, then spatial attention."""

    def __init__(self, rng, k_channel: int = 7, k_spatial: int = 7):
        super().__init__()
        self.channel = EcaChannel(rng, k_channel)
        self.spatial = CbamSpatial(rng, k_spatial)

    def forward(self, x: Tensor) -> Tensor:
        return self.spatial(self.channel(x))


class NonLocalSpatial(Module):
    """All-pairs spatial attention in embedded-Gaussian form.

    theta/phi/g project to C/8 channels through bias-free 1x1 convolutions;
    the n x n affinity (n = H*W) is row-softmaxed, applied to g, projected
    back to C by wz, and added to the input scaled by the learnable gamma.
    gamma starts at zero, so the module is initially an exact identity.
    """

    def __init__(self, rng, channels: int):
        super().__init__()
        if channels % 8:
            raise ShapeError(
                f"all-pairs attention needs channels divisible by 8, got {channels}")
        c8 = channels // 8
        self.channels = channels
        self.theta = Conv2d(rng, channels, c8, 1, bias=False)
        self.phi = Conv2d(rng, channels, c8, 1, bias=False)
        self.g = Conv2d(rng, channels, c8, 1, bias=False)
        self.wz = Conv2d(rng, c8, channels, 1, bias=False)
        self.gamma = Param(np.zeros((), np.float32), name="gamma")

    def forward(self, x: Tensor) -> Tensor:
        n, c, h, w = x.data.shape
        if c != self.channels:
            raise ShapeError(f"expected {self.channels} channels, got {c}")
        c8 = c // 8
        sp = h * w
        th = transpose(reshape(self.theta(x), (n, c8, sp)), (0, 2, 1))  # (N, n, C/8)
        ph = reshape(self.phi(x), (n, c8, sp))                          # (N, C/8, n)
        gv = transpose(reshape(self.g(x), (n, c8, sp)), (0, 2, 1))      # (N, n, C/8)
        attn = softmax_rows(matmul(th, ph))                             # (N, n, n)
        y = transpose(matmul(attn, gv), (0, 2, 1))                      # (N, C/8, n)
        z = self.wz(reshape(y, (n, c8, h, w)))
        return add(x, mul(z, self.gamma))


class EcaNonLocal(Module):
    """Channel attention followed by all-pairs spatial attention."""

    def __init__(self, rng, channels: int, k_channel: int = 7):
        super().__init__()
        self.channel = EcaChannel(rng, k_channel)
        self.spatial = NonLocalSpatial(rng, channels)

    def forward(self, x: Tensor) -> Tensor:
        return self.spatial(self.channel(x))
