"""Layer modules over the autodiff engine.

A Module owns Params, numpy buffers, and child modules, registered in
definition order so the parameter registry (and therefore the weight file
layout) is stable.  Calling a module runs its forward inside a named scope,
which is what the per-layer cost reports key on.
"""

from __future__ import annotations

import numpy as np

from .engine import (
    Tensor, Param, ShapeError, scope,
    add, mul, relu, reshape,
    conv2d, batchnorm,
)

__all__ = [
    "Module", "Conv2d", "BatchNorm2d", "ConvBnRelu", "DwSeparable",
    "SoftGate", "soft_gated_residual", "ResidualBlock",
]


class Module:
    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "training", True)
        object.__setattr__(self, "_label", type(self).__name__.lower())

    def __setattr__(self, name, value):
        if isinstance(value, Param):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
            value._label = name
        object.__setattr__(self, name, value)

    def register_buffer(self, name, array: np.ndarray):
        self._buffers[name] = array
        object.__setattr__(self, name, array)

    def named_params(self, prefix: str = ""):
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_params(prefix + cname + ".")

    def named_buffers(self, prefix: str = ""):
        for name, b in self._buffers.items():
            yield prefix + name, b
        for cname, child in self._children.items():
            yield from child.named_buffers(prefix + cname + ".")

    def params(self):
        return [p for _, p in self.named_params()]

    def train(self, mode: bool = True):
        object.__setattr__(self, "training", mode)
        for child in self._children.values():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def forward(self, *args):
        raise NotImplementedError

    def __call__(self, *args):
        with scope(self._label):
            return self.forward(*args)


def _conv_weight(rng: np.random.Generator, cout, cin_per_group, cout_per_group, kh, kw):
    # fan-out counts the connections each input element feeds within its
    # group, which keeps depthwise kernels sensibly scaled
    fan_out = cout_per_group * kh * kw
    std = np.sqrt(2.0 / fan_out)
    return rng.normal(0.0, std, size=(cout, cin_per_group, kh, kw)).astype(np.float32)


class Conv2d(Module):
    def __init__(self, rng, cin, cout, k, stride=1, pad=0, groups=1, bias=True):
        super().__init__()
        if cin % groups or cout % groups:
            raise ShapeError("channel counts must be divisible by groups")
        kh, kw = (k, k) if isinstance(k, int) else k
        self.stride = stride
        self.pad = pad
        self.groups = groups
        self.w = Param(_conv_weight(rng, cout, cin // groups, cout // groups, kh, kw),
                       name="w")
        self.b = Param(np.zeros(cout, np.float32), name="b") if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.w, self.b, stride=self.stride, pad=self.pad,
                      groups=self.groups)


class BatchNorm2d(Module):
    def __init__(self, channels, momentum=0.1, eps=1e-5):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.gamma = Param(np.ones(channels, np.float32), name="gamma")
        self.beta = Param(np.zeros(channels, np.float32), name="beta")
        self.register_buffer("running_mean", np.zeros(channels, np.float32))
        self.register_buffer("running_var", np.ones(channels, np.float32))

    def forward(self, x: Tensor) -> Tensor:
        return batchnorm(x, self.gamma, self.beta, self.running_mean,
                         self.running_var, self.training,
                         momentum=self.momentum, eps=self.eps)


class ConvBnRelu(Module):
    """conv (no bias) -> batchnorm -> relu."""

    def __init__(self, rng, cin, cout, k, stride=1, pad=0, groups=1):
        super().__init__()
        self.conv = Conv2d(rng, cin, cout, k, stride=stride, pad=pad,
                           groups=groups, bias=False)
        self.bn = BatchNorm2d(cout)

    def forward(self, x: Tensor) -> Tensor:
        return relu(self.bn(self.conv(x)))


class DwSeparable(Module):
    """Depthwise 3x3 then pointwise 1x1, each conv -> BN -> ReLU."""

    def __init__(self, rng, cin, cout, stride=1):
        super().__init__()
        self.dw = ConvBnRelu(rng, cin, cin, 3, stride=stride, pad=1, groups=cin)
        self.pw = ConvBnRelu(rng, cin, cout, 1)

    def forward(self, x: Tensor) -> Tensor:
        return self.pw(self.dw(x))


class SoftGate(Module):
    """Per-channel scale on a residual branch, initialized to 1 so the gated
    block starts out exactly equal to a plain residual block."""

    def __init__(self, channels):
        super().__init__()
        self.alpha = Param(np.ones(channels, np.float32), name="alpha")

    def forward(self, x: Tensor, branch: Tensor) -> Tensor:
        return soft_gated_residual(x, branch, self.alpha)


def soft_gated_residual(x: Tensor, block_output: Tensor, alpha: Tensor) -> Tensor:
    """x + alpha * block_output with alpha broadcast per channel."""
    if x.data.shape != block_output.data.shape:
        raise ShapeError(
            f"residual operands differ: {x.data.shape} vs {block_output.data.shape}")
    c = x.data.shape[1]
    if alpha.data.shape != (c,):
        raise ShapeError(f"gate expects extent {c}, got {alpha.data.shape}")
    return add(x, mul(block_output, reshape(alpha, (1, c, 1, 1))))


class ResidualBlock(Module):
    """Channel-preserving block: depthwise 3x3 and pointwise 1x1 sublayers
    (each conv -> BN -> ReLU) joined to the input by a soft-gated residual,
    or a plain residual when the gate is disabled."""

    def __init__(self, rng, channels, use_soft_gate=True):
        super().__init__()
        self.dw = ConvBnRelu(rng, channels, channels, 3, pad=1, groups=channels)
        self.pw = ConvBnRelu(rng, channels, channels, 1)
        self.gate = SoftGate(channels) if use_soft_gate else None

    def forward(self, x: Tensor) -> Tensor:
        branch = self.pw(self.dw(x))
        if self.gate is not None:
            return self.gate(x, branch)
        return add(x, branch)
