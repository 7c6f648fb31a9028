"""A small U-Net with hand-written reverse mode.

Encoder: a 3x3 conv at full resolution, then one stride-2 3x3 conv per
extra level and a 3x3 conv at the bottom.  Decoder, per level: nearest x2
upsample, 3x3 conv (fused, see ``layers.upconv_forward``), concatenation
with the encoder skip, 3x3 merge conv.
A 1x1 head maps to the output channels.  Hidden layers use a leaky
rectifier; the head is linear.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layers as L
from .. import rng as rngmod


@dataclass(frozen=True)
class NetArch:
    in_channels: int
    channels: tuple[int, ...] = (16, 32, 64)
    out_channels: int = 3
    slope: float = L.LEAKY_SLOPE

    @property
    def levels(self) -> int:
        return len(self.channels)

    @property
    def divisor(self) -> int:
        return 2 ** (self.levels - 1)

    def describe(self) -> str:
        return (f"unet in={self.in_channels} channels={','.join(map(str, self.channels))} "
                f"out={self.out_channels} slope={self.slope!r}")

    def layer_specs(self) -> list[tuple[str, int, int, int]]:
        """``(name, in, out, kernel)`` for every conv, in forward order."""
        c = self.channels
        specs = [("enc0", self.in_channels, c[0], 3)]
        for lvl in range(1, self.levels):
            specs.append((f"down{lvl}", c[lvl - 1], c[lvl], 3))
        specs.append(("bottom", c[-1], c[-1], 3))
        for lvl in range(self.levels - 1, 0, -1):
            specs.append((f"up{lvl}", c[lvl], c[lvl - 1], 3))
            specs.append((f"merge{lvl}", 2 * c[lvl - 1], c[lvl - 1], 3))
        specs.append(("head", c[0], self.out_channels, 1))
        return specs

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {}
        for name, cin, cout, k in self.layer_specs():
            shapes[f"{name}.w"] = (cout, cin, k, k)
            shapes[f"{name}.b"] = (cout,)
        return shapes


def init_params(arch: NetArch, seed: int, prefix: str = "", dtype=np.float32) -> dict[str, np.ndarray]:
    """He-normal weights (std sqrt(2 / fan_in)), zero biases."""
    params = {}
    for name, cin, cout, k in arch.layer_specs():
        g = rngmod.stream(seed, prefix, name)
        std = np.sqrt(2.0 / (cin * k * k))
        params[f"{prefix}{name}.w"] = (std * g.standard_normal((cout, cin, k, k))).astype(dtype)
        params[f"{prefix}{name}.b"] = np.zeros(cout, dtype=dtype)
    return params


class UNet:
    """Stateless network bound to an architecture and a parameter-name prefix."""

    def __init__(self, arch: NetArch, prefix: str = ""):
        self.arch = arch
        self.prefix = prefix

    def _p(self, params, name):
        return params[self.prefix + name + ".w"], params[self.prefix + name + ".b"]

    def _conv(self, params, name, x, stride, tape, act=True, up=False):
        w, b = self._p(params, name)
        if up:
            z, cache = L.upconv_forward(x, w, b)
        else:
            z, cache = L.conv_forward(x, w, b, stride)
        tape[name] = (cache, z if act else None, up)
        return L.leaky_relu(z, self.arch.slope) if act else z

    def forward(self, params, x):
        """Returns ``(y, tape)``; ``tape`` holds what :meth:`backward` needs."""
        arch = self.arch
        c, h, w = x.shape
        if c != arch.in_channels:
            raise ValueError(f"network expects {arch.in_channels} input channels, got {c}")
        if h % arch.divisor or w % arch.divisor:
            raise ValueError(f"spatial size {h}x{w} not divisible by {arch.divisor}")
        tape = {}
        skips = [self._conv(params, "enc0", x, 1, tape)]
        for lvl in range(1, arch.levels):
            skips.append(self._conv(params, f"down{lvl}", skips[-1], 2, tape))
        hcur = self._conv(params, "bottom", skips[-1], 1, tape)
        for lvl in range(arch.levels - 1, 0, -1):
            u = self._conv(params, f"up{lvl}", hcur, 1, tape, up=True)
            hcur = self._conv(params, f"merge{lvl}", np.concatenate([u, skips[lvl - 1]]), 1, tape)
        y = self._conv(params, "head", hcur, 1, tape, act=False)
        return y, tape

    def _back(self, params, name, dy, tape, grads, need_dx=True):
        cache, z, up = tape[name]
        if z is not None:
            dy = L.leaky_relu_backward(dy, z, self.arch.slope)
        w, _ = self._p(params, name)
        backward = L.upconv_backward if up else L.conv_backward
        dx, dw, db = backward(dy, w, cache, need_dx)
        grads[self.prefix + name + ".w"] = dw
        grads[self.prefix + name + ".b"] = db
        return dx

    def backward(self, params, tape, dy, need_dx=True):
        """Gradients for every parameter plus (optionally) the input gradient."""
        arch = self.arch
        grads = {}
        dh = self._back(params, "head", dy, tape, grads)
        dskips = [None] * arch.levels
        # decoder ran coarse-to-fine, so walk it fine-to-coarse
        for lvl in range(1, arch.levels):
            dcat = self._back(params, f"merge{lvl}", dh, tape, grads)
            c_up = arch.channels[lvl - 1]
            dskips[lvl - 1] = dcat[c_up:]
            dh = self._back(params, f"up{lvl}", dcat[:c_up], tape, grads)
        dskips[-1] = self._back(params, "bottom", dh, tape, grads)
        for lvl in range(arch.levels - 1, 0, -1):
            dskips[lvl - 1] = dskips[lvl - 1] + self._back(params, f"down{lvl}", dskips[lvl], tape, grads)
        dx = self._back(params, "enc0", dskips[0], tape, grads, need_dx=need_dx)
        return grads, dx
