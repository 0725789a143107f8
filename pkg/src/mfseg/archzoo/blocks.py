"""Shared building blocks for the encoder-decoder families."""
from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..layers import BatchNorm2d, Conv2d, ConvBnRelu, Module, ModuleList


class DoubleConv(Module):
    """Two 3x3 same-padded convolutions with ReLU (classic u-net stage, no BN)."""

    def __init__(self, cin, cout, rng):
        super().__init__()
        self.c1 = Conv2d(cin, cout, 3, rng, padding=1)
        self.c2 = Conv2d(cout, cout, 3, rng, padding=1)

    def forward(self, x, ctx):
        return ad.relu(self.c2(ad.relu(self.c1(x, ctx)), ctx))


class ResidualBlock(Module):
    """Pre-activation residual unit: x + conv(relu(bn(conv(relu(bn(x)))))).

    With all parameters zeroed the block is exactly the identity when
    cin == cout (the shortcut is a 1x1 projection only on channel change).
    """

    def __init__(self, cin, cout, rng):
        super().__init__()
        self.bn1 = BatchNorm2d(cin)
        self.c1 = Conv2d(cin, cout, 3, rng, padding=1, bias=False)
        self.bn2 = BatchNorm2d(cout)
        self.c2 = Conv2d(cout, cout, 3, rng, padding=1, bias=False)
        self.proj = Conv2d(cin, cout, 1, rng, bias=False) if cin != cout else None

    def forward(self, x, ctx):
        h = self.c1(ad.relu(self.bn1(x, ctx)), ctx)
        h = self.c2(ad.relu(self.bn2(h, ctx)), ctx)
        sc = x if self.proj is None else self.proj(x, ctx)
        return ad.add(h, sc)


class BasicEncoderBlock(Module):
    """Post-activation residual basic block with optional stride-2 downsampling."""

    def __init__(self, cin, cout, rng, stride=1):
        super().__init__()
        self.c1 = Conv2d(cin, cout, 3, rng, stride=stride, padding=1, bias=False)
        self.bn1 = BatchNorm2d(cout)
        self.c2 = Conv2d(cout, cout, 3, rng, padding=1, bias=False)
        self.bn2 = BatchNorm2d(cout)
        if stride != 1 or cin != cout:
            self.proj = Conv2d(cin, cout, 1, rng, stride=stride, bias=False)
            self.proj_bn = BatchNorm2d(cout)
        else:
            self.proj = None

    def forward(self, x, ctx):
        h = ad.relu(self.bn1(self.c1(x, ctx), ctx))
        h = self.bn2(self.c2(h, ctx), ctx)
        sc = x if self.proj is None else self.proj_bn(self.proj(x, ctx), ctx)
        return ad.relu(ad.add(h, sc))


class SqueezeExcite(Module):
    """Channel re-weighting: global pool -> bottleneck MLP -> sigmoid scale."""

    REDUCTION = 4

    def __init__(self, channels, rng):
        super().__init__()
        hidden = max(channels // self.REDUCTION, 1)
        self.fc1 = Conv2d(channels, hidden, 1, rng)
        self.fc2 = Conv2d(hidden, channels, 1, rng)

    def forward(self, x, ctx):
        s = ad.global_avg_pool(x)
        s = ad.sigmoid(self.fc2(ad.relu(self.fc1(s, ctx)), ctx))
        return ad.mul(x, s)


class AtrousBridge(Module):
    """Parallel dilated 3x3 convolutions (rates 1, 2, 4) fused by a 1x1 conv."""

    RATES = (1, 2, 4)

    def __init__(self, channels, rng):
        super().__init__()
        branch_w = max(channels // 2, 1)
        self.branches = ModuleList(
            [ConvBnRelu(channels, branch_w, 3, rng, padding=r, dilation=r) for r in self.RATES]
        )
        self.fuse = ConvBnRelu(branch_w * len(self.RATES), channels, 1, rng)

    def forward(self, x, ctx):
        outs = [b(x, ctx) for b in self.branches]
        return self.fuse(ad.concat(outs, axis=1), ctx)


class AttentionGate(Module):
    """Additive soft attention on a skip connection.

    The gating signal is the decoder feature originating from the coarser
    stage (already upsampled to the skip's resolution). Coefficients are a
    per-pixel sigmoid map broadcast over the skip channels.
    """

    def __init__(self, channels, rng):
        super().__init__()
        inter = max(channels // 2, 1)
        self.wg = Conv2d(channels, inter, 1, rng)
        self.wx = Conv2d(channels, inter, 1, rng)
        self.psi = Conv2d(inter, 1, 1, rng)

    def forward(self, skip, gate, ctx):
        a = ad.relu(ad.add(self.wg(gate, ctx), self.wx(skip, ctx)))
        coeff = ad.sigmoid(self.psi(a, ctx))
        return ad.mul(skip, coeff), coeff


class InceptionBlock(Module):
    """Mixed block with 1x1, 3x3, factorized double-3x3 and pooled branches.

    Branch widths are chosen so the concatenated output has exactly cout
    channels.
    """

    def __init__(self, cin, cout, rng):
        super().__init__()
        b = max(cout // 4, 1)
        w0 = cout - 3 * b  # absorbs the remainder
        if w0 < 1:
            w0, b = 1, max((cout - 1) // 3, 1)
        self.b0 = ConvBnRelu(cin, w0, 1, rng)
        self.b1a = ConvBnRelu(cin, b, 1, rng)
        self.b1b = ConvBnRelu(b, b, 3, rng, padding=1)
        self.b2a = ConvBnRelu(cin, b, 1, rng)
        self.b2b = ConvBnRelu(b, b, 3, rng, padding=1)
        self.b2c = ConvBnRelu(b, b, 3, rng, padding=1)
        self.b3 = ConvBnRelu(cin, b, 1, rng)
        self.out_channels = w0 + 3 * b

    def forward(self, x, ctx):
        o0 = self.b0(x, ctx)
        o1 = self.b1b(self.b1a(x, ctx), ctx)
        o2 = self.b2c(self.b2b(self.b2a(x, ctx), ctx), ctx)
        o3 = self.b3(ad.avg_pool3x3_same(x), ctx)
        return ad.concat([o0, o1, o2, o3], axis=1)


def default_dropout_schedule(depth: int) -> tuple[float, ...]:
    """Ramp from 0.1 to 0.3 over depth+1 stages, floored to 0.1 steps.

    Depth 4 yields the canonical (0.1, 0.1, 0.2, 0.2, 0.3).
    """
    raw = np.linspace(0.1, 0.3, depth + 1)
    return tuple(round(float(np.floor(v / 0.1 + 1e-9) * 0.1), 2) for v in raw)
