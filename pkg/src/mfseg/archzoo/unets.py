"""U-net family: classic, nested (unetpp), residual variants, attention gates.

Channel plan shared by the whole family: encoder stage i carries
base_width * 2^i channels; the bridge doubles the deepest stage; every
decoder stage halves back via a 4x4 stride-2 transposed convolution,
concatenates the skip and fuses with the stage block. The head is a 1x1
convolution + sigmoid.
"""
from __future__ import annotations

from .. import autodiff as ad
from ..layers import Conv2d, ConvTranspose2d, Dropout, Module, ModuleList
from .blocks import AtrousBridge, AttentionGate, DoubleConv, ResidualBlock, SqueezeExcite


class _EncoderDecoderBase(Module):
    """Common wiring for unet / resunet / attention variants."""

    block_cls = DoubleConv

    def __init__(self, spec, rng):
        super().__init__()
        depth, bw = spec.depth, spec.base_width
        self.depth = depth
        ch = [bw * 2**i for i in range(depth + 1)]
        self.enc = ModuleList(
            [self.block_cls(spec.in_channels if i == 0 else ch[i - 1], ch[i], rng) for i in range(depth)]
        )
        self.bridge = self.block_cls(ch[depth - 1], ch[depth], rng)
        self.drops = ModuleList([Dropout(r) for r in spec.dropout_schedule])
        self.ups = ModuleList([ConvTranspose2d(ch[i + 1], ch[i], rng) for i in range(depth)])
        self.dec = ModuleList([self.block_cls(2 * ch[i], ch[i], rng) for i in range(depth)])
        self.head = Conv2d(ch[0], 1, 1, rng)
        self._build_extras(spec, ch, rng)
        self.trace = {}

    def _build_extras(self, spec, ch, rng):
        pass

    def _encode(self, x, ctx):
        skips = []
        h = x
        for i in range(self.depth):
            h = self.drops[i](self.enc[i](h, ctx), ctx)
            h = self._post_encoder(i, h, ctx)
            skips.append(h)
            h = ad.max_pool2x2(h)
        h = self.drops[self.depth](self.bridge(h, ctx), ctx)
        h = self._post_bridge(h, ctx)
        self.trace["bridge"] = h.shape
        return h, skips

    def _post_encoder(self, i, h, ctx):
        return h

    def _post_bridge(self, h, ctx):
        return h

    def _decode_step(self, i, h, skip, ctx):
        d = self.ups[i](h, ctx)
        return self.dec[i](ad.concat([d, skip], axis=1), ctx)

    def forward(self, x, ctx):
        self.trace = {}
        h, skips = self._encode(x, ctx)
        for i in reversed(range(self.depth)):
            h = self._decode_step(i, h, skips[i], ctx)
        return ad.sigmoid(self.head(h, ctx))


class UNet(_EncoderDecoderBase):
    block_cls = DoubleConv


class ResUNet(_EncoderDecoderBase):
    block_cls = ResidualBlock


class ResUNetPP(_EncoderDecoderBase):
    """ResUNet plus squeeze-excitation on encoder stages and an atrous bridge."""

    block_cls = ResidualBlock

    def _build_extras(self, spec, ch, rng):
        self.se = ModuleList([SqueezeExcite(ch[i], rng) for i in range(spec.depth)])
        self.aspp = AtrousBridge(ch[spec.depth], rng)

    def _post_encoder(self, i, h, ctx):
        return self.se[i](h, ctx)

    def _post_bridge(self, h, ctx):
        return self.aspp(h, ctx)


class AttentionUNet(_EncoderDecoderBase):
    """U-net with additive attention gates on every skip connection.

    After each forward pass ``attention_maps`` holds the per-stage
    coefficient arrays (values in [0, 1], skip-resolution), shallowest first.
    """

    block_cls = DoubleConv

    def _build_extras(self, spec, ch, rng):
        self.gates = ModuleList([AttentionGate(ch[i], rng) for i in range(spec.depth)])
        self.attention_maps = []

    def forward(self, x, ctx):
        self.trace = {}
        self.attention_maps = [None] * self.depth
        h, skips = self._encode(x, ctx)
        for i in reversed(range(self.depth)):
            d = self.ups[i](h, ctx)
            gated, coeff = self.gates[i].forward(skips[i], d, ctx)
            self.attention_maps[i] = coeff.data
            h = self.dec[i](ad.concat([d, gated], axis=1), ctx)
        return ad.sigmoid(self.head(h, ctx))


class UNetPP(Module):
    """Nested u-net with dense skip pathways X[i][j] and deep supervision heads.

    With deep supervision enabled the forward pass returns one sigmoid head
    per dense column (depth heads, stacked on the channel axis); pruning at
    inference selects a single head L1..Ldepth, otherwise heads are averaged
    (handled by the Model wrapper).
    """

    def __init__(self, spec, rng):
        super().__init__()
        depth, bw = spec.depth, spec.base_width
        self.depth = depth
        self.deep_supervision = spec.deep_supervision
        ch = [bw * 2**i for i in range(depth + 1)]
        for i in range(depth + 1):
            cin = spec.in_channels if i == 0 else ch[i - 1]
            setattr(self, f"enc{i}", DoubleConv(cin, ch[i], rng))
        self.drops = ModuleList([Dropout(r) for r in spec.dropout_schedule])
        for j in range(1, depth + 1):
            for i in range(depth + 1 - j):
                setattr(self, f"up_{i}_{j}", ConvTranspose2d(ch[i + 1], ch[i], rng))
                setattr(self, f"node_{i}_{j}", DoubleConv((j + 1) * ch[i], ch[i], rng))
        n_heads = depth if spec.deep_supervision else 1
        self.heads = ModuleList([Conv2d(ch[0], 1, 1, rng) for _ in range(n_heads)])
        self.trace = {}

    def forward(self, x, ctx):
        self.trace = {}
        grid = {}
        h = x
        for i in range(self.depth + 1):
            if i > 0:
                h = ad.max_pool2x2(h)
            h = self.drops[i](getattr(self, f"enc{i}")(h, ctx), ctx)
            grid[(i, 0)] = h
        self.trace["bridge"] = grid[(self.depth, 0)].shape
        for j in range(1, self.depth + 1):
            for i in range(self.depth + 1 - j):
                up = getattr(self, f"up_{i}_{j}")(grid[(i + 1, j - 1)], ctx)
                dense = [grid[(i, jj)] for jj in range(j)] + [up]
                grid[(i, j)] = getattr(self, f"node_{i}_{j}")(ad.concat(dense, axis=1), ctx)
        if self.deep_supervision:
            outs = [ad.sigmoid(self.heads[j - 1](grid[(0, j)], ctx)) for j in range(1, self.depth + 1)]
            return ad.concat(outs, axis=1)
        return ad.sigmoid(self.heads[0](grid[(0, self.depth)], ctx))
