"""FPN and LinkNet segmentation heads over the structural backbones."""
from __future__ import annotations

from .. import autodiff as ad
from ..layers import BatchNorm2d, Conv2d, ConvBnRelu, ConvTranspose2d, Module, ModuleList
from .backbones import make_encoder


class FPN(Module):
    """Feature pyramid: lateral 1x1 fusion, nearest x2 top-down pathway,
    per-level heads merged at quarter resolution and decoded to full size.
    """

    def __init__(self, spec, rng):
        super().__init__()
        self.encoder = make_encoder(spec.backbone, spec.in_channels, spec.base_width, spec.depth, rng)
        chans = self.encoder.feature_channels
        p = 4 * spec.base_width  # pyramid width
        self.laterals = ModuleList([Conv2d(c, p, 1, rng) for c in chans])
        self.smooths = ModuleList([Conv2d(p, p, 3, rng, padding=1) for _ in chans])
        self.level_heads = ModuleList([ConvBnRelu(p, p, 3, rng, padding=1) for _ in chans])
        self.fuse = ConvBnRelu(p, p, 3, rng, padding=1)
        h1 = max(p // 2, 1)
        h2 = max(p // 4, 1)
        self.up_conv1 = Conv2d(p, h1, 3, rng, padding=1)
        self.up_conv2 = Conv2d(h1, h2, 3, rng, padding=1)
        self.head = Conv2d(h2, 1, 1, rng)
        self.trace = {}

    def forward(self, x, ctx):
        self.trace = {}
        feats = self.encoder(x, ctx)
        self.trace["stem"] = self.encoder.last_stem_shape
        laterals = [lat(f, ctx) for lat, f in zip(self.laterals, feats)]
        pyramid = [None] * len(laterals)
        td = laterals[-1]
        pyramid[-1] = td
        for i in range(len(laterals) - 2, -1, -1):
            td = ad.add(laterals[i], ad.upsample_nearest2x(td))
            pyramid[i] = td
        pyramid = [s(pl, ctx) for s, pl in zip(self.smooths, pyramid)]
        merged = None
        for i, pl in enumerate(pyramid):
            h = self.level_heads[i](pl, ctx)
            for _ in range(i):  # bring every level to the /4 grid
                h = ad.upsample_nearest2x(h)
            merged = h if merged is None else ad.add(merged, h)
        h = self.fuse(merged, ctx)
        h = ad.relu(self.up_conv1(ad.upsample_nearest2x(h), ctx))
        h = ad.relu(self.up_conv2(ad.upsample_nearest2x(h), ctx))
        return ad.sigmoid(self.head(h, ctx))


class LinkNetDecoderBlock(Module):
    """1x1 squeeze, 4x4 stride-2 transposed conv, 1x1 expand (all BN+ReLU)."""

    def __init__(self, cin, cout, rng):
        super().__init__()
        mid = max(cin // 4, 1)
        self.reduce = ConvBnRelu(cin, mid, 1, rng)
        self.up = ConvTranspose2d(mid, mid, rng, bias=False)
        self.up_bn = BatchNorm2d(mid)
        self.expand = ConvBnRelu(mid, cout, 1, rng)

    def forward(self, x, ctx):
        h = self.reduce(x, ctx)
        h = ad.relu(self.up_bn(self.up(h, ctx), ctx))
        return self.expand(h, ctx)


class LinkNet(Module):
    """Encoder stages linked to decoder stages by element-wise addition."""

    def __init__(self, spec, rng):
        super().__init__()
        self.encoder = make_encoder(spec.backbone, spec.in_channels, spec.base_width, spec.depth, rng)
        chans = self.encoder.feature_channels
        outs = [chans[0]] + chans[:-1]  # decoder i emits the channels of stage i-1
        self.decoders = ModuleList(
            [LinkNetDecoderBlock(chans[i], outs[i], rng) for i in range(len(chans))]
        )
        bw = chans[0]
        final_w = max(bw // 2, 1)
        self.final_up = ConvTranspose2d(bw, final_w, rng)
        self.final_conv = Conv2d(final_w, final_w, 3, rng, padding=1)
        self.head = Conv2d(final_w, 1, 1, rng)
        self.trace = {}

    def forward(self, x, ctx):
        self.trace = {}
        feats = self.encoder(x, ctx)
        self.trace["stem"] = self.encoder.last_stem_shape
        h = feats[-1]
        for i in range(len(feats) - 1, 0, -1):
            h = ad.add(self.decoders[i](h, ctx), feats[i - 1])
        h = self.decoders[0](h, ctx)  # /4 -> /2
        h = ad.relu(self.final_up(h, ctx))  # /2 -> /1
        h = ad.relu(self.final_conv(h, ctx))
        return ad.sigmoid(self.head(h, ctx))
