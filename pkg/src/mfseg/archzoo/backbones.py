"""Structural encoder backbones for the FPN and LinkNet families.

Every backbone follows the same contract: a stem that downsamples by 4
(7x7 stride-2 convolution followed by a 2x2 stride-2 max-pool for the
residual/plain stems, a pair of 3x3 convolutions for the inception stem),
then ``depth`` stages whose outputs form the feature ladder
/4, /8, ..., /2^(depth+1). Pretrained weights are never baked in; see
``checkpoint.load_named_arrays`` for the optional weight-loading hook.
"""
from __future__ import annotations

from .. import autodiff as ad
from ..layers import BatchNorm2d, Conv2d, ConvBnRelu, Module, ModuleList
from .blocks import BasicEncoderBlock, InceptionBlock

BACKBONES = ("none", "resnet18", "inceptionv3")


class ResNet18Encoder(Module):
    """Scaled structural resnet-18: two basic blocks per stage."""

    def __init__(self, in_channels, base_width, depth, rng):
        super().__init__()
        self.stem_conv = Conv2d(in_channels, base_width, 7, rng, stride=2, padding=3, bias=False)
        self.stem_bn = BatchNorm2d(base_width)
        widths = [base_width * 2**i for i in range(depth)]
        stages = []
        prev = base_width
        for i, w in enumerate(widths):
            stride = 1 if i == 0 else 2
            stages.append(ModuleListStage(
                [BasicEncoderBlock(prev, w, rng, stride=stride), BasicEncoderBlock(w, w, rng)]
            ))
            prev = w
        self.stages = ModuleList(stages)
        self.feature_channels = widths
        self.last_stem_shape = None

    def forward(self, x, ctx):
        h = ad.relu(self.stem_bn(self.stem_conv(x, ctx), ctx))
        h = ad.max_pool2x2(h)
        self.last_stem_shape = h.shape
        feats = []
        for stage in self.stages:
            h = stage(h, ctx)
            feats.append(h)
        return feats


class InceptionV3Encoder(Module):
    """Inception-style encoder: factorized mixed blocks, stride-2 transitions."""

    def __init__(self, in_channels, base_width, depth, rng):
        super().__init__()
        self.stem1 = ConvBnRelu(in_channels, base_width, 3, rng, stride=2, padding=1)
        self.stem2 = ConvBnRelu(base_width, base_width, 3, rng, padding=1)
        widths = [base_width * 2**i for i in range(depth)]
        transitions, stages, channels = [], [], []
        prev = base_width
        for i, w in enumerate(widths):
            transitions.append(None if i == 0 else ConvBnRelu(prev, w, 3, rng, stride=2, padding=1))
            b1 = InceptionBlock(w, w, rng)
            b2 = InceptionBlock(b1.out_channels, w, rng)
            stages.append(ModuleListStage([b1, b2]))
            prev = b2.out_channels
            channels.append(prev)
        self.transitions = ModuleList([t for t in transitions if t is not None])
        self.stages = ModuleList(stages)
        self._has_transition = [t is not None for t in transitions]
        self.feature_channels = channels
        self.last_stem_shape = None

    def forward(self, x, ctx):
        h = self.stem2(self.stem1(x, ctx), ctx)
        h = ad.max_pool2x2(h)
        self.last_stem_shape = h.shape
        feats = []
        t = 0
        for i, stage in enumerate(self.stages):
            if self._has_transition[i]:
                h = self.transitions[t](h, ctx)
                t += 1
            h = stage(h, ctx)
            feats.append(h)
        return feats


class PlainEncoder(Module):
    """Backbone-free encoder: plain conv stages behind the 7x7 stem."""

    def __init__(self, in_channels, base_width, depth, rng):
        super().__init__()
        self.stem_conv = Conv2d(in_channels, base_width, 7, rng, stride=2, padding=3, bias=False)
        self.stem_bn = BatchNorm2d(base_width)
        widths = [base_width * 2**i for i in range(depth)]
        stages = []
        prev = base_width
        for i, w in enumerate(widths):
            stride = 1 if i == 0 else 2
            stages.append(ModuleListStage(
                [ConvBnRelu(prev, w, 3, rng, stride=stride, padding=1),
                 ConvBnRelu(w, w, 3, rng, padding=1)]
            ))
            prev = w
        self.stages = ModuleList(stages)
        self.feature_channels = widths
        self.last_stem_shape = None

    def forward(self, x, ctx):
        h = ad.relu(self.stem_bn(self.stem_conv(x, ctx), ctx))
        h = ad.max_pool2x2(h)
        self.last_stem_shape = h.shape
        feats = []
        for stage in self.stages:
            h = stage(h, ctx)
            feats.append(h)
        return feats


class ModuleListStage(Module):
    """Sequential stage over an ordered list of blocks."""

    def __init__(self, blocks):
        super().__init__()
        self.blocks = ModuleList(blocks)

    def forward(self, x, ctx):
        for b in self.blocks:
            x = b(x, ctx)
        return x


def make_encoder(backbone: str, in_channels: int, base_width: int, depth: int, rng) -> Module:
    if backbone == "resnet18":
        return ResNet18Encoder(in_channels, base_width, depth, rng)
    if backbone == "inceptionv3":
        return InceptionV3Encoder(in_channels, base_width, depth, rng)
    if backbone == "none":
        return PlainEncoder(in_channels, base_width, depth, rng)
    raise ValueError(f"unknown backbone {backbone!r}")
