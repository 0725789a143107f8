"""Declarative construction of the evaluated encoder-decoder variants.

``build_model(ModelSpec(...))`` returns a ``Model`` whose parameters are a
deterministic function of the spec (including its seed). Families:

  unet, unetpp (optional deep supervision), resunet, resunetpp,
  attention_unet, fpn and linknet (the last two accept a structural
  resnet18/inceptionv3 backbone).

All families map an input batch (B, H, W) to a probability map
(B, H, W, 1) with values strictly inside (0, 1).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..layers import DTYPE, ForwardCtx
from .blocks import ResidualBlock, default_dropout_schedule
from .unets import AttentionUNet, ResUNet, ResUNetPP, UNet, UNetPP
from .pyramids import FPN, LinkNet
from .backbones import BACKBONES
from .checkpoint import load_checkpoint, load_named_arrays, save_checkpoint

FAMILIES = ("unet", "unetpp", "resunet", "resunetpp", "attention_unet", "fpn", "linknet")
_UNET_FAMILY = ("unet", "unetpp", "resunet", "resunetpp", "attention_unet")
_NET_CLASSES = {
    "unet": UNet,
    "unetpp": UNetPP,
    "resunet": ResUNet,
    "resunetpp": ResUNetPP,
    "attention_unet": AttentionUNet,
    "fpn": FPN,
    "linknet": LinkNet,
}


@dataclass(frozen=True)
class ModelSpec:
    family: str
    depth: int = 4
    base_width: int = 64
    backbone: str = "none"
    dropout_schedule: tuple[float, ...] | None = None  # None -> default ramp
    deep_supervision: bool = False
    ds_head: int | None = None  # unetpp pruning: 1-based head; None averages all
    in_channels: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.base_width < 1:
            raise ValueError("base_width must be >= 1")
        if self.backbone not in BACKBONES:
            raise ValueError(f"unknown backbone {self.backbone!r}")
        if self.backbone != "none" and self.family not in ("fpn", "linknet"):
            raise ValueError(f"backbone {self.backbone!r} is only valid for fpn/linknet, "
                             f"not {self.family!r}")
        if self.deep_supervision and self.family != "unetpp":
            raise ValueError("deep_supervision is a unetpp-only option")
        if self.ds_head is not None and not 1 <= self.ds_head <= self.depth:
            raise ValueError(f"ds_head must be in 1..{self.depth}")
        if self.dropout_schedule is not None:
            object.__setattr__(self, "dropout_schedule", tuple(float(r) for r in self.dropout_schedule))
            if any(not 0.0 <= r < 1.0 for r in self.dropout_schedule):
                raise ValueError("dropout rates must lie in [0, 1)")
            if self.family in _UNET_FAMILY and len(self.dropout_schedule) != self.depth + 1:
                raise ValueError(
                    f"dropout_schedule length {len(self.dropout_schedule)} does not match "
                    f"depth {self.depth} (need depth+1 rates: encoder stages plus bridge)"
                )

    @property
    def downsample_factor(self) -> int:
        # unet family pools depth times; fpn/linknet stems are /4 plus depth-1 strides
        return 2**self.depth if self.family in _UNET_FAMILY else 2 ** (self.depth + 1)

    def resolved(self) -> "ModelSpec":
        if self.dropout_schedule is None:
            return replace(self, dropout_schedule=default_dropout_schedule(self.depth))
        return self

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "depth": self.depth,
            "base_width": self.base_width,
            "backbone": self.backbone,
            "dropout_schedule": None if self.dropout_schedule is None else list(self.dropout_schedule),
            "deep_supervision": self.deep_supervision,
            "ds_head": self.ds_head,
            "in_channels": self.in_channels,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelSpec":
        sched = d.get("dropout_schedule")
        return ModelSpec(
            family=d["family"],
            depth=int(d["depth"]),
            base_width=int(d["base_width"]),
            backbone=d.get("backbone", "none"),
            dropout_schedule=None if sched is None else tuple(sched),
            deep_supervision=bool(d.get("deep_supervision", False)),
            ds_head=d.get("ds_head"),
            in_channels=int(d.get("in_channels", 1)),
            seed=int(d.get("seed", 0)),
        )


class Model:
    """A built network: spec + named parameters + train/eval mode."""

    def __init__(self, spec: ModelSpec, net):
        self.spec = spec
        self.net = net
        self._mode = "eval"

    @property
    def mode(self) -> str:
        return self._mode

    @mode.setter
    def mode(self, value: str):
        if value not in ("train", "eval"):
            raise ValueError("mode must be 'train' or 'eval'")
        self._mode = value

    def parameters(self):
        return self.net.named_parameters()

    def buffers(self):
        return self.net.named_buffers()

    @property
    def trace(self) -> dict:
        return self.net.trace

    @property
    def attention_maps(self):
        return getattr(self.net, "attention_maps", None)

    def _check_batch(self, batch: np.ndarray) -> np.ndarray:
        batch = np.asarray(batch)
        if batch.ndim == 4 and batch.shape[-1] == 1:
            batch = batch[..., 0]
        if batch.ndim != 3:
            raise ValueError(f"expected batch (B, H, W), got shape {batch.shape}")
        f = self.spec.downsample_factor
        _, h, w = batch.shape
        if h % f or w % f or h < f or w < f:
            raise ValueError(f"spatial dims {h}x{w} must be divisible by {f} for this model")
        return batch

    def forward_heads(self, batch: np.ndarray, training: bool = False,
                      rng: np.random.Generator | None = None):
        """Graph-building forward: returns the head-stack Tensor (B, K, H, W)."""
        batch = self._check_batch(batch)
        from ..autodiff import Tensor

        x = Tensor(np.ascontiguousarray(batch[:, None, :, :], dtype=DTYPE))
        return self.net(x, ForwardCtx(training=training, rng=rng))

    def forward(self, batch: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
        """Probability map (B, H, W, 1); honors self.mode (eval disables dropout)."""
        heads = self.forward_heads(batch, training=self._mode == "train", rng=rng)
        probs = heads.data
        if probs.shape[1] > 1:
            if self.spec.ds_head is not None:
                probs = probs[:, self.spec.ds_head - 1 : self.spec.ds_head]
            else:
                probs = probs.mean(axis=1, keepdims=True)
        return np.ascontiguousarray(np.transpose(probs, (0, 2, 3, 1)))


def build_model(spec: ModelSpec) -> Model:
    """Construct a network per the family definitions; deterministic from spec.seed."""
    spec = spec.resolved()
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    net = _NET_CLASSES[spec.family](spec, rng)
    return Model(spec, net)


def count_parameters(model: Model) -> int:
    """Total scalar parameter count (batch-norm running stats excluded)."""
    return sum(int(t.data.size) for t in model.parameters().values())


__all__ = [
    "FAMILIES",
    "BACKBONES",
    "Model",
    "ModelSpec",
    "ResidualBlock",
    "build_model",
    "count_parameters",
    "default_dropout_schedule",
    "load_checkpoint",
    "load_named_arrays",
    "save_checkpoint",
]
