"""Synthetic panoramic-radiograph-like images with bilateral foramen-like targets.

Each image is a smooth dark background (optionally with a brighter arc band
mimicking the mandible), two radiolucent elliptical wells placed left/right of
the vertical midline in the lower half, and optional zero-mean Gaussian noise
clamped to [0, 1]. The returned manifest records the exact centers/extents
used, so rendered masks line up with the targets by construction.

Per-image randomness comes from PCG64(seed XOR index): generation is
deterministic and order-independent, so images can be produced in parallel.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import (
    AnnotationRecord,
    DatasetManifest,
    ImageTensor,
    Landmark,
    ManifestEntry,
    write_manifest,
)
from . import dataset as _ds

# Placement bands, as fractions of width/height.
X_BAND = (0.15, 0.40)  # left target; right target mirrored
Y_BAND = (0.60, 0.85)
WELL_DEPTH = 0.45  # peak intensity drop at the target center
WELL_ASPECT = 0.8  # vertical/horizontal sigma ratio (elliptical well)
ARC_BRIGHTNESS = 0.22
BACKGROUND_LEVEL = 0.42


@dataclass(frozen=True)
class SynthConfig:
    count: int = 16
    dims: tuple[int, int] = (64, 32)  # (width, height)
    seed: int = 0
    target_extent_range: tuple[float, float] = (4.0, 6.0)
    noise_sigma: float = 0.02
    background_profile: str = "jaw_arc"  # flat | jaw_arc

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("count must be >= 1")
        lo, hi = self.target_extent_range
        if not 0 < lo <= hi:
            raise ValueError("target_extent_range must satisfy 0 < min <= max")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.background_profile not in ("flat", "jaw_arc"):
            raise ValueError("background_profile must be 'flat' or 'jaw_arc'")


def _check_feasible(cfg: SynthConfig) -> None:
    w, h = cfg.dims
    max_extent = cfg.target_extent_range[1]
    # left band inflated by extent must stay clear of the mirrored right band
    if max_extent >= 0.10 * w:
        raise ValueError(
            f"target extent {max_extent} infeasible for width {w}: "
            "left/right targets would overlap the midline"
        )
    if X_BAND[0] * w < 1 or (Y_BAND[1] - Y_BAND[0]) * h < 1:
        raise ValueError(f"dims {cfg.dims} too small for target placement bands")


def _background(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    w, h = cfg.dims
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    img = np.full((h, w), BACKGROUND_LEVEL)
    # gentle illumination slope, different per image
    img += 0.04 * (2 * rng.random() - 1) * (xs / max(w - 1, 1) - 0.5)
    img += 0.04 * (2 * rng.random() - 1) * (ys / max(h - 1, 1) - 0.5)
    if cfg.background_profile == "jaw_arc":
        # parabolic band through the lower half, brighter than the base level
        arc_y = 0.55 * h + 0.25 * h * ((xs - w / 2) / (w / 2)) ** 2
        band = np.exp(-((ys - arc_y) ** 2) / (2 * (0.16 * h) ** 2))
        img += ARC_BRIGHTNESS * band
    return img


def _render_well(img: np.ndarray, cx: float, cy: float, extent: float) -> None:
    h, w = img.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    sx = extent / 2.0  # extent maps to 2 sigma
    sy = WELL_ASPECT * sx
    img -= WELL_DEPTH * np.exp(-(((xs - cx) ** 2) / (2 * sx**2) + ((ys - cy) ** 2) / (2 * sy**2)))


def _one_image(cfg: SynthConfig, index: int) -> tuple[np.ndarray, list[Landmark]]:
    rng = np.random.Generator(np.random.PCG64(cfg.seed ^ index))
    w, h = cfg.dims
    lo, hi = cfg.target_extent_range
    img = _background(cfg, rng)
    landmarks = []
    for side in ("left", "right"):
        cx = rng.uniform(X_BAND[0] * w, X_BAND[1] * w)
        if side == "right":
            cx = w - cx
        cy = rng.uniform(Y_BAND[0] * h, Y_BAND[1] * h)
        extent = rng.uniform(lo, hi)
        _render_well(img, cx, cy, extent)
        landmarks.append(Landmark(side=side, cx=cx, cy=cy, extent=extent))
    if cfg.noise_sigma > 0:
        img += rng.normal(0.0, cfg.noise_sigma, size=img.shape)
    np.clip(img, 0.0, 1.0, out=img)
    return img, landmarks


def generate_synthetic_opg(cfg: SynthConfig) -> tuple[list[ImageTensor], DatasetManifest]:
    """Generate cfg.count images plus a manifest carrying the exact targets used."""
    _check_feasible(cfg)
    images, entries = [], []
    for i in range(cfg.count):
        img, landmarks = _one_image(cfg, i)
        image_id = f"synth{i:04d}"
        images.append(ImageTensor(data=img, id=image_id))
        entries.append(
            ManifestEntry(
                image_id=image_id,
                image_path=Path(f"{image_id}.png"),
                annotation=AnnotationRecord(image_id, tuple(landmarks)),
            )
        )
    return images, DatasetManifest(entries=tuple(entries), image_dims=cfg.dims)


def write_synthetic_dataset(cfg: SynthConfig, out_dir: str | Path) -> Path:
    """Write PNG images plus manifest.json under out_dir; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    images, manifest = generate_synthetic_opg(cfg)
    entries = []
    for image, entry in zip(images, manifest.entries):
        png = out_dir / f"{image.id}.png"
        _ds.save_image_png(image.data, png)
        entries.append(ManifestEntry(entry.image_id, png, entry.annotation))
    manifest_path = out_dir / "manifest.json"
    write_manifest(DatasetManifest(tuple(entries), manifest.image_dims), manifest_path)
    return manifest_path
