"""Rasterize landmark annotations into round or square binary ground-truth masks.

Membership predicates are evaluated on integer pixel-center coordinates and
are closed (<=): a pixel (x, y) belongs to a round mask when
(x-cx)^2 + (y-cy)^2 <= r^2 and to a square mask when max(|x-cx|, |y-cy|) <= s.
Overlapping landmark regions merge by union. A zero extent is the allowed
degenerate case (a single pixel at an integer center); negative extents raise.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .dataset import AnnotationRecord

SHAPE_KINDS = ("round", "square")

# Reference extent: 16 px at a 512-px-wide working resolution, scaled linearly.
REFERENCE_EXTENT = 16.0
REFERENCE_WIDTH = 512.0


@dataclass(frozen=True)
class MaskSpec:
    shape_kind: str
    default_extent: float

    def __post_init__(self):
        if self.shape_kind not in SHAPE_KINDS:
            raise ValueError(f"shape_kind must be one of {SHAPE_KINDS}")
        if not self.default_extent > 0:
            raise ValueError("default_extent must be > 0")


@dataclass(frozen=True)
class MaskTensor:
    data: np.ndarray  # (height, width) uint8 in {0, 1}
    id: str
    shape_kind: str | None = None


def default_mask_spec(shape_kind: str, dims: tuple[int, int]) -> MaskSpec:
    """MaskSpec with the default extent scaled to the working width."""
    w, _ = dims
    return MaskSpec(shape_kind=shape_kind, default_extent=REFERENCE_EXTENT * w / REFERENCE_WIDTH)


def _landmark_extents(annotation: AnnotationRecord, spec: MaskSpec, dims):
    w, h = dims
    for lm in annotation.landmarks:
        if not (0 <= lm.cx < w and 0 <= lm.cy < h):
            raise ValueError(f"landmark center ({lm.cx}, {lm.cy}) outside {w}x{h} grid")
        extent = spec.default_extent if lm.extent is None else lm.extent
        if extent < 0:
            raise ValueError(f"negative extent {extent} for landmark on side {lm.side!r}")
        yield lm, extent


def render_round_mask(annotation: AnnotationRecord, dims: tuple[int, int], spec: MaskSpec) -> MaskTensor:
    """Union of closed disks of radius extent (or the spec default) around each landmark."""
    if spec.shape_kind != "round":
        raise ValueError(f"spec.shape_kind is {spec.shape_kind!r}, expected 'round'")
    w, h = dims
    ys, xs = np.ogrid[0:h, 0:w]
    mask = np.zeros((h, w), dtype=np.uint8)
    for lm, r in _landmark_extents(annotation, spec, dims):
        mask |= ((xs - lm.cx) ** 2 + (ys - lm.cy) ** 2 <= r * r).astype(np.uint8)
    return MaskTensor(data=mask, id=annotation.image_id, shape_kind="round")


def render_square_mask(annotation: AnnotationRecord, dims: tuple[int, int], spec: MaskSpec) -> MaskTensor:
    """Union of closed axis-aligned squares of half-side extent around each landmark."""
    if spec.shape_kind != "square":
        raise ValueError(f"spec.shape_kind is {spec.shape_kind!r}, expected 'square'")
    w, h = dims
    ys, xs = np.ogrid[0:h, 0:w]
    mask = np.zeros((h, w), dtype=np.uint8)
    for lm, s in _landmark_extents(annotation, spec, dims):
        mask |= ((np.abs(xs - lm.cx) <= s) & (np.abs(ys - lm.cy) <= s)).astype(np.uint8)
    return MaskTensor(data=mask, id=annotation.image_id, shape_kind="square")


def render_mask(annotation: AnnotationRecord, dims: tuple[int, int], spec: MaskSpec) -> MaskTensor:
    return (render_round_mask if spec.shape_kind == "round" else render_square_mask)(
        annotation, dims, spec
    )


@dataclass(frozen=True)
class MaskValidation:
    is_binary: bool
    pixel_count: int
    component_count: int
    ok: bool
    problems: tuple[str, ...]


def validate_mask(mask: MaskTensor, max_components: int = 2) -> MaskValidation:
    """Report-style check: binarity, set-pixel count, 4-connected component count.

    Flags a violation when the mask is empty, non-binary, or has more
    connected regions than max_components (default 2, one per foramen).
    """
    data = np.asarray(mask.data)
    problems = []
    is_binary = bool(np.isin(data, (0, 1)).all())
    if not is_binary:
        problems.append("mask contains values outside {0, 1}")
        pixel_count = int(np.count_nonzero(data))
        components = -1
    else:
        pixel_count = int(data.sum())
        four_connected = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])
        _, components = ndimage.label(data, structure=four_connected)
        if pixel_count == 0:
            problems.append("mask is empty")
        if components > max_components:
            problems.append(f"{components} components exceed max_components={max_components}")
    return MaskValidation(
        is_binary=is_binary,
        pixel_count=pixel_count,
        component_count=components,
        ok=not problems,
        problems=tuple(problems),
    )


def mask_filename(image_id: str, shape_kind: str) -> str:
    return f"{image_id}_{shape_kind}.png"


def save_mask_png(mask: MaskTensor, directory: str | Path) -> Path:
    """Persist as 8-bit grayscale PNG with values {0, 255}, named <id>_<shape>.png."""
    if mask.shape_kind not in SHAPE_KINDS:
        raise ValueError("mask has no shape_kind; cannot derive filename")
    path = Path(directory) / mask_filename(mask.id, mask.shape_kind)
    Image.fromarray((mask.data * 255).astype(np.uint8), mode="L").save(path)
    return path


def load_mask_png(path: str | Path, image_id: str | None = None,
                  shape_kind: str | None = None) -> MaskTensor:
    path = Path(path)
    arr = np.asarray(Image.open(path).convert("L"))
    return MaskTensor(data=(arr >= 128).astype(np.uint8),
                      id=image_id or path.stem, shape_kind=shape_kind)
