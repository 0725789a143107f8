"""Test-set evaluation, result tables, prediction overlays and the ROC plot.

Fixed rendering constants (kept stable so outputs are regression-diffable):
overlay highlight is red (1.0, 0.15, 0.15) alpha-blended at opacity 0.45
over the grayscale source; result CSVs are RFC-4180 with '.' decimals and
4 decimal places, rows ordered by the canonical model order below.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)

from .dataset import DatasetManifest, ImageTensor, load_image
from .lossmetrics import MetricsReport, RocCurve
from .maskgen import MaskSpec, MaskTensor, render_mask
from .trainer import Sample, evaluate_samples

HIGHLIGHT_COLOR = (1.0, 0.15, 0.15)
HIGHLIGHT_OPACITY = 0.45

MODEL_ORDER = (
    "unet",
    "unetpp",
    "resunet",
    "resunetpp",
    "attention_unet",
    "fpn_resnet18",
    "fpn_inceptionv3",
    "linknet_resnet18",
    "linknet_inceptionv3",
)


class MissingGroundTruthError(ValueError):
    """An evaluation entry has no usable annotation; the message names the id."""


def build_samples(manifest: DatasetManifest, target_dims: tuple[int, int],
                  mask_spec: MaskSpec) -> list[Sample]:
    """Load every manifest entry and rasterize its ground truth at target_dims."""
    samples = []
    for entry in manifest.entries:
        loaded = load_image(entry, target_dims)
        if loaded.annotation is None or not loaded.annotation.landmarks:
            raise MissingGroundTruthError(f"no ground truth for id {entry.image_id!r}")
        mask = render_mask(loaded.annotation, target_dims, mask_spec)
        samples.append(Sample(entry.image_id, loaded.image.data, mask.data))
    return samples


def evaluate(model, manifest: DatasetManifest, mask_spec: MaskSpec, threshold: float,
             target_dims: tuple[int, int], batch_size: int = 8) -> MetricsReport:
    """Per-image DSC/IoU over a manifest with ground truth rendered on the fly."""
    samples = build_samples(manifest, target_dims, mask_spec)
    return evaluate_samples(model, samples, threshold, mask_spec.shape_kind, batch_size)


# ---------------------------------------------------------------------------
# overlays


@dataclass(frozen=True)
class OverlayImage:
    data: np.ndarray  # (H, W, 3) float in [0, 1]
    source_id: str


def render_overlay(image: ImageTensor, pred: MaskTensor) -> OverlayImage:
    """Alpha-blend the highlight color over predicted pixels; others untouched."""
    if image.data.shape != pred.data.shape:
        raise ValueError(f"image {image.data.shape} vs prediction {pred.data.shape}")
    rgb = np.repeat(image.data[:, :, None], 3, axis=2).astype(np.float64)
    mask = pred.data.astype(bool)
    color = np.asarray(HIGHLIGHT_COLOR)
    rgb[mask] = (1.0 - HIGHLIGHT_OPACITY) * rgb[mask] + HIGHLIGHT_OPACITY * color
    return OverlayImage(data=rgb, source_id=image.id)


def save_overlay_png(overlay: OverlayImage, path: str | Path) -> Path:
    from PIL import Image

    path = Path(path)
    arr = np.round(np.clip(overlay.data, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)
    return path


# ---------------------------------------------------------------------------
# result tables


@dataclass(frozen=True)
class ResultRow:
    model: str
    mask_shape: str
    cv_val_dsc: float
    cv_val_iou: float
    test_dsc: float
    test_iou: float


def _row_key(row: ResultRow):
    try:
        idx = MODEL_ORDER.index(row.model)
    except ValueError:
        idx = len(MODEL_ORDER)
    shape_idx = 0 if row.mask_shape == "round" else 1
    return (shape_idx, idx, row.model)


def results_table(rows: list[ResultRow]) -> str:
    """CSV with one row per (model, mask shape): CV-validation and test DSC/IoU.

    Deterministic: canonical model order, 4 decimal places. Duplicate
    (model, mask_shape) keys raise.
    """
    seen = set()
    for row in rows:
        key = (row.model, row.mask_shape)
        if key in seen:
            raise ValueError(f"duplicate results for {key}")
        seen.add(key)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["model", "mask_shape", "cv_val_dsc", "cv_val_iou", "test_dsc", "test_iou"])
    for row in sorted(rows, key=_row_key):
        writer.writerow([
            row.model,
            row.mask_shape,
            f"{row.cv_val_dsc:.4f}",
            f"{row.cv_val_iou:.4f}",
            f"{row.test_dsc:.4f}",
            f"{row.test_iou:.4f}",
        ])
    return buf.getvalue()


def row_from_cv(model_name: str, mask_shape: str, cv_result) -> ResultRow:
    """Summarize a CVResult into one table row (fold-mean validation scores)."""
    val_dsc = float(np.mean([f["val"].mean_dsc for f in cv_result.per_fold]))
    val_iou = float(np.mean([f["val"].mean_iou for f in cv_result.per_fold]))
    return ResultRow(model_name, mask_shape, val_dsc, val_iou,
                     cv_result.mean_test_dsc, cv_result.mean_test_iou)


# ---------------------------------------------------------------------------
# ROC plot


def plot_roc(roc: RocCurve, out_path: str | Path) -> tuple[Path, str]:
    """TPR-vs-FPR plot with the diagonal reference and an AUC annotation.

    Returns the written path and the exact annotation label.
    """
    if not roc.points:
        raise ValueError("empty ROC: nothing to plot")
    out_path = Path(out_path)
    label = f"AUC = {roc.auc:.3f}"
    fprs = [p[0] for p in roc.points]
    tprs = [p[1] for p in roc.points]
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot(fprs, tprs, marker=".", markersize=3, linewidth=1.2, label=label)
    ax.plot([0, 1], [0, 1], linestyle="--", linewidth=0.8, color="gray")
    ax.set_xlabel("False positive rate")
    ax.set_ylabel("True positive rate")
    ax.set_title("Pixel-pooled ROC")
    ax.legend(loc="lower right")
    ax.set_xlim(-0.02, 1.02)
    ax.set_ylim(-0.02, 1.02)
    fig.savefig(out_path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return out_path, label
