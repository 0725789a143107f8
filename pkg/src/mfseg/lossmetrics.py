"""Training losses and evaluation metrics for binary segmentation.

Losses (soft Dice, BCE, focal) are pure functions returning
``(scalar loss, gradient w.r.t. the probability map)``; internal math is
float64 regardless of input dtype. Metrics (DSC, IoU, pooled ROC/AUC)
operate on strictly binary masks.

Conventions, recorded in every report:
  * both masks empty -> DSC = IoU = 1.0; exactly one empty -> 0.0
  * binarization uses p >= threshold
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

BCE_EPS = 1e-7


@dataclass(frozen=True)
class LossConfig:
    kind: str = "dice"  # dice | bce | focal
    dice_smooth: float = 1.0
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25

    def __post_init__(self):
        if self.kind not in ("dice", "bce", "focal"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.dice_smooth < 0:
            raise ValueError("dice_smooth must be >= 0")
        if self.focal_gamma < 0:
            raise ValueError("focal_gamma must be >= 0")
        if not 0.0 < self.focal_alpha <= 1.0:
            raise ValueError("focal_alpha must be in (0, 1]")


def _check_same_shape(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def _check_binary(m):
    if not np.isin(m, (0, 1)).all():
        raise ValueError("mask is not binary")


def binarize(prob_map: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Threshold a probability map into a {0,1} uint8 mask (p >= threshold -> 1)."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie strictly inside (0, 1), got {threshold}")
    return (np.asarray(prob_map) >= threshold).astype(np.uint8)


def dice_coefficient(a: np.ndarray, b: np.ndarray) -> float:
    """DSC = 2|A inter B| / (|A| + |B|); 1.0 when both masks are empty."""
    a = np.asarray(a)
    b = np.asarray(b)
    _check_same_shape(a, b)
    _check_binary(a)
    _check_binary(b)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    inter = int(np.logical_and(a, b).sum())
    return 2.0 * inter / total


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """|A inter B| / |A union B|; 1.0 when both masks are empty."""
    a = np.asarray(a)
    b = np.asarray(b)
    _check_same_shape(a, b)
    _check_binary(a)
    _check_binary(b)
    union = int(np.logical_or(a, b).sum())
    if union == 0:
        return 1.0
    inter = int(np.logical_and(a, b).sum())
    return inter / union


def dice_loss(pred: np.ndarray, gt: np.ndarray, cfg: LossConfig = LossConfig()) -> tuple[float, np.ndarray]:
    """Soft Dice loss 1 - (2*sum(p*g)+s)/(sum(p)+sum(g)+s) and its gradient."""
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    _check_same_shape(p, g)
    s = cfg.dice_smooth
    num = 2.0 * np.sum(p * g) + s
    den = np.sum(p) + np.sum(g) + s
    loss = 1.0 - num / den
    grad = -(2.0 * g * den - num) / den**2
    return float(loss), grad


def bce_loss(pred: np.ndarray, gt: np.ndarray, cfg: LossConfig | None = None) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy; predictions clamped to [eps, 1-eps], eps=1e-7."""
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    _check_same_shape(p, g)
    pc = np.clip(p, BCE_EPS, 1.0 - BCE_EPS)
    loss = float(np.mean(-(g * np.log(pc) + (1.0 - g) * np.log1p(-pc))))
    grad = (pc - g) / (pc * (1.0 - pc)) / p.size
    grad[(p < BCE_EPS) | (p > 1.0 - BCE_EPS)] = 0.0  # flat region of the clamp
    return loss, grad


def focal_loss(pred: np.ndarray, gt: np.ndarray, cfg: LossConfig = LossConfig(kind="focal")) -> tuple[float, np.ndarray]:
    """Mean focal loss -alpha*(1-p_t)^gamma * log(p_t), p_t = p if g=1 else 1-p."""
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    _check_same_shape(p, g)
    gamma, alpha = cfg.focal_gamma, cfg.focal_alpha
    pc = np.clip(p, BCE_EPS, 1.0 - BCE_EPS)
    pt = np.where(g == 1, pc, 1.0 - pc)
    q = 1.0 - pt
    loss = float(np.mean(-alpha * q**gamma * np.log(pt)))
    # d/dpt of -alpha*q^gamma*log(pt); the gamma=0 branch avoids 0*q^(-1)
    if gamma == 0.0:
        dterm = -alpha / pt
    else:
        dterm = alpha * (gamma * q ** (gamma - 1.0) * np.log(pt) - q**gamma / pt)
    grad = dterm * np.where(g == 1, 1.0, -1.0) / p.size
    grad[(p < BCE_EPS) | (p > 1.0 - BCE_EPS)] = 0.0
    return loss, grad


_LOSS_FNS = {"dice": dice_loss, "bce": bce_loss, "focal": focal_loss}


def compute_loss(pred: np.ndarray, gt: np.ndarray, cfg: LossConfig) -> tuple[float, np.ndarray]:
    """Dispatch on cfg.kind."""
    return _LOSS_FNS[cfg.kind](pred, gt, cfg)


# ---------------------------------------------------------------------------
# reports


@dataclass
class RocCurve:
    points: list[tuple[float, float]]  # (fpr, tpr), sorted by fpr
    auc: float

    def to_dict(self):
        return {"points": [[float(f), float(t)] for f, t in self.points], "auc": float(self.auc)}


@dataclass
class MetricsReport:
    per_image: list[dict]  # {"image_id", "dsc", "iou"}
    mean_dsc: float
    mean_iou: float
    n_images: int
    mask_shape: str
    roc: RocCurve | None = None

    def to_dict(self):
        d = {
            "mask_shape": self.mask_shape,
            "n_images": self.n_images,
            "mean_dsc": self.mean_dsc,
            "mean_iou": self.mean_iou,
            "per_image": self.per_image,
        }
        d["roc"] = self.roc.to_dict() if self.roc is not None else None
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def report_from_scores(ids, dscs, ious, mask_shape: str, roc: RocCurve | None = None) -> MetricsReport:
    """Assemble a MetricsReport; means are plain arithmetic averages."""
    per_image = [
        {"image_id": i, "dsc": float(d), "iou": float(j)} for i, d, j in zip(ids, dscs, ious)
    ]
    n = len(per_image)
    return MetricsReport(
        per_image=per_image,
        mean_dsc=float(np.mean(dscs)) if n else 0.0,
        mean_iou=float(np.mean(ious)) if n else 0.0,
        n_images=n,
        mask_shape=mask_shape,
        roc=roc,
    )


def report_csv_row(report: MetricsReport, model: str, split: str) -> str:
    """One result-table line: model, split, mean DSC, mean IoU."""
    return f"{model},{split},{report.mean_dsc:.4f},{report.mean_iou:.4f}"


def roc_points(prob_maps, gts, n_thresholds: int = 101) -> RocCurve:
    """Pixel-pooled ROC over a uniform threshold sweep on [0, 1].

    TPR/FPR are computed at each of ``n_thresholds`` uniform thresholds with
    the p >= t rule, pooled over every pixel of every image; (0,0) and (1,1)
    endpoints are appended and AUC integrated by the trapezoid rule.
    """
    if len(prob_maps) == 0 or len(prob_maps) != len(gts):
        raise ValueError("roc_points needs equal-length, non-empty prediction/gt lists")
    ps, gs = [], []
    for p, g in zip(prob_maps, gts):
        p = np.asarray(p, dtype=np.float64).ravel()
        g = np.asarray(g).ravel()
        if p.shape != g.shape:
            raise ValueError("prediction/gt shape mismatch in roc_points")
        _check_binary(g)
        ps.append(p)
        gs.append(g)
    pooled_p = np.concatenate(ps)
    pooled_g = np.concatenate(gs).astype(bool)
    n_pos = int(pooled_g.sum())
    n_neg = pooled_g.size - n_pos
    if n_pos == 0:
        raise ValueError("degenerate ROC: pooled ground truth has no positive pixels")
    if n_neg == 0:
        raise ValueError("degenerate ROC: pooled ground truth has no negative pixels")
    thresholds = np.linspace(0.0, 1.0, n_thresholds)
    pts = []
    for t in thresholds[::-1]:  # descending threshold -> fpr ascending
        hit = pooled_p >= t
        tpr = float(np.count_nonzero(hit & pooled_g)) / n_pos
        fpr = float(np.count_nonzero(hit & ~pooled_g)) / n_neg
        pts.append((fpr, tpr))
    pts = [(0.0, 0.0)] + pts + [(1.0, 1.0)]
    pts.sort()
    fprs = np.array([p[0] for p in pts])
    tprs = np.array([p[1] for p in pts])
    auc = float(np.trapezoid(tprs, fprs))
    return RocCurve(points=pts, auc=auc)
