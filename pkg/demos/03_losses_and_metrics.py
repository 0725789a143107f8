"""A numeric tour of the losses (dice / bce / focal) and metrics (DSC / IoU / ROC).

Run:  python3 demos/03_losses_and_metrics.py
"""
import numpy as np

from mfseg.lossmetrics import (
    LossConfig,
    bce_loss,
    binarize,
    dice_coefficient,
    dice_loss,
    focal_loss,
    iou,
    roc_points,
)

# --- overlap metrics on a hand-checkable pair --------------------------------
a = np.zeros((8, 8), dtype=np.uint8)
b = np.zeros((8, 8), dtype=np.uint8)
a[1:3, 1:3] = 1          # |A| = 4
b[2, 1:5] = 1            # |B| = 4, overlap = 2
print(f"|A|={a.sum()} |B|={b.sum()} |A&B|={(a & b).sum()}")
print(f"DSC = {dice_coefficient(a, b):.4f}   (2*2/(4+4) = 0.5)")
print(f"IoU = {iou(a, b):.4f}   (2/6 = 0.3333)")
print(f"DSC from IoU: {2 * iou(a, b) / (1 + iou(a, b)):.4f} (identity holds)\n")

# --- losses are (value, gradient) pairs --------------------------------------
rng = np.random.default_rng(0)
pred = rng.uniform(0.05, 0.95, size=(8, 8))
gt = a.astype(float)

for name, fn, cfg in [
    ("dice ", dice_loss, LossConfig()),
    ("bce  ", bce_loss, None),
    ("focal", focal_loss, LossConfig(kind="focal")),
]:
    value, grad = fn(pred, gt, cfg) if cfg is not None else fn(pred, gt)
    print(f"{name} loss = {value:.4f}   |grad| max = {np.abs(grad).max():.4f}")

# perfect prediction drives the dice loss to (near) zero
perfect, _ = dice_loss(gt, gt, LossConfig(dice_smooth=1.0))
print(f"dice loss at a perfect prediction: {perfect:.6f}\n")

# --- binarization + pixel-pooled ROC ------------------------------------------
mask = binarize(pred, threshold=0.5)
print(f"binarized at 0.5: {int(mask.sum())} positive pixels")

roc = roc_points([pred], [a], n_thresholds=101)
print(f"ROC: {len(roc.points)} points (101 thresholds + 2 endpoints), AUC = {roc.auc:.4f}")
sep = np.where(a == 1, 0.9, 0.1) + rng.normal(0, 0.02, size=a.shape)
roc2 = roc_points([np.clip(sep, 0, 1)], [a])
print(f"ROC of a well-separated prediction: AUC = {roc2.auc:.4f}")
