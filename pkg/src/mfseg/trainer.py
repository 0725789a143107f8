"""Training loop (Adam, early stopping, best-weight restore) and k-fold CV driver.

Reproducibility: per-epoch shuffling and dropout draw from
PCG64(SeedSequence([cfg.seed, epoch])); fold runs derive both their model
seed and their training seed from SeedSequence([seed, fold_index]), so a
cross-validation run is a pure function of (spec, fold plan, config, data).

Batch losses are computed over the whole stacked batch (one pixel set);
validation loss is the mean of per-image losses so it is independent of
batch partitioning. An id-audit hook inspects every batch and aborts if a
forbidden (test) id ever reaches the optimizer.
"""
from __future__ import annotations

from contextlib import nullcontext
from dataclasses import dataclass, field, replace
from typing import Iterable, NamedTuple

import numpy as np

try:
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover
    threadpool_limits = None


def _single_thread_blas():
    # the per-layer matmuls here are tiny; BLAS thread fan-out only adds overhead
    return nullcontext() if threadpool_limits is None else threadpool_limits(limits=1)

from .archzoo import Model, ModelSpec, build_model
from .autodiff import Tensor
from .lossmetrics import (
    LossConfig,
    MetricsReport,
    binarize,
    compute_loss,
    dice_coefficient,
    iou,
    report_from_scores,
)


class Sample(NamedTuple):
    id: str
    image: np.ndarray  # (H, W) float in [0, 1]
    mask: np.ndarray  # (H, W) uint8 in {0, 1}


class TrainingDiverged(RuntimeError):
    """Raised when a batch produces a non-finite loss; names the batch."""


class LeakageError(RuntimeError):
    """Raised when a forbidden (test) id is presented to the optimizer."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 8
    max_epochs: int = 150
    patience: int | None = 10  # None disables early stopping
    loss: LossConfig = field(default_factory=LossConfig)
    threshold: float = 0.5
    seed: int = 0
    mask_shape: str = "round"

    def __post_init__(self):
        # lr == 0 is a legal degenerate probe (parameters must stay frozen)
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.patience is not None and self.patience < 1:
            raise ValueError("patience must be >= 1 (or None to disable)")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.mask_shape not in ("round", "square"):
            raise ValueError("mask_shape must be 'round' or 'square'")


@dataclass
class TrainAudit:
    batches_checked: int = 0
    leaked_ids: int = 0

    def to_dict(self):
        return {"batches_checked": self.batches_checked, "leaked_ids": self.leaked_ids}


@dataclass
class TrainHistory:
    per_epoch: list[dict]
    stopped_epoch: int
    best_epoch: int
    audit: TrainAudit

    def to_dict(self):
        return {
            "per_epoch": self.per_epoch,
            "stopped_epoch": self.stopped_epoch,
            "best_epoch": self.best_epoch,
            "audit": self.audit.to_dict(),
        }


@dataclass
class CVResult:
    per_fold: list[dict]
    mean_test_dsc: float
    mean_test_iou: float
    audit: TrainAudit

    def to_dict(self):
        return {
            "per_fold": [
                {
                    "fold_index": f["fold_index"],
                    "train_ids": f["train_ids"],
                    "val_ids": f["val_ids"],
                    "val": f["val"].to_dict(),
                    "test": f["test"].to_dict(),
                    "stopped_epoch": f["stopped_epoch"],
                    "best_epoch": f["best_epoch"],
                }
                for f in self.per_fold
            ],
            "mean_test_dsc": self.mean_test_dsc,
            "mean_test_iou": self.mean_test_iou,
            "audit": self.audit.to_dict(),
        }

    def to_json(self) -> str:
        import json

        return json.dumps(self.to_dict(), sort_keys=True)


class Adam:
    """Adam optimizer (beta1=0.9, beta2=0.999, eps=1e-8), bias-corrected."""

    def __init__(self, params: dict[str, Tensor], lr: float,
                 beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.t = 0

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def step(self):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, epoch])))


def derive_seed(seed: int, index: int) -> int:
    """Stable child seed for fold/worker derivation."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1, np.uint64)[0] >> 1)


def _snapshot(model: Model) -> tuple[dict, dict]:
    return (
        {k: t.data.copy() for k, t in model.parameters().items()},
        {k: v.copy() for k, v in model.buffers().items()},
    )


def _restore(model: Model, snap: tuple[dict, dict]) -> None:
    params, buffers = snap
    for k, t in model.parameters().items():
        t.data = params[k].copy()
    for k, v in model.buffers().items():
        v[...] = buffers[k]


def _forward_probs(model: Model, samples: list[Sample], batch_size: int) -> np.ndarray:
    """Eval-mode probabilities (N, H, W), batched."""
    probs = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        x = np.stack([s.image for s in chunk])
        probs.append(model.forward(x)[..., 0])
    return np.concatenate(probs, axis=0)


def _validation_scores(model: Model, samples: list[Sample], cfg: TrainConfig):
    """Mean per-image loss plus mean DSC/IoU at cfg.threshold (eval mode)."""
    prev = model.mode
    model.mode = "eval"
    probs = _forward_probs(model, samples, cfg.batch_size)
    model.mode = prev
    losses, dscs, ious = [], [], []
    for s, p in zip(samples, probs):
        losses.append(compute_loss(p, s.mask.astype(np.float64), cfg.loss)[0])
        pred = binarize(p, cfg.threshold)
        dscs.append(dice_coefficient(pred, s.mask))
        ious.append(iou(pred, s.mask))
    return float(np.mean(losses)), float(np.mean(dscs)), float(np.mean(ious))


def evaluate_samples(model: Model, samples: list[Sample], threshold: float,
                     mask_shape: str, batch_size: int = 8) -> MetricsReport:
    """Per-image DSC/IoU at the given threshold, eval mode."""
    prev = model.mode
    model.mode = "eval"
    probs = _forward_probs(model, samples, batch_size)
    model.mode = prev
    ids, dscs, ious = [], [], []
    for s, p in zip(samples, probs):
        pred = binarize(p, threshold)
        ids.append(s.id)
        dscs.append(dice_coefficient(pred, s.mask))
        ious.append(iou(pred, s.mask))
    return report_from_scores(ids, dscs, ious, mask_shape)


def train(spec: ModelSpec, train_samples: list[Sample], val_samples: list[Sample],
          cfg: TrainConfig, forbidden_ids: Iterable[str] = ()) -> tuple[Model, TrainHistory]:
    """Adam training with early stopping on validation loss.

    Stops after ``cfg.patience`` consecutive epochs without strict val-loss
    improvement (or at max_epochs) and restores the best-epoch weights.
    An empty validation set is allowed only with patience disabled.
    """
    if not train_samples:
        raise ValueError("training set is empty")
    if not val_samples and cfg.patience is not None:
        raise ValueError("empty validation set requires patience=None")
    forbidden = frozenset(forbidden_ids)

    with _single_thread_blas():
        return _train_loop(spec, train_samples, val_samples, cfg, forbidden)


def _train_loop(spec, train_samples, val_samples, cfg, forbidden):
    model = build_model(spec)
    opt = Adam(model.parameters(), cfg.learning_rate)
    audit = TrainAudit()
    history: list[dict] = []
    best_loss = np.inf
    best_epoch = 0
    best_snap = None
    bad_epochs = 0
    stopped_epoch = 0
    n = len(train_samples)

    for epoch in range(1, cfg.max_epochs + 1):
        rng = epoch_rng(cfg.seed, epoch)
        order = rng.permutation(n)
        model.mode = "train"
        loss_sum = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = [train_samples[i] for i in order[start : start + cfg.batch_size]]
            audit.batches_checked += 1
            leaked = sorted(s.id for s in batch if s.id in forbidden)
            if leaked:
                audit.leaked_ids += len(leaked)
                raise LeakageError(f"test ids presented to the optimizer: {leaked}")
            x = np.stack([s.image for s in batch])
            gt = np.stack([s.mask for s in batch]).astype(np.float64)
            heads = model.forward_heads(x, training=True, rng=rng)
            k_heads = heads.data.shape[1]
            losses, grads = [], []
            for k in range(k_heads):
                lv, g = compute_loss(heads.data[:, k], gt, cfg.loss)
                losses.append(lv)
                grads.append(g)
            batch_loss = float(np.mean(losses))
            if not np.isfinite(batch_loss):
                raise TrainingDiverged(
                    f"non-finite loss {batch_loss!r} at epoch {epoch}, "
                    f"batch ids {[s.id for s in batch]}"
                )
            opt.zero_grad()
            grad_stack = np.stack(grads, axis=1) / k_heads
            heads.backward(grad_stack.astype(heads.data.dtype))
            opt.step()
            loss_sum += batch_loss * len(batch)
        train_loss = loss_sum / n

        val_loss = val_dsc = val_iou = None
        if val_samples:
            val_loss, val_dsc, val_iou = _validation_scores(model, val_samples, cfg)
        history.append({
            "epoch": epoch,
            "train_loss": train_loss,
            "val_loss": val_loss,
            "val_dsc": val_dsc,
            "val_iou": val_iou,
        })
        stopped_epoch = epoch
        if val_samples:
            if val_loss < best_loss:
                best_loss, best_epoch, best_snap = val_loss, epoch, _snapshot(model)
                bad_epochs = 0
            else:
                bad_epochs += 1
                if cfg.patience is not None and bad_epochs >= cfg.patience:
                    break

    if best_snap is not None:
        _restore(model, best_snap)
    else:
        best_epoch = stopped_epoch
    model.mode = "eval"
    return model, TrainHistory(per_epoch=history, stopped_epoch=stopped_epoch,
                               best_epoch=best_epoch, audit=audit)


def cross_validate(spec: ModelSpec, fold_plan, pool_samples: list[Sample],
                   test_samples: list[Sample], cfg: TrainConfig) -> CVResult:
    """k complete runs: train on k-1 folds, validate on the held-out fold,
    evaluate each run on the fixed test set. The test set never reaches the
    optimizer or the early-stopping monitor; every fold re-initializes its
    model from a derived seed.
    """
    pool_ids = {s.id for s in pool_samples}
    plan_ids = fold_plan.all_ids()
    if plan_ids != pool_ids:
        raise ValueError("fold plan ids do not match the provided training pool")
    test_ids = {s.id for s in test_samples}
    overlap = plan_ids & test_ids
    if overlap:
        raise ValueError(f"folds overlap test ids: {sorted(overlap)[:5]}")

    per_fold = []
    audit = TrainAudit()
    for i, fold in enumerate(fold_plan.folds):
        train_set = [s for s in pool_samples if s.id not in fold]
        val_set = [s for s in pool_samples if s.id in fold]
        fold_spec = replace(spec, seed=derive_seed(spec.seed, i))
        fold_cfg = replace(cfg, seed=derive_seed(cfg.seed, i))
        model, hist = train(fold_spec, train_set, val_set, fold_cfg, forbidden_ids=test_ids)
        audit.batches_checked += hist.audit.batches_checked
        audit.leaked_ids += hist.audit.leaked_ids
        per_fold.append({
            "fold_index": i,
            "train_ids": sorted(s.id for s in train_set),
            "val_ids": sorted(fold),
            "val": evaluate_samples(model, val_set, cfg.threshold, cfg.mask_shape, cfg.batch_size),
            "test": evaluate_samples(model, test_samples, cfg.threshold, cfg.mask_shape, cfg.batch_size),
            "stopped_epoch": hist.stopped_epoch,
            "best_epoch": hist.best_epoch,
            "model": model,
        })
    mean_dsc = float(np.mean([f["test"].mean_dsc for f in per_fold]))
    mean_iou = float(np.mean([f["test"].mean_iou for f in per_fold]))
    return CVResult(per_fold=per_fold, mean_test_dsc=mean_dsc,
                    mean_test_iou=mean_iou, audit=audit)
