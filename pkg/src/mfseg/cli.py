"""Command-line front door: synth, maskgen, train, cv, eval, report.

Every command writes its artifacts under ``--out`` plus a ``run.json``
carrying the fully resolved configuration, the seed, and SHA-256 hashes of
the written files. Flag precedence: built-in defaults < ``--config`` JSON
(flat dotted keys, e.g. ``{"cv.k": 5, "seed": 7}``) < explicit flags.
Seeds never come from the wall clock; omitting ``--seed`` uses the fixed
constant 7. Exit codes: 0 success, 1 runtime failure, 2 usage errors; all
failures print one ``error: <Type>: <message>`` line to stderr.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .archzoo import ModelSpec, build_model, load_checkpoint, save_checkpoint
from .dataset import load_manifest, make_folds, split_dataset
from .evalreport import (
    ResultRow,
    build_samples,
    evaluate,
    plot_roc,
    render_overlay,
    results_table,
    save_overlay_png,
)
from .dataset import DatasetManifest, ImageTensor
from .lossmetrics import LossConfig, roc_points
from .maskgen import MaskSpec, MaskTensor, default_mask_spec, render_mask, save_mask_png
from .synthdata import SynthConfig, write_synthetic_dataset
from .trainer import Sample, TrainConfig, cross_validate, train

DEFAULT_SEED = 7
DEFAULT_DIMS = (512, 256)  # (width, height) working resolution

ARCHES = ("unet", "unetpp", "resunet", "resunetpp", "attention_unet", "fpn", "linknet")


def _parse_dims(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise argparse.ArgumentTypeError(f"dims must look like 64x32, got {text!r}") from None


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _prepare_out(out: str, force: bool) -> Path:
    out_dir = Path(out)
    if out_dir.exists() and any(out_dir.iterdir()) and not force:
        raise FileExistsError(f"output directory {out_dir} is not empty (use --force to overwrite)")
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir


def _write_run_json(out_dir: Path, command: str, config: dict, outputs: list[Path]) -> Path:
    run = {
        "command": command,
        "config": config,
        "package_version": __version__,
        "outputs": {str(p.relative_to(out_dir)): _sha256(p) for p in sorted(outputs)},
    }
    path = out_dir / "run.json"
    path.write_text(json.dumps(run, indent=2, sort_keys=True), encoding="utf-8")
    return path


def _apply_config_file(args: argparse.Namespace, command: str) -> None:
    """Fill None-valued options from the --config JSON (flat dotted keys)."""
    if not getattr(args, "config", None):
        return
    doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
    if not isinstance(doc, dict):
        raise ValueError("--config must contain a JSON object with flat keys")
    for key, value in doc.items():
        scope, _, flag = key.rpartition(".")
        if scope and scope != command:
            continue
        dest = flag.replace("-", "_")
        if hasattr(args, dest) and getattr(args, dest) is None:
            setattr(args, dest, value)


def _fill_defaults(args: argparse.Namespace, defaults: dict) -> dict:
    resolved = {}
    for dest, default in defaults.items():
        value = getattr(args, dest, None)
        if value is None:
            value = default
        setattr(args, dest, value)
        resolved[dest] = value
    return resolved


def _load_manifest_filtered(path: str, exclude: list[str] | None) -> DatasetManifest:
    manifest = load_manifest(path)
    if exclude:
        dropped = set(exclude)
        entries = tuple(e for e in manifest.entries if e.image_id not in dropped)
        manifest = DatasetManifest(entries=entries, image_dims=manifest.image_dims)
    return manifest


def _mask_spec(shape: str, extent, dims) -> MaskSpec:
    if extent is None:
        return default_mask_spec(shape, dims)
    return MaskSpec(shape_kind=shape, default_extent=float(extent))


def _model_spec(args, seed) -> ModelSpec:
    return ModelSpec(
        family=args.arch,
        depth=int(args.depth),
        base_width=int(args.base_width),
        backbone=args.backbone or "none",
        seed=seed,
    )


def _train_config(args, seed, mask_shape) -> TrainConfig:
    patience = int(args.patience)
    return TrainConfig(
        learning_rate=float(args.lr),
        batch_size=int(args.batch_size),
        max_epochs=int(args.epochs),
        patience=None if patience == 0 else patience,
        loss=LossConfig(kind=args.loss),
        threshold=float(args.threshold),
        seed=seed,
        mask_shape=mask_shape,
    )


def _dims(args) -> tuple[int, int]:
    return args.dims if isinstance(args.dims, tuple) else _parse_dims(args.dims)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    resolved = _fill_defaults(args, {
        "seed": DEFAULT_SEED, "count": 16, "dims": "64x32", "extent_min": 4.0,
        "extent_max": 6.0, "noise_sigma": 0.02, "background": "jaw_arc",
    })
    out_dir = _prepare_out(args.out, args.force)
    dims = _dims(args)
    cfg = SynthConfig(
        count=int(args.count),
        dims=dims,
        seed=int(args.seed),
        target_extent_range=(float(args.extent_min), float(args.extent_max)),
        noise_sigma=float(args.noise_sigma),
        background_profile=args.background,
    )
    manifest_path = write_synthetic_dataset(cfg, out_dir)
    outputs = sorted(out_dir.glob("*.png")) + [manifest_path]
    _write_run_json(out_dir, "synth", {**resolved, "dims": list(dims)}, outputs)
    print(f"wrote {cfg.count} images + manifest to {out_dir}")
    return 0


def cmd_maskgen(args) -> int:
    resolved = _fill_defaults(args, {"seed": DEFAULT_SEED, "extent": None, "exclude": None})
    out_dir = _prepare_out(args.out, args.force)
    manifest = _load_manifest_filtered(args.manifest, args.exclude)
    spec = _mask_spec(args.mask_shape, args.extent, manifest.image_dims)
    outputs = []
    for entry in manifest.entries:
        mask = render_mask(entry.annotation, manifest.image_dims, spec)
        outputs.append(save_mask_png(mask, out_dir))
    _write_run_json(out_dir, "maskgen", {**resolved, "mask_shape": args.mask_shape,
                                         "manifest": str(args.manifest),
                                         "default_extent": spec.default_extent}, outputs)
    print(f"wrote {len(outputs)} {args.mask_shape} masks to {out_dir}")
    return 0


_TRAIN_DEFAULTS = {
    "seed": DEFAULT_SEED, "dims": "512x256", "extent": None, "loss": "dice",
    "lr": 1e-4, "batch_size": 8, "epochs": 150, "patience": 10, "threshold": 0.5,
    "depth": 4, "base_width": 64, "exclude": None, "val_fraction": 0.1,
}


def _manifest_samples(args, dims, mask_spec):
    manifest = _load_manifest_filtered(args.manifest, args.exclude)
    return manifest, build_samples(manifest, dims, mask_spec)


def cmd_train(args) -> int:
    resolved = _fill_defaults(args, _TRAIN_DEFAULTS)
    out_dir = _prepare_out(args.out, args.force)
    seed = int(args.seed)
    dims = _dims(args)
    mask_spec = _mask_spec(args.mask_shape, args.extent, dims)
    _, samples = _manifest_samples(args, dims, mask_spec)
    n_val = int(round(float(args.val_fraction) * len(samples)))
    rng = np.random.Generator(np.random.PCG64(seed))
    order = rng.permutation(len(samples))
    val = [samples[i] for i in order[:n_val]]
    trn = [samples[i] for i in order[n_val:]]
    spec = _model_spec(args, seed)
    cfg = _train_config(args, seed, args.mask_shape)
    if not val:
        from dataclasses import replace

        cfg = replace(cfg, patience=None)
    model, history = train(spec, trn, val, cfg)
    ckpt = save_checkpoint(model, out_dir / "checkpoint.npz")
    hist_path = out_dir / "history.jsonl"
    with open(hist_path, "w", encoding="utf-8") as fh:
        for rec in history.per_epoch:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    summary = out_dir / "train_summary.json"
    summary.write_text(json.dumps({
        "stopped_epoch": history.stopped_epoch,
        "best_epoch": history.best_epoch,
        "audit": history.audit.to_dict(),
        "n_train": len(trn), "n_val": len(val),
    }, indent=2, sort_keys=True), encoding="utf-8")
    _write_run_json(out_dir, "train",
                    {**resolved, "arch": args.arch, "backbone": args.backbone,
                     "mask_shape": args.mask_shape, "manifest": str(args.manifest),
                     "dims": list(dims)},
                    [ckpt, hist_path, summary])
    print(f"trained {args.arch}: stopped epoch {history.stopped_epoch}, "
          f"best epoch {history.best_epoch}")
    return 0


def cmd_cv(args) -> int:
    resolved = _fill_defaults(args, {**_TRAIN_DEFAULTS, "k": 5, "n_train": None})
    out_dir = _prepare_out(args.out, args.force)
    seed = int(args.seed)
    dims = _dims(args)
    mask_spec = _mask_spec(args.mask_shape, args.extent, dims)
    manifest, samples = _manifest_samples(args, dims, mask_spec)
    n_train = int(args.n_train) if args.n_train is not None else int(0.85 * len(samples))
    split = split_dataset(manifest, n_train, seed)
    by_id = {s.id: s for s in samples}
    pool = [by_id[i] for i in sorted(split.train_ids)]
    test = [by_id[i] for i in sorted(split.test_ids)]
    plan = make_folds(split.train_ids, int(args.k), seed)
    spec = _model_spec(args, seed)
    cfg = _train_config(args, seed, args.mask_shape)
    result = cross_validate(spec, plan, pool, test, cfg)
    outputs = []
    for fold in result.per_fold:
        outputs.append(save_checkpoint(fold["model"], out_dir / f"fold{fold['fold_index']}.npz"))
    model_name = args.arch if (args.backbone in (None, "none")) else f"{args.arch}_{args.backbone}"
    cv_path = out_dir / "cv_result.json"
    cv_path.write_text(json.dumps({
        "model": model_name,
        "mask_shape": args.mask_shape,
        "cv": result.to_dict(),
    }, indent=2, sort_keys=True), encoding="utf-8")
    outputs.append(cv_path)
    _write_run_json(out_dir, "cv",
                    {**resolved, "arch": args.arch, "backbone": args.backbone,
                     "mask_shape": args.mask_shape, "manifest": str(args.manifest),
                     "dims": list(dims), "n_train": n_train},
                    outputs)
    print(f"cv done: mean test DSC {result.mean_test_dsc:.4f}, "
          f"IoU {result.mean_test_iou:.4f}")
    return 0


def cmd_eval(args) -> int:
    resolved = _fill_defaults(args, {
        "seed": DEFAULT_SEED, "dims": "512x256", "extent": None, "threshold": 0.5,
        "exclude": None, "overlays": False, "roc": False,
    })
    out_dir = _prepare_out(args.out, args.force)
    dims = _dims(args)
    mask_spec = _mask_spec(args.mask_shape, args.extent, dims)
    manifest = _load_manifest_filtered(args.manifest, args.exclude)
    model = load_checkpoint(args.checkpoint)
    report = evaluate(model, manifest, mask_spec, float(args.threshold), dims)
    outputs = []
    if args.roc or args.overlays:
        samples = build_samples(manifest, dims, mask_spec)
        probs = []
        for start in range(0, len(samples), 8):
            chunk = samples[start : start + 8]
            probs.extend(model.forward(np.stack([s.image for s in chunk]))[..., 0])
        if args.roc:
            roc = roc_points(probs, [s.mask for s in samples])
            report.roc = roc
            roc_path, _ = plot_roc(roc, out_dir / "roc.png")
            outputs.append(roc_path)
        if args.overlays:
            ov_dir = out_dir / "overlays"
            ov_dir.mkdir(exist_ok=True)
            for s, p in zip(samples, probs):
                pred = MaskTensor((np.asarray(p) >= float(args.threshold)).astype(np.uint8), s.id)
                ov = render_overlay(ImageTensor(s.image, s.id), pred)
                outputs.append(save_overlay_png(ov, ov_dir / f"{s.id}.png"))
    metrics_path = out_dir / "metrics.json"
    metrics_path.write_text(report.to_json(), encoding="utf-8")
    outputs.append(metrics_path)
    _write_run_json(out_dir, "eval",
                    {**resolved, "mask_shape": args.mask_shape, "manifest": str(args.manifest),
                     "checkpoint": str(args.checkpoint), "dims": list(dims)},
                    outputs)
    print(f"eval: mean DSC {report.mean_dsc:.4f}, mean IoU {report.mean_iou:.4f}")
    return 0


def cmd_report(args) -> int:
    _fill_defaults(args, {"seed": DEFAULT_SEED})
    out_dir = _prepare_out(args.out, args.force)
    rows = []
    for path in args.cv:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        cv = doc["cv"]
        rows.append(ResultRow(
            model=doc["model"],
            mask_shape=doc["mask_shape"],
            cv_val_dsc=float(np.mean([f["val"]["mean_dsc"] for f in cv["per_fold"]])),
            cv_val_iou=float(np.mean([f["val"]["mean_iou"] for f in cv["per_fold"]])),
            test_dsc=float(cv["mean_test_dsc"]),
            test_iou=float(cv["mean_test_iou"]),
        ))
    table = results_table(rows)
    table_path = out_dir / "results.csv"
    table_path.write_text(table, encoding="utf-8")
    _write_run_json(out_dir, "report", {"cv": [str(p) for p in args.cv]}, [table_path])
    print(table, end="")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mfseg",
                                     description="Mental-foramen segmentation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help=f"RNG seed (default {DEFAULT_SEED}, never wall-clock)")
        p.add_argument("--force", action="store_true", help="overwrite a non-empty --out")
        p.add_argument("--config", default=None,
                       help="JSON config file with flat dotted keys; flags override it")

    def model_flags(p):
        p.add_argument("--arch", choices=ARCHES, required=True)
        p.add_argument("--backbone", choices=("resnet18", "inceptionv3"), default=None)
        p.add_argument("--depth", type=int, default=None)
        p.add_argument("--base-width", type=int, default=None)

    def train_flags(p):
        p.add_argument("--manifest", required=True)
        p.add_argument("--mask-shape", choices=("round", "square"), required=True)
        p.add_argument("--extent", type=float, default=None,
                       help="mask extent in px (default: 16 px scaled to width/512)")
        p.add_argument("--loss", choices=("dice", "bce", "focal"), default=None)
        p.add_argument("--lr", type=float, default=None)
        p.add_argument("--batch-size", type=int, default=None)
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--patience", type=int, default=None, help="0 disables early stopping")
        p.add_argument("--threshold", type=float, default=None)
        p.add_argument("--dims", default=None, help="working resolution WxH (default 512x256)")
        p.add_argument("--exclude", action="append", default=None,
                       help="image id to drop (repeatable)")

    p = sub.add_parser("synth", help="generate a synthetic radiograph dataset")
    common(p)
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--dims", default=None, help="image size WxH (default 64x32)")
    p.add_argument("--extent-min", type=float, default=None)
    p.add_argument("--extent-max", type=float, default=None)
    p.add_argument("--noise-sigma", type=float, default=None)
    p.add_argument("--background", choices=("flat", "jaw_arc"), default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("maskgen", help="rasterize ground-truth masks from a manifest")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--mask-shape", "--shape", dest="mask_shape",
                   choices=("round", "square"), required=True)
    p.add_argument("--extent", type=float, default=None)
    p.add_argument("--exclude", action="append", default=None)
    p.set_defaults(func=cmd_maskgen)

    p = sub.add_parser("train", help="train one model with a held-out validation split")
    common(p)
    model_flags(p)
    train_flags(p)
    p.add_argument("--val-fraction", type=float, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("cv", help="k-fold cross-validation plus fixed-test evaluation")
    common(p)
    model_flags(p)
    train_flags(p)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--n-train", type=int, default=None,
                   help="training-pool size (default: 85% of the manifest)")
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mask-shape", choices=("round", "square"), required=True)
    p.add_argument("--extent", type=float, default=None)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--dims", default=None)
    p.add_argument("--exclude", action="append", default=None)
    p.add_argument("--overlays", action="store_true", default=None,
                   help="write prediction overlays")
    p.add_argument("--roc", action="store_true", default=None,
                   help="write the pixel-pooled ROC plot and AUC")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="assemble a results table from cv outputs")
    common(p)
    p.add_argument("--cv", action="append", required=True,
                   help="path to a cv_result.json (repeatable)")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_config_file(args, args.command)
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - single machine-parsable error line
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
