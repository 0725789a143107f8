"""Manifest ingestion, image loading/normalization, splits and fold plans.

A manifest is a UTF-8 JSON document::

    {"image_dims": [width, height],
     "entries": [{"id": "...", "image": "relative/path.png",
                  "landmarks": [{"side": "left", "cx": 120.0, "cy": 300.0,
                                 "extent": 14.0}]}]}

Image paths are resolved relative to the manifest file. All shuffling
(splits, folds) uses NumPy's PCG64 generator so plans reproduce exactly
from their seed; ids are sorted before permuting, making plans independent
of entry order on disk.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

SIDES = ("left", "right")


class ManifestError(ValueError):
    """Malformed or invalid manifest content; the message names the offending entry."""


@dataclass(frozen=True)
class Landmark:
    side: str
    cx: float
    cy: float
    extent: float | None = None


@dataclass(frozen=True)
class AnnotationRecord:
    image_id: str
    landmarks: tuple[Landmark, ...]


@dataclass(frozen=True)
class ManifestEntry:
    image_id: str
    image_path: Path
    annotation: AnnotationRecord | None


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...]
    image_dims: tuple[int, int]  # (width, height) of the source images

    def __len__(self):
        return len(self.entries)

    def ids(self) -> list[str]:
        return [e.image_id for e in self.entries]

    def entry(self, image_id: str) -> ManifestEntry:
        for e in self.entries:
            if e.image_id == image_id:
                return e
        raise KeyError(image_id)


@dataclass(frozen=True)
class ImageTensor:
    data: np.ndarray  # (height, width) float in [0, 1]
    id: str


@dataclass(frozen=True)
class LoadedSample:
    image: ImageTensor
    annotation: AnnotationRecord | None


@dataclass(frozen=True)
class SplitPlan:
    train_ids: frozenset[str]
    test_ids: frozenset[str]
    seed: int


@dataclass(frozen=True)
class FoldPlan:
    k: int
    folds: tuple[frozenset[str], ...]
    seed: int

    def all_ids(self) -> frozenset[str]:
        return frozenset().union(*self.folds)


def _require(cond: bool, msg: str):
    if not cond:
        raise ManifestError(msg)


def _parse_landmark(raw: dict, image_dims, entry_id: str) -> Landmark:
    w, h = image_dims
    _require(isinstance(raw, dict), f"entry {entry_id!r}: landmark is not an object")
    side = raw.get("side")
    _require(side in SIDES, f"entry {entry_id!r}: landmark side must be one of {SIDES}")
    try:
        cx, cy = float(raw["cx"]), float(raw["cy"])
    except (KeyError, TypeError, ValueError):
        raise ManifestError(f"entry {entry_id!r}: landmark needs numeric cx/cy") from None
    _require(0.0 <= cx < w, f"entry {entry_id!r}: cx={cx} outside [0, {w})")
    _require(0.0 <= cy < h, f"entry {entry_id!r}: cy={cy} outside [0, {h})")
    extent = raw.get("extent")
    if extent is not None:
        extent = float(extent)
        _require(extent >= 0.0, f"entry {entry_id!r}: negative landmark extent")
    return Landmark(side=side, cx=cx, cy=cy, extent=extent)


def load_manifest(path: str | Path) -> DatasetManifest:
    """Parse and validate a manifest JSON file.

    Raises ManifestError naming the offending entry on duplicate ids,
    missing image files, malformed landmarks or out-of-bounds coordinates.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot parse manifest {path}: {exc}") from exc
    _require(isinstance(doc, dict), "manifest root must be an object")
    dims = doc.get("image_dims")
    _require(
        isinstance(dims, (list, tuple)) and len(dims) == 2 and all(int(d) > 0 for d in dims),
        "manifest image_dims must be [width, height] with positive values",
    )
    image_dims = (int(dims[0]), int(dims[1]))
    raw_entries = doc.get("entries")
    _require(isinstance(raw_entries, list), "manifest entries must be a list")

    entries = []
    seen: set[str] = set()
    for raw in raw_entries:
        _require(isinstance(raw, dict) and "id" in raw and "image" in raw,
                 "each entry needs 'id' and 'image' fields")
        eid = str(raw["id"])
        _require(eid not in seen, f"duplicate image_id {eid!r}")
        seen.add(eid)
        image_path = (path.parent / raw["image"]).resolve()
        _require(image_path.is_file(), f"entry {eid!r}: image file not found: {image_path}")
        lms_raw = raw.get("landmarks")
        _require(isinstance(lms_raw, list) and 1 <= len(lms_raw) <= 2,
                 f"entry {eid!r}: expected 1 or 2 landmarks")
        lms = tuple(_parse_landmark(lm, image_dims, eid) for lm in lms_raw)
        _require(len({lm.side for lm in lms}) == len(lms),
                 f"entry {eid!r}: landmark sides must be distinct")
        entries.append(ManifestEntry(eid, image_path, AnnotationRecord(eid, lms)))
    return DatasetManifest(entries=tuple(entries), image_dims=image_dims)


def write_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    """Serialize back to the manifest JSON schema (paths relative to the file)."""
    path = Path(path)
    doc = {
        "image_dims": list(manifest.image_dims),
        "entries": [
            {
                "id": e.image_id,
                "image": _relativize(e.image_path, path.parent),
                "landmarks": [
                    {k: v for k, v in
                     {"side": lm.side, "cx": lm.cx, "cy": lm.cy, "extent": lm.extent}.items()
                     if v is not None}
                    for lm in (e.annotation.landmarks if e.annotation else ())
                ],
            }
            for e in manifest.entries
        ],
    }
    path.write_text(json.dumps(doc, indent=2), encoding="utf-8")


def _relativize(target: Path, base: Path) -> str:
    try:
        return target.resolve().relative_to(base.resolve()).as_posix()
    except ValueError:
        return str(target)


# ---------------------------------------------------------------------------
# splitting / folds


def split_dataset(manifest: DatasetManifest, n_train: int, seed: int) -> SplitPlan:
    """Uniform without-replacement train/test split, reproducible from seed."""
    ids = sorted(manifest.ids())
    if not 0 <= n_train <= len(ids):
        raise ValueError(f"n_train={n_train} exceeds manifest size {len(ids)}")
    rng = np.random.Generator(np.random.PCG64(seed))
    perm = rng.permutation(len(ids))
    train = frozenset(ids[i] for i in perm[:n_train])
    test = frozenset(ids[i] for i in perm[n_train:])
    return SplitPlan(train_ids=train, test_ids=test, seed=seed)


def make_folds(train_ids, k: int, seed: int) -> FoldPlan:
    """Partition ids into k disjoint folds whose sizes differ by at most one."""
    ids = sorted(train_ids)
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if len(ids) < k:
        raise ValueError(f"cannot make {k} folds from {len(ids)} ids")
    rng = np.random.Generator(np.random.PCG64(seed))
    perm = rng.permutation(len(ids))
    shuffled = [ids[i] for i in perm]
    folds = tuple(frozenset(chunk) for chunk in np.array_split(np.array(shuffled, dtype=object), k))
    return FoldPlan(k=k, folds=folds, seed=seed)


# ---------------------------------------------------------------------------
# image loading


def bilinear_resize(img: np.ndarray, target_dims: tuple[int, int]) -> np.ndarray:
    """Bilinear resample of a 2-D array to (width, height), pixel-center aligned."""
    tw, th = target_dims
    sh, sw = img.shape
    if (sw, sh) == (tw, th):
        return img.astype(np.float64, copy=True)
    sx = sw / tw
    sy = sh / th
    xs = (np.arange(tw) + 0.5) * sx - 0.5
    ys = (np.arange(th) + 0.5) * sy - 0.5
    x0 = np.clip(np.floor(xs).astype(int), 0, sw - 1)
    y0 = np.clip(np.floor(ys).astype(int), 0, sh - 1)
    x1 = np.minimum(x0 + 1, sw - 1)
    y1 = np.minimum(y0 + 1, sh - 1)
    fx = np.clip(xs - x0, 0.0, 1.0)
    fy = np.clip(ys - y0, 0.0, 1.0)
    im = img.astype(np.float64)
    top = im[np.ix_(y0, x0)] * (1 - fx) + im[np.ix_(y0, x1)] * fx
    bot = im[np.ix_(y1, x0)] * (1 - fx) + im[np.ix_(y1, x1)] * fx
    return top * (1 - fy)[:, None] + bot * fy[:, None]


def decode_grayscale(path: Path) -> np.ndarray:
    """Decode an 8-bit image to a (H, W) uint8 array; color collapses to the channel average."""
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode == "L":
                return np.asarray(im, dtype=np.uint8)
            if im.mode == "LA":
                return np.asarray(im, dtype=np.uint8)[..., 0]
            if im.mode in ("RGB", "RGBA"):
                rgb = np.asarray(im, dtype=np.float64)[..., :3]
                return np.round(rgb.mean(axis=-1)).astype(np.uint8)
            raise ValueError(f"unsupported image mode {im.mode!r} (need 8-bit grayscale or color)")
    except (OSError, SyntaxError) as exc:
        raise ValueError(f"unreadable image {path}: {exc}") from exc


def load_image(entry: ManifestEntry, target_dims: tuple[int, int]) -> LoadedSample:
    """Load, normalize and resize one entry; landmark coordinates are remapped.

    The decoded image is bilinearly resized to target_dims (width, height) and
    scaled by 1/255 into [0, 1]. cx scales by width ratio, cy by height ratio,
    extent by the mean of the two (extents are axis-free radii).
    """
    raw = decode_grayscale(entry.image_path)
    sh, sw = raw.shape
    tw, th = target_dims
    data = bilinear_resize(raw, target_dims) / 255.0
    ann = entry.annotation
    if ann is not None:
        fx, fy = tw / sw, th / sh
        fe = 0.5 * (fx + fy)
        ann = AnnotationRecord(
            ann.image_id,
            tuple(
                Landmark(lm.side, lm.cx * fx, lm.cy * fy,
                         None if lm.extent is None else lm.extent * fe)
                for lm in ann.landmarks
            ),
        )
    return LoadedSample(image=ImageTensor(data=data, id=entry.image_id), annotation=ann)


def save_image_png(data: np.ndarray, path: str | Path) -> None:
    """Write a [0,1] float array as 8-bit grayscale PNG."""
    arr = np.round(np.clip(data, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)
