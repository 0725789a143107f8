"""Manifest parsing/validation, split/fold planning, image loading."""
import json

import numpy as np
import pytest
from PIL import Image

from mfseg.dataset import (
    DatasetManifest,
    ManifestError,
    bilinear_resize,
    load_image,
    load_manifest,
    make_folds,
    split_dataset,
    write_manifest,
)


def write_png(path, arr):
    Image.fromarray(np.asarray(arr, dtype=np.uint8), mode="L").save(path)


def make_dataset(tmp_path, n=3, dims=(32, 16), value=128):
    w, h = dims
    entries = []
    for i in range(n):
        name = f"img{i:03d}.png"
        write_png(tmp_path / name, np.full((h, w), value))
        entries.append({
            "id": f"p{i:04d}",
            "image": name,
            "landmarks": [
                {"side": "left", "cx": w * 0.25, "cy": h * 0.75, "extent": 3.0},
                {"side": "right", "cx": w * 0.75, "cy": h * 0.75},
            ],
        })
    doc = {"image_dims": [w, h], "entries": entries}
    mp = tmp_path / "manifest.json"
    mp.write_text(json.dumps(doc))
    return mp


def test_load_manifest_roundtrip(tmp_path):
    mp = make_dataset(tmp_path, n=5)
    m = load_manifest(mp)
    assert len(m) == 5
    assert m.image_dims == (32, 16)
    assert m.entries[0].annotation.landmarks[0].side == "left"
    assert m.entries[0].annotation.landmarks[1].extent is None
    out = tmp_path / "copy.json"
    write_manifest(m, out)
    again = load_manifest(out)
    assert again.ids() == m.ids()
    assert again.image_dims == m.image_dims


def test_load_manifest_empty_is_valid(tmp_path):
    mp = tmp_path / "m.json"
    mp.write_text(json.dumps({"image_dims": [8, 8], "entries": []}))
    m = load_manifest(mp)
    assert len(m) == 0


def test_duplicate_id_names_offender(tmp_path):
    mp = make_dataset(tmp_path, n=2)
    doc = json.loads(mp.read_text())
    doc["entries"][1]["id"] = "p0001"
    doc["entries"][0]["id"] = "p0001"
    mp.write_text(json.dumps(doc))
    with pytest.raises(ManifestError, match="p0001"):
        load_manifest(mp)


def test_missing_file_and_bad_landmarks(tmp_path):
    mp = make_dataset(tmp_path, n=1)
    doc = json.loads(mp.read_text())
    doc["entries"][0]["image"] = "nope.png"
    mp.write_text(json.dumps(doc))
    with pytest.raises(ManifestError, match="p0000"):
        load_manifest(mp)

    mp2 = make_dataset(tmp_path, n=1)
    doc = json.loads(mp2.read_text())
    doc["entries"][0]["landmarks"][0]["cx"] = 32.0  # == width, out of [0, w)
    mp2.write_text(json.dumps(doc))
    with pytest.raises(ManifestError, match="cx"):
        load_manifest(mp2)

    mp3 = make_dataset(tmp_path, n=1)
    doc = json.loads(mp3.read_text())
    doc["entries"][0]["landmarks"][1]["side"] = "left"  # duplicate side
    mp3.write_text(json.dumps(doc))
    with pytest.raises(ManifestError, match="distinct"):
        load_manifest(mp3)


def test_parse_error(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ManifestError, match="parse"):
        load_manifest(bad)


def test_single_landmark_record_accepted(tmp_path):
    mp = make_dataset(tmp_path, n=1)
    doc = json.loads(mp.read_text())
    doc["entries"][0]["landmarks"] = [{"side": "right", "cx": 5.0, "cy": 5.0}]
    mp.write_text(json.dumps(doc))
    m = load_manifest(mp)
    assert len(m.entries[0].annotation.landmarks) == 1


# ---------------------------------------------------------------------------
# splits and folds


def _mini_manifest(tmp_path, n):
    return load_manifest(make_dataset(tmp_path, n=n))


def test_split_sizes_disjoint_and_deterministic(tmp_path):
    m = _mini_manifest(tmp_path, 20)
    a = split_dataset(m, 15, seed=7)
    b = split_dataset(m, 15, seed=7)
    assert a == b
    assert len(a.train_ids) == 15 and len(a.test_ids) == 5
    assert not (a.train_ids & a.test_ids)
    assert a.train_ids | a.test_ids == frozenset(m.ids())
    c = split_dataset(m, 15, seed=8)
    assert c.train_ids != a.train_ids  # different seed, different draw


def test_split_boundaries(tmp_path):
    m = _mini_manifest(tmp_path, 4)
    full = split_dataset(m, 4, seed=1)
    assert full.test_ids == frozenset()
    with pytest.raises(ValueError):
        split_dataset(m, 5, seed=1)


def test_fold_sizes_and_coverage():
    ids = [f"id{i:03d}" for i in range(600)]
    plan = make_folds(ids, 5, seed=7)
    assert [len(f) for f in plan.folds] == [120] * 5
    assert plan.all_ids() == frozenset(ids)
    for i in range(5):
        for j in range(i + 1, 5):
            assert not (plan.folds[i] & plan.folds[j])
    assert make_folds(ids, 5, seed=7) == plan


def test_fold_boundaries():
    ids = [f"x{i}" for i in range(10)]
    loo = make_folds(ids, 10, seed=0)
    assert all(len(f) == 1 for f in loo.folds)
    seven = make_folds([f"y{i}" for i in range(7)], 5, seed=0)
    assert sorted(len(f) for f in seven.folds) == [1, 1, 1, 2, 2]
    with pytest.raises(ValueError):
        make_folds(ids, 1, seed=0)
    with pytest.raises(ValueError):
        make_folds(ids[:3], 5, seed=0)


def test_fold_property_random_cases():
    rng = np.random.default_rng(0)
    for _ in range(25):
        n = int(rng.integers(5, 80))
        k = int(rng.integers(2, min(n, 9) + 1))
        ids = [f"r{i:04d}" for i in range(n)]
        plan = make_folds(ids, k, seed=int(rng.integers(0, 1000)))
        sizes = [len(f) for f in plan.folds]
        assert sum(sizes) == n
        assert max(sizes) - min(sizes) <= 1
        assert plan.all_ids() == frozenset(ids)


# ---------------------------------------------------------------------------
# image loading


def test_load_image_constant_midgray(tmp_path):
    m = _mini_manifest(tmp_path, 1)
    sample = load_image(m.entries[0], (32, 16))
    assert sample.image.data.shape == (16, 32)
    assert np.allclose(sample.image.data, 128 / 255, atol=1e-9)


def test_load_image_resize_halves_coordinates(tmp_path):
    w, h = 64, 32
    name = tmp_path / "big.png"
    write_png(name, np.zeros((h, w)))
    doc = {"image_dims": [w, h], "entries": [{
        "id": "a", "image": "big.png",
        "landmarks": [{"side": "left", "cx": 20.0, "cy": 10.0, "extent": 4.0}],
    }]}
    mp = tmp_path / "m.json"
    mp.write_text(json.dumps(doc))
    m = load_manifest(mp)
    sample = load_image(m.entries[0], (32, 16))
    lm = sample.annotation.landmarks[0]
    assert lm.cx == pytest.approx(10.0)
    assert lm.cy == pytest.approx(5.0)
    assert lm.extent == pytest.approx(2.0)
    assert np.all(sample.image.data == 0.0)


def test_load_image_range_invariant(tmp_path):
    rng = np.random.default_rng(5)
    name = tmp_path / "noise.png"
    write_png(name, rng.integers(0, 256, size=(24, 48)))
    doc = {"image_dims": [48, 24], "entries": [{
        "id": "n", "image": "noise.png",
        "landmarks": [{"side": "left", "cx": 10.0, "cy": 10.0}],
    }]}
    mp = tmp_path / "m.json"
    mp.write_text(json.dumps(doc))
    for dims in [(48, 24), (32, 16), (16, 8), (96, 48)]:
        sample = load_image(load_manifest(mp).entries[0], dims)
        assert sample.image.data.min() >= 0.0
        assert sample.image.data.max() <= 1.0
        assert sample.image.data.shape == (dims[1], dims[0])


def test_load_image_rgb_luminance_average(tmp_path):
    arr = np.zeros((4, 4, 3), dtype=np.uint8)
    arr[..., 0] = 30
    arr[..., 1] = 60
    arr[..., 2] = 90
    Image.fromarray(arr, mode="RGB").save(tmp_path / "c.png")
    doc = {"image_dims": [4, 4], "entries": [{
        "id": "c", "image": "c.png",
        "landmarks": [{"side": "left", "cx": 1.0, "cy": 1.0}],
    }]}
    mp = tmp_path / "m.json"
    mp.write_text(json.dumps(doc))
    sample = load_image(load_manifest(mp).entries[0], (4, 4))
    assert np.allclose(sample.image.data, 60 / 255)


def test_load_image_corrupt_file(tmp_path):
    bad = tmp_path / "bad.png"
    bad.write_bytes(b"definitely not a png")
    doc = {"image_dims": [4, 4], "entries": [{
        "id": "b", "image": "bad.png",
        "landmarks": [{"side": "left", "cx": 1.0, "cy": 1.0}],
    }]}
    mp = tmp_path / "m.json"
    mp.write_text(json.dumps(doc))
    with pytest.raises(ValueError, match="unreadable"):
        load_image(load_manifest(mp).entries[0], (4, 4))


def test_bilinear_resize_identity_and_interpolation():
    img = np.arange(12, dtype=float).reshape(3, 4)
    assert np.array_equal(bilinear_resize(img, (4, 3)), img)
    up = bilinear_resize(np.array([[0.0, 1.0]]), (4, 1))
    assert up[0, 0] <= up[0, 1] <= up[0, 2] <= up[0, 3]
