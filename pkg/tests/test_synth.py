"""Tests for the synthetic corpus generator and dataset manifests."""

import json
import warnings
from pathlib import Path

import numpy as np
import pytest

from pspool.errors import DataError, EmptyClassWarning
from pspool.manifest import (
    DatasetManifest,
    ManifestEntry,
    assign_splits,
    make_label_subsets,
    manifest_from_directory,
)
from pspool.mesh import load_mesh, validate_mesh
from pspool.synth import CLASS_NAMES, make_sample, synth_dataset


# ---------------------------------------------------------------------------
# Split assignment


def test_assign_splits_counts_50():
    splits = assign_splits(50, 0, seed=9)
    assert splits.count("train") == 40
    assert splits.count("val") == 5
    assert splits.count("test") == 5


def test_assign_splits_counts_10():
    splits = assign_splits(10, 2, seed=9)
    assert splits.count("train") == 8
    assert splits.count("val") == 1
    assert splits.count("test") == 1


def test_assign_splits_tiny_class_keeps_train():
    # rounding sends whole tiny classes to train; still within one
    # sample of 8:1:1
    assert assign_splits(1, 0, seed=1) == ["train"]
    assert assign_splits(2, 0, seed=1) == ["train", "train"]
    assert assign_splits(3, 0, seed=1).count("train") == 3


def test_assign_splits_deterministic_and_label_seeded():
    a = assign_splits(30, 0, seed=4)
    assert a == assign_splits(30, 0, seed=4)
    assert a != assign_splits(30, 1, seed=4)


# ---------------------------------------------------------------------------
# Manifest container


def _toy_manifest(per_class=10, classes=2):
    entries = []
    for c in range(classes):
        splits = assign_splits(per_class, c, seed=3)
        entries.extend(
            ManifestEntry(f"c{c}_{i:02d}.off", c, splits[i])
            for i in range(per_class)
        )
    return DatasetManifest(entries=tuple(entries),
                           class_names=tuple(f"c{c}" for c in range(classes)),
                           seed=3)


def test_manifest_roundtrip(tmp_path):
    m = _toy_manifest()
    m.save(tmp_path / "manifest.json")
    loaded = DatasetManifest.load(tmp_path / "manifest.json")
    assert loaded == m


def test_manifest_rejects_duplicate_paths():
    e = ManifestEntry("a.off", 0, "train")
    with pytest.raises(DataError, match="twice"):
        DatasetManifest(entries=(e, e), class_names=("c0",), seed=0)


def test_manifest_rejects_bad_split_and_label():
    with pytest.raises(DataError, match="split"):
        DatasetManifest(entries=(ManifestEntry("a.off", 0, "dev"),),
                        class_names=("c0",), seed=0)
    with pytest.raises(DataError, match="label"):
        DatasetManifest(entries=(ManifestEntry("a.off", 5, "train"),),
                        class_names=("c0",), seed=0)


def test_manifest_rejects_skewed_full_split():
    # 10 samples all in train: val/test are off by more than one sample
    entries = tuple(ManifestEntry(f"{i}.off", 0, "train") for i in range(10))
    with pytest.raises(DataError, match="8:1:1"):
        DatasetManifest(entries=entries, class_names=("c0",), seed=0)


def test_manifest_subset_filters_split():
    m = _toy_manifest()
    val = m.subset("val")
    assert all(e.split == "val" for e in val)
    assert len(val) == 2  # one per class at per_class=10


def test_manifest_corrupt_json_raises(tmp_path):
    p = tmp_path / "manifest.json"
    p.write_text("{\"seed\": 1}")
    with pytest.raises(DataError):
        DatasetManifest.load(p)


# ---------------------------------------------------------------------------
# Label subsets


def test_label_subsets_nested_and_stratified():
    m = _toy_manifest(per_class=40, classes=3)
    subs = make_label_subsets(m, [0.125, 0.5, 1.0], seed=11)
    paths = {}
    for f, sub in subs.items():
        train = [e for e in sub.entries if e.split == "train"]
        paths[f] = set(e.path for e in train)
        for c in range(3):
            n_c = sum(1 for e in train if e.label == c)
            assert n_c == max(1, round(f * 32)), (f, c, n_c)
    assert paths[0.125] <= paths[0.5] <= paths[1.0]


def test_label_subsets_preserve_val_test():
    m = _toy_manifest(per_class=40, classes=2)
    sub = make_label_subsets(m, [0.125], seed=11)[0.125]
    assert sub.subset("val") == m.subset("val")
    assert sub.subset("test") == m.subset("test")
    assert sub.label_fraction == 0.125


def test_label_subsets_fraction_one_is_input():
    m = _toy_manifest()
    assert make_label_subsets(m, [1.0], seed=5)[1.0] is m


def test_label_subsets_minimum_one_with_warning():
    m = _toy_manifest(per_class=40, classes=2)
    with pytest.warns(EmptyClassWarning):
        sub = make_label_subsets(m, [0.0078], seed=11)[0.0078]
    for c in range(2):
        kept = [e for e in sub.entries if e.split == "train" and e.label == c]
        assert len(kept) == 1


def test_label_subsets_reject_bad_fraction():
    m = _toy_manifest()
    with pytest.raises(DataError):
        make_label_subsets(m, [0.0], seed=1)
    with pytest.raises(DataError):
        make_label_subsets(m, [1.5], seed=1)


def test_label_subsets_deterministic():
    m = _toy_manifest(per_class=40, classes=2)
    a = make_label_subsets(m, [0.25], seed=11)[0.25]
    b = make_label_subsets(m, [0.25], seed=11)[0.25]
    assert a == b
    c = make_label_subsets(m, [0.25], seed=12)[0.25]
    assert a != c


# ---------------------------------------------------------------------------
# Sample generation


def test_make_sample_deterministic():
    a = make_sample(7, 1, 3)
    b = make_sample(7, 1, 3)
    assert np.array_equal(a.vertices, b.vertices)
    assert np.array_equal(a.faces, b.faces)
    c = make_sample(7, 1, 4)
    assert not np.array_equal(a.vertices, c.vertices)


@pytest.mark.parametrize("class_index", range(len(CLASS_NAMES)))
def test_every_class_yields_valid_mesh_near_2k_faces(class_index):
    mesh = make_sample(3, class_index, 0)
    report = validate_mesh(mesh)
    assert report.accepted, report
    assert 1400 <= len(mesh.faces) <= 2800, len(mesh.faces)


def test_vertex_count_ranges_overlap_across_classes():
    counts = {c: [len(make_sample(5, c, i).vertices) for i in range(6)]
              for c in range(3)}
    los = [min(v) for v in counts.values()]
    his = [max(v) for v in counts.values()]
    assert max(los) <= min(his), counts


# ---------------------------------------------------------------------------
# Corpus generation


@pytest.fixture(scope="module")
def small_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    manifest = synth_dataset(out, seed=17, classes=3, per_class=10)
    return out, manifest


def test_synth_writes_files_and_manifest(small_corpus):
    out, manifest = small_corpus
    assert len(manifest.entries) == 30
    assert (out / "manifest.json").exists()
    for e in manifest.entries:
        assert (out / e.path).exists(), e.path
    for c in range(3):
        rows = [e for e in manifest.entries if e.label == c]
        assert len(rows) == 10
        assert sum(1 for e in rows if e.split == "train") == 8
        assert sum(1 for e in rows if e.split == "val") == 1
        assert sum(1 for e in rows if e.split == "test") == 1


def test_synth_files_load_and_validate(small_corpus):
    out, manifest = small_corpus
    for e in manifest.entries[:6]:
        mesh = load_mesh(out / e.path)
        assert validate_mesh(mesh).accepted


def test_synth_is_bit_identical(small_corpus, tmp_path):
    out, manifest = small_corpus
    again = tmp_path / "again"
    synth_dataset(again, seed=17, classes=3, per_class=10)
    for e in manifest.entries:
        assert (out / e.path).read_bytes() == (again / e.path).read_bytes()
    assert ((out / "manifest.json").read_bytes()
            == (again / "manifest.json").read_bytes())


def test_synth_seed_changes_geometry(small_corpus, tmp_path):
    out, manifest = small_corpus
    other = tmp_path / "other"
    synth_dataset(other, seed=18, classes=3, per_class=10)
    e = manifest.entries[0]
    assert (out / e.path).read_bytes() != (other / e.path).read_bytes()


def test_synth_rejects_single_class(tmp_path):
    with pytest.raises(DataError):
        synth_dataset(tmp_path, seed=1, classes=1, per_class=4)


def test_nearest_centroid_on_size_features_is_imperfect(small_corpus):
    # classes must not be separable by vertex count + bounding box alone
    out, manifest = small_corpus
    feats, labels = [], []
    for e in manifest.entries:
        mesh = load_mesh(out / e.path)
        ext = mesh.vertices.max(axis=0) - mesh.vertices.min(axis=0)
        feats.append([len(mesh.vertices), *ext])
        labels.append(e.label)
    feats = np.asarray(feats)
    labels = np.asarray(labels)
    mu = feats.mean(axis=0)
    sd = feats.std(axis=0)
    z = (feats - mu) / np.where(sd > 0, sd, 1.0)
    centroids = np.stack([z[labels == c].mean(axis=0) for c in range(3)])
    pred = np.argmin(
        ((z[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2), axis=1)
    acc = float((pred == labels).mean())
    assert acc < 1.0, acc


# ---------------------------------------------------------------------------
# Directory loader


def test_manifest_from_directory(tmp_path):
    for cname in ("alpha", "beta"):
        d = tmp_path / cname
        d.mkdir()
        for i in range(10):
            (d / f"{i:02d}.off").write_text("OFF\n0 0 0\n")
    m = manifest_from_directory(tmp_path, seed=2)
    assert m.class_names == ("alpha", "beta")
    assert len(m.entries) == 20
    assert all(e.path.startswith(("alpha/", "beta/")) for e in m.entries)
    for c in range(2):
        rows = [e for e in m.entries if e.label == c]
        assert sum(1 for e in rows if e.split == "train") == 8


def test_manifest_from_directory_needs_two_classes(tmp_path):
    (tmp_path / "only").mkdir()
    (tmp_path / "only" / "a.off").write_text("OFF\n0 0 0\n")
    with pytest.raises(DataError):
        manifest_from_directory(tmp_path, seed=2)
