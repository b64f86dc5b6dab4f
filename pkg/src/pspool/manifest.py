"""Dataset manifests: stratified splits and nested labeled subsets."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, EmptyClassWarning

__all__ = [
    "ManifestEntry",
    "DatasetManifest",
    "assign_splits",
    "make_label_subsets",
    "manifest_from_directory",
]

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: int
    split: str


@dataclass(frozen=True)
class DatasetManifest:
    """Immutable list of (mesh path, class label, split) rows.

    A full manifest (``label_fraction`` 1.0) must satisfy the 8:1:1
    stratification within one sample per class. Subset manifests produced
    by `make_label_subsets` keep val and test intact but drop unselected
    train rows, so the ratio check is skipped for them.
    """

    entries: tuple
    class_names: tuple
    seed: int
    label_fraction: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        object.__setattr__(self, "class_names", tuple(self.class_names))
        if not self.entries:
            raise DataError("manifest has no entries")
        paths = [e.path for e in self.entries]
        if len(set(paths)) != len(paths):
            raise DataError("manifest lists a path twice")
        for e in self.entries:
            if e.split not in SPLITS:
                raise DataError(f"unknown split {e.split!r} for {e.path}")
            if not 0 <= e.label < len(self.class_names):
                raise DataError(f"label {e.label} out of range for {e.path}")
        if not 0.0 < self.label_fraction <= 1.0:
            raise DataError(f"label fraction {self.label_fraction} outside (0, 1]")
        if self.label_fraction == 1.0:
            self._check_ratios()

    def _check_ratios(self):
        for label in range(len(self.class_names)):
            rows = [e for e in self.entries if e.label == label]
            n = len(rows)
            if n == 0:
                raise DataError(f"class {self.class_names[label]!r} has no entries")
            counts = {s: sum(1 for e in rows if e.split == s) for s in SPLITS}
            for split, weight in (("train", 0.8), ("val", 0.1), ("test", 0.1)):
                if abs(counts[split] - weight * n) > 1.0:
                    raise DataError(
                        f"class {self.class_names[label]!r}: {split} has "
                        f"{counts[split]} of {n}, outside 8:1:1 by more "
                        f"than one sample"
                    )

    def subset(self, split: str) -> tuple:
        if split not in SPLITS:
            raise DataError(f"unknown split {split!r}")
        return tuple(e for e in self.entries if e.split == split)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "label_fraction": self.label_fraction,
            "class_names": list(self.class_names),
            "entries": [
                {"path": e.path, "label": e.label, "split": e.split}
                for e in self.entries
            ],
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        try:
            doc = json.loads(Path(path).read_text())
            return cls(
                entries=tuple(
                    ManifestEntry(r["path"], int(r["label"]), r["split"])
                    for r in doc["entries"]
                ),
                class_names=tuple(doc["class_names"]),
                seed=int(doc["seed"]),
                label_fraction=float(doc.get("label_fraction", 1.0)),
            )
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            raise DataError(f"bad manifest {path}: {exc}") from exc


def assign_splits(n: int, label: int, seed: int) -> list:
    """Deterministic 8:1:1 split labels for one class of size n.

    Rounded val/test counts first, remainder to train; the shuffle is
    seeded per (seed, label) so adding a class never reshuffles others.
    """
    n_val = round(0.1 * n)
    n_test = round(0.1 * n)
    order = np.random.default_rng((seed, label)).permutation(n)
    out = ["train"] * n
    for i in order[:n_val]:
        out[i] = "val"
    for i in order[n_val:n_val + n_test]:
        out[i] = "test"
    return out


def manifest_from_directory(root, seed: int) -> DatasetManifest:
    """Build a manifest from ``root/<class_name>/*.{off,obj}``.

    For users with a real mesh corpus on disk: one subdirectory per
    class, meshes inside. Classes and files are taken in sorted order,
    splits are the same seeded 8:1:1 used by the synthetic generator.
    """
    root = Path(root)
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if len(class_dirs) < 2:
        raise DataError(f"{root} needs at least two class subdirectories")
    entries = []
    for label, cdir in enumerate(class_dirs):
        files = sorted(p for p in cdir.iterdir()
                       if p.suffix.lower() in (".off", ".obj"))
        if not files:
            raise DataError(f"class directory {cdir} has no mesh files")
        splits = assign_splits(len(files), label, seed)
        entries.extend(
            ManifestEntry(path=str(p.relative_to(root)), label=label,
                          split=splits[i])
            for i, p in enumerate(files)
        )
    return DatasetManifest(entries=tuple(entries),
                           class_names=tuple(d.name for d in class_dirs),
                           seed=seed)


def make_label_subsets(manifest: DatasetManifest, fractions, seed: int) -> dict:
    """Per-fraction manifests with stratified train subsampling.

    Subsets are nested: the kept train rows for a smaller fraction are a
    prefix of those for any larger fraction (one seeded shuffle per
    class, then prefixes). Every class keeps at least one row; when
    rounding would give zero, an `EmptyClassWarning` is emitted.
    """
    fractions = sorted(set(float(f) for f in fractions))
    for f in fractions:
        if not 0.0 < f <= 1.0:
            raise DataError(f"label fraction {f} outside (0, 1]")

    by_class = {}
    for e in manifest.entries:
        if e.split == "train":
            by_class.setdefault(e.label, []).append(e)
    orders = {}
    for label, rows in by_class.items():
        rng = np.random.default_rng((seed, label, 7))
        orders[label] = [rows[i] for i in rng.permutation(len(rows))]

    rest = [e for e in manifest.entries if e.split != "train"]
    out = {}
    for f in fractions:
        if f == 1.0:
            out[f] = manifest
            continue
        kept = []
        for label, rows in orders.items():
            k = round(f * len(rows))
            if k == 0:
                warnings.warn(
                    f"label fraction {f} keeps no {manifest.class_names[label]!r} "
                    f"rows; forcing one",
                    EmptyClassWarning,
                    stacklevel=2,
                )
                k = 1
            kept.extend(rows[:k])
        order = {e.path: i for i, e in enumerate(manifest.entries)}
        entries = sorted(kept + rest, key=lambda e: order[e.path])
        out[f] = DatasetManifest(
            entries=tuple(entries),
            class_names=manifest.class_names,
            seed=manifest.seed,
            label_fraction=f,
        )
    return out
