"""Synthetic mesh corpus: deformed shape families around 2k faces.

Every sample is produced by a per-sample generator seeded with
``(seed, class_index, sample_index)``, so regenerating any subset of the
corpus gives bit-identical files regardless of generation order or job
count. Resolution jitter keeps vertex counts of different classes
overlapping; class identity lives in the geometry, not in the counts.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import DataError
from .manifest import DatasetManifest, ManifestEntry, assign_splits
from .mesh import Mesh, save_off, validate_mesh
from .primitives import box, capsule, torus, uv_sphere

__all__ = ["CLASS_NAMES", "make_sample", "synth_dataset"]

CLASS_NAMES = ("ellipsoid", "torus", "capsule", "box", "blob")


def _base_mesh(class_name: str, rng: np.random.Generator) -> Mesh:
    if class_name == "ellipsoid":
        return uv_sphere(int(rng.integers(31, 36)), int(rng.integers(28, 33)))
    if class_name == "torus":
        return torus(int(rng.integers(40, 45)), int(rng.integers(22, 27)),
                     major_radius=1.0,
                     minor_radius=float(rng.uniform(0.28, 0.5)))
    if class_name == "capsule":
        return capsule(int(rng.integers(34, 39)), int(rng.integers(9, 11)),
                       int(rng.integers(10, 13)),
                       radius=float(rng.uniform(0.4, 0.6)),
                       height=float(rng.uniform(0.8, 1.4)))
    if class_name == "box":
        return box(int(rng.integers(12, 15)), int(rng.integers(12, 15)),
                   int(rng.integers(12, 15)))
    if class_name == "blob":
        base = uv_sphere(int(rng.integers(31, 36)), int(rng.integers(28, 33)))
        v = base.vertices.copy()
        r = np.linalg.norm(v, axis=1, keepdims=True)
        unit = v / r
        # radial Gaussian bumps welded onto the sphere; centers on the surface
        for _ in range(int(rng.integers(3, 6))):
            c = rng.normal(size=3)
            c /= np.linalg.norm(c)
            amp = rng.uniform(0.15, 0.45) * rng.choice([-1.0, 1.0])
            width = rng.uniform(0.25, 0.6)
            d2 = np.sum((unit - c) ** 2, axis=1, keepdims=True)
            r = r + amp * np.exp(-d2 / (2.0 * width ** 2))
        return Mesh(unit * np.maximum(r, 0.2), base.faces)
    raise DataError(f"unknown class {class_name!r}")


def _deform(mesh: Mesh, rng: np.random.Generator) -> Mesh:
    v = mesh.vertices.copy()
    # per-axis range is wide on purpose: bounding-box aspect must overlap
    # across classes so size features alone cannot identify the class
    v *= rng.uniform(0.6, 1.6, size=3) * rng.uniform(0.85, 1.2)
    # bend: twist about z proportional to height
    z = v[:, 2]
    span = z.max() - z.min()
    if span > 0:
        angle = rng.uniform(-0.5, 0.5) * (z - z.min()) / span
        c, s = np.cos(angle), np.sin(angle)
        x, y = v[:, 0].copy(), v[:, 1].copy()
        v[:, 0] = c * x - s * y
        v[:, 1] = s * x + c * y
    v += rng.normal(scale=0.004 * v.std(), size=v.shape)
    return Mesh(v, mesh.faces)


def make_sample(seed: int, class_index: int, sample_index: int) -> Mesh:
    """Build one corpus sample; fully determined by the three integers."""
    if not 0 <= class_index < len(CLASS_NAMES):
        raise DataError(f"class index {class_index} out of range")
    rng = np.random.default_rng((seed, class_index, sample_index))
    mesh = _deform(_base_mesh(CLASS_NAMES[class_index], rng), rng)
    validate_mesh(mesh)
    return mesh


def synth_dataset(out_dir, seed: int, classes: int = 3,
                  per_class: int = 50) -> DatasetManifest:
    """Write `classes * per_class` OFF files plus manifest.json.

    Class c, sample i lands at ``<class_name>_<i:03d>.off``. Splits are
    8:1:1 per class. Rerunning with the same arguments rewrites
    identical bytes.
    """
    if not 2 <= classes <= len(CLASS_NAMES):
        raise DataError(f"classes must be in [2, {len(CLASS_NAMES)}]")
    if per_class < 1:
        raise DataError("per_class must be >= 1")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    entries = []
    for c in range(classes):
        splits = assign_splits(per_class, c, seed)
        for i in range(per_class):
            mesh = make_sample(seed, c, i)
            name = f"{CLASS_NAMES[c]}_{i:03d}.off"
            save_off(mesh, out_dir / name)
            entries.append(ManifestEntry(path=name, label=c, split=splits[i]))

    manifest = DatasetManifest(entries=tuple(entries),
                               class_names=CLASS_NAMES[:classes], seed=seed)
    manifest.save(out_dir / "manifest.json")
    return manifest
