"""Assemble per-mesh pooling structures: hierarchy, correspondence, operators.

This is the offline stage. Everything a model needs at train time for one
mesh is derived here once: canonical coordinates, vertex normals, the
decimation hierarchy, the balanced correspondence per level pair, and the
sparse pool/unpool operators built from it.
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .containers import PsphFile, load_psph, save_psph
from .correspondence import build_correspondence
from .errors import DataError, PspoolError
from .hierarchy import MeshHierarchy, build_hierarchy
from .manifest import DatasetManifest
from .mesh import Mesh, canonicalize, load_mesh, validate_mesh, vertex_normals
from .models import GraphBundle
from .operators import build_pooling_matrix, build_unpooling_matrix

__all__ = [
    "mesh_features",
    "bundle_from_hierarchy",
    "build_graph_bundle",
    "operator_stack",
    "precompute_mesh",
    "run_precompute",
    "PrecomputeResult",
    "bundle_from_psph",
]

log = logging.getLogger(__name__)


def mesh_features(mesh: Mesh) -> np.ndarray:
    """Per-vertex input features: canonical position and unit normal, 6 wide."""
    normals, _ = vertex_normals(mesh)
    return np.concatenate([mesh.vertices, normals], axis=1)


def operator_stack(hier: MeshHierarchy, k_S: int = 8,
                   k_aug: int | None = None):
    """Correspondence plus all three operators for every level pair."""
    corrs, norms, raws, unpools = [], [], [], []
    for s in range(hier.depth):
        corr = build_correspondence(
            hier.levels[s], hier.levels[s + 1], hier.seed_maps[s],
            k_S=k_S, k_aug=k_aug,
        )
        p_norm, p_raw = build_pooling_matrix(corr)
        corrs.append(corr)
        norms.append(p_norm)
        raws.append(p_raw)
        unpools.append(build_unpooling_matrix(p_raw))
    return tuple(corrs), tuple(norms), tuple(raws), tuple(unpools)


def _pack_bundle(levels, seed_or_corrs, pools, unpools, label, name, dtype):
    finest = levels[0]
    return GraphBundle(
        features=mesh_features(finest).astype(dtype),
        target=finest.vertices.astype(dtype),
        level_sizes=tuple(lvl.n_vertices for lvl in levels),
        edges=tuple(lvl.edges for lvl in levels),
        pool_norm=tuple(p.astype(dtype) for p in pools),
        unpool=tuple(u.astype(dtype) for u in unpools),
        corr=tuple(seed_or_corrs),
        label=label,
        name=name,
    )


def bundle_from_hierarchy(hier: MeshHierarchy, k_S: int = 8,
                          k_aug: int | None = None, label: int | None = None,
                          name: str = "", dtype=np.float64) -> GraphBundle:
    """Build correspondence and operators for every level pair of an
    already-canonicalized hierarchy and pack them as one sample."""
    corrs, norms, _, unpools = operator_stack(hier, k_S=k_S, k_aug=k_aug)
    return _pack_bundle(hier.levels, corrs, norms, unpools, label, name, dtype)


def build_graph_bundle(mesh: Mesh, depth: int, k_S: int = 8,
                       k_aug: int | None = None, label: int | None = None,
                       name: str = "", dtype=np.float64) -> GraphBundle:
    """Canonicalize a mesh, decimate it `depth` times, and build the full
    operator stack. One-stop path from a raw mesh to a training sample."""
    hier = build_hierarchy(canonicalize(mesh), depth)
    return bundle_from_hierarchy(hier, k_S=k_S, k_aug=k_aug, label=label,
                                 name=name, dtype=dtype)


def bundle_from_psph(source, label: int | None = None, name: str = "",
                     dtype=np.float64) -> GraphBundle:
    """Turn a decoded (or on-disk) precompute container into a sample."""
    psph = source if isinstance(source, PsphFile) else load_psph(source)
    return _pack_bundle(psph.hierarchy.levels, psph.corrs, psph.pool_norm,
                        psph.unpool, label, name, dtype)


# ---------------------------------------------------------------------------
# Corpus precompute


def precompute_mesh(mesh_path, out_path, depth: int = 2, k_S: int = 8,
                    k_aug: int | None = None) -> bytes:
    """Validate one mesh and write its PSPH container; returns the bytes."""
    mesh = load_mesh(mesh_path)
    report = validate_mesh(mesh)
    if not report.accepted:
        raise DataError(f"{mesh_path}: {'; '.join(report.reasons)}")
    hier = build_hierarchy(canonicalize(mesh), depth)
    corrs, norms, raws, unpools = operator_stack(hier, k_S=k_S, k_aug=k_aug)
    return save_psph(out_path, hier, corrs, norms, raws, unpools)


@dataclass(frozen=True)
class PrecomputeResult:
    written: tuple
    cached: tuple
    failed: tuple  # (mesh path, error message) pairs

    @property
    def ok(self) -> bool:
        return not self.failed


def _hash_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _precompute_worker(args):
    mesh_path, out_path, depth, k_S, k_aug = args
    try:
        data = precompute_mesh(mesh_path, out_path, depth, k_S, k_aug)
        return _hash_bytes(data), None
    except PspoolError as exc:
        return None, str(exc)


def run_precompute(manifest: DatasetManifest, mesh_dir, out_dir,
                   depth: int = 2, k_S: int = 8, k_aug: int | None = None,
                   jobs: int = 1) -> PrecomputeResult:
    """Precompute every manifest mesh into ``out_dir/<stem>.psph``.

    An index file records input and output content hashes per mesh;
    entries whose mesh bytes, parameters, and output file all still
    match are skipped, so a rerun over finished outputs does no work.
    Per-mesh failures are logged and skipped; the caller decides what a
    non-empty ``failed`` means.
    """
    mesh_dir = Path(mesh_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    index_path = out_dir / "precompute_index.json"
    params = {"depth": depth, "k_S": k_S,
              "k_aug": k_aug if k_aug is not None else 2 * k_S}
    index = {}
    if index_path.exists():
        try:
            doc = json.loads(index_path.read_text())
            if doc.get("params") == params:
                index = doc.get("meshes", {})
        except (json.JSONDecodeError, AttributeError):
            log.warning("ignoring unreadable index %s", index_path)

    todo, cached, failed = [], [], []
    new_index = {}
    for entry in manifest.entries:
        mesh_path = mesh_dir / entry.path
        out_path = out_dir / (Path(entry.path).stem + ".psph")
        try:
            input_sha = _hash_bytes(mesh_path.read_bytes())
        except OSError as exc:
            failed.append((entry.path, str(exc)))
            log.error("precompute failed for %s: %s", entry.path, exc)
            continue
        prev = index.get(entry.path)
        if (prev and prev.get("input_sha") == input_sha and out_path.exists()
                and _hash_bytes(out_path.read_bytes()) == prev.get("output_sha")):
            cached.append(entry.path)
            new_index[entry.path] = prev
        else:
            todo.append((entry.path, mesh_path, out_path, input_sha))

    work = [(str(m), str(o), depth, k_S, k_aug) for _, m, o, _ in todo]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_precompute_worker, work))
    else:
        outcomes = [_precompute_worker(w) for w in work]

    written = []
    for (rel, _, out_path, input_sha), (out_sha, err) in zip(todo, outcomes):
        if err is not None:
            failed.append((rel, err))
            log.error("precompute failed for %s: %s", rel, err)
            continue
        written.append(rel)
        new_index[rel] = {"input_sha": input_sha,
                          "output": out_path.name,
                          "output_sha": out_sha}
    index_path.write_text(json.dumps(
        {"params": params, "meshes": new_index}, indent=1, sort_keys=True)
        + "\n")
    return PrecomputeResult(written=tuple(written), cached=tuple(cached),
                            failed=tuple(failed))
