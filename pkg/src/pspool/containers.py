"""Binary containers: "PSPH" precompute files and "PSPW" checkpoints.

Everything is little-endian. Indices are u32, correspondence weights and
operator values f32, vertex coordinates f64 (geometry is kept at full
precision so reconstruction targets survive a save/load cycle bit for bit).

PSPH layout::

    magic    4 bytes  b"PSPH"
    version  u32      (currently 1)
    n_levels u32 ; k_S u32 ; k_aug u32
    per level:
        n_vertices u32 ; n_faces u32
        vertices   f64[n_vertices * 3]
        faces      u32[n_faces * 3]
    per level pair (fine l -> coarse l+1):
        seed_map   u32[n_coarse]
        n_coarse u32 ; n_fine u32
        pool-view CSR: indptr u32[n_coarse+1] ; fine indices u32 ; weights f32
        n_repaired u32 ; repaired pairs u32[n_repaired * 2] (coarse, fine)
        three operators (pool_norm, pool_raw, unpool), each:
            rows u32 ; cols u32 ; indptr u32[rows+1] ; indices u32 ; values f32

The unpool view of each correspondence is rebuilt by transposition on
load; the pair weights are shared between views by construction, so only
one view is stored. Normalized operators are re-normalized row-wise in
f64 after the f32 round trip, so operator rows sum to one at full
precision no matter the storage width.

PSPW layout::

    magic    4 bytes  b"PSPW"
    version  u32      (currently 1)
    meta_len u32 ; meta JSON (UTF-8)
    n_tensors u32
    per tensor (sorted by name):
        name_len u16 ; name UTF-8 ; ndim u8 ; dims u32[ndim] ; data f32
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .correspondence import CorrespondenceSet
from .errors import ParseError
from .hierarchy import MeshHierarchy
from .mesh import Mesh
from .operators import SparseOperator

__all__ = [
    "PSPH_MAGIC",
    "PSPW_MAGIC",
    "PsphFile",
    "save_psph",
    "load_psph",
    "psph_to_json",
    "save_pspw",
    "load_pspw",
]

PSPH_MAGIC = b"PSPH"
PSPW_MAGIC = b"PSPW"
PSPH_VERSION = 1
PSPW_VERSION = 1


class _Writer:
    def __init__(self):
        self.parts = []

    def raw(self, b: bytes):
        self.parts.append(b)

    def u32(self, *vals):
        self.parts.append(struct.pack("<" + "I" * len(vals), *vals))

    def u16(self, v):
        self.parts.append(struct.pack("<H", v))

    def u8(self, v):
        self.parts.append(struct.pack("<B", v))

    def array(self, arr: np.ndarray, dtype: str):
        self.parts.append(np.ascontiguousarray(arr, dtype=dtype).tobytes())

    def getvalue(self) -> bytes:
        return b"".join(self.parts)


class _Cursor:
    def __init__(self, buf: bytes, what: str):
        self.buf = buf
        self.off = 0
        self.what = what

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.buf):
            raise ParseError(f"truncated {self.what} container")
        out = self.buf[self.off:self.off + n]
        self.off += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u8(self) -> int:
        return struct.unpack("<B", self.take(1))[0]

    def array(self, dtype: str, count: int) -> np.ndarray:
        itemsize = np.dtype(dtype).itemsize
        return np.frombuffer(self.take(itemsize * count), dtype=dtype).copy()

    def done(self) -> bool:
        return self.off == len(self.buf)


def _write_csr(w: _Writer, op: SparseOperator) -> None:
    w.u32(op.shape[0], op.shape[1])
    w.array(op.indptr, "<u4")
    w.array(op.indices, "<u4")
    w.array(op.values, "<f4")


def _read_csr(c: _Cursor, renormalize: bool) -> SparseOperator:
    rows = c.u32()
    cols = c.u32()
    indptr = c.array("<u4", rows + 1).astype(np.int64)
    nnz = int(indptr[-1]) if rows else 0
    indices = c.array("<u4", nnz).astype(np.int64)
    values = c.array("<f4", nnz).astype(np.float64)
    if renormalize:
        lens = np.diff(indptr)
        sums = np.zeros(rows)
        nonzero = np.flatnonzero(lens)
        if nonzero.size:
            sums[nonzero] = np.add.reduceat(values, indptr[:-1][nonzero])
        if (sums[lens > 0] <= 0).any():
            raise ParseError("stored operator has a non-positive row sum")
        values = values / np.repeat(np.where(lens > 0, sums, 1.0), lens)
    return SparseOperator((rows, cols), indptr, indices, values)


@dataclass(frozen=True)
class PsphFile:
    """Decoded precompute container for one mesh."""

    hierarchy: MeshHierarchy
    corrs: tuple
    pool_norm: tuple
    pool_raw: tuple
    unpool: tuple
    k_S: int
    k_aug: int


def save_psph(path, hier: MeshHierarchy, corrs, pool_norm, pool_raw,
              unpool) -> bytes:
    """Serialize one mesh's full precompute stack; returns the bytes written."""
    depth = hier.depth
    if not (len(corrs) == len(pool_norm) == len(pool_raw) == len(unpool) == depth):
        raise ParseError("per-stage sequences must all have length depth")
    w = _Writer()
    w.raw(PSPH_MAGIC)
    w.u32(PSPH_VERSION, depth + 1, corrs[0].k_S, corrs[0].k_aug)
    for lvl in hier.levels:
        w.u32(lvl.n_vertices, lvl.n_faces)
        w.array(lvl.vertices, "<f8")
        w.array(lvl.faces, "<u4")
    for s in range(depth):
        corr = corrs[s]
        w.array(hier.seed_maps[s], "<u4")
        w.u32(corr.n_coarse, corr.n_fine)
        indptr = [0]
        indices = []
        weights = []
        for entries in corr.pool_sets:
            for j, wt in entries:
                indices.append(j)
                weights.append(wt)
            indptr.append(len(indices))
        w.array(np.array(indptr), "<u4")
        w.array(np.array(indices), "<u4")
        w.array(np.array(weights), "<f4")
        w.u32(len(corr.repaired))
        w.array(np.array(corr.repaired, dtype=np.int64).reshape(-1, 2), "<u4")
        _write_csr(w, pool_norm[s])
        _write_csr(w, pool_raw[s])
        _write_csr(w, unpool[s])
    data = w.getvalue()
    Path(path).write_bytes(data)
    return data


def load_psph(path) -> PsphFile:
    """Decode a PSPH file; normalized operators are re-normalized in f64."""
    buf = Path(path).read_bytes()
    c = _Cursor(buf, "PSPH")
    if c.take(4) != PSPH_MAGIC:
        raise ParseError(f"{path}: not a PSPH container")
    version = c.u32()
    if version != PSPH_VERSION:
        raise ParseError(f"{path}: unsupported PSPH version {version}")
    n_levels = c.u32()
    if n_levels < 2:
        raise ParseError(f"{path}: container needs at least two levels")
    k_S = c.u32()
    k_aug = c.u32()

    levels = []
    for _ in range(n_levels):
        n_v = c.u32()
        n_f = c.u32()
        vertices = c.array("<f8", n_v * 3).reshape(n_v, 3)
        faces = c.array("<u4", n_f * 3).astype(np.int64).reshape(n_f, 3)
        levels.append(Mesh(vertices, faces))

    seed_maps = []
    corrs = []
    pool_norm = []
    pool_raw = []
    unpool = []
    for s in range(n_levels - 1):
        n_coarse_expected = levels[s + 1].n_vertices
        seed_maps.append(c.array("<u4", n_coarse_expected).astype(np.int64))
        n_coarse = c.u32()
        n_fine = c.u32()
        if n_coarse != n_coarse_expected or n_fine != levels[s].n_vertices:
            raise ParseError(f"{path}: correspondence sizes disagree with levels")
        indptr = c.array("<u4", n_coarse + 1).astype(np.int64)
        nnz = int(indptr[-1])
        indices = c.array("<u4", nnz).astype(np.int64)
        weights = c.array("<f4", nnz).astype(np.float64)
        n_rep = c.u32()
        repaired = c.array("<u4", n_rep * 2).astype(np.int64).reshape(-1, 2)

        pool_sets = []
        transpose = [[] for _ in range(n_fine)]
        for i in range(n_coarse):
            entries = []
            for p in range(indptr[i], indptr[i + 1]):
                j = int(indices[p])
                if j >= n_fine:
                    raise ParseError(f"{path}: fine index out of range")
                wt = float(weights[p])
                entries.append((j, wt))
                transpose[j].append((i, wt))
            pool_sets.append(tuple(entries))
        corrs.append(CorrespondenceSet(
            pool_sets=tuple(pool_sets),
            unpool_sets=tuple(tuple(t) for t in transpose),
            k_S=k_S,
            k_aug=k_aug,
            repaired=tuple((int(a), int(b)) for a, b in repaired),
        ))
        pool_norm.append(_read_csr(c, renormalize=True))
        pool_raw.append(_read_csr(c, renormalize=False))
        unpool.append(_read_csr(c, renormalize=True))
    if not c.done():
        raise ParseError(f"{path}: trailing bytes after PSPH payload")
    return PsphFile(
        hierarchy=MeshHierarchy(tuple(levels), tuple(seed_maps)),
        corrs=tuple(corrs),
        pool_norm=tuple(pool_norm),
        pool_raw=tuple(pool_raw),
        unpool=tuple(unpool),
        k_S=k_S,
        k_aug=k_aug,
    )


def _csr_json(op: SparseOperator) -> dict:
    return {
        "shape": list(op.shape),
        "indptr": op.indptr.tolist(),
        "indices": op.indices.tolist(),
        "values": op.values.tolist(),
    }


def psph_to_json(path) -> dict:
    """Readable dump of a PSPH container for debugging and diffing."""
    f = load_psph(path)
    return {
        "version": PSPH_VERSION,
        "k_S": f.k_S,
        "k_aug": f.k_aug,
        "levels": [
            {
                "n_vertices": lvl.n_vertices,
                "n_faces": lvl.n_faces,
                "vertices": lvl.vertices.tolist(),
                "faces": lvl.faces.tolist(),
            }
            for lvl in f.hierarchy.levels
        ],
        "pairs": [
            {
                "seed_map": f.hierarchy.seed_maps[s].tolist(),
                "pool_sets": [list(map(list, s_)) for s_ in f.corrs[s].pool_sets],
                "repaired": [list(p) for p in f.corrs[s].repaired],
                "pool_norm": _csr_json(f.pool_norm[s]),
                "pool_raw": _csr_json(f.pool_raw[s]),
                "unpool": _csr_json(f.unpool[s]),
            }
            for s in range(f.hierarchy.depth)
        ],
    }


def save_pspw(path, params: dict, meta: dict | None = None) -> bytes:
    """Write named tensors plus a JSON metadata blob; returns the bytes."""
    w = _Writer()
    w.raw(PSPW_MAGIC)
    w.u32(PSPW_VERSION)
    blob = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    w.u32(len(blob))
    w.raw(blob)
    names = sorted(params)
    w.u32(len(names))
    for name in names:
        arr = np.asarray(params[name])
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise ParseError(f"tensor name too long: {name[:40]}...")
        w.u16(len(encoded))
        w.raw(encoded)
        w.u8(arr.ndim)
        w.u32(*arr.shape)
        w.array(arr, "<f4")
    data = w.getvalue()
    Path(path).write_bytes(data)
    return data


def load_pspw(path) -> tuple[dict, dict]:
    """Read a checkpoint; returns (tensors as f32 arrays, metadata dict)."""
    buf = Path(path).read_bytes()
    c = _Cursor(buf, "PSPW")
    if c.take(4) != PSPW_MAGIC:
        raise ParseError(f"{path}: not a PSPW container")
    version = c.u32()
    if version != PSPW_VERSION:
        raise ParseError(f"{path}: unsupported PSPW version {version}")
    meta_len = c.u32()
    try:
        meta = json.loads(c.take(meta_len).decode("utf-8")) if meta_len else {}
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: bad metadata block: {exc}") from exc
    n = c.u32()
    params = {}
    for _ in range(n):
        name = c.take(c.u16()).decode("utf-8")
        ndim = c.u8()
        shape = tuple(c.u32() for _ in range(ndim))
        count = 1
        for d in shape:
            count *= d
        params[name] = c.array("<f4", count).reshape(shape)
    if not c.done():
        raise ParseError(f"{path}: trailing bytes after PSPW payload")
    return params, meta
