"""Triangle mesh loading, validation, canonicalization, and graph extraction.

Meshes are immutable once constructed: vertices (n, 3) float64, faces
(m, 3) int64, with the undirected edge set derived from face boundaries.
Supported file formats are ASCII OFF and OBJ (triangles only); STL is
rejected because it has no shared-vertex topology.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import DegenerateMesh, NonTriangleFace, ParseError

# Meshes below this face count must be manifold to be accepted.
MANIFOLD_REQUIRED_BELOW_FACES = 1000


def edges_from_faces(faces: np.ndarray) -> np.ndarray:
    """Derive the deduplicated undirected edge set of a triangle list.

    Returns an (e, 2) int64 array with each edge stored as (lo, hi),
    sorted lexicographically. Faces with repeated vertices contribute
    no self-loop edges.
    """
    faces = np.asarray(faces, dtype=np.int64)
    if faces.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    pairs = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    pairs = np.sort(pairs, axis=1)
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    return np.unique(pairs, axis=0)


@dataclass(frozen=True)
class Mesh:
    """Indexed triangle mesh.

    Attributes
    ----------
    vertices : ndarray (n, 3) float64
        Vertex positions in model units.
    faces : ndarray (m, 3) int64
        Vertex-index triples. Every index must be < n.
    """

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64))
        f = np.ascontiguousarray(np.asarray(self.faces, dtype=np.int64))
        if v.ndim != 2 or v.shape[1] != 3:
            raise ParseError(f"vertices must be (n, 3), got {v.shape}")
        if f.size == 0:
            f = f.reshape(0, 3)
        if f.ndim != 2 or f.shape[1] != 3:
            raise ParseError(f"faces must be (m, 3), got {f.shape}")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise ParseError("face index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @cached_property
    def edges(self) -> np.ndarray:
        """Undirected edge set, (e, 2) int64, each row (lo, hi)."""
        return edges_from_faces(self.faces)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def euler_characteristic(self) -> int:
        return self.n_vertices - len(self.edges) + self.n_faces


@dataclass(frozen=True)
class FeatureGraph:
    """Featured undirected graph extracted from a canonical mesh.

    node_features is (n, 6): unit-scale position (3) followed by the
    area-weighted unit vertex normal (3). Normal rows of degenerate
    vertices are exactly zero and listed in ``degenerate_normals``.
    """

    node_features: np.ndarray
    adjacency: np.ndarray
    degenerate_normals: np.ndarray = field(
        default_factory=lambda: np.zeros(0, dtype=np.int64)
    )

    @property
    def n_nodes(self) -> int:
        return len(self.node_features)


@dataclass(frozen=True)
class ValidationReport:
    """Accept/reject verdict for one mesh.

    A mesh is rejected iff it has fewer than 1,000 faces and is not a
    valid manifold; everything else is accepted.
    """

    face_count: int
    is_manifold: bool
    verdict: str  # "accept" | "reject"
    reasons: tuple[str, ...]

    @property
    def accepted(self) -> bool:
        return self.verdict == "accept"


# ---------------------------------------------------------------------------
# File IO


def _parse_off(lines: list[str], path: str) -> Mesh:
    # Token stream: OFF header may carry the counts on the same line.
    tokens: list[str] = []
    for ln in lines:
        ln = ln.split("#", 1)[0].strip()
        if ln:
            tokens.extend(ln.split())
    if not tokens or tokens[0].upper() != "OFF":
        raise ParseError(f"{path}: missing OFF header")
    tokens = tokens[1:]
    try:
        nv, nf = int(tokens[0]), int(tokens[1])
        pos = 3  # skip edge count
        verts = np.array(tokens[pos : pos + 3 * nv], dtype=np.float64).reshape(nv, 3)
        pos += 3 * nv
        faces = np.empty((nf, 3), dtype=np.int64)
        for i in range(nf):
            k = int(tokens[pos])
            if k != 3:
                raise NonTriangleFace(f"{path}: face {i} has {k} vertices")
            faces[i] = [int(tokens[pos + 1]), int(tokens[pos + 2]), int(tokens[pos + 3])]
            pos += 4
    except NonTriangleFace:
        raise
    except (ValueError, IndexError) as exc:
        raise ParseError(f"{path}: malformed OFF file ({exc})") from exc
    return Mesh(verts, faces)


def _parse_obj(lines: list[str], path: str) -> Mesh:
    verts: list[list[float]] = []
    faces: list[list[int]] = []
    for lineno, ln in enumerate(lines, start=1):
        ln = ln.strip()
        if not ln or ln.startswith("#"):
            continue
        parts = ln.split()
        if parts[0] == "v":
            if len(parts) < 4:
                raise ParseError(f"{path}:{lineno}: vertex needs 3 coordinates")
            try:
                verts.append([float(parts[1]), float(parts[2]), float(parts[3])])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: bad vertex ({exc})") from exc
        elif parts[0] == "f":
            refs = parts[1:]
            if len(refs) != 3:
                raise NonTriangleFace(
                    f"{path}:{lineno}: face has {len(refs)} vertices"
                )
            idx = []
            for ref in refs:
                try:
                    i = int(ref.split("/", 1)[0])
                except ValueError as exc:
                    raise ParseError(f"{path}:{lineno}: bad face index") from exc
                # OBJ indices are 1-based; negatives count from the end.
                idx.append(i - 1 if i > 0 else len(verts) + i)
            faces.append(idx)
        # All other directives (vn, vt, g, o, s, usemtl, ...) are ignored.
    if not verts:
        raise ParseError(f"{path}: no vertices")
    return Mesh(np.array(verts), np.array(faces, dtype=np.int64).reshape(-1, 3))


def load_mesh(path: str | Path) -> Mesh:
    """Load a triangle mesh from an ASCII OFF or OBJ file.

    The format is chosen by file extension (``.off`` / ``.obj``); an
    unknown extension falls back to sniffing the OFF header. Vertex
    order is preserved from the file.

    Raises
    ------
    ParseError
        Missing file, unknown format, or malformed content.
    NonTriangleFace
        A quad or n-gon face was encountered.
    """
    path = Path(path)
    if not path.exists():
        raise ParseError(f"{path}: no such file")
    lines = path.read_text().splitlines()
    suffix = path.suffix.lower()
    if suffix == ".off":
        return _parse_off(lines, str(path))
    if suffix == ".obj":
        return _parse_obj(lines, str(path))
    for ln in lines:
        ln = ln.split("#", 1)[0].strip()
        if ln:
            if ln.upper().startswith("OFF"):
                return _parse_off(lines, str(path))
            break
    raise ParseError(f"{path}: unsupported format (need OFF or OBJ)")


def save_off(mesh: Mesh, path: str | Path) -> None:
    """Write a mesh as ASCII OFF. Numeric round-trip holds within 1e-6."""
    path = Path(path)
    with path.open("w") as fh:
        fh.write("OFF\n")
        fh.write(f"{mesh.n_vertices} {mesh.n_faces} 0\n")
        for x, y, z in mesh.vertices:
            fh.write(f"{x:.9g} {y:.9g} {z:.9g}\n")
        for a, b, c in mesh.faces:
            fh.write(f"3 {a} {b} {c}\n")


# ---------------------------------------------------------------------------
# Validation


def _vertex_stars_are_fans(faces: np.ndarray, n_vertices: int) -> bool:
    # The link of each vertex (opposite edges of its incident faces) must be
    # a single simple path or cycle: every link vertex has degree <= 2 and
    # the link is connected with 0 or 2 endpoints.
    incident: list[list[int]] = [[] for _ in range(n_vertices)]
    for fi, (a, b, c) in enumerate(faces):
        incident[a].append(fi)
        incident[b].append(fi)
        incident[c].append(fi)
    for v in range(n_vertices):
        fids = incident[v]
        if not fids:
            continue
        link_adj: dict[int, list[int]] = {}
        for fi in fids:
            a, b, c = faces[fi]
            o1, o2 = [x for x in (a, b, c) if x != v]
            link_adj.setdefault(o1, []).append(o2)
            link_adj.setdefault(o2, []).append(o1)
        degrees = [len(nbrs) for nbrs in link_adj.values()]
        if any(d > 2 for d in degrees):
            return False
        endpoints = sum(1 for d in degrees if d == 1)
        if endpoints not in (0, 2):
            return False
        # Connectivity sweep over the link graph.
        start = next(iter(link_adj))
        seen = {start}
        stack = [start]
        while stack:
            for nbr in link_adj[stack.pop()]:
                if nbr not in seen:
                    seen.add(nbr)
                    stack.append(nbr)
        if len(seen) != len(link_adj):
            return False
    return True


def is_manifold(mesh: Mesh) -> bool:
    """True iff every edge borders 1 or 2 faces and vertex stars are fans."""
    faces = mesh.faces
    if len(faces) == 0:
        return False
    if len(np.unique(np.sort(faces, axis=1), axis=0)) != len(faces):
        return False  # duplicate faces stack on the same edges
    if any(len(set(f)) != 3 for f in faces.tolist()):
        return False  # degenerate face
    pairs = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    pairs = np.sort(pairs, axis=1)
    _, counts = np.unique(pairs, axis=0, return_counts=True)
    if counts.max() > 2:
        return False
    return _vertex_stars_are_fans(faces, mesh.n_vertices)


def validate_mesh(mesh: Mesh) -> ValidationReport:
    """Produce the accept/reject report for one mesh.

    Low-face-count meshes carry useful data only when they are valid
    manifolds; non-manifold meshes with at least 1,000 faces are kept
    for their structural relevance.
    """
    fc = mesh.n_faces
    manifold = is_manifold(mesh)
    reasons = []
    if manifold:
        reasons.append("manifold")
    else:
        reasons.append("non-manifold")
    if fc < MANIFOLD_REQUIRED_BELOW_FACES:
        reasons.append(f"face count {fc} < {MANIFOLD_REQUIRED_BELOW_FACES}")
        verdict = "accept" if manifold else "reject"
    else:
        reasons.append(f"face count {fc} >= {MANIFOLD_REQUIRED_BELOW_FACES}")
        verdict = "accept"
    return ValidationReport(fc, manifold, verdict, tuple(reasons))


# ---------------------------------------------------------------------------
# Canonicalization and graph extraction


def canonicalize(mesh: Mesh) -> Mesh:
    """Translate the centroid to the origin and scale max vertex norm to 1.

    Connectivity is untouched. The scale factor is rotation invariant.

    Raises
    ------
    DegenerateMesh
        All vertices coincide, so the scale would be zero.
    """
    if mesh.n_vertices < 1:
        raise DegenerateMesh("empty vertex set")
    centered = mesh.vertices - mesh.vertices.mean(axis=0)
    scale = float(np.linalg.norm(centered, axis=1).max())
    if scale < 1e-15:
        raise DegenerateMesh("all vertices coincident")
    return Mesh(centered / scale, mesh.faces)


def vertex_normals(mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
    """Area-weighted vertex normals, renormalized per row.

    The face cross product (twice the face area times the unit face
    normal) is accumulated at each corner, then rows are normalized.
    Zero-norm rows are left as zeros; their indices are returned.

    Returns
    -------
    normals : ndarray (n, 3)
    degenerate : ndarray of int64
        Indices of vertices whose accumulated normal had zero norm.
    """
    v, f = mesh.vertices, mesh.faces
    normals = np.zeros_like(v)
    if len(f):
        cross = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        for k in range(3):
            np.add.at(normals, f[:, k], cross)
    norms = np.linalg.norm(normals, axis=1)
    degenerate = np.flatnonzero(norms < 1e-12)
    safe = np.where(norms < 1e-12, 1.0, norms)
    normals = normals / safe[:, None]
    normals[degenerate] = 0.0
    return normals, degenerate


def mesh_to_graph(mesh: Mesh) -> FeatureGraph:
    """Convert a canonicalized mesh into a featured undirected graph.

    Node features are [position | unit vertex normal] (6 dims); the
    adjacency is the mesh edge set.
    """
    normals, degenerate = vertex_normals(mesh)
    features = np.concatenate([mesh.vertices, normals], axis=1)
    return FeatureGraph(features, mesh.edges, degenerate)
