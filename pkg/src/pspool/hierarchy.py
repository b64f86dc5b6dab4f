"""Multi-level mesh coarsening via quadric edge collapse.

``decimate`` greedily collapses the edge with the lowest quadric error
until the face target is met or no legal collapse remains. Legality
combines the link condition, a duplicate-face guard, and a normal-flip
test, so closed manifolds stay closed manifolds. Collapse order is
fully deterministic: queue ties are broken by lowest edge index.

``build_hierarchy`` stacks decimated levels on a geometric vertex
schedule and records, for each coarse vertex, its Euclidean-nearest
vertex in the next finer level (the correspondence seed).

The inner loops run on plain Python floats; quadrics are kept as
10-component symmetric tuples. At desk scale this is several times
faster than per-edge numpy calls.
"""

from __future__ import annotations

import heapq
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import CannotDecimateWarning, DataError
from .mesh import Mesh

# Quadrics with a smaller optimal-position determinant fall back to the
# edge midpoint.
SINGULAR_QUADRIC_DET = 1e-12

_ZERO_Q = (0.0,) * 10


class CannotDecimate(DataError):
    """A hierarchy level could not be made strictly smaller."""


@dataclass(frozen=True)
class MeshHierarchy:
    """Ordered decimation levels plus coarse-to-fine seed maps.

    ``levels[0]`` is the finest mesh; ``seed_maps[l]`` maps each vertex
    of ``levels[l + 1]`` to the index of its Euclidean-nearest vertex in
    ``levels[l]``.
    """

    levels: tuple[Mesh, ...]
    seed_maps: tuple[np.ndarray, ...]

    @property
    def depth(self) -> int:
        return len(self.levels) - 1

    def __post_init__(self):
        if len(self.seed_maps) != len(self.levels) - 1:
            raise DataError("need one seed map per level pair")
        for l, sm in enumerate(self.seed_maps):
            if len(sm) != self.levels[l + 1].n_vertices:
                raise DataError(f"seed map {l} has wrong length")
            if sm.size and (sm.min() < 0 or sm.max() >= self.levels[l].n_vertices):
                raise DataError(f"seed map {l} indexes out of range")


def _plane_quadric(nx, ny, nz, d, w):
    return (
        w * nx * nx, w * nx * ny, w * nx * nz, w * nx * d,
        w * ny * ny, w * ny * nz, w * ny * d,
        w * nz * nz, w * nz * d,
        w * d * d,
    )


def _add_q(a, b):
    return (
        a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3],
        a[4] + b[4], a[5] + b[5], a[6] + b[6],
        a[7] + b[7], a[8] + b[8], a[9] + b[9],
    )


def _face_quadric(p0, p1, p2):
    ux, uy, uz = p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2]
    vx, vy, vz = p2[0] - p0[0], p2[1] - p0[1], p2[2] - p0[2]
    nx, ny, nz = uy * vz - uz * vy, uz * vx - ux * vz, ux * vy - uy * vx
    norm = math.sqrt(nx * nx + ny * ny + nz * nz)
    if norm < 1e-30:
        return _ZERO_Q
    nx, ny, nz = nx / norm, ny / norm, nz / norm
    d = -(nx * p0[0] + ny * p0[1] + nz * p0[2])
    return _plane_quadric(nx, ny, nz, d, 0.5 * norm)  # weight = face area


def _boundary_quadric(p0, p1, fn):
    # Plane through the boundary edge, perpendicular to its face; large
    # weight pins open boundaries in place.
    ex, ey, ez = p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2]
    nx, ny, nz = ey * fn[2] - ez * fn[1], ez * fn[0] - ex * fn[2], ex * fn[1] - ey * fn[0]
    norm = math.sqrt(nx * nx + ny * ny + nz * nz)
    if norm < 1e-30:
        return _ZERO_Q
    nx, ny, nz = nx / norm, ny / norm, nz / norm
    d = -(nx * p0[0] + ny * p0[1] + nz * p0[2])
    return _plane_quadric(nx, ny, nz, d, (ex * ex + ey * ey + ez * ez) * 1e3)


class _DecimationState:
    """Mutable mesh connectivity used during one decimation run."""

    def __init__(self, mesh: Mesh):
        self.pos: list[tuple[float, float, float]] = [
            tuple(p) for p in mesh.vertices.tolist()
        ]
        self.faces = [list(f) for f in mesh.faces.tolist()]
        self.face_alive = [True] * len(self.faces)
        self.n_alive_faces = len(self.faces)
        self.vert_faces: list[set[int]] = [set() for _ in range(mesh.n_vertices)]
        for fi, (a, b, c) in enumerate(self.faces):
            self.vert_faces[a].add(fi)
            self.vert_faces[b].add(fi)
            self.vert_faces[c].add(fi)
        self.quadrics: list[tuple] = [_ZERO_Q] * mesh.n_vertices
        face_normals = []
        for a, b, c in self.faces:
            pa, pb, pc = self.pos[a], self.pos[b], self.pos[c]
            kq = _face_quadric(pa, pb, pc)
            for v in (a, b, c):
                self.quadrics[v] = _add_q(self.quadrics[v], kq)
            face_normals.append((
                (pb[1] - pa[1]) * (pc[2] - pa[2]) - (pb[2] - pa[2]) * (pc[1] - pa[1]),
                (pb[2] - pa[2]) * (pc[0] - pa[0]) - (pb[0] - pa[0]) * (pc[2] - pa[2]),
                (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pb[1] - pa[1]) * (pc[0] - pa[0]),
            ))
        # Boundary edges (exactly one face) get a constraint quadric.
        edge_faces: dict[tuple[int, int], list[int]] = {}
        for fi, (a, b, c) in enumerate(self.faces):
            for u, v in ((a, b), (b, c), (c, a)):
                key = (u, v) if u < v else (v, u)
                edge_faces.setdefault(key, []).append(fi)
        for (u, v), fids in edge_faces.items():
            if len(fids) == 1:
                kq = _boundary_quadric(self.pos[u], self.pos[v], face_normals[fids[0]])
                self.quadrics[u] = _add_q(self.quadrics[u], kq)
                self.quadrics[v] = _add_q(self.quadrics[v], kq)
        # Deterministic edge ids in lexicographic order of the initial edges.
        self.edge_ids: dict[tuple[int, int], int] = {
            key: i for i, key in enumerate(sorted(edge_faces))
        }
        self.next_edge_id = len(self.edge_ids)
        self.edge_stamp: dict[tuple[int, int], int] = dict.fromkeys(edge_faces, 0)

    # -- queries ----------------------------------------------------------

    def neighbors(self, u: int) -> set[int]:
        nbrs: set[int] = set()
        for fi in self.vert_faces[u]:
            nbrs.update(self.faces[fi])
        nbrs.discard(u)
        return nbrs

    def optimal_position(self, u: int, v: int):
        q = _add_q(self.quadrics[u], self.quadrics[v])
        q00, q01, q02, q03, q11, q12, q13, q22, q23, q33 = q
        det = (
            q00 * (q11 * q22 - q12 * q12)
            - q01 * (q01 * q22 - q12 * q02)
            + q02 * (q01 * q12 - q11 * q02)
        )
        if abs(det) > SINGULAR_QUADRIC_DET:
            b0, b1, b2 = -q03, -q13, -q23
            x = (
                b0 * (q11 * q22 - q12 * q12)
                - q01 * (b1 * q22 - q12 * b2)
                + q02 * (b1 * q12 - q11 * b2)
            ) / det
            y = (
                q00 * (b1 * q22 - b2 * q12)
                - b0 * (q01 * q22 - q12 * q02)
                + q02 * (q01 * b2 - b1 * q02)
            ) / det
            z = (
                q00 * (q11 * b2 - q12 * b1)
                - q01 * (q01 * b2 - b1 * q02)
                + b0 * (q01 * q12 - q11 * q02)
            ) / det
        else:
            pu, pv = self.pos[u], self.pos[v]
            x = 0.5 * (pu[0] + pv[0])
            y = 0.5 * (pu[1] + pv[1])
            z = 0.5 * (pu[2] + pv[2])
        cost = (
            q00 * x * x + q11 * y * y + q22 * z * z
            + 2.0 * (q01 * x * y + q02 * x * z + q12 * y * z)
            + 2.0 * (q03 * x + q13 * y + q23 * z)
            + q33
        )
        return (x, y, z), max(cost, 0.0)

    def collapse_is_legal(self, u: int, v: int, p) -> bool:
        shared = self.vert_faces[u] & self.vert_faces[v]
        if len(shared) not in (1, 2):
            return False
        opposite = set()
        for fi in shared:
            opposite.update(x for x in self.faces[fi] if x != u and x != v)
        if self.neighbors(u) & self.neighbors(v) != opposite:
            return False  # link condition: collapse would pinch the surface
        surviving_u = {
            frozenset(self.faces[fi]) for fi in self.vert_faces[u] - shared
        }
        for fi in self.vert_faces[v] - shared:
            remapped = frozenset(u if x == v else x for x in self.faces[fi])
            if remapped in surviving_u:
                return False  # would create a duplicate (pillow) face
        # Reject collapses that flip or crush any surviving face.
        pos = self.pos
        for w, faces_w in ((u, self.vert_faces[u]), (v, self.vert_faces[v])):
            for fi in faces_w - shared:
                a, b, c = self.faces[fi]
                pa, pb, pc = pos[a], pos[b], pos[c]
                oux, ouy, ouz = pb[0] - pa[0], pb[1] - pa[1], pb[2] - pa[2]
                ovx, ovy, ovz = pc[0] - pa[0], pc[1] - pa[1], pc[2] - pa[2]
                onx = ouy * ovz - ouz * ovy
                ony = ouz * ovx - oux * ovz
                onz = oux * ovy - ouy * ovx
                qa = p if a == w else pa
                qb = p if b == w else pb
                qc = p if c == w else pc
                nux, nuy, nuz = qb[0] - qa[0], qb[1] - qa[1], qb[2] - qa[2]
                nvx, nvy, nvz = qc[0] - qa[0], qc[1] - qa[1], qc[2] - qa[2]
                nnx = nuy * nvz - nuz * nvy
                nny = nuz * nvx - nux * nvz
                nnz = nux * nvy - nuy * nvx
                if onx * nnx + ony * nny + onz * nnz <= 0.0:
                    return False
                if nnx * nnx + nny * nny + nnz * nnz < 1e-30:
                    return False
        return True

    # -- mutation ---------------------------------------------------------

    def collapse(self, u: int, v: int, p) -> list[tuple[int, int]]:
        """Collapse v into u placed at p; returns edges needing re-push."""
        shared = self.vert_faces[u] & self.vert_faces[v]
        old_nbrs_v = self.neighbors(v)
        self.pos[u] = p
        self.quadrics[u] = _add_q(self.quadrics[u], self.quadrics[v])
        for fi in shared:
            self.face_alive[fi] = False
            self.n_alive_faces -= 1
            for x in self.faces[fi]:
                self.vert_faces[x].discard(fi)
        for fi in list(self.vert_faces[v]):
            self.faces[fi] = [u if x == v else x for x in self.faces[fi]]
            self.vert_faces[u].add(fi)
        self.vert_faces[v].clear()
        # Merge edge ids of (v, x) into (u, x); keep the smaller id.
        key_uv = (u, v) if u < v else (v, u)
        self.edge_ids.pop(key_uv, None)
        self.edge_stamp.pop(key_uv, None)
        for x in old_nbrs_v:
            if x == u:
                continue
            key_vx = (v, x) if v < x else (x, v)
            old_id = self.edge_ids.pop(key_vx, None)
            self.edge_stamp.pop(key_vx, None)
            key_ux = (u, x) if u < x else (x, u)
            if old_id is not None:
                cur = self.edge_ids.get(key_ux)
                self.edge_ids[key_ux] = old_id if cur is None else min(cur, old_id)
        # Every edge incident to u has a changed cost.
        touched = []
        for x in sorted(self.neighbors(u)):
            key = (u, x) if u < x else (x, u)
            if key not in self.edge_ids:
                self.edge_ids[key] = self.next_edge_id
                self.next_edge_id += 1
            touched.append(key)
        return touched

    def to_mesh(self) -> Mesh:
        used = sorted({x for fi, alive in enumerate(self.face_alive) if alive
                       for x in self.faces[fi]})
        remap = {old: new for new, old in enumerate(used)}
        verts = np.array([self.pos[i] for i in used], dtype=np.float64).reshape(-1, 3)
        faces = [
            [remap[x] for x in self.faces[fi]]
            for fi, alive in enumerate(self.face_alive) if alive
        ]
        return Mesh(verts, np.array(faces, dtype=np.int64).reshape(-1, 3))


def decimate(mesh: Mesh, target_faces: int) -> Mesh:
    """Quadric edge-collapse decimation down to at most ``target_faces``.

    Stops early, with a ``CannotDecimateWarning``, when no legal
    collapse remains; the best-effort mesh is still returned. Vertices
    move to the quadric-optimal position, falling back to the edge
    midpoint when the quadric is singular.

    Parameters
    ----------
    mesh : Mesh
        Triangle mesh to simplify.
    target_faces : int
        Desired face count, at least 4.
    """
    if target_faces < 4:
        raise DataError(f"target_faces must be >= 4, got {target_faces}")
    if mesh.n_faces <= target_faces:
        return mesh

    state = _DecimationState(mesh)
    heap: list = []

    def push(key: tuple[int, int]) -> None:
        u, v = key
        state.edge_stamp[key] = state.edge_stamp.get(key, -1) + 1
        p, cost = state.optimal_position(u, v)
        heapq.heappush(heap, (cost, state.edge_ids[key], u, v, state.edge_stamp[key], p))

    for key in sorted(state.edge_ids):
        push(key)

    deferred: list[tuple[int, int]] = []  # edges whose collapse was illegal
    progressed = True  # collapses since the last retry round
    while state.n_alive_faces > target_faces:
        if not heap:
            # Retry previously illegal edges once per productive round;
            # their neighborhoods may have changed enough to unlock
            # further collapses. No progress since the last round means
            # the configuration is stuck.
            retry = [k for k in dict.fromkeys(deferred) if k in state.edge_ids]
            deferred = []
            if not retry or not progressed:
                warnings.warn(
                    f"no legal collapse left at {state.n_alive_faces} faces "
                    f"(target {target_faces})",
                    CannotDecimateWarning,
                    stacklevel=2,
                )
                break
            progressed = False
            for key in retry:
                push(key)
            continue
        _, _, u, v, stamp, p = heapq.heappop(heap)
        key = (u, v) if u < v else (v, u)
        if state.edge_stamp.get(key) != stamp or key not in state.edge_ids:
            continue
        if not state.collapse_is_legal(u, v, p):
            deferred.append(key)
            continue
        progressed = True
        for touched in state.collapse(u, v, p):
            push(touched)
    return state.to_mesh()


def nearest_vertices(query: np.ndarray, reference: np.ndarray,
                     chunk: int = 256) -> np.ndarray:
    """Index of the Euclidean-nearest reference point for each query point.

    Ties go to the lowest reference index (argmin semantics), which keeps
    hierarchy construction deterministic.
    """
    out = np.empty(len(query), dtype=np.int64)
    for start in range(0, len(query), chunk):
        block = query[start : start + chunk]
        d2 = ((block[:, None, :] - reference[None, :, :]) ** 2).sum(axis=2)
        out[start : start + chunk] = np.argmin(d2, axis=1)
    return out


def build_hierarchy(mesh: Mesh, depth: int, vertex_ratio: float = 0.25) -> MeshHierarchy:
    """Build ``depth + 1`` decimation levels plus seed maps.

    Level ``l`` targets ``ceil(|V0| * vertex_ratio**l)`` vertices,
    converted to a face budget via F = 2V (closed-surface estimate).

    Raises
    ------
    CannotDecimate
        A level could not be made strictly smaller than its parent.
    """
    if depth < 1:
        raise DataError(f"depth must be >= 1, got {depth}")
    if not 0.0 < vertex_ratio < 1.0:
        raise DataError(f"vertex_ratio must be in (0, 1), got {vertex_ratio}")
    levels = [mesh]
    seed_maps = []
    n0 = mesh.n_vertices
    for level in range(1, depth + 1):
        fine = levels[-1]
        target_v = math.ceil(n0 * vertex_ratio**level)
        target_f = max(4, min(2 * target_v, fine.n_faces - 2))
        coarse = decimate(fine, target_f)
        if coarse.n_vertices >= fine.n_vertices:
            raise CannotDecimate(
                f"level {level}: could not shrink below {fine.n_vertices} vertices"
            )
        seed_maps.append(nearest_vertices(coarse.vertices, fine.vertices))
        levels.append(coarse)
    return MeshHierarchy(tuple(levels), tuple(seed_maps))
