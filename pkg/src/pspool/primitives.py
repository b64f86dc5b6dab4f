"""Procedural triangle-mesh primitives.

All generators return closed, consistently outward-oriented manifold
meshes and are deterministic. They feed the synthetic dataset generator
and the test fixtures.
"""

from __future__ import annotations

import numpy as np

from .mesh import Mesh


def tetrahedron() -> Mesh:
    v = np.array(
        [[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=np.float64
    )
    f = np.array([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]], dtype=np.int64)
    return Mesh(v, f)


def icosahedron() -> Mesh:
    """Unit icosahedron: 12 vertices, 30 edges, 20 faces."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    v = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=np.float64,
    )
    v /= np.linalg.norm(v[0])
    f = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ],
        dtype=np.int64,
    )
    return Mesh(v, f)


def icosphere(subdivisions: int = 2, radius: float = 1.0) -> Mesh:
    """Icosahedron subdivided ``subdivisions`` times, projected to a sphere.

    Face count is 20 * 4**subdivisions.
    """
    mesh = icosahedron()
    verts = [tuple(p) for p in mesh.vertices]
    faces = mesh.faces.tolist()
    for _ in range(subdivisions):
        midpoint: dict[tuple[int, int], int] = {}

        def mid(a: int, b: int) -> int:
            key = (a, b) if a < b else (b, a)
            idx = midpoint.get(key)
            if idx is None:
                p = np.array(verts[a]) + np.array(verts[b])
                p /= np.linalg.norm(p)
                idx = len(verts)
                verts.append(tuple(p))
                midpoint[key] = idx
            return idx

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = new_faces
    v = np.array(verts, dtype=np.float64)
    v *= radius / np.linalg.norm(v, axis=1)[:, None]
    return Mesh(v, np.array(faces, dtype=np.int64))


def _lathe(ring_z: np.ndarray, ring_r: np.ndarray, n_u: int,
           top_z: float, bottom_z: float) -> Mesh:
    # Closed surface of revolution: pole, stack of rings, pole.
    theta = 2.0 * np.pi * np.arange(n_u) / n_u
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    verts = [np.array([0.0, 0.0, top_z])]
    for z, r in zip(ring_z, ring_r):
        ring = np.column_stack([r * cos_t, r * sin_t, np.full(n_u, z)])
        verts.extend(ring)
    verts.append(np.array([0.0, 0.0, bottom_z]))
    v = np.array(verts)

    def ring_vert(i: int, j: int) -> int:
        return 1 + i * n_u + (j % n_u)

    n_rings = len(ring_z)
    south = 1 + n_rings * n_u
    faces = []
    for j in range(n_u):
        faces.append([0, ring_vert(0, j), ring_vert(0, j + 1)])
    for i in range(n_rings - 1):
        for j in range(n_u):
            a, b = ring_vert(i, j), ring_vert(i, j + 1)
            c, d = ring_vert(i + 1, j), ring_vert(i + 1, j + 1)
            faces.append([a, c, d])
            faces.append([a, d, b])
    for j in range(n_u):
        faces.append([south, ring_vert(n_rings - 1, j + 1), ring_vert(n_rings - 1, j)])
    return Mesh(v, np.array(faces, dtype=np.int64))


def uv_sphere(n_u: int = 24, n_v: int = 16, radius: float = 1.0) -> Mesh:
    """Latitude/longitude sphere with pole fans.

    Face count is 2 * n_u * (n_v - 1).
    """
    phi = np.pi * np.arange(1, n_v) / n_v
    return _lathe(radius * np.cos(phi), radius * np.sin(phi), n_u, radius, -radius)


def capsule(n_u: int = 24, n_cap: int = 6, n_wall: int = 6,
            radius: float = 0.5, height: float = 1.0) -> Mesh:
    """Cylinder of the given height capped by two hemispheres."""
    h2 = height / 2.0
    t = np.pi / 2.0 * np.arange(1, n_cap + 1) / n_cap
    top_z, top_r = h2 + radius * np.cos(t), radius * np.sin(t)
    frac = np.arange(1, n_wall) / n_wall
    wall_z = h2 - height * frac
    wall_r = np.full(n_wall - 1, radius)
    bot_z, bot_r = -h2 - radius * np.cos(t[::-1]), radius * np.sin(t[::-1])
    ring_z = np.concatenate([top_z, wall_z, bot_z])
    ring_r = np.concatenate([top_r, wall_r, bot_r])
    return _lathe(ring_z, ring_r, n_u, h2 + radius, -h2 - radius)


def torus(n_major: int = 24, n_minor: int = 12,
          major_radius: float = 1.0, minor_radius: float = 0.35) -> Mesh:
    """Torus around the z axis. Face count is 2 * n_major * n_minor."""
    u = 2.0 * np.pi * np.arange(n_major) / n_major
    w = 2.0 * np.pi * np.arange(n_minor) / n_minor
    uu, ww = np.meshgrid(u, w, indexing="ij")
    ring = major_radius + minor_radius * np.cos(ww)
    v = np.column_stack(
        [
            (ring * np.cos(uu)).ravel(),
            (ring * np.sin(uu)).ravel(),
            (minor_radius * np.sin(ww)).ravel(),
        ]
    )

    def vid(i: int, j: int) -> int:
        return (i % n_major) * n_minor + (j % n_minor)

    faces = []
    for i in range(n_major):
        for j in range(n_minor):
            a, b = vid(i, j), vid(i + 1, j)
            c, d = vid(i + 1, j + 1), vid(i, j + 1)
            faces.append([a, b, c])
            faces.append([a, c, d])
    return Mesh(v, np.array(faces, dtype=np.int64))


def box(nx: int = 6, ny: int = 6, nz: int = 6,
        size: tuple[float, float, float] = (1.0, 1.0, 1.0)) -> Mesh:
    """Axis-aligned box with each side subdivided into a triangle grid."""
    sx, sy, sz = size
    half = np.array([sx, sy, sz]) / 2.0
    verts: list[np.ndarray] = []
    faces: list[list[int]] = []
    vert_ids: dict[tuple[int, int, int], int] = {}
    # Integer lattice keys make shared edges/corners merge exactly.
    scale = np.array([nx, ny, nz], dtype=np.float64)

    def add_vert(frac: np.ndarray) -> int:
        key = tuple(np.round(frac * scale * 2).astype(int))
        idx = vert_ids.get(key)
        if idx is None:
            idx = len(verts)
            verts.append((frac - 0.5) * 2.0 * half)
            vert_ids[key] = idx
        return idx

    # (axis held fixed, value, orientation flip, grid divisions u/v)
    sides = [
        (0, 1.0, False, ny, nz), (0, 0.0, True, ny, nz),
        (1, 1.0, True, nx, nz), (1, 0.0, False, nx, nz),
        (2, 1.0, False, nx, ny), (2, 0.0, True, nx, ny),
    ]
    for axis, value, flip, nu, nv in sides:
        axes = [a for a in range(3) if a != axis]
        for i in range(nu):
            for j in range(nv):
                corners = []
                for di, dj in [(0, 0), (1, 0), (1, 1), (0, 1)]:
                    frac = np.empty(3)
                    frac[axis] = value
                    frac[axes[0]] = (i + di) / nu
                    frac[axes[1]] = (j + dj) / nv
                    corners.append(add_vert(frac))
                a, b, c, d = corners
                if flip:
                    faces += [[a, c, b], [a, d, c]]
                else:
                    faces += [[a, b, c], [a, c, d]]
    return Mesh(np.array(verts), np.array(faces, dtype=np.int64))


def signed_volume(mesh: Mesh) -> float:
    """Signed enclosed volume; positive for outward-oriented closed meshes."""
    v, f = mesh.vertices, mesh.faces
    return float(np.einsum("ij,ij->i", v[f[:, 0]],
                           np.cross(v[f[:, 1]], v[f[:, 2]])).sum() / 6.0)
