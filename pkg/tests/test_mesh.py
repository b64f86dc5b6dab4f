"""Mesh loading, validation, canonicalization, and graph extraction tests."""

import numpy as np
import pytest

from pspool.errors import DegenerateMesh, NonTriangleFace, ParseError
from pspool.mesh import (
    Mesh,
    canonicalize,
    edges_from_faces,
    is_manifold,
    load_mesh,
    mesh_to_graph,
    save_off,
    validate_mesh,
    vertex_normals,
)
from pspool.primitives import icosahedron, icosphere, tetrahedron


def brute_force_vertex_normals(vertices, faces):
    """Per-face cross products accumulated one face at a time.

    Independent of the library path: explicit Python loop, no fancy
    indexing, rows normalized at the end.
    """
    acc = np.zeros_like(vertices)
    for a, b, c in faces:
        n = np.cross(vertices[b] - vertices[a], vertices[c] - vertices[a])
        acc[a] += n
        acc[b] += n
        acc[c] += n
    out = np.zeros_like(acc)
    for i in range(len(acc)):
        norm = np.linalg.norm(acc[i])
        if norm >= 1e-12:
            out[i] = acc[i] / norm
    return out


# ---------------------------------------------------------------------------
# Loading


def test_load_off_tetrahedron_edge_count(tmp_path):
    # 4 vertices, 4 faces: the edge set is the complete graph K4 (6 edges).
    tet = tetrahedron()
    path = tmp_path / "tet.off"
    save_off(tet, path)
    mesh = load_mesh(path)
    assert mesh.n_vertices == 4
    assert mesh.n_faces == 4
    assert len(mesh.edges) == 6


def test_load_off_quad_face_rejected(tmp_path):
    path = tmp_path / "quad.off"
    path.write_text(
        "OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n"
    )
    with pytest.raises(NonTriangleFace):
        load_mesh(path)


def test_load_off_icosahedron_euler(tmp_path):
    ico = icosahedron()
    path = tmp_path / "ico.off"
    save_off(ico, path)
    mesh = load_mesh(path)
    assert mesh.n_vertices == 12
    assert mesh.n_faces == 20
    assert len(mesh.edges) == 30
    # V - E + F = 2 for a closed genus-0 surface.
    assert mesh.euler_characteristic() == 2


def test_load_off_counts_on_header_line(tmp_path):
    path = tmp_path / "inline.off"
    path.write_text("OFF 3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n")
    mesh = load_mesh(path)
    assert mesh.n_vertices == 3 and mesh.n_faces == 1


def test_load_obj_one_based_and_negative_indices(tmp_path):
    path = tmp_path / "tri.obj"
    path.write_text(
        "# comment\nv 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\nf -3 -2 -1\n"
    )
    mesh = load_mesh(path)
    assert mesh.n_faces == 2
    assert np.array_equal(mesh.faces[0], [0, 1, 2])
    assert np.array_equal(mesh.faces[1], [0, 1, 2])


def test_load_obj_slash_references(tmp_path):
    path = tmp_path / "slash.obj"
    path.write_text(
        "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvn 0 0 1\nf 1/1/1 2/1/1 3/1/1\n"
    )
    mesh = load_mesh(path)
    assert np.array_equal(mesh.faces[0], [0, 1, 2])


def test_load_obj_ngon_rejected(tmp_path):
    path = tmp_path / "ngon.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
    with pytest.raises(NonTriangleFace):
        load_mesh(path)


def test_load_missing_file():
    with pytest.raises(ParseError):
        load_mesh("/nonexistent/mesh.off")


def test_load_malformed_off(tmp_path):
    path = tmp_path / "bad.off"
    path.write_text("OFF\n5 2 0\n0 0 0\n")
    with pytest.raises(ParseError):
        load_mesh(path)


def test_load_unknown_extension_sniffs_off(tmp_path):
    path = tmp_path / "mesh.dat"
    path.write_text("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n")
    mesh = load_mesh(path)
    assert mesh.n_faces == 1


def test_load_unsupported_format(tmp_path):
    path = tmp_path / "mesh.dat"
    path.write_text("solid something\n")
    with pytest.raises(ParseError):
        load_mesh(path)


def test_save_off_roundtrip_within_1e6(tmp_path):
    rng = np.random.default_rng(0)
    mesh = icosphere(1)
    jittered = Mesh(mesh.vertices + rng.normal(0, 0.01, mesh.vertices.shape),
                    mesh.faces)
    path = tmp_path / "round.off"
    save_off(jittered, path)
    back = load_mesh(path)
    assert np.array_equal(back.faces, jittered.faces)
    assert np.abs(back.vertices - jittered.vertices).max() < 1e-6


def test_face_index_out_of_range_rejected():
    with pytest.raises(ParseError):
        Mesh(np.zeros((3, 3)), np.array([[0, 1, 5]]))


def test_edges_from_faces_dedup_and_no_self_loops():
    faces = np.array([[0, 1, 2], [2, 1, 0], [3, 3, 4]])
    edges = edges_from_faces(faces)
    assert (edges[:, 0] < edges[:, 1]).all()
    # duplicate triangle adds no edges; degenerate face contributes only 3-4
    expected = {(0, 1), (0, 2), (1, 2), (3, 4)}
    assert {tuple(e) for e in edges.tolist()} == expected


# ---------------------------------------------------------------------------
# Validation


def test_validate_small_manifold_accepted():
    ico = icosahedron()
    report = validate_mesh(ico)
    assert report.face_count == 20
    assert report.is_manifold
    assert report.accepted


def test_validate_small_nonmanifold_rejected():
    # Two triangles glued along an edge plus a third one reusing that edge:
    # the shared edge borders 3 faces.
    verts = np.array([
        [0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 1],
    ])
    faces = np.array([[0, 1, 2], [0, 1, 3], [0, 1, 4]])
    mesh = Mesh(verts, faces)
    report = validate_mesh(mesh)
    assert not report.is_manifold
    assert not report.accepted


def test_validate_large_nonmanifold_accepted():
    # Tile many disjoint triangles, then break manifoldness with a
    # triple-shared edge; face count >= 1000 keeps it accepted.
    n = 1100
    verts = []
    faces = []
    for i in range(n):
        base = len(verts)
        verts += [[i, 0, 0], [i + 0.5, 1, 0], [i, 0, 1]]
        faces.append([base, base + 1, base + 2])
    base = len(verts)
    verts += [[0, 0, 5], [1, 0, 5], [0, 1, 5], [0, -1, 5], [1, 1, 6]]
    faces += [[base, base + 1, base + 2],
              [base, base + 1, base + 3],
              [base, base + 1, base + 4]]
    mesh = Mesh(np.array(verts, dtype=float), np.array(faces))
    report = validate_mesh(mesh)
    assert report.face_count >= 1000
    assert not report.is_manifold
    assert report.accepted


def test_validate_large_manifold_accepted():
    big = icosphere(3)  # 1280 faces
    report = validate_mesh(big)
    assert report.face_count >= 1000
    assert report.is_manifold
    assert report.accepted


def test_validate_verdict_is_a_function_of_count_and_manifoldness():
    # Across all fixtures above, the verdict must equal the rule applied
    # to the two recorded fields, nothing else.
    meshes = [icosahedron(), icosphere(3)]
    verts = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 1]])
    meshes.append(Mesh(verts, np.array([[0, 1, 2], [0, 1, 3], [0, 1, 4]])))
    for mesh in meshes:
        report = validate_mesh(mesh)
        expect = not (report.face_count < 1000 and not report.is_manifold)
        assert report.accepted == expect
        assert len(report.reasons) >= 1


def test_is_manifold_rejects_duplicate_faces():
    verts = np.eye(3)
    faces = np.array([[0, 1, 2], [2, 1, 0]])
    assert not is_manifold(Mesh(verts, faces))


def test_is_manifold_rejects_bowtie_vertex():
    # Two fans meeting only at vertex 0: the star of 0 is two components.
    verts = np.array([
        [0.0, 0, 0],
        [1, 0, 0], [1, 1, 0],
        [-1, 0, 0], [-1, -1, 0],
    ])
    faces = np.array([[0, 1, 2], [0, 3, 4]])
    assert not is_manifold(Mesh(verts, faces))


def test_is_manifold_accepts_open_disk():
    verts = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [-1, 0.5, 0]])
    faces = np.array([[0, 1, 2], [0, 2, 3]])
    assert is_manifold(Mesh(verts, faces))


# ---------------------------------------------------------------------------
# Canonicalization


def test_canonicalize_two_point_example():
    mesh = Mesh(np.array([[2.0, 0, 0], [4.0, 0, 0]]), np.zeros((0, 3), int))
    out = canonicalize(mesh)
    assert np.allclose(out.vertices, [[-1, 0, 0], [1, 0, 0]], atol=1e-12)


def test_canonicalize_idempotent():
    rng = np.random.default_rng(1)
    mesh = Mesh(rng.normal(0, 3, (40, 3)) + 5.0, np.zeros((0, 3), int))
    once = canonicalize(mesh)
    twice = canonicalize(once)
    assert np.abs(twice.vertices - once.vertices).max() < 1e-12
    assert np.abs(once.vertices.mean(axis=0)).max() < 1e-9
    assert abs(np.linalg.norm(once.vertices, axis=1).max() - 1.0) < 1e-9


def test_canonicalize_degenerate():
    mesh = Mesh(np.ones((4, 3)), np.zeros((0, 3), int))
    with pytest.raises(DegenerateMesh):
        canonicalize(mesh)


def test_canonicalize_commutes_with_permutation():
    rng = np.random.default_rng(2)
    verts = rng.normal(0, 2, (25, 3))
    mesh = Mesh(verts, np.zeros((0, 3), int))
    perm = rng.permutation(25)
    permuted = Mesh(verts[perm], np.zeros((0, 3), int))
    a = canonicalize(mesh).vertices[perm]
    b = canonicalize(permuted).vertices
    assert np.abs(a - b).max() < 1e-12


def test_canonicalize_preserves_connectivity():
    ico = icosahedron()
    out = canonicalize(Mesh(ico.vertices * 7.0 + 3.0, ico.faces))
    assert np.array_equal(out.faces, ico.faces)


# ---------------------------------------------------------------------------
# Normals and graph extraction


def test_planar_square_normals():
    verts = np.array([[0.0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]])
    faces = np.array([[0, 1, 2], [0, 2, 3]])
    normals, degenerate = vertex_normals(Mesh(verts, faces))
    assert degenerate.size == 0
    assert np.allclose(normals, [[0, 0, 1]] * 4, atol=1e-12)


def test_icosahedron_normals_parallel_to_position():
    ico = canonicalize(icosahedron())
    graph = mesh_to_graph(ico)
    pos = graph.node_features[:, :3]
    nrm = graph.node_features[:, 3:]
    unit_pos = pos / np.linalg.norm(pos, axis=1, keepdims=True)
    assert np.abs(unit_pos - nrm).max() < 1e-6


def test_normals_match_brute_force_oracle():
    rng = np.random.default_rng(3)
    mesh = icosphere(2)
    mesh = Mesh(mesh.vertices + rng.normal(0, 0.02, mesh.vertices.shape),
                mesh.faces)
    normals, degenerate = vertex_normals(mesh)
    oracle = brute_force_vertex_normals(mesh.vertices, mesh.faces)
    assert degenerate.size == 0
    assert np.abs(normals - oracle).max() < 1e-12


def test_degenerate_vertex_normal_flagged():
    # Vertex 3 belongs only to a zero-area face.
    verts = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0],
                      [2, 2, 0], [3, 3, 0], [4, 4, 0]])
    faces = np.array([[0, 1, 2], [3, 4, 5]])
    normals, degenerate = vertex_normals(Mesh(verts, faces))
    assert set(degenerate.tolist()) == {3, 4, 5}
    assert np.all(normals[degenerate] == 0.0)


def test_graph_feature_shape_and_unit_normals():
    sphere = canonicalize(icosphere(1))
    graph = mesh_to_graph(sphere)
    assert graph.node_features.shape == (sphere.n_vertices, 6)
    assert np.array_equal(graph.adjacency, sphere.edges)
    norms = np.linalg.norm(graph.node_features[:, 3:], axis=1)
    assert np.abs(norms - 1.0).max() < 1e-6


def test_graph_permutation_equivariance():
    rng = np.random.default_rng(4)
    mesh = canonicalize(icosphere(1))
    perm = rng.permutation(mesh.n_vertices)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(len(perm))
    permuted = Mesh(mesh.vertices[perm], inv[mesh.faces])
    g0 = mesh_to_graph(mesh)
    g1 = mesh_to_graph(permuted)
    # Feature rows move with the permutation.
    assert np.abs(g1.node_features[inv] - g0.node_features).max() < 1e-12
    # Edge sets are relabel-isomorphic.
    relabeled = np.sort(inv[g0.adjacency], axis=1)
    relabeled = relabeled[np.lexsort((relabeled[:, 1], relabeled[:, 0]))]
    assert np.array_equal(relabeled, g1.adjacency)
