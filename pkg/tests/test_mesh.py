import math

import numpy as np
import pytest

from cavegen.decimate import decimate
from cavegen.errors import ContractViolation, ResourceLimitError
from cavegen.graph import Graph, GraphConfig, Node, generate_graph
from cavegen.mesh import MeshConfig, TriMesh, chunk_mesh, compute_vertex_normals, smooth_mesh, validate_mesh
from cavegen.skin import sdf_eval, skin_graph


def capsule_graph(r0=2.0, r1=2.0, length=10.0) -> Graph:
    return Graph(
        nodes=[
            Node(0, None, {1}, np.zeros(3), r0, False, 0),
            Node(1, 0, {0}, np.array([length, 0.0, 0.0]), r1, False, 0),
        ],
        layers=1,
        seed=0,
    )


def tetrahedron() -> TriMesh:
    pos = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=np.float64)
    tris = np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]])
    return TriMesh(pos, tris)


@pytest.fixture(scope="module")
def capsule_mesh():
    return skin_graph(capsule_graph(), MeshConfig(voxel_size=0.25))


def test_sdf_uniform_capsule_values():
    g = capsule_graph()
    assert sdf_eval(g, 1.0, np.array([5.0, 0.0, 0.0])) == -2.0
    assert sdf_eval(g, 1.0, np.array([5.0, 2.0, 0.0])) == 0.0


def test_sdf_matches_per_edge_oracle():
    # independent scalar-math oracle over every edge of a generated graph
    g = generate_graph(GraphConfig(node_count_target=40, seed=5))
    rng = np.random.default_rng(1)
    pts = rng.uniform(-60, 60, size=(100, 3))
    got = sdf_eval(g, 1.3, pts)

    def capsule(p, a, b, ra, rb):
        ab = b - a
        denom = float(np.dot(ab, ab))
        t = 0.0 if denom == 0 else min(1.0, max(0.0, float(np.dot(p - a, ab)) / denom))
        return float(np.linalg.norm(p - (a + t * ab))) - (ra + (rb - ra) * t)

    for pi, p in enumerate(pts):
        best = math.inf
        for i, j in g.edge_pairs():
            a, b = g.nodes[i], g.nodes[j]
            best = min(best, capsule(p, a.coordinates, b.coordinates, a.radius * 1.3, b.radius * 1.3))
        assert abs(got[pi] - best) <= 1e-12


def test_sdf_tapered_capsule_uses_nearest_parameter_radius():
    g = capsule_graph(r0=1.0, r1=3.0)
    # directly above the midpoint: nearest parameter 0.5, radius lerps to 2.0
    v = sdf_eval(g, 1.0, np.array([5.0, 5.0, 0.0]))
    assert abs(v - (5.0 - 2.0)) < 1e-12


def test_skin_capsule_closed_genus_zero(capsule_mesh):
    report = validate_mesh(capsule_mesh)
    assert report.closed
    assert report.component_count == 1
    assert report.euler_characteristic == 2
    assert report.degenerate_count == 0


def test_skin_vertices_on_surface(capsule_mesh):
    d = np.abs(sdf_eval(capsule_graph(), 1.0, capsule_mesh.positions))
    assert d.max() <= 0.25 * math.sqrt(3.0)


def test_skin_resolution_scaling():
    g = capsule_graph()
    coarse = skin_graph(g, MeshConfig(voxel_size=0.5))
    fine = skin_graph(g, MeshConfig(voxel_size=0.25))
    ratio = fine.vertex_count / coarse.vertex_count
    assert 3.0 <= ratio <= 5.0


def test_skin_empty_graph_rejected():
    with pytest.raises(ContractViolation):
        skin_graph(Graph(nodes=[], layers=1, seed=0), MeshConfig())


def test_skin_cell_budget():
    with pytest.raises(ResourceLimitError, match="cell_budget=1000"):
        skin_graph(capsule_graph(), MeshConfig(voxel_size=0.25, cell_budget=1000))


def test_skin_deterministic():
    a = skin_graph(capsule_graph(), MeshConfig(voxel_size=0.3))
    b = skin_graph(capsule_graph(), MeshConfig(voxel_size=0.3))
    assert np.array_equal(a.positions, b.positions)
    assert np.array_equal(a.triangles, b.triangles)


def test_skin_volume_monotone_in_radius_scale():
    g = capsule_graph()
    v1 = skin_graph(g, MeshConfig(voxel_size=0.25, radius_scale=1.0)).volume()
    v2 = skin_graph(g, MeshConfig(voxel_size=0.25, radius_scale=1.2)).volume()
    assert v2 > v1 > 0


def test_smooth_zero_iterations_identity(capsule_mesh):
    out = smooth_mesh(capsule_mesh, MeshConfig(smooth_iterations=0))
    assert np.array_equal(out.positions, capsule_mesh.positions)
    assert np.array_equal(out.triangles, capsule_mesh.triangles)


def test_smooth_preserves_counts_and_topology(capsule_mesh):
    for iterations in (1, 5, 10):
        out = smooth_mesh(capsule_mesh, MeshConfig(smooth_iterations=iterations))
        assert out.vertex_count == capsule_mesh.vertex_count
        assert out.triangle_count == capsule_mesh.triangle_count
        report = validate_mesh(out)
        assert report.closed and report.euler_characteristic == 2


def test_smooth_volume_and_surface_drift(capsule_mesh):
    out = smooth_mesh(capsule_mesh, MeshConfig(smooth_iterations=10))
    vol_change = abs(out.volume() - capsule_mesh.volume()) / capsule_mesh.volume()
    assert vol_change <= 0.05
    before = np.abs(sdf_eval(capsule_graph(), 1.0, capsule_mesh.positions)).max()
    after = np.abs(sdf_eval(capsule_graph(), 1.0, out.positions)).max()
    assert after <= before + 0.25


def test_smooth_requires_closed_mesh():
    tet = tetrahedron()
    open_mesh = TriMesh(tet.positions, tet.triangles[:3], closed=False)
    with pytest.raises(ContractViolation):
        smooth_mesh(open_mesh, MeshConfig())


def test_decimate_identity_ratio():
    tet = tetrahedron()
    tet.closed = True
    out = decimate(tet, MeshConfig(decimate_ratio=1.0))
    assert np.array_equal(out.positions, tet.positions)
    assert np.array_equal(out.triangles, tet.triangles)


def test_decimate_budget_and_topology():
    g = capsule_graph()
    mesh = skin_graph(g, MeshConfig(voxel_size=0.125))
    assert mesh.triangle_count >= 20_000
    out = decimate(mesh, MeshConfig(decimate_ratio=0.25))
    assert out.triangle_count <= 0.25 * mesh.triangle_count
    report = validate_mesh(out)
    assert report.closed
    assert report.euler_characteristic == 2
    assert report.degenerate_count == 0
    # surface fidelity after decimation
    d = np.abs(sdf_eval(g, 1.0, out.positions))
    assert d.max() <= 2 * 0.125


def test_decimate_rejects_open_mesh():
    tet = tetrahedron()
    open_mesh = TriMesh(tet.positions, tet.triangles[:3], closed=False)
    with pytest.raises(ContractViolation):
        decimate(open_mesh, MeshConfig(decimate_ratio=0.5))


def test_decimate_deterministic():
    mesh = skin_graph(capsule_graph(), MeshConfig(voxel_size=0.25))
    a = decimate(mesh, MeshConfig(decimate_ratio=0.4))
    b = decimate(mesh, MeshConfig(decimate_ratio=0.4))
    assert np.array_equal(a.positions, b.positions)
    assert np.array_equal(a.triangles, b.triangles)


def test_chunk_identity_grid(capsule_mesh):
    chunks = chunk_mesh(capsule_mesh, MeshConfig(chunk_grid=(1, 1, 1)))
    assert len(chunks) == 1
    assert np.array_equal(chunks[0].mesh.positions, capsule_mesh.positions)
    assert np.array_equal(chunks[0].mesh.triangles, capsule_mesh.triangles)


def test_chunk_area_conservation(capsule_mesh):
    total = capsule_mesh.area()
    for grid in ((2, 2, 2), (3, 1, 2), (4, 4, 1)):
        chunks = chunk_mesh(capsule_mesh, MeshConfig(chunk_grid=grid))
        split = sum(c.mesh.area() for c in chunks)
        assert abs(split - total) / total <= 0.001


def test_chunk_single_layer_forces_one_z_division(capsule_mesh):
    chunks = chunk_mesh(capsule_mesh, MeshConfig(chunk_grid=(2, 2, 2)), single_layer=True)
    assert all(c.index[2] == 0 for c in chunks)
    assert len({c.index for c in chunks}) == len(chunks)


def test_chunk_vertices_inside_bounds(capsule_mesh):
    for chunk in chunk_mesh(capsule_mesh, MeshConfig(chunk_grid=(2, 2, 2))):
        lo, hi = chunk.bounds
        p = chunk.mesh.positions
        assert np.all(p >= lo - 1e-6)
        assert np.all(p <= hi + 1e-6)
        assert validate_mesh(chunk.mesh).degenerate_count == 0


def test_chunk_empty_cells_skipped():
    # a tiny sphere in the corner of its bbox leaves most of a 3x3x3 grid empty
    g = Graph(nodes=[Node(0, None, set(), np.zeros(3), 2.0, False, 0)], layers=1, seed=0)
    mesh = skin_graph(g, MeshConfig(voxel_size=0.25))
    chunks = chunk_mesh(mesh, MeshConfig(chunk_grid=(3, 3, 3)))
    assert 0 < len(chunks) <= 27
    assert all(c.mesh.triangle_count > 0 for c in chunks)


def test_validate_tetrahedron():
    report = validate_mesh(tetrahedron())
    assert report.closed
    assert report.component_count == 1
    assert report.euler_characteristic == 2


def test_validate_reports_boundary_edges():
    tet = tetrahedron()
    broken = TriMesh(tet.positions, tet.triangles[:3])
    report = validate_mesh(broken)
    assert not report.closed
    assert report.boundary_edge_count == 3


def test_validate_detects_misorientation():
    tet = tetrahedron()
    flipped = tet.triangles.copy()
    flipped[0] = flipped[0][[0, 2, 1]]
    report = validate_mesh(TriMesh(tet.positions, flipped))
    assert report.misoriented_edge_count > 0
    assert not report.closed


def test_vertex_normals_point_outward_on_sphere():
    g = Graph(nodes=[Node(0, None, set(), np.zeros(3), 2.0, False, 0)], layers=1, seed=0)
    mesh = skin_graph(g, MeshConfig(voxel_size=0.25))
    normals = compute_vertex_normals(mesh)
    radial = mesh.positions / np.linalg.norm(mesh.positions, axis=1, keepdims=True)
    assert np.all(np.einsum("ij,ij->i", normals, radial) > 0)
    assert mesh.volume() > 0
