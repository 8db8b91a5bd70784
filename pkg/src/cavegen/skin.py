"""Skinning the skeleton: capsule-union signed distance field + marching cubes.

Every graph edge contributes a capsule whose radius tapers linearly between
its endpoint node radii; isolated nodes contribute spheres.  The tunnel is
the negative region, and the extracted surface is wound so normals point
away from it, into the rock.
"""

from __future__ import annotations

import logging

import numpy as np

from .errors import ContractViolation, ResourceLimitError
from .graph import Graph
from .mc_tables import CORNER_OFFSETS, EDGE_CORNERS, TRI_TABLE
from .mesh import MeshConfig, TriMesh, compute_vertex_normals, validate_mesh

log = logging.getLogger(__name__)

# minimum interpolation offset along a grid edge, keeps vertices off corners
_T_CLAMP = 1e-6

# anchor offset and axis of each cube edge within the grid
_EDGE_ANCHOR = np.minimum(CORNER_OFFSETS[EDGE_CORNERS[:, 0]], CORNER_OFFSETS[EDGE_CORNERS[:, 1]])
_EDGE_AXIS = np.argmax(
    CORNER_OFFSETS[EDGE_CORNERS[:, 0]] != CORNER_OFFSETS[EDGE_CORNERS[:, 1]], axis=1
)


def _graph_segments(graph: Graph, radius_scale: float) -> list[tuple[np.ndarray, np.ndarray, float, float]]:
    segs = []
    linked = set()
    for i, j in graph.edge_pairs():
        a, b = graph.nodes[i], graph.nodes[j]
        segs.append((a.coordinates, b.coordinates, a.radius * radius_scale, b.radius * radius_scale))
        linked.add(i)
        linked.add(j)
    for n in graph.nodes:
        if n.id not in linked:
            segs.append((n.coordinates, n.coordinates, n.radius * radius_scale, n.radius * radius_scale))
    return segs


def _capsule_distance(px, py, pz, seg) -> np.ndarray:
    """Distance to the segment minus the radius lerped at the nearest parameter."""
    a, b, ra, rb = seg
    ux, uy, uz = b[0] - a[0], b[1] - a[1], b[2] - a[2]
    length2 = ux * ux + uy * uy + uz * uz
    if length2 == 0.0:
        t = 0.0
    else:
        t = np.clip(((px - a[0]) * ux + (py - a[1]) * uy + (pz - a[2]) * uz) / length2, 0.0, 1.0)
    dx = px - (a[0] + t * ux)
    dy = py - (a[1] + t * uy)
    dz = pz - (a[2] + t * uz)
    return np.sqrt(dx * dx + dy * dy + dz * dz) - (ra + (rb - ra) * t)


def sdf_eval(graph: Graph, radius_scale: float, p: np.ndarray) -> np.ndarray:
    """Signed distance to the tunnel surface: negative inside the tunnel."""
    if not graph.nodes:
        raise ContractViolation("sdf_eval requires a non-empty graph")
    pts = np.atleast_2d(np.asarray(p, dtype=np.float64))
    single = np.asarray(p).ndim == 1
    d = np.full(len(pts), np.inf)
    for seg in _graph_segments(graph, radius_scale):
        d = np.minimum(d, _capsule_distance(pts[:, 0], pts[:, 1], pts[:, 2], seg))
    return d[0] if single else d


def _sdf_grid(
    graph: Graph,
    radius_scale: float,
    origin: np.ndarray,
    dims: tuple[int, int, int],
    voxel: float,
) -> np.ndarray:
    """Field sampled on the grid; exact wherever |sdf| could matter for crossings."""
    xs = [origin[a] + np.arange(dims[a]) * voxel for a in range(3)]
    field = np.full(dims, np.inf)
    # per-segment distance can grow up to ~(1 + dr/len) per unit step, so use a
    # generous clip margin to keep every near-surface sample exact
    margin = 4.0 * voxel
    for seg in _graph_segments(graph, radius_scale):
        a, b, ra, rb = seg
        lo = np.minimum(a, b) - (max(ra, rb) + margin)
        hi = np.maximum(a, b) + (max(ra, rb) + margin)
        i0 = [int(np.clip(np.ceil((lo[ax] - origin[ax]) / voxel), 0, dims[ax])) for ax in range(3)]
        i1 = [int(np.clip(np.floor((hi[ax] - origin[ax]) / voxel) + 1, 0, dims[ax])) for ax in range(3)]
        if any(i0[ax] >= i1[ax] for ax in range(3)):
            continue
        px = xs[0][i0[0]:i1[0]][:, None, None]
        py = xs[1][i0[1]:i1[1]][None, :, None]
        pz = xs[2][i0[2]:i1[2]][None, None, :]
        sub = _capsule_distance(px, py, pz, seg)
        np.minimum(field[i0[0]:i1[0], i0[1]:i1[1], i0[2]:i1[2]], sub,
                   out=field[i0[0]:i1[0], i0[1]:i1[1], i0[2]:i1[2]])
    return field


def _marching_cubes(field: np.ndarray, origin: np.ndarray, voxel: float) -> tuple[np.ndarray, np.ndarray]:
    nx, ny, nz = field.shape
    inside = field < 0.0

    cases = np.zeros((nx - 1, ny - 1, nz - 1), dtype=np.uint16)
    for c, (dx, dy, dz) in enumerate(CORNER_OFFSETS):
        cases |= inside[dx : nx - 1 + dx, dy : ny - 1 + dy, dz : nz - 1 + dz].astype(np.uint16) << c

    active = np.argwhere((cases != 0) & (cases != 255))
    if len(active) == 0:
        return np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64)
    case_ids = cases[tuple(active.T)].astype(np.int64)

    anchors = active[:, None, :] + _EDGE_ANCHOR[None, :, :]
    gids = ((anchors[..., 0] * ny + anchors[..., 1]) * nz + anchors[..., 2]) * 3 + _EDGE_AXIS

    tri_rows = TRI_TABLE[case_ids]
    tri_gid_blocks = []
    for t in range(5):
        sel = tri_rows[:, 3 * t] >= 0
        if not sel.any():
            break
        local = tri_rows[sel, 3 * t : 3 * t + 3].astype(np.int64)
        tri_gid_blocks.append(np.take_along_axis(gids[sel], local, axis=1))
    tri_g = np.concatenate(tri_gid_blocks)

    used = np.unique(tri_g)
    faces = np.searchsorted(used, tri_g)

    axis = used % 3
    cell = used // 3
    k = cell % nz
    j = (cell // nz) % ny
    i = cell // (nz * ny)
    v0 = field[i, j, k]
    steps = np.zeros((len(used), 3), dtype=np.int64)
    steps[np.arange(len(used)), axis] = 1
    v1 = field[i + steps[:, 0], j + steps[:, 1], k + steps[:, 2]]
    t = np.clip(v0 / (v0 - v1), _T_CLAMP, 1.0 - _T_CLAMP)

    pos = origin[None, :] + np.stack([i, j, k], axis=1) * voxel
    pos[np.arange(len(used)), axis] += t * voxel

    # flip to wind triangles so normals point toward positive field (the rock)
    faces = faces[:, [0, 2, 1]]
    return pos, faces.astype(np.int64)


def skin_graph(graph: Graph, config: MeshConfig) -> TriMesh:
    """Polygonize the zero level set of the capsule-union field.

    The grid covers the graph bounds inflated by the largest scaled radius
    plus two voxels; output is closed, 2-manifold and consistently wound.
    """
    config.validate()
    if not graph.nodes:
        raise ContractViolation("skin_graph requires a non-empty graph")

    pos = graph.positions()
    rmax = max(n.radius for n in graph.nodes) * config.radius_scale
    inflate = rmax + 2.0 * config.voxel_size
    lo = pos.min(axis=0) - inflate
    hi = pos.max(axis=0) + inflate
    dims = tuple(int(np.ceil((hi[a] - lo[a]) / config.voxel_size)) + 1 for a in range(3))
    cells = dims[0] * dims[1] * dims[2]
    if cells > config.cell_budget:
        raise ResourceLimitError(
            f"voxel grid {dims[0]}x{dims[1]}x{dims[2]} = {cells} cells exceeds "
            f"cell_budget={config.cell_budget}; raise the budget or voxel_size"
        )

    field = _sdf_grid(graph, config.radius_scale, lo, dims, config.voxel_size)
    # exact zeros sit on the surface; treat them as just outside so no vertex
    # lands on a grid corner (which would create degenerate triangles)
    field[field == 0.0] = 1e-12 * config.voxel_size

    verts, tris = _marching_cubes(field, lo, config.voxel_size)
    if len(verts) == 0:
        raise ContractViolation("marching cubes produced no surface; grid does not straddle it")

    mesh = TriMesh(verts, tris)
    mesh.normals = compute_vertex_normals(mesh)
    report = validate_mesh(mesh)
    if not report.closed:
        raise ContractViolation(
            f"marching cubes surface not closed: {report.boundary_edge_count} boundary edges, "
            f"{report.overused_edge_count} overused, {report.misoriented_edge_count} misoriented"
        )
    mesh.closed = True
    return mesh
