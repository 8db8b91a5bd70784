"""Triangle mesh container, inspection, smoothing and chunking."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, ContractViolation


@dataclass
class TriMesh:
    positions: np.ndarray                 # (V, 3) float64
    triangles: np.ndarray                 # (F, 3) int64
    normals: np.ndarray | None = None     # (V, 3) unit vectors
    uvs: np.ndarray | None = None         # (F, 3, 2) per-corner
    closed: bool = False

    def __post_init__(self) -> None:
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)

    @property
    def vertex_count(self) -> int:
        return len(self.positions)

    @property
    def triangle_count(self) -> int:
        return len(self.triangles)

    def copy(self) -> "TriMesh":
        return TriMesh(
            self.positions.copy(),
            self.triangles.copy(),
            None if self.normals is None else self.normals.copy(),
            None if self.uvs is None else self.uvs.copy(),
            self.closed,
        )

    def halfedges(self) -> np.ndarray:
        t = self.triangles
        return np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])

    def undirected_edges(self) -> np.ndarray:
        he = np.sort(self.halfedges(), axis=1)
        return np.unique(he, axis=0)

    def triangle_areas(self) -> np.ndarray:
        p = self.positions[self.triangles]
        cross = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        return 0.5 * np.linalg.norm(cross, axis=1)

    def area(self) -> float:
        return float(self.triangle_areas().sum())

    def volume(self) -> float:
        """Signed enclosed volume; positive when normals point away from the interior."""
        p = self.positions[self.triangles]
        return float(np.einsum("ij,ij->i", p[:, 0], np.cross(p[:, 1], p[:, 2])).sum() / 6.0)

    def bounds(self) -> np.ndarray:
        return np.array([self.positions.min(axis=0), self.positions.max(axis=0)])


def compute_vertex_normals(mesh: TriMesh) -> np.ndarray:
    """Area-weighted vertex normals from triangle windings."""
    p = mesh.positions[mesh.triangles]
    face_n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])  # length = 2 * area
    normals = np.zeros_like(mesh.positions)
    for corner in range(3):
        np.add.at(normals, mesh.triangles[:, corner], face_n)
    length = np.linalg.norm(normals, axis=1, keepdims=True)
    length[length == 0.0] = 1.0
    return normals / length


@dataclass
class MeshConfig:
    voxel_size: float = 1.0
    radius_scale: float = 1.0
    smooth_iterations: int = 10
    taubin_lambda: float = 0.5
    taubin_mu: float = -0.53
    decimate_ratio: float = 0.3
    chunk_grid: tuple[int, int, int] = (1, 1, 1)
    cell_budget: int = 512**3

    def validate(self) -> None:
        if not self.voxel_size > 0:
            raise ConfigError(f"voxel_size must be > 0, got {self.voxel_size}")
        if not self.radius_scale > 0:
            raise ConfigError(f"radius_scale must be > 0, got {self.radius_scale}")
        if self.smooth_iterations < 0:
            raise ConfigError(f"smooth_iterations must be >= 0, got {self.smooth_iterations}")
        if not 0.0 < self.taubin_lambda < 1.0:
            raise ConfigError(f"taubin_lambda must be in (0, 1), got {self.taubin_lambda}")
        if not -1.0 < self.taubin_mu < 0.0:
            raise ConfigError(f"taubin_mu must be in (-1, 0), got {self.taubin_mu}")
        if not abs(self.taubin_mu) > self.taubin_lambda:
            raise ConfigError(
                f"|taubin_mu| must exceed taubin_lambda for shrink compensation, got "
                f"taubin_mu={self.taubin_mu}, taubin_lambda={self.taubin_lambda}"
            )
        if not 0.0 < self.decimate_ratio <= 1.0:
            raise ConfigError(f"decimate_ratio must be in (0, 1], got {self.decimate_ratio}")
        grid = tuple(self.chunk_grid)
        if len(grid) != 3 or any((not isinstance(g, int)) or g < 1 for g in grid):
            raise ConfigError(f"chunk_grid must be three positive integers, got {self.chunk_grid}")
        if self.cell_budget < 1:
            raise ConfigError(f"cell_budget must be >= 1, got {self.cell_budget}")


@dataclass
class TextureSet:
    color: np.ndarray       # (R, R, 3) uint8, sRGB
    normal: np.ndarray      # (R, R, 3) uint8, tangent space
    roughness: np.ndarray   # (R, R) uint8
    resolution: int


@dataclass
class Chunk:
    index: tuple[int, int, int]
    mesh: TriMesh
    bounds: np.ndarray                  # (2, 3) cell box
    textures: TextureSet | None = None


@dataclass
class MeshReport:
    vertex_count: int
    triangle_count: int
    edge_count: int
    boundary_edge_count: int
    overused_edge_count: int
    misoriented_edge_count: int
    degenerate_count: int
    component_count: int
    euler_characteristic: int
    bbox: np.ndarray
    closed: bool
    manifold: bool
    notes: list[str] = field(default_factory=list)


def validate_mesh(mesh: TriMesh) -> MeshReport:
    """Inspect topology and report; never mutates and never raises on findings."""
    he = mesh.halfedges()
    und = np.sort(he, axis=1)
    edges, counts = np.unique(und, axis=0, return_counts=True)
    boundary = int((counts == 1).sum())
    overused = int((counts > 2).sum())

    # orientation: every directed halfedge must be unique for a consistently
    # wound surface (each undirected edge seen once per direction)
    directed, dcounts = np.unique(he, axis=0, return_counts=True)
    misoriented = int((dcounts > 1).sum())

    degenerate = int((mesh.triangle_areas() == 0.0).sum())
    oob = mesh.triangles.size and (mesh.triangles.min() < 0 or mesh.triangles.max() >= mesh.vertex_count)

    n_components = 0
    if mesh.vertex_count:
        adj = sp.coo_matrix(
            (np.ones(len(edges)), (edges[:, 0], edges[:, 1])),
            shape=(mesh.vertex_count, mesh.vertex_count),
        )
        n_components = int(sp.csgraph.connected_components(adj, directed=False, return_labels=False))

    closed = bool(len(edges) > 0 and boundary == 0 and overused == 0 and misoriented == 0)
    notes = []
    if oob:
        notes.append("triangle indices out of range")
    return MeshReport(
        vertex_count=mesh.vertex_count,
        triangle_count=mesh.triangle_count,
        edge_count=len(edges),
        boundary_edge_count=boundary,
        overused_edge_count=overused,
        misoriented_edge_count=misoriented,
        degenerate_count=degenerate,
        component_count=n_components,
        euler_characteristic=mesh.vertex_count - len(edges) + mesh.triangle_count,
        bbox=mesh.bounds() if mesh.vertex_count else np.zeros((2, 3)),
        closed=closed,
        manifold=bool(overused == 0 and misoriented == 0 and not oob),
        notes=notes,
    )


def smooth_mesh(mesh: TriMesh, config: MeshConfig) -> TriMesh:
    """Taubin lambda/mu smoothing with uniform weights; connectivity unchanged."""
    if not mesh.closed:
        raise ContractViolation("smooth_mesh requires a closed mesh")
    out = mesh.copy()
    if config.smooth_iterations == 0:
        return out

    edges = mesh.undirected_edges()
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    adj = sp.csr_matrix(
        (np.ones(len(rows)), (rows, cols)), shape=(mesh.vertex_count, mesh.vertex_count)
    )
    degree = np.asarray(adj.sum(axis=1)).ravel()[:, None]

    p = out.positions
    for _ in range(config.smooth_iterations):
        for factor in (config.taubin_lambda, config.taubin_mu):
            p = p + factor * (adj @ p / degree - p)
    out.positions = p
    out.normals = compute_vertex_normals(out)
    return out


def _clip_polygon(points: list, normals: list, axis: int, value: float, keep_ge: bool):
    out_p: list = []
    out_n: list = []
    n = len(points)
    for i in range(n):
        a, b = points[i], points[(i + 1) % n]
        na, nb = normals[i], normals[(i + 1) % n]
        da = a[axis] - value
        db = b[axis] - value
        ina = (da >= 0.0) if keep_ge else (da <= 0.0)
        inb = (db >= 0.0) if keep_ge else (db <= 0.0)
        if ina:
            out_p.append(a)
            out_n.append(na)
        if ina != inb:
            t = da / (da - db)
            out_p.append(a + t * (b - a))
            out_n.append(na + t * (nb - na))
    return out_p, out_n


def chunk_mesh(mesh: TriMesh, config: MeshConfig, single_layer: bool = False) -> list[Chunk]:
    """Slice the mesh into an axis-aligned grid of chunks with exact clipping.

    Triangles are clipped against cell boundary planes, so summed chunk area
    matches the input area; single-layer runs ignore the z divisions.
    """
    config.validate()
    nx, ny, nz = config.chunk_grid
    if single_layer:
        nz = 1
    bbox = mesh.bounds()
    if (nx, ny, nz) == (1, 1, 1):
        return [Chunk(index=(0, 0, 0), mesh=mesh.copy(), bounds=bbox)]

    lines = [np.linspace(bbox[0, a], bbox[1, a], (nx, ny, nz)[a] + 1) for a in range(3)]
    counts = (nx, ny, nz)

    if mesh.normals is None:
        mesh = mesh.copy()
        mesh.normals = compute_vertex_normals(mesh)

    tri_pos = mesh.positions[mesh.triangles]
    tri_lo = tri_pos.min(axis=1)
    tri_hi = tri_pos.max(axis=1)
    lo_idx = np.empty((mesh.triangle_count, 3), dtype=np.int64)
    hi_idx = np.empty((mesh.triangle_count, 3), dtype=np.int64)
    for a in range(3):
        lo_idx[:, a] = np.clip(np.searchsorted(lines[a], tri_lo[:, a], side="right") - 1, 0, counts[a] - 1)
        hi_idx[:, a] = np.clip(np.searchsorted(lines[a], tri_hi[:, a], side="right") - 1, 0, counts[a] - 1)

    buckets: dict[tuple[int, int, int], list] = {}
    interior = np.all(lo_idx == hi_idx, axis=1)
    # clipping a vertex sitting on a plane yields near-duplicate points; scale
    # the dedupe/sliver thresholds to the mesh so they stay far below voxels
    diag = float(np.linalg.norm(bbox[1] - bbox[0]))
    eps_point = 1e-12 * max(diag, 1e-30)
    eps_cross = eps_point * eps_point

    # fast path: triangles fully inside one cell need no clipping
    for f in np.flatnonzero(interior):
        key = tuple(int(v) for v in lo_idx[f])
        buckets.setdefault(key, []).append(
            (mesh.positions[mesh.triangles[f]], mesh.normals[mesh.triangles[f]])
        )

    for f in np.flatnonzero(~interior):
        tri = mesh.triangles[f]
        base_p = [mesh.positions[v] for v in tri]
        base_n = [mesh.normals[v] for v in tri]
        for i in range(lo_idx[f, 0], hi_idx[f, 0] + 1):
            for j in range(lo_idx[f, 1], hi_idx[f, 1] + 1):
                for k in range(lo_idx[f, 2], hi_idx[f, 2] + 1):
                    pts, nms = base_p, base_n
                    for a, c in ((0, i), (1, j), (2, k)):
                        pts, nms = _clip_polygon(pts, nms, a, lines[a][c], True)
                        if len(pts) < 3:
                            break
                        pts, nms = _clip_polygon(pts, nms, a, lines[a][c + 1], False)
                        if len(pts) < 3:
                            break
                    if len(pts) < 3:
                        continue
                    dedup_p, dedup_n = [], []
                    for p, nm in zip(pts, nms):
                        if dedup_p and np.linalg.norm(p - dedup_p[-1]) <= eps_point:
                            continue
                        dedup_p.append(p)
                        dedup_n.append(nm)
                    if len(dedup_p) >= 2 and np.linalg.norm(dedup_p[0] - dedup_p[-1]) <= eps_point:
                        dedup_p.pop()
                        dedup_n.pop()
                    pts, nms = dedup_p, dedup_n
                    if len(pts) < 3:
                        continue
                    tris = buckets.setdefault((int(i), int(j), int(k)), [])
                    for t in range(1, len(pts) - 1):
                        p3 = np.array([pts[0], pts[t], pts[t + 1]])
                        if np.linalg.norm(np.cross(p3[1] - p3[0], p3[2] - p3[0])) <= eps_cross:
                            continue
                        tris.append((p3, np.array([nms[0], nms[t], nms[t + 1]])))

    chunks = []
    for key in sorted(buckets):
        tris = buckets[key]
        vert_index: dict[bytes, int] = {}
        positions: list[np.ndarray] = []
        normals: list[np.ndarray] = []
        faces = np.empty((len(tris), 3), dtype=np.int64)
        for t, (p3, n3) in enumerate(tris):
            for c in range(3):
                kb = p3[c].tobytes()
                idx = vert_index.get(kb)
                if idx is None:
                    idx = len(positions)
                    vert_index[kb] = idx
                    positions.append(p3[c])
                    normals.append(n3[c])
                faces[t, c] = idx
        nrm = np.array(normals)
        length = np.linalg.norm(nrm, axis=1, keepdims=True)
        length[length == 0.0] = 1.0
        cell_bounds = np.array(
            [
                [lines[0][key[0]], lines[1][key[1]], lines[2][key[2]]],
                [lines[0][key[0] + 1], lines[1][key[1] + 1], lines[2][key[2] + 1]],
            ]
        )
        chunks.append(
            Chunk(
                index=key,
                mesh=TriMesh(np.array(positions), faces, nrm / length, closed=False),
                bounds=cell_bounds,
            )
        )
    return chunks
