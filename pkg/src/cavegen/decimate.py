"""Quadric-error-metric edge collapse for closed manifold meshes.

Pure-Python inner loop over symmetric 4x4 quadrics stored as 10-tuples;
collapse order is a deterministic priority queue keyed by (cost, edge), so
identical inputs decimate identically.  Collapses that would pinch the
surface, flip a face, or create a degenerate triangle are rejected.
"""

from __future__ import annotations

import heapq
import logging
import math

import numpy as np

from .errors import ContractViolation
from .mesh import MeshConfig, TriMesh, compute_vertex_normals, validate_mesh

log = logging.getLogger(__name__)


def _face_quadric(pa, pb, pc):
    """Area-weighted plane quadric of a triangle, as a symmetric 10-tuple."""
    ux, uy, uz = pb[0] - pa[0], pb[1] - pa[1], pb[2] - pa[2]
    vx, vy, vz = pc[0] - pa[0], pc[1] - pa[1], pc[2] - pa[2]
    nx = uy * vz - uz * vy
    ny = uz * vx - ux * vz
    nz = ux * vy - uy * vx
    norm = math.sqrt(nx * nx + ny * ny + nz * nz)
    if norm == 0.0:
        return (0.0,) * 10
    area = 0.5 * norm
    nx, ny, nz = nx / norm, ny / norm, nz / norm
    d = -(nx * pa[0] + ny * pa[1] + nz * pa[2])
    w = area
    return (
        w * nx * nx, w * nx * ny, w * nx * nz, w * nx * d,
        w * ny * ny, w * ny * nz, w * ny * d,
        w * nz * nz, w * nz * d,
        w * d * d,
    )


def _q_add(a, b):
    return tuple(x + y for x, y in zip(a, b))


def _q_error(q, p):
    x, y, z = p
    return (
        q[0] * x * x + 2 * q[1] * x * y + 2 * q[2] * x * z + 2 * q[3] * x
        + q[4] * y * y + 2 * q[5] * y * z + 2 * q[6] * y
        + q[7] * z * z + 2 * q[8] * z
        + q[9]
    )


def _optimal_point(q, pa, pb):
    """Minimizer of the quadric, or the best of the endpoints and midpoint."""
    a11, a12, a13, b1 = q[0], q[1], q[2], -q[3]
    a22, a23, b2 = q[4], q[5], -q[6]
    a33, b3 = q[7], -q[8]
    det = (
        a11 * (a22 * a33 - a23 * a23)
        - a12 * (a12 * a33 - a23 * a13)
        + a13 * (a12 * a23 - a22 * a13)
    )
    scale = max(abs(a11), abs(a22), abs(a33), 1e-300)
    if abs(det) > 1e-9 * scale * scale * scale:
        inv = 1.0 / det
        x = (b1 * (a22 * a33 - a23 * a23) - a12 * (b2 * a33 - a23 * b3) + a13 * (b2 * a23 - a22 * b3)) * inv
        y = (a11 * (b2 * a33 - a23 * b3) - b1 * (a12 * a33 - a13 * a23) + a13 * (a12 * b3 - b2 * a13)) * inv
        z = (a11 * (a22 * b3 - b2 * a23) - a12 * (a12 * b3 - b2 * a13) + b1 * (a12 * a23 - a22 * a13)) * inv
        p = (x, y, z)
        return p, _q_error(q, p)
    mid = ((pa[0] + pb[0]) / 2, (pa[1] + pb[1]) / 2, (pa[2] + pb[2]) / 2)
    best, best_err = pa, _q_error(q, pa)
    for cand in (pb, mid):
        err = _q_error(q, cand)
        if err < best_err:
            best, best_err = cand, err
    return best, best_err


def _cross(o, p, r):
    ux, uy, uz = p[0] - o[0], p[1] - o[1], p[2] - o[2]
    vx, vy, vz = r[0] - o[0], r[1] - o[1], r[2] - o[2]
    return (uy * vz - uz * vy, uz * vx - ux * vz, ux * vy - uy * vx)


def decimate(mesh: TriMesh, config: MeshConfig) -> TriMesh:
    """Collapse edges until triangle count <= decimate_ratio * input count.

    Stops early (with a logged achieved ratio) if no legal collapse remains;
    output stays closed and manifold.
    """
    config.validate()
    report = validate_mesh(mesh)
    if not (report.closed and report.manifold):
        raise ContractViolation(
            "decimate requires a closed manifold mesh; got "
            f"{report.boundary_edge_count} boundary / {report.overused_edge_count} overused edges"
        )
    if config.decimate_ratio == 1.0:
        return mesh.copy()

    n_faces = mesh.triangle_count
    target = max(4, int(math.floor(config.decimate_ratio * n_faces)))
    if n_faces <= target:
        return mesh.copy()

    pos = [tuple(p) for p in mesh.positions]
    faces: list[tuple[int, int, int] | None] = [tuple(int(v) for v in t) for t in mesh.triangles]
    v2f: list[set[int]] = [set() for _ in range(len(pos))]
    quadrics = [(0.0,) * 10 for _ in range(len(pos))]
    for fi, (a, b, c) in enumerate(faces):
        v2f[a].add(fi)
        v2f[b].add(fi)
        v2f[c].add(fi)
        q = _face_quadric(pos[a], pos[b], pos[c])
        quadrics[a] = _q_add(quadrics[a], q)
        quadrics[b] = _q_add(quadrics[b], q)
        quadrics[c] = _q_add(quadrics[c], q)

    diag = float(np.linalg.norm(mesh.bounds()[1] - mesh.bounds()[0]))
    eps_cross2 = (1e-10 * max(diag, 1e-30)) ** 4

    version = [0] * len(pos)
    heap: list[tuple[float, int, int, int, int]] = []

    def neighbors(v: int) -> set[int]:
        out = set()
        for fi in v2f[v]:
            out.update(faces[fi])
        out.discard(v)
        return out

    def push_edge(a: int, b: int) -> None:
        if a > b:
            a, b = b, a
        q = _q_add(quadrics[a], quadrics[b])
        _, err = _optimal_point(q, pos[a], pos[b])
        heapq.heappush(heap, (err, a, b, version[a], version[b]))

    seen = set()
    for f in faces:
        for a, b in ((f[0], f[1]), (f[1], f[2]), (f[2], f[0])):
            key = (a, b) if a < b else (b, a)
            if key not in seen:
                seen.add(key)
                push_edge(*key)
    del seen

    live = n_faces
    while live > target and heap:
        err, a, b, va, vb = heapq.heappop(heap)
        if version[a] != va or version[b] != vb:
            continue
        shared = v2f[a] & v2f[b]
        if len(shared) != 2:
            continue
        opposite = set()
        for fi in shared:
            fa, fb, fc = faces[fi]
            opposite.add(fa ^ fb ^ fc ^ a ^ b)  # the vertex that is neither a nor b
        if len(opposite) != 2:
            continue
        if neighbors(a) & neighbors(b) != opposite:
            continue  # collapse would pinch the surface
        if live - 2 < 4:
            break

        q = _q_add(quadrics[a], quadrics[b])
        vnew, _ = _optimal_point(q, pos[a], pos[b])

        moved = (v2f[a] | v2f[b]) - shared
        ok = True
        for fi in moved:
            fv = faces[fi]
            old = _cross(pos[fv[0]], pos[fv[1]], pos[fv[2]])
            npts = [vnew if v in (a, b) else pos[v] for v in fv]
            new = _cross(npts[0], npts[1], npts[2])
            new_norm2 = new[0] ** 2 + new[1] ** 2 + new[2] ** 2
            if new_norm2 <= eps_cross2:
                ok = False
                break
            if old[0] * new[0] + old[1] * new[1] + old[2] * new[2] <= 0.0:
                ok = False
                break
        if not ok:
            continue

        # apply: merge b into a at vnew
        version[a] += 1
        version[b] += 1
        pos[a] = vnew
        quadrics[a] = q
        for fi in shared:
            for v in faces[fi]:
                v2f[v].discard(fi)
            faces[fi] = None
            live -= 1
        for fi in list(v2f[b]):
            fv = faces[fi]
            faces[fi] = tuple(a if v == b else v for v in fv)
            v2f[b].discard(fi)
            v2f[a].add(fi)
        for n in neighbors(a):
            push_edge(a, n)

    if live > target:
        log.warning(
            "decimation stopped early: %d triangles (ratio %.4f, target %.4f)",
            live, live / n_faces, config.decimate_ratio,
        )

    kept = [f for f in faces if f is not None]
    used = sorted({v for f in kept for v in f})
    remap = {v: i for i, v in enumerate(used)}
    out = TriMesh(
        np.array([pos[v] for v in used]),
        np.array([[remap[v] for v in f] for f in kept], dtype=np.int64),
    )
    out.normals = compute_vertex_normals(out)
    out.closed = validate_mesh(out).closed
    return out
