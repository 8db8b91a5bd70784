"""Interchange I/O: OBJ/MTL and binary PLY writers with matching readers,
plus the run manifest that makes pause/resume and sharing safe.

Meshes are stored Y-up right-handed by default (a pure axis permutation at
write time); readers return file-frame coordinates and the permutation is
exactly invertible, so checkpointed chunks round-trip bit-for-bit.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__ as TOOL_VERSION
from .errors import ConfigError, StaleArtifactError
from .graph import Graph
from .mesh import Chunk, TriMesh, compute_vertex_normals

MANIFEST_NAME = "run_manifest.json"
AXES_NOTE = "axes.txt"

_STAGE_ORDER = ("graph", "mesh", "texture")


def axis_to_file(arr: np.ndarray, z_up: bool) -> np.ndarray:
    """Internal Z-up coordinates to file frame: Y-up (x, z, -y) unless z_up."""
    if z_up:
        return arr.copy()
    out = np.empty_like(arr)
    out[..., 0] = arr[..., 0]
    out[..., 1] = arr[..., 2]
    out[..., 2] = -arr[..., 1]
    return out


def axis_from_file(arr: np.ndarray, z_up: bool) -> np.ndarray:
    """Exact inverse of axis_to_file (permutation and negation only)."""
    if z_up:
        return arr.copy()
    out = np.empty_like(arr)
    out[..., 0] = arr[..., 0]
    out[..., 1] = -arr[..., 2]
    out[..., 2] = arr[..., 1]
    return out


def chunk_stem(index: tuple[int, int, int]) -> str:
    return f"chunk_{index[0]}_{index[1]}_{index[2]}"


def texture_names(stem: str) -> dict[str, str]:
    return {
        "color": f"{stem}_color.png",
        "normal": f"{stem}_normal.png",
        "roughness": f"{stem}_roughness.png",
    }


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def write_axes_note(directory: Path, z_up: bool) -> Path:
    path = Path(directory) / AXES_NOTE
    convention = "Z-up" if z_up else "Y-up"
    path.write_text(
        f"Coordinate convention: right-handed, {convention}.\n"
        "OBJ materials: map_Kd = colour, map_Bump -bm 1.0 = tangent-space normal,\n"
        "map_Pr = roughness (PBR extension key). Tangent frames follow the\n"
        "axis-aligned chart projection of each chunk's UV atlas.\n"
    )
    return path


def write_chunk_mtl(directory: Path, stem: str, with_maps: bool) -> Path:
    lines = [
        f"newmtl {stem}",
        "Ka 1.000000 1.000000 1.000000",
        "Kd 1.000000 1.000000 1.000000",
        "Ks 0.000000 0.000000 0.000000",
        "d 1.0",
        "illum 1",
    ]
    if with_maps:
        names = texture_names(stem)
        lines += [
            f"map_Kd {names['color']}",
            f"map_Bump -bm 1.0 {names['normal']}",
            f"map_Pr {names['roughness']}",
        ]
    path = Path(directory) / f"{stem}.mtl"
    path.write_text("\n".join(lines) + "\n")
    return path


def export_obj(chunks: list[Chunk], directory: Path, z_up: bool = False, with_maps: bool = False) -> list[Path]:
    """One OBJ (+MTL) per chunk with v/vt/vn records and 9-significant-digit floats."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files: list[Path] = []
    for chunk in chunks:
        stem = chunk_stem(chunk.index)
        mesh = chunk.mesh
        normals = mesh.normals if mesh.normals is not None else compute_vertex_normals(mesh)
        pos = axis_to_file(mesh.positions, z_up)
        nrm = axis_to_file(normals, z_up)

        lines = [f"mtllib {stem}.mtl", f"o {stem}"]
        for p in pos:
            lines.append(f"v {_fmt(p[0])} {_fmt(p[1])} {_fmt(p[2])}")
        if mesh.uvs is not None:
            for corner_uv in mesh.uvs.reshape(-1, 2):
                lines.append(f"vt {_fmt(corner_uv[0])} {_fmt(corner_uv[1])}")
        for n in nrm:
            lines.append(f"vn {_fmt(n[0])} {_fmt(n[1])} {_fmt(n[2])}")
        lines.append(f"usemtl {stem}")
        if mesh.uvs is not None:
            for f, tri in enumerate(mesh.triangles):
                refs = [f"{tri[c] + 1}/{3 * f + c + 1}/{tri[c] + 1}" for c in range(3)]
                lines.append("f " + " ".join(refs))
        else:
            for tri in mesh.triangles:
                lines.append("f " + " ".join(f"{v + 1}//{v + 1}" for v in tri))

        path = directory / f"{stem}.obj"
        try:
            path.write_text("\n".join(lines) + "\n")
        except OSError as exc:
            raise StaleArtifactError(f"cannot write {path}: {exc}") from exc
        files.append(path)
        files.append(write_chunk_mtl(directory, stem, with_maps))
    if chunks:
        files.append(write_axes_note(directory, z_up))
    return files


def import_obj(path: Path) -> TriMesh:
    """Parse an OBJ written by export_obj (v/vt/vn, triangular f records)."""
    positions: list[list[float]] = []
    uvs: list[list[float]] = []
    normals: list[list[float]] = []
    faces: list[list[int]] = []
    face_uvs: list[list[int]] = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        parts = raw.split()
        if not parts or parts[0].startswith("#"):
            continue
        tag = parts[0]
        if tag == "v":
            positions.append([float(x) for x in parts[1:4]])
        elif tag == "vt":
            uvs.append([float(x) for x in parts[1:3]])
        elif tag == "vn":
            normals.append([float(x) for x in parts[1:4]])
        elif tag == "f":
            if len(parts) != 4:
                raise ConfigError(f"{path}:{lineno}: only triangular faces are supported")
            vi, ti = [], []
            for ref in parts[1:]:
                fields_ = ref.split("/")
                vi.append(int(fields_[0]) - 1)
                if len(fields_) > 1 and fields_[1]:
                    ti.append(int(fields_[1]) - 1)
            faces.append(vi)
            if ti:
                face_uvs.append(ti)
    if not positions or not faces:
        raise ConfigError(f"{path}: no geometry found")
    mesh = TriMesh(np.array(positions), np.array(faces, dtype=np.int64))
    if normals:
        mesh.normals = np.array(normals)
    if face_uvs and uvs:
        uv_arr = np.array(uvs)
        mesh.uvs = uv_arr[np.array(face_uvs, dtype=np.int64)]
    return mesh


def _split_for_ply(mesh: TriMesh) -> tuple[np.ndarray, np.ndarray, np.ndarray | None, np.ndarray]:
    """Duplicate seam vertices so UVs become a per-vertex attribute."""
    normals = mesh.normals if mesh.normals is not None else compute_vertex_normals(mesh)
    if mesh.uvs is None:
        return mesh.positions, normals, None, mesh.triangles
    key_to_new: dict[tuple[int, bytes], int] = {}
    positions: list[np.ndarray] = []
    nrm: list[np.ndarray] = []
    uv: list[np.ndarray] = []
    faces = np.empty_like(mesh.triangles)
    for f, tri in enumerate(mesh.triangles):
        for c in range(3):
            key = (int(tri[c]), mesh.uvs[f, c].tobytes())
            idx = key_to_new.get(key)
            if idx is None:
                idx = len(positions)
                key_to_new[key] = idx
                positions.append(mesh.positions[tri[c]])
                nrm.append(normals[tri[c]])
                uv.append(mesh.uvs[f, c])
            faces[f, c] = idx
    return np.array(positions), np.array(nrm), np.array(uv), faces


def export_ply(
    chunks: list[Chunk],
    directory: Path,
    z_up: bool = False,
    texel_world: dict[tuple[int, int, int], float] | None = None,
) -> list[Path]:
    """Binary little-endian PLY per chunk: double precision positions,
    normals and per-vertex UVs (seam vertices are split)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for chunk in chunks:
        stem = chunk_stem(chunk.index)
        pos, nrm, uv, faces = _split_for_ply(chunk.mesh)
        pos = axis_to_file(pos, z_up)
        nrm = axis_to_file(nrm, z_up)

        header = ["ply", "format binary_little_endian 1.0"]
        header.append(f"comment cavegen chunk {chunk.index[0]} {chunk.index[1]} {chunk.index[2]}")
        header.append(f"comment axis {'z_up' if z_up else 'y_up'}")
        if texel_world is not None and chunk.index in texel_world:
            header.append(f"comment texel_world {texel_world[chunk.index]!r}")
        header.append(f"element vertex {len(pos)}")
        for prop in ("x", "y", "z", "nx", "ny", "nz"):
            header.append(f"property double {prop}")
        if uv is not None:
            header.append("property double u")
            header.append("property double v")
        header.append(f"element face {len(faces)}")
        header.append("property list uchar int vertex_indices")
        header.append("end_header")

        n_props = 8 if uv is not None else 6
        vert = np.empty((len(pos), n_props), dtype="<f8")
        vert[:, 0:3] = pos
        vert[:, 3:6] = nrm
        if uv is not None:
            vert[:, 6:8] = uv
        face_dtype = np.dtype([("n", "u1"), ("idx", "<i4", (3,))])
        face_rec = np.empty(len(faces), dtype=face_dtype)
        face_rec["n"] = 3
        face_rec["idx"] = faces.astype("<i4")

        path = directory / f"{stem}.ply"
        try:
            with open(path, "wb") as fh:
                fh.write(("\n".join(header) + "\n").encode("ascii"))
                fh.write(vert.tobytes())
                fh.write(face_rec.tobytes())
        except OSError as exc:
            raise StaleArtifactError(f"cannot write {path}: {exc}") from exc
        files.append(path)
    return files


def import_ply(path: Path) -> tuple[TriMesh, dict]:
    """Read a PLY written by export_ply; returns the mesh and header metadata."""
    raw = Path(path).read_bytes()
    end = raw.find(b"end_header\n")
    if not raw.startswith(b"ply") or end < 0:
        raise ConfigError(f"{path}: not a PLY file")
    header = raw[: end + len(b"end_header\n")].decode("ascii").splitlines()
    body = raw[end + len(b"end_header\n") :]

    meta: dict = {}
    n_vertex = n_face = 0
    vertex_props: list[str] = []
    current = None
    for line in header[1:]:
        parts = line.split()
        if parts[0] == "format":
            if parts[1] != "binary_little_endian":
                raise ConfigError(f"{path}: unsupported PLY format {parts[1]}")
        elif parts[0] == "comment":
            if parts[1] == "cavegen" and parts[2] == "chunk":
                meta["chunk_index"] = tuple(int(v) for v in parts[3:6])
            elif parts[1] == "axis":
                meta["axis"] = parts[2]
            elif parts[1] == "texel_world":
                meta["texel_world"] = float(parts[2])
        elif parts[0] == "element":
            current = parts[1]
            if current == "vertex":
                n_vertex = int(parts[2])
            elif current == "face":
                n_face = int(parts[2])
        elif parts[0] == "property" and current == "vertex":
            if parts[1] != "double":
                raise ConfigError(f"{path}: vertex properties must be double, got {parts[1]}")
            vertex_props.append(parts[2])

    n_props = len(vertex_props)
    vert_bytes = n_vertex * n_props * 8
    vert = np.frombuffer(body[:vert_bytes], dtype="<f8").reshape(n_vertex, n_props)
    face_dtype = np.dtype([("n", "u1"), ("idx", "<i4", (3,))])
    faces_rec = np.frombuffer(body[vert_bytes : vert_bytes + n_face * face_dtype.itemsize], dtype=face_dtype)
    if len(faces_rec) != n_face or not np.all(faces_rec["n"] == 3):
        raise ConfigError(f"{path}: face records malformed or not triangular")

    cols = {name: i for i, name in enumerate(vertex_props)}
    positions = vert[:, [cols["x"], cols["y"], cols["z"]]].copy()
    triangles = faces_rec["idx"].astype(np.int64)
    mesh = TriMesh(positions, triangles)
    if "nx" in cols:
        mesh.normals = vert[:, [cols["nx"], cols["ny"], cols["nz"]]].copy()
    if "u" in cols:
        uv = vert[:, [cols["u"], cols["v"]]]
        mesh.uvs = uv[triangles]
    return mesh, meta


def export_graph_ply(graph: Graph, path: Path) -> Path:
    """Skeleton preview: nodes as vertices with a radius property, edges as
    edge records (binary little-endian)."""
    pos = graph.positions()
    edges = np.array(graph.edge_pairs(), dtype="<i4").reshape(-1, 2)
    header = [
        "ply",
        "format binary_little_endian 1.0",
        "comment cavegen graph preview",
        f"element vertex {len(pos)}",
        "property double x",
        "property double y",
        "property double z",
        "property double radius",
        f"element edge {len(edges)}",
        "property int vertex1",
        "property int vertex2",
        "end_header",
    ]
    vert = np.empty((len(pos), 4), dtype="<f8")
    vert[:, 0:3] = pos
    vert[:, 3] = [n.radius for n in graph.nodes]
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(vert.tobytes())
        fh.write(edges.astype("<i4").tobytes())
    return path


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


@dataclass
class RunManifest:
    config: dict
    stages: dict = field(default_factory=lambda: {"graph": False, "mesh": False, "texture": False})
    artifacts: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    axis_convention: str = "y_up"
    tool_version: str = TOOL_VERSION
    version: int = 1

    def validate(self) -> None:
        done = [self.stages.get(s, False) for s in _STAGE_ORDER]
        for later in range(1, len(done)):
            if done[later] and not all(done[:later]):
                raise ConfigError(
                    f"manifest stages are not monotone: {_STAGE_ORDER[later]} complete "
                    f"before {_STAGE_ORDER[later - 1]}"
                )


def write_manifest(manifest: RunManifest, directory: Path) -> Path:
    manifest.validate()
    path = Path(directory) / MANIFEST_NAME
    path.write_text(json.dumps(asdict(manifest), indent=2, sort_keys=True) + "\n")
    return path


def load_manifest(directory: Path, verify: bool = True) -> RunManifest:
    """Read the run manifest; with verify, re-digest every artifact and flag
    any that changed since it was written."""
    path = Path(directory) / MANIFEST_NAME
    if not path.exists():
        raise StaleArtifactError(f"no run manifest at {path}; nothing to resume")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed manifest {path}: {exc}") from exc
    required = {"config", "stages", "artifacts", "timings", "axis_convention", "tool_version", "version"}
    missing = required - set(doc)
    if missing:
        raise ConfigError(f"manifest {path} missing keys: {sorted(missing)}")
    manifest = RunManifest(**{k: doc[k] for k in required})
    manifest.validate()
    if verify:
        for rel, digest in sorted(manifest.artifacts.items()):
            target = Path(directory) / rel
            if not target.exists():
                raise StaleArtifactError(f"stale artifact: {rel} is missing")
            if sha256_file(target) != digest:
                raise StaleArtifactError(f"stale artifact: {rel} digest mismatch")
    return manifest
