"""Procedural rock material and per-chunk texture baking.

The material is a pure function of world position, so chunks baked
independently agree exactly along their shared boundaries.  Charts are
axis-aligned box projections packed into one square atlas per chunk; the
normal map comes from finite differences of the baked height field.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ConfigError, ContractViolation
from .mesh import Chunk, TextureSet
from .noise import NoiseParams, derive_seed, perlin3, voronoi3

SUPPORTED_RESOLUTIONS = (256, 512, 1024, 2048, 4096, 8192)

_GUTTER_PX = 4.0

_SALT_MATERIAL = 7

# chart id -> (dominant axis, sign); projection keeps the two other axes
_CHART_AXES = [(0, 1), (0, -1), (1, 1), (1, -1), (2, 1), (2, -1)]
_PROJ_AXES = {0: (1, 2), 1: (0, 2), 2: (0, 1)}


@dataclass
class MaterialParams:
    base_color_a: tuple[float, float, float]
    base_color_b: tuple[float, float, float]
    color_noise: NoiseParams
    vein_noise: NoiseParams
    height_noise: NoiseParams
    vein_strength: float = 0.35
    height_amplitude: float = 0.15
    roughness_base: float = 0.75
    roughness_variation: float = 0.2
    humidity: float = 0.25

    def validate(self) -> None:
        for name, color in (("base_color_a", self.base_color_a), ("base_color_b", self.base_color_b)):
            if len(color) != 3 or any(not 0.0 <= c <= 1.0 for c in color):
                raise ConfigError(f"{name} must be three components in [0, 1], got {color}")
        if not 0.0 <= self.vein_strength <= 1.0:
            raise ConfigError(f"vein_strength must be in [0, 1], got {self.vein_strength}")
        if self.height_amplitude < 0.0:
            raise ConfigError(f"height_amplitude must be >= 0, got {self.height_amplitude}")
        if not 0.0 <= self.roughness_base <= 1.0:
            raise ConfigError(f"roughness_base must be in [0, 1], got {self.roughness_base}")
        if self.roughness_variation < 0.0:
            raise ConfigError(f"roughness_variation must be >= 0, got {self.roughness_variation}")
        if self.roughness_base - self.roughness_variation < 0.0:
            raise ConfigError(
                "roughness_base - roughness_variation must be >= 0, got "
                f"{self.roughness_base} - {self.roughness_variation}"
            )
        if self.roughness_base + self.roughness_variation > 1.0:
            raise ConfigError(
                "roughness_base + roughness_variation must be <= 1, got "
                f"{self.roughness_base} + {self.roughness_variation}"
            )
        if not 0.0 <= self.humidity <= 1.0:
            raise ConfigError(f"humidity must be in [0, 1], got {self.humidity}")
        self.color_noise.validate()
        self.vein_noise.validate()
        self.height_noise.validate()


def default_material(seed: int) -> MaterialParams:
    """Grey-brown rock defaults with noise streams derived from the master seed."""
    return MaterialParams(
        base_color_a=(0.35, 0.30, 0.26),
        base_color_b=(0.55, 0.50, 0.44),
        color_noise=NoiseParams(seed=derive_seed(seed, _SALT_MATERIAL, 0), frequency=0.15, octaves=4),
        vein_noise=NoiseParams(seed=derive_seed(seed, _SALT_MATERIAL, 1), frequency=0.25),
        height_noise=NoiseParams(seed=derive_seed(seed, _SALT_MATERIAL, 2), frequency=0.8, octaves=3),
    )


def material_eval(
    p: np.ndarray, n: np.ndarray, params: MaterialParams
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Albedo, height and roughness of the rock at world positions.

    A function of position only (the normal is accepted for interface
    stability), which is what keeps chunk seams coherent.
    """
    pts = np.atleast_2d(np.asarray(p, dtype=np.float64))
    single = np.asarray(p).ndim == 1

    color_v = perlin3(pts, params.color_noise)
    t = (color_v + 1.0) * 0.5
    a = np.asarray(params.base_color_a)
    b = np.asarray(params.base_color_b)
    albedo = a[None, :] + (b - a)[None, :] * t[:, None]

    f1, _ = voronoi3(pts, params.vein_noise)
    edge_factor = np.clip(f1 * params.vein_noise.frequency, 0.0, 1.0)
    albedo = albedo * (1.0 - params.vein_strength * edge_factor)[:, None]

    height = perlin3(pts, params.height_noise) * params.height_amplitude
    roughness = np.clip(
        params.roughness_base + params.roughness_variation * color_v - 0.5 * params.humidity,
        0.0,
        1.0,
    )
    if single:
        return albedo[0], height[0], roughness[0]
    return albedo, height, roughness


@dataclass
class UVAtlas:
    uvs: np.ndarray                      # (F, 3, 2) per-corner coordinates in [0, 1]
    chart_of_triangle: np.ndarray        # (F,) chart id per triangle
    chart_rects: list[tuple[int, float, float, float, float]]  # (chart, u0, v0, w, h)
    resolution: int
    density: float                       # UV units per world unit
    texel_world: float                   # world units per texel

    def validate(self) -> None:
        if np.any(self.uvs < 0.0) or np.any(self.uvs > 1.0):
            raise ContractViolation("atlas UVs outside the unit square")
        for i, ra in enumerate(self.chart_rects):
            for rb in self.chart_rects[i + 1 :]:
                if not (
                    ra[1] + ra[3] <= rb[1] or rb[1] + rb[3] <= ra[1]
                    or ra[2] + ra[4] <= rb[2] or rb[2] + rb[4] <= ra[2]
                ):
                    raise ContractViolation(f"atlas charts {ra[0]} and {rb[0]} overlap")


def _shelf_pack(sizes: list[tuple[int, float, float]]) -> dict[int, tuple[float, float]] | None:
    """Pack (chart, w, h) rects into the unit square; returns origins or None."""
    order = sorted(sizes, key=lambda s: (-s[2], s[0]))
    origins: dict[int, tuple[float, float]] = {}
    x = 0.0
    y = 0.0
    shelf_h = 0.0
    for chart, w, h in order:
        if w > 1.0 or h > 1.0:
            return None
        if x + w > 1.0:
            y += shelf_h
            x = 0.0
            shelf_h = 0.0
        if y + h > 1.0:
            return None
        origins[chart] = (x, y)
        x += w
        shelf_h = max(shelf_h, h)
    return origins


def build_uv_atlas(chunk: Chunk, resolution: int) -> UVAtlas:
    """Project triangles onto dominant-axis charts and pack them with gutters.

    Texel density is uniform across charts; on packing overflow the density
    is halved and packing retried.
    """
    _check_resolution(resolution)
    mesh = chunk.mesh
    if mesh.triangle_count == 0:
        raise ContractViolation("cannot build an atlas for an empty chunk")

    p = mesh.positions[mesh.triangles]
    face_n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    axis = np.argmax(np.abs(face_n), axis=1)
    sign = np.take_along_axis(face_n, axis[:, None], axis=1)[:, 0] >= 0.0
    chart = axis * 2 + np.where(sign, 0, 1)

    gutter = _GUTTER_PX / resolution
    charts = sorted(set(int(c) for c in chart))
    projected: dict[int, np.ndarray] = {}
    chart_lo: dict[int, np.ndarray] = {}
    extents: dict[int, np.ndarray] = {}
    for c in charts:
        ua, va = _PROJ_AXES[c // 2]
        tri_sel = chart == c
        proj = p[tri_sel][:, :, [ua, va]]
        projected[c] = proj
        flat = proj.reshape(-1, 2)
        chart_lo[c] = flat.min(axis=0)
        extents[c] = flat.max(axis=0) - chart_lo[c]

    # initial density from the padded-area budget, capped by the largest extent
    total_area = sum(float(e[0] * e[1]) for e in extents.values())
    max_extent = max(float(e.max()) for e in extents.values())
    density = np.sqrt(0.5 / total_area) if total_area > 0 else 1.0
    if max_extent > 0:
        density = min(density, (1.0 - 2.0 * gutter) / max_extent)

    origins = None
    for _ in range(48):
        sizes = [
            (c, float(extents[c][0]) * density + 2 * gutter, float(extents[c][1]) * density + 2 * gutter)
            for c in charts
        ]
        origins = _shelf_pack(sizes)
        if origins is not None:
            break
        density *= 0.5
    if origins is None:
        raise ContractViolation("atlas packing failed even at minimum density")

    uvs = np.zeros((mesh.triangle_count, 3, 2))
    rects = []
    for c in charts:
        ox, oy = origins[c]
        tri_sel = chart == c
        uvs[tri_sel] = (projected[c] - chart_lo[c]) * density + np.array([ox + gutter, oy + gutter])
        rects.append(
            (c, ox, oy, float(extents[c][0]) * density + 2 * gutter, float(extents[c][1]) * density + 2 * gutter)
        )

    atlas = UVAtlas(
        uvs=uvs,
        chart_of_triangle=chart.astype(np.int64),
        chart_rects=rects,
        resolution=resolution,
        density=float(density),
        texel_world=1.0 / (float(density) * resolution),
    )
    atlas.validate()
    return atlas


def _check_resolution(resolution: int) -> None:
    if resolution not in SUPPORTED_RESOLUTIONS:
        raise ConfigError(
            f"texture resolution must be one of {SUPPORTED_RESOLUTIONS}, got {resolution}"
        )


def _srgb_encode(c: np.ndarray) -> np.ndarray:
    c = np.clip(c, 0.0, 1.0)
    return np.where(c <= 0.0031308, 12.92 * c, 1.055 * np.power(c, 1.0 / 2.4) - 0.055)


def _rasterize(uvs: np.ndarray, world: np.ndarray, resolution: int):
    """Scanline-free rasterization: barycentric world positions per texel."""
    R = resolution
    positions = np.zeros((R, R, 3))
    covered = np.zeros((R, R), dtype=bool)
    for f in range(len(uvs)):
        tri_uv = uvs[f] * R
        lo = np.clip(np.floor(tri_uv.min(axis=0) - 0.5).astype(int), 0, R - 1)
        hi = np.clip(np.ceil(tri_uv.max(axis=0) + 0.5).astype(int), 0, R)
        if lo[0] >= hi[0] or lo[1] >= hi[1]:
            continue
        xs = np.arange(lo[0], hi[0]) + 0.5
        ys = np.arange(lo[1], hi[1]) + 0.5
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        v0 = tri_uv[1] - tri_uv[0]
        v1 = tri_uv[2] - tri_uv[0]
        denom = v0[0] * v1[1] - v1[0] * v0[1]
        if denom == 0.0:
            continue
        dx = gx - tri_uv[0, 0]
        dy = gy - tri_uv[0, 1]
        w1 = (dx * v1[1] - v1[0] * dy) / denom
        w2 = (v0[0] * dy - dx * v0[1]) / denom
        w0 = 1.0 - w1 - w2
        inside = (w0 >= -1e-12) & (w1 >= -1e-12) & (w2 >= -1e-12)
        if not inside.any():
            continue
        ii, jj = np.nonzero(inside)
        px = lo[0] + ii
        py = lo[1] + jj
        pts = (
            w0[ii, jj][:, None] * world[f, 0]
            + w1[ii, jj][:, None] * world[f, 1]
            + w2[ii, jj][:, None] * world[f, 2]
        )
        positions[px, py] = pts
        covered[px, py] = True
    return positions, covered


def bake_chunk(chunk: Chunk, atlas: UVAtlas, params: MaterialParams, resolution: int) -> TextureSet:
    """Rasterize the procedural material into colour, normal and roughness maps.

    Texel centers are inverted through the atlas to world surface points and
    fed to material_eval; uncovered texels take the nearest covered texel's
    values, which also fills the chart gutters.
    """
    _check_resolution(resolution)
    if resolution != atlas.resolution:
        raise ConfigError(
            f"atlas was built for resolution {atlas.resolution}, bake requested {resolution}"
        )
    params.validate()
    mesh = chunk.mesh
    world = mesh.positions[mesh.triangles]
    positions, covered = _rasterize(atlas.uvs, world, resolution)

    R = resolution
    albedo = np.zeros((R, R, 3))
    height = np.zeros((R, R))
    rough = np.zeros((R, R))
    idx = np.nonzero(covered)
    if len(idx[0]) == 0:
        raise ContractViolation("bake covered no texels; atlas density collapsed")
    alb, hgt, rgh = material_eval(positions[idx], None, params)
    albedo[idx] = alb
    height[idx] = hgt
    rough[idx] = rgh

    # nearest covered texel for every texel (identity where covered)
    _, (ni, nj) = ndimage.distance_transform_edt(~covered, return_indices=True)
    height_filled = height[ni, nj]

    gx, gy = np.gradient(height_filled, atlas.texel_world)
    nrm = np.stack([-gx, -gy, np.ones_like(gx)], axis=-1)
    nrm /= np.linalg.norm(nrm, axis=-1, keepdims=True)

    color_img = np.rint(_srgb_encode(albedo) * 255.0).astype(np.uint8)
    normal_img = np.rint((nrm + 1.0) * 0.5 * 255.0).astype(np.uint8)
    rough_img = np.rint(np.clip(rough, 0.0, 1.0) * 255.0).astype(np.uint8)

    color_img = color_img[ni, nj]
    normal_img = normal_img[ni, nj]
    rough_img = rough_img[ni, nj]

    return TextureSet(color=color_img, normal=normal_img, roughness=rough_img, resolution=R)
