"""Pipeline configuration: strict JSON loading, defaults, and named presets.

Unknown keys are errors so a shared config file always means the same thing;
every default is materialized into the effective config that gets written to
the run manifest.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .errors import ConfigError
from .graph import GraphConfig
from .mesh import MeshConfig
from .noise import NoiseParams
from .texture import SUPPORTED_RESOLUTIONS, MaterialParams, default_material

OUTPUT_FORMATS = ("obj", "ply")


@dataclass
class PipelineConfig:
    graph: GraphConfig
    mesh: MeshConfig
    material: MaterialParams
    texture_resolution: int = 1024
    output_formats: tuple[str, ...] = ("obj", "ply")
    output_dir: str = "out"
    preset_name: str | None = None

    def validate(self) -> None:
        self.graph.validate()
        self.mesh.validate()
        self.material.validate()
        if self.texture_resolution not in SUPPORTED_RESOLUTIONS:
            raise ConfigError(
                f"texture_resolution must be one of {SUPPORTED_RESOLUTIONS}, got {self.texture_resolution}"
            )
        if not self.output_formats:
            raise ConfigError("output_formats must name at least one of obj, ply")
        for fmt in self.output_formats:
            if fmt not in OUTPUT_FORMATS:
                raise ConfigError(f"unsupported output format {fmt!r}; supported: {OUTPUT_FORMATS}")
        if self.mesh.voxel_size > self.graph.radius_min * self.mesh.radius_scale:
            raise ConfigError(
                f"voxel_size={self.mesh.voxel_size} exceeds radius_min*radius_scale="
                f"{self.graph.radius_min * self.mesh.radius_scale}; tunnels would be thinner than a voxel"
            )

    def to_dict(self) -> dict:
        # canonical JSON form (tuples become lists) so manifest comparisons
        # survive a round-trip through disk
        return json.loads(json.dumps(asdict(self)))


def _merge_section(data: dict | None, defaults: dict, path: str, noise_keys: tuple[str, ...] = ()) -> dict:
    merged = dict(defaults)
    if data is None:
        return merged
    if not isinstance(data, dict):
        raise ConfigError(f"config section {path} must be an object")
    for key, value in data.items():
        if key not in defaults:
            raise ConfigError(f"unknown config key {path}.{key}")
        if key in noise_keys:
            merged[key] = _merge_section(value, defaults[key], f"{path}.{key}")
        else:
            merged[key] = value
    return merged


def _build(doc: dict, source: str) -> PipelineConfig:
    known_top = {
        "preset",
        "graph",
        "mesh",
        "material",
        "texture_resolution",
        "output_formats",
        "output_dir",
    }
    graph_fields = {f.name for f in fields(GraphConfig)}

    doc = dict(doc)
    preset_name = doc.pop("preset", None)
    if preset_name is not None:
        if preset_name not in PRESET_NAMES:
            raise ConfigError(
                f"unknown preset {preset_name!r}; valid presets: {', '.join(PRESET_NAMES)}"
            )
        base = _preset_doc(preset_name)
        for section in ("graph", "mesh", "material"):
            base.setdefault(section, {})
            if section in doc:
                base[section].update(doc.pop(section))
        base.update(doc)
        doc = base

    # graph-level shorthand: bare GraphConfig keys at the top level
    shorthand = {k: doc.pop(k) for k in list(doc) if k in graph_fields}
    if shorthand:
        graph_doc = doc.setdefault("graph", {})
        for key, value in shorthand.items():
            if key in graph_doc:
                raise ConfigError(f"config key {key} given both at top level and under graph")
            graph_doc[key] = value

    unknown = set(doc) - known_top
    if unknown:
        raise ConfigError(f"unknown config keys in {source}: {sorted(unknown)}")

    graph_defaults = asdict(GraphConfig())
    graph = GraphConfig(**_merge_section(doc.get("graph"), graph_defaults, "graph"))

    mesh_defaults = asdict(MeshConfig())
    mesh_doc = _merge_section(doc.get("mesh"), mesh_defaults, "mesh")
    if isinstance(mesh_doc["chunk_grid"], list):
        mesh_doc["chunk_grid"] = tuple(mesh_doc["chunk_grid"])
    mesh = MeshConfig(**mesh_doc)

    material_defaults = asdict(default_material(graph.seed))
    material_doc = _merge_section(
        doc.get("material"),
        material_defaults,
        "material",
        noise_keys=("color_noise", "vein_noise", "height_noise"),
    )
    for key in ("base_color_a", "base_color_b"):
        material_doc[key] = tuple(material_doc[key])
    for key in ("color_noise", "vein_noise", "height_noise"):
        material_doc[key] = NoiseParams(**material_doc[key])
    material = MaterialParams(**material_doc)

    formats = doc.get("output_formats", list(OUTPUT_FORMATS))
    if not isinstance(formats, (list, tuple)):
        raise ConfigError("output_formats must be a list")
    config = PipelineConfig(
        graph=graph,
        mesh=mesh,
        material=material,
        texture_resolution=doc.get("texture_resolution", 1024),
        output_formats=tuple(formats),
        output_dir=doc.get("output_dir", "out"),
        preset_name=preset_name,
    )
    config.validate()
    return config


def load_config(source: str | Path | dict) -> PipelineConfig:
    """Load a pipeline config from a JSON file, a preset name, or a dict."""
    if isinstance(source, dict):
        return _build(source, "<dict>")
    name = str(source)
    if name in PRESET_NAMES:
        return _build({"preset": name}, name)
    path = Path(source)
    if not path.exists():
        raise ConfigError(f"config file not found and not a preset name: {source}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config root in {path} must be an object")
    return _build(doc, str(path))


def _preset_doc(name: str) -> dict:
    multi = name.startswith("multi")
    chunked = "_4div_" in name
    nodes = 250 if "_250n_" in name else 50
    resolution = 4096 if name.endswith("_4k") else 1024
    if chunked:
        grid = [2, 2, 2] if multi else [2, 2, 1]
    else:
        grid = [1, 1, 1]
    return {
        "graph": {
            "node_count_target": nodes,
            "layers": 2 if multi else 1,
            "seed": 0,
        },
        "mesh": {
            "voxel_size": 1.0 if nodes == 50 else 1.25,
            "decimate_ratio": 0.3,
            "chunk_grid": grid,
        },
        "material": {},
        "texture_resolution": resolution,
        "output_formats": ["obj", "ply"],
    }


def _preset_names() -> list[str]:
    names = []
    for kind in ("single", "multi"):
        for chunked in (False, True):
            for nodes in (50, 250):
                for res in ("1k", "4k"):
                    div = "_4div" if chunked else ""
                    names.append(f"{kind}{div}_{nodes}n_{res}")
    return names


PRESET_NAMES = _preset_names()


def preset_config(name: str) -> PipelineConfig:
    if name not in PRESET_NAMES:
        raise ConfigError(f"unknown preset {name!r}; valid presets: {', '.join(PRESET_NAMES)}")
    config = _build({"preset": name}, name)
    return config
