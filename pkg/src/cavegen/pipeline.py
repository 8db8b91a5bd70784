"""Stage orchestration: generate/resume runs, previews, and benchmark presets.

Every stage reads its inputs back from the artifacts the previous stage put
on disk, so a monolithic run and a staged resume produce byte-identical
outputs by construction.
"""

from __future__ import annotations

import csv
import json
import logging
import platform
import shutil
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .config import PRESET_NAMES, PipelineConfig, preset_config
from .decimate import decimate
from .errors import ConfigError, ContractViolation
from .graph import generate_graph, graph_to_json, json_to_graph
from .io import (
    RunManifest,
    axis_from_file,
    chunk_stem,
    export_graph_ply,
    export_obj,
    export_ply,
    import_ply,
    load_manifest,
    sha256_file,
    texture_names,
    write_chunk_mtl,
    write_manifest,
)
from .mesh import Chunk, TriMesh, chunk_mesh, smooth_mesh
from .skin import skin_graph
from .texture import UVAtlas, bake_chunk, build_uv_atlas, material_eval

log = logging.getLogger(__name__)

STAGES = ("graph", "mesh", "texture")

GRAPH_FILE = "graph.json"
PREVIEW_GRAPH = "preview_graph.ply"
PREVIEW_TEXTURE = "preview_texture.png"


@dataclass
class StageSelector:
    stages: tuple[str, ...] = STAGES
    resume: bool = False

    def validate(self) -> None:
        if not self.stages:
            raise ConfigError("no stages selected")
        unknown = [s for s in self.stages if s not in STAGES]
        if unknown:
            raise ConfigError(f"unknown stages {unknown}; valid: {list(STAGES)}")
        indices = sorted(STAGES.index(s) for s in set(self.stages))
        if indices != list(range(indices[0], indices[-1] + 1)):
            raise ContractViolation(
                f"selected stages must be contiguous in order {list(STAGES)}, got {list(self.stages)}"
            )

    def ordered(self) -> list[str]:
        return [s for s in STAGES if s in self.stages]


@dataclass
class RunResult:
    out_dir: Path
    files: list[Path] = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    manifest: RunManifest | None = None


def _record(manifest: RunManifest, out: Path, path: Path, files: list[Path]) -> None:
    rel = str(path.relative_to(out))
    manifest.artifacts[rel] = sha256_file(path)
    files.append(path)


def _stage_graph(config: PipelineConfig, out: Path, manifest: RunManifest, files: list[Path]) -> None:
    graph = generate_graph(config.graph)
    doc = graph_to_json(graph, config.graph)
    path = out / GRAPH_FILE
    path.write_text(json.dumps(doc) + "\n")
    manifest.artifacts = {}
    _record(manifest, out, path, files)
    log.info("graph stage: %d nodes, %d edges", len(graph.nodes), len(graph.edge_pairs()))


def _stage_mesh(
    config: PipelineConfig, out: Path, manifest: RunManifest, files: list[Path], z_up: bool
) -> None:
    graph_path = out / GRAPH_FILE
    if not graph_path.exists():
        raise ContractViolation("mesh stage requires the graph stage's graph.json")
    graph, graph_config = json_to_graph(json.loads(graph_path.read_text()))
    if graph_config != config.graph:
        raise ConfigError("graph.json was generated with a different graph config; cannot continue")

    mesh = skin_graph(graph, config.mesh)
    log.info("skin: %d triangles", mesh.triangle_count)
    mesh = smooth_mesh(mesh, config.mesh)
    mesh = decimate(mesh, config.mesh)
    log.info("decimated: %d triangles", mesh.triangle_count)
    chunks = chunk_mesh(mesh, config.mesh, single_layer=graph.layers == 1)
    log.info("chunked into %d cells", len(chunks))

    texel_world: dict = {}
    for chunk in chunks:
        atlas = build_uv_atlas(chunk, config.texture_resolution)
        chunk.mesh.uvs = atlas.uvs
        texel_world[chunk.index] = atlas.texel_world

    # chunk artifacts from any previous mesh/texture stage are now invalid
    manifest.artifacts = {
        k: v for k, v in manifest.artifacts.items() if not k.startswith("chunk_") and k != "axes.txt"
    }
    for path in export_ply(chunks, out, z_up=z_up, texel_world=texel_world):
        _record(manifest, out, path, files)
    if "obj" in config.output_formats:
        for path in export_obj(chunks, out, z_up=z_up, with_maps=False):
            _record(manifest, out, path, files)


def _stage_texture(
    config: PipelineConfig, out: Path, manifest: RunManifest, files: list[Path]
) -> None:
    ply_names = sorted(
        k for k in manifest.artifacts if k.startswith("chunk_") and k.endswith(".ply")
    )
    if not ply_names:
        raise ContractViolation("texture stage requires the mesh stage's chunk files")
    for name in ply_names:
        mesh_file, meta = import_ply(out / name)
        file_z_up = meta.get("axis", "y_up") == "z_up"
        mesh = TriMesh(
            axis_from_file(mesh_file.positions, file_z_up),
            mesh_file.triangles,
            normals=None if mesh_file.normals is None else axis_from_file(mesh_file.normals, file_z_up),
            uvs=mesh_file.uvs,
        )
        if mesh.uvs is None or "texel_world" not in meta:
            raise ContractViolation(f"{name} lacks UVs or texel density; re-run the mesh stage")
        index = meta.get("chunk_index", (0, 0, 0))
        chunk = Chunk(index=index, mesh=mesh, bounds=mesh.bounds())
        atlas = UVAtlas(
            uvs=mesh.uvs,
            chart_of_triangle=np.zeros(mesh.triangle_count, dtype=np.int64),
            chart_rects=[],
            resolution=config.texture_resolution,
            density=1.0 / (meta["texel_world"] * config.texture_resolution),
            texel_world=meta["texel_world"],
        )
        textures = bake_chunk(chunk, atlas, config.material, config.texture_resolution)
        stem = chunk_stem(index)
        names = texture_names(stem)
        images = {
            "color": Image.fromarray(np.transpose(textures.color, (1, 0, 2)), "RGB"),
            "normal": Image.fromarray(np.transpose(textures.normal, (1, 0, 2)), "RGB"),
            "roughness": Image.fromarray(textures.roughness.T, "L"),
        }
        for kind, image in images.items():
            path = out / names[kind]
            image.save(path)
            _record(manifest, out, path, files)
        if "obj" in config.output_formats:
            mtl = write_chunk_mtl(out, stem, with_maps=True)
            _record(manifest, out, mtl, files)
        log.info("baked %s at %d^2", stem, config.texture_resolution)


def run(
    config: PipelineConfig,
    selector: StageSelector,
    out_dir: str | Path | None = None,
    threads: int = 1,
    z_up: bool = False,
) -> RunResult:
    """Execute the selected stages, persisting artifacts and the run manifest.

    Stages hand data to each other through the files they write, which makes
    a full run and a staged resume byte-identical.
    """
    selector.validate()
    config.validate()
    if threads < 1:
        raise ConfigError(f"threads must be >= 1, got {threads}")
    out = Path(out_dir) if out_dir is not None else Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    axis = "z_up" if z_up else "y_up"

    stages = selector.ordered()
    first_index = STAGES.index(stages[0])
    if first_index > 0 and not selector.resume:
        raise ContractViolation(
            f"stage {stages[0]!r} needs artifacts from {STAGES[first_index - 1]!r}; "
            "run earlier stages first or pass resume=True"
        )

    if selector.resume and first_index > 0:
        manifest = load_manifest(out)
        if manifest.config != config.to_dict():
            raise ConfigError("config differs from the prior run's manifest; cannot resume")
        if manifest.axis_convention != axis:
            raise ConfigError(
                f"prior run used axis convention {manifest.axis_convention}, requested {axis}"
            )
        for upstream in STAGES[:first_index]:
            if not manifest.stages.get(upstream, False):
                raise ContractViolation(f"cannot resume: stage {upstream!r} is not complete")
    else:
        manifest = RunManifest(config=config.to_dict(), axis_convention=axis)

    result = RunResult(out_dir=out)
    for stage in stages:
        t0 = time.perf_counter()
        if stage == "graph":
            _stage_graph(config, out, manifest, result.files)
        elif stage == "mesh":
            _stage_mesh(config, out, manifest, result.files, z_up)
        else:
            _stage_texture(config, out, manifest, result.files)
        manifest.timings[stage] = time.perf_counter() - t0
        manifest.stages[stage] = True
        for later in STAGES[STAGES.index(stage) + 1 :]:
            if later not in stages:
                manifest.stages[later] = False
                manifest.timings.pop(later, None)
        write_manifest(manifest, out)
        log.info("stage %s done in %.2fs", stage, manifest.timings[stage])
    result.timings = dict(manifest.timings)
    result.manifest = manifest
    return result


def preview(config: PipelineConfig, kind: str, out_dir: str | Path | None = None) -> list[Path]:
    """Cheap pre-visualization; writes only its own file, never stage artifacts."""
    config.validate()
    out = Path(out_dir) if out_dir is not None else Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if kind == "graph":
        graph = generate_graph(config.graph)
        return [export_graph_ply(graph, out / PREVIEW_GRAPH)]
    if kind == "texture":
        side = 512
        extent = 64.0
        coords = (np.arange(side) + 0.5) / side * extent
        gx, gy = np.meshgrid(coords, coords, indexing="ij")
        pts = np.column_stack([gx.ravel(), gy.ravel(), np.zeros(side * side)])
        albedo, _, _ = material_eval(pts, None, config.material)
        from .texture import _srgb_encode

        img = np.rint(_srgb_encode(albedo.reshape(side, side, 3)) * 255.0).astype(np.uint8)
        path = out / PREVIEW_TEXTURE
        Image.fromarray(np.transpose(img, (1, 0, 2)), "RGB").save(path)
        return [path]
    raise ConfigError(f"unknown preview kind {kind!r}; valid: graph, texture")


_TABLE_ROWS = (
    ("Single (no chunks)", "single", False),
    ("Multi (no chunks)", "multi", False),
    ("Single (4 division)", "single", True),
    ("Multi (4 division)", "multi", True),
)
_TABLE_COLS = (("50N(1K)", "50n_1k"), ("50N(4K)", "50n_4k"), ("250N(1K)", "250n_1k"), ("250N(4K)", "250n_4k"))


def preset_for_cell(row: int, col: int) -> str:
    _, kind, chunked = _TABLE_ROWS[row]
    suffix = _TABLE_COLS[col][1]
    return f"{kind}{'_4div' if chunked else ''}_{suffix}"


def _format_cell(seconds: float | None) -> str:
    if seconds is None:
        return "-"
    minutes, secs = divmod(int(round(seconds)), 60)
    return f"{minutes:02d}m{secs:02d}s"


def bench(
    preset_names: list[str],
    repetitions: int,
    report_path: str | Path,
    work_dir: str | Path | None = None,
) -> dict:
    """Run presets end to end and report wall-clock per stage.

    Timings are reported (with hardware metadata), never asserted; the text
    table mirrors the 4x4 preset grid, with unrun cells left blank.
    """
    unknown = [n for n in preset_names if n not in PRESET_NAMES]
    if unknown:
        raise ConfigError(f"unknown presets {unknown}; valid presets: {', '.join(PRESET_NAMES)}")
    if repetitions < 1:
        raise ConfigError(f"repetitions must be >= 1, got {repetitions}")

    report_path = Path(report_path)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    work_root = Path(work_dir) if work_dir is not None else report_path.parent / "bench_runs"

    results: dict = {}
    for name in preset_names:
        config = preset_config(name)
        runs = []
        sizes: dict = {}
        for rep in range(repetitions):
            run_dir = work_root / f"{name}_rep{rep}"
            if run_dir.exists():
                shutil.rmtree(run_dir)
            result = run(config, StageSelector(), out_dir=run_dir)
            timings = dict(result.timings)
            timings["total"] = sum(timings.values())
            runs.append(timings)
            sizes = {
                str(p.relative_to(run_dir)): p.stat().st_size
                for p in sorted(run_dir.iterdir())
                if p.is_file()
            }
            shutil.rmtree(run_dir)
            log.info("bench %s rep %d: %.2fs", name, rep, timings["total"])
        stats = {}
        for key in ("graph", "mesh", "texture", "total"):
            values = [r[key] for r in runs]
            stats[key] = {
                "mean": float(np.mean(values)),
                "min": float(np.min(values)),
                "max": float(np.max(values)),
            }
        results[name] = {"stages": stats, "runs": runs, "artifact_bytes": sizes}

    table_rows = []
    for r, (label, _, _) in enumerate(_TABLE_ROWS):
        cells = []
        for c in range(len(_TABLE_COLS)):
            preset = preset_for_cell(r, c)
            cell = results.get(preset)
            cells.append(None if cell is None else cell["stages"]["total"]["mean"])
        table_rows.append({"label": label, "cells": cells})

    report = {
        "version": 1,
        "hardware": {
            "platform": platform.platform(),
            "machine": platform.machine(),
            "processor": platform.processor(),
            "python": platform.python_version(),
        },
        "repetitions": repetitions,
        "note": "wall-clock seconds on this machine; informational, not asserted",
        "columns": [c[0] for c in _TABLE_COLS],
        "rows": [r["label"] for r in table_rows],
        "table_seconds": [r["cells"] for r in table_rows],
        "presets": results,
    }
    report_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")

    csv_path = report_path.with_suffix(".csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["preset", "repetition", "stage", "seconds"])
        for name, data in results.items():
            for rep, timings in enumerate(data["runs"]):
                for stage in ("graph", "mesh", "texture", "total"):
                    writer.writerow([name, rep, stage, f"{timings[stage]:.6f}"])

    txt_path = report_path.with_suffix(".txt")
    width = max(len(r["label"]) for r in table_rows) + 2
    lines = ["Parameters".ljust(width) + "".join(c[0].rjust(11) for c in _TABLE_COLS)]
    lines.append("-" * (width + 11 * len(_TABLE_COLS)))
    for row in table_rows:
        lines.append(row["label"].ljust(width) + "".join(_format_cell(c).rjust(11) for c in row["cells"]))
    txt_path.write_text("\n".join(lines) + "\n")

    fig_path = report_path.with_suffix(".png")
    _bench_figure(results, fig_path)
    log.info("bench report written to %s (+.csv, .txt, .png)", report_path)
    return report


def _bench_figure(results: dict, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    names = list(results)
    stages = ("graph", "mesh", "texture")
    fig, ax = plt.subplots(figsize=(max(6, 1.2 * len(names)), 4))
    bottom = np.zeros(len(names))
    for stage in stages:
        values = np.array([results[n]["stages"][stage]["mean"] for n in names])
        ax.bar(names, values, bottom=bottom, label=stage)
        bottom += values
    ax.set_ylabel("mean wall-clock [s]")
    ax.set_title("generation time per preset")
    ax.legend()
    plt.setp(ax.get_xticklabels(), rotation=30, ha="right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
