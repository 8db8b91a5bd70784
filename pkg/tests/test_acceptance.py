"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line (run with -s to see them inline)."""

import contextlib
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from cavegen.config import PRESET_NAMES, load_config, preset_config
from cavegen.decimate import decimate
from cavegen.errors import StaleArtifactError
from cavegen.graph import Graph, GraphConfig, Node, generate_graph
from cavegen.io import (
    MANIFEST_NAME,
    axis_to_file,
    export_obj,
    export_ply,
    import_obj,
    import_ply,
    load_manifest,
)
from cavegen.mesh import MeshConfig, chunk_mesh, smooth_mesh, validate_mesh
from cavegen.noise import gaussian_weights, make_rng, sample_sections
from cavegen.pipeline import StageSelector, bench, run
from cavegen.skin import sdf_eval, skin_graph
from cavegen.texture import build_uv_atlas, bake_chunk, default_material, material_eval


@contextlib.contextmanager
def criterion(number: int, label: str):
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {number} {label}: FAIL")
        raise
    print(f"ACCEPTANCE {number} {label}: PASS")


def capsule_graph() -> Graph:
    return Graph(
        nodes=[
            Node(0, None, {1}, np.zeros(3), 2.0, False, 0),
            Node(1, 0, {0}, np.array([10.0, 0.0, 0.0]), 2.0, False, 0),
        ],
        layers=1,
        seed=0,
    )


@pytest.fixture(scope="module")
def preset_runs(tmp_path_factory):
    """Two runs of single_50n_1k with the same seed, used by several criteria."""
    base = tmp_path_factory.mktemp("accept")
    dirs = [base / "run_a", base / "run_b"]
    elapsed = []
    for out in dirs:
        config = preset_config("single_50n_1k")
        t0 = time.perf_counter()
        result = run(config, StageSelector(), out_dir=out)
        elapsed.append(time.perf_counter() - t0)
        assert result.files
    return dirs, elapsed


def test_criterion_1_end_to_end_determinism(preset_runs):
    with criterion(1, "end-to-end determinism on single_50n_1k"):
        (dir_a, dir_b), elapsed = preset_runs
        assert max(elapsed) < 120.0, f"runtime target exceeded: {elapsed}"
        names_a = sorted(p.name for p in dir_a.iterdir() if p.name != MANIFEST_NAME)
        names_b = sorted(p.name for p in dir_b.iterdir() if p.name != MANIFEST_NAME)
        assert names_a == names_b
        assert any(n.endswith(".obj") for n in names_a)
        assert any(n.endswith(".ply") for n in names_a)
        assert any(n.endswith(".png") for n in names_a)
        for name in names_a:
            assert (dir_a / name).read_bytes() == (dir_b / name).read_bytes(), name


def test_criterion_2_forbidden_zone():
    with criterion(2, "forbidden zone across 50 seeds"):
        for seed in range(50):
            config = GraphConfig(node_count_target=100, seed=seed, elevation_amplitude=0.0)
            graph = generate_graph(config)
            for node in graph.nodes:
                if node.parent is None:
                    continue
                parent = graph.nodes[node.parent]
                if parent.parent is None:
                    continue
                grand = graph.nodes[parent.parent]
                v_child = node.coordinates[:2] - parent.coordinates[:2]
                v_back = grand.coordinates[:2] - parent.coordinates[:2]
                cosang = np.dot(v_child, v_back) / (
                    np.linalg.norm(v_child) * np.linalg.norm(v_back)
                )
                angle = math.degrees(math.acos(np.clip(cosang, -1.0, 1.0)))
                assert angle >= config.forbidden_half_angle_deg - 1e-9


def test_criterion_3_distribution_fidelity():
    with criterion(3, "gaussian sampling total-variation < 0.01"):
        weights = gaussian_weights(90.0, 20.0)
        draws = sample_sections(weights, make_rng(123), 1_000_000)
        freq = np.bincount(draws, minlength=360) / 1_000_000
        tv = 0.5 * float(np.abs(freq - weights.values).sum())
        assert tv < 0.01, tv


def test_criterion_4_radius_spacing_slope():
    with criterion(4, "radius/spacing and interconnect slope contracts"):
        config = GraphConfig(
            node_count_target=120,
            layers=3,
            seed=17,
            max_interconnect_angle_deg=55.0,
            elevation_amplitude=0.0,
        )
        graph = generate_graph(config)
        for node in graph.nodes:
            assert config.radius_min <= node.radius <= config.radius_max
            if node.parent is not None:
                parent = graph.nodes[node.parent]
                dist = float(np.linalg.norm(node.coordinates[:2] - parent.coordinates[:2]))
                assert config.radius_min - 1e-9 <= dist <= config.radius_max + 1e-9
        inter = graph.interconnect_pairs()
        assert inter
        for i, j in inter:
            a, b = graph.nodes[i].coordinates, graph.nodes[j].coordinates
            run_len = float(np.hypot(b[0] - a[0], b[1] - a[1]))
            rise = abs(float(b[2] - a[2]))
            slope = math.degrees(math.atan2(rise, run_len))
            assert slope <= config.max_interconnect_angle_deg + 1e-9


def test_criterion_5_mesh_fidelity_oracle():
    with criterion(5, "capsule fixture fidelity and topology through all stages"):
        graph = capsule_graph()
        voxel = 0.25
        config = MeshConfig(voxel_size=voxel, smooth_iterations=10, decimate_ratio=0.3)
        skinned = skin_graph(graph, config)
        report = validate_mesh(skinned)
        assert report.closed and report.euler_characteristic == 2
        assert np.abs(sdf_eval(graph, 1.0, skinned.positions)).max() <= voxel * math.sqrt(3.0)

        smoothed = smooth_mesh(skinned, config)
        report = validate_mesh(smoothed)
        assert report.closed and report.euler_characteristic == 2

        decimated = decimate(smoothed, config)
        report = validate_mesh(decimated)
        assert report.closed and report.euler_characteristic == 2
        assert np.abs(sdf_eval(graph, 1.0, decimated.positions)).max() <= 2 * voxel


def test_criterion_6_decimation_budget():
    with criterion(6, "decimation reaches 25% (+1%) on a >=10k fixture"):
        mesh = skin_graph(capsule_graph(), MeshConfig(voxel_size=0.125))
        assert mesh.triangle_count >= 10_000
        out = decimate(mesh, MeshConfig(decimate_ratio=0.25))
        assert out.triangle_count <= (0.25 + 0.01) * mesh.triangle_count
        assert validate_mesh(out).closed


def test_criterion_7_chunking_conservation():
    with criterion(7, "chunk area conservation and single-layer z division"):
        mesh = skin_graph(capsule_graph(), MeshConfig(voxel_size=0.25))
        total = mesh.area()
        for grid in ((2, 2, 2), (3, 2, 2)):
            chunks = chunk_mesh(mesh, MeshConfig(chunk_grid=grid))
            assert abs(sum(c.mesh.area() for c in chunks) - total) / total <= 0.001
        single = chunk_mesh(mesh, MeshConfig(chunk_grid=(2, 2, 2)), single_layer=True)
        assert all(c.index[2] == 0 for c in single)
        assert abs(sum(c.mesh.area() for c in single) - total) / total <= 0.001


def test_criterion_8_texture_contracts(preset_runs, tmp_path):
    with criterion(8, "texture resolutions, normal decode, seam coherence"):
        # preset resolutions: 1K preset artifacts and a 4K bake
        assert preset_config("single_50n_1k").texture_resolution == 1024
        assert preset_config("single_50n_4k").texture_resolution == 4096
        (dir_a, _), _ = preset_runs
        pngs = sorted(dir_a.glob("chunk_*_color.png"))
        assert pngs
        with Image.open(pngs[0]) as img:
            assert img.size == (1024, 1024)

        mesh = skin_graph(capsule_graph(), MeshConfig(voxel_size=0.4))
        chunks = chunk_mesh(mesh, MeshConfig(chunk_grid=(2, 1, 1)))
        material = default_material(7)

        atlas4k = build_uv_atlas(chunks[0], 4096)
        tex4k = bake_chunk(chunks[0], atlas4k, material, 4096)
        assert tex4k.color.shape == (4096, 4096, 3)

        atlas = build_uv_atlas(chunks[0], 512)
        tex = bake_chunk(chunks[0], atlas, material, 512)
        decoded = tex.normal.astype(np.float64) / 255.0 * 2.0 - 1.0
        lengths = np.linalg.norm(decoded, axis=-1)
        assert np.all(np.abs(lengths - 1.0) <= 0.02)
        assert np.all(decoded[..., 2] > 0)

        flat = default_material(7)
        flat = type(flat)(**{**flat.__dict__, "height_amplitude": 0.0})
        tex_flat = bake_chunk(chunks[0], atlas, flat, 512)
        assert np.all(tex_flat.normal == np.array([128, 128, 255], dtype=np.uint8))

        # shared boundary positions evaluated from either chunk agree exactly
        boundary_x = chunks[0].bounds[1, 0]
        pa = chunks[0].mesh.positions
        pb = chunks[1].mesh.positions
        set_b = {p.tobytes() for p in pb[np.abs(pb[:, 0] - boundary_x) < 1e-9]}
        shared = np.array(
            [p for p in pa[np.abs(pa[:, 0] - boundary_x) < 1e-9] if p.tobytes() in set_b]
        )
        assert len(shared) >= 100
        shared = shared[:100]
        batch_a = np.concatenate([pa[:7], shared])
        batch_b = np.concatenate([shared, pb[:13]])
        alb_a, _, rough_a = material_eval(batch_a, None, material)
        alb_b, _, rough_b = material_eval(batch_b, None, material)
        assert np.array_equal(alb_a[7:], alb_b[:100])
        assert np.array_equal(rough_a[7:], rough_b[:100])


def test_criterion_9_round_trip_io(preset_runs, tmp_path):
    with criterion(9, "obj/ply round-trips and manifest tamper detection"):
        mesh = skin_graph(capsule_graph(), MeshConfig(voxel_size=0.4))
        chunks = chunk_mesh(mesh, MeshConfig(chunk_grid=(2, 1, 1)))
        for chunk in chunks:
            chunk.mesh.uvs = build_uv_atlas(chunk, 512).uvs

        export_obj(chunks, tmp_path, z_up=False)
        export_ply(chunks, tmp_path, z_up=False)
        for chunk in chunks:
            stem = f"chunk_{chunk.index[0]}_{chunk.index[1]}_{chunk.index[2]}"
            back_obj = import_obj(tmp_path / f"{stem}.obj")
            assert back_obj.vertex_count == chunk.mesh.vertex_count
            assert back_obj.triangle_count == chunk.mesh.triangle_count
            expected = axis_to_file(chunk.mesh.positions, z_up=False)
            assert np.max(np.abs(back_obj.positions - expected)) <= 1e-6

            back_ply, _ = import_ply(tmp_path / f"{stem}.ply")
            assert back_ply.triangle_count == chunk.mesh.triangle_count
            assert np.array_equal(
                back_ply.positions[back_ply.triangles],
                expected[chunk.mesh.triangles],
            )
            assert np.array_equal(back_ply.uvs, chunk.mesh.uvs)

        (dir_a, _), _ = preset_runs
        load_manifest(dir_a)  # clean audit passes
        victim = sorted(dir_a.glob("chunk_*_roughness.png"))[0]
        data = bytearray(victim.read_bytes())
        original = bytes(data)
        data[37] ^= 0x01
        victim.write_bytes(bytes(data))
        try:
            with pytest.raises(StaleArtifactError, match=victim.name):
                load_manifest(dir_a)
        finally:
            victim.write_bytes(original)


def test_criterion_10_staged_resume_equivalence(tmp_path):
    with criterion(10, "staged resume byte-identical to monolithic"):
        doc = {
            "graph": {"node_count_target": 25, "seed": 11, "radius_min": 3.0, "radius_max": 7.0},
            "mesh": {"voxel_size": 0.7, "chunk_grid": [2, 2, 1], "decimate_ratio": 0.4},
            "texture_resolution": 256,
        }
        mono = tmp_path / "mono"
        staged = tmp_path / "staged"
        run(load_config(doc), StageSelector(), out_dir=mono)
        run(load_config(doc), StageSelector(stages=("graph",)), out_dir=staged)
        run(load_config(doc), StageSelector(stages=("mesh",), resume=True), out_dir=staged)
        run(load_config(doc), StageSelector(stages=("texture",), resume=True), out_dir=staged)
        names = sorted(p.name for p in mono.iterdir() if p.name != MANIFEST_NAME)
        assert names == sorted(p.name for p in staged.iterdir() if p.name != MANIFEST_NAME)
        for name in names:
            assert (mono / name).read_bytes() == (staged / name).read_bytes(), name


def test_criterion_11_benchmark_structure(tmp_path):
    with criterion(11, "bench reproduces the 4x4 preset grid"):
        assert len(PRESET_NAMES) == 16
        for name in PRESET_NAMES:
            preset_config(name).validate()
        report = bench(["single_50n_1k"], 2, tmp_path / "report.json", work_dir=tmp_path / "work")
        assert report["rows"] == [
            "Single (no chunks)",
            "Multi (no chunks)",
            "Single (4 division)",
            "Multi (4 division)",
        ]
        assert report["columns"] == ["50N(1K)", "50N(4K)", "250N(1K)", "250N(4K)"]
        assert len(report["table_seconds"]) == 4
        assert all(len(row) == 4 for row in report["table_seconds"])
        assert report["table_seconds"][0][0] is not None
        assert report["hardware"]["platform"]
        stats = report["presets"]["single_50n_1k"]["stages"]
        for stage in ("graph", "mesh", "texture", "total"):
            assert stats[stage]["min"] <= stats[stage]["mean"] <= stats[stage]["max"]
        table = (tmp_path / "report.txt").read_text()
        assert "Single (4 division)" in table and "250N(4K)" in table
        assert (tmp_path / "report.csv").exists()
        assert (tmp_path / "report.png").exists()
        saved = json.loads((tmp_path / "report.json").read_text())
        assert saved["note"].startswith("wall-clock")
