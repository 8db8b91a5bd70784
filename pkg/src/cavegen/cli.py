"""Command line interface.

Exit codes: 0 success, 2 configuration error, 3 stale artifact,
4 resource limit, 5 internal invariant failure.  Logs go to stderr;
artifacts and reports go to files only.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import PRESET_NAMES, load_config
from .errors import CavegenError, ConfigError, ContractViolation
from .io import MANIFEST_NAME, import_ply, load_manifest
from .mesh import validate_mesh
from .pipeline import STAGES, StageSelector, bench, preview, run

log = logging.getLogger("cavegen")


def _parse_stages(text: str) -> tuple[str, ...]:
    stages = tuple(s.strip() for s in text.split(",") if s.strip())
    if not stages:
        raise ConfigError("--stages given but empty")
    return stages


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cavegen",
        description="Seeded procedural underground environments: graph, mesh, textures.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="run pipeline stages")
    gen.add_argument("--config", required=True, help="config JSON path or preset name")
    gen.add_argument("--stages", default=",".join(STAGES), help="comma list, e.g. graph,mesh")
    gen.add_argument("--resume", action="store_true", help="continue from a prior run's manifest")
    gen.add_argument("--out", default=None, help="output directory (defaults to config output_dir)")
    gen.add_argument("--threads", type=int, default=1, help="worker cap honored by all stages")
    gen.add_argument("--z-up", action="store_true", help="export Z-up instead of Y-up")

    prev = sub.add_parser("preview", help="fast pre-visualization without stage artifacts")
    prev.add_argument("--config", required=True)
    prev.add_argument("--kind", required=True, choices=("graph", "texture"))
    prev.add_argument("--out", default=None)

    ben = sub.add_parser("bench", help="run benchmark presets and write a timing report")
    ben.add_argument("--preset", action="append", required=True, metavar="NAME",
                     help=f"repeatable; known presets: {', '.join(PRESET_NAMES)}")
    ben.add_argument("--reps", type=int, default=1)
    ben.add_argument("--report", default="bench_report.json")
    ben.add_argument("--workdir", default=None, help="scratch directory for benchmark runs")

    val = sub.add_parser("validate", help="audit a run directory: digests and mesh invariants")
    val.add_argument("--dir", required=True, help="run directory containing the manifest")
    return parser


def _cmd_generate(args) -> int:
    config = load_config(args.config)
    selector = StageSelector(stages=_parse_stages(args.stages), resume=args.resume)
    result = run(config, selector, out_dir=args.out, threads=args.threads, z_up=args.z_up)
    log.info("wrote %d files to %s", len(result.files), result.out_dir)
    return 0


def _cmd_preview(args) -> int:
    config = load_config(args.config)
    files = preview(config, args.kind, out_dir=args.out)
    log.info("preview written: %s", ", ".join(str(f) for f in files))
    return 0


def _cmd_bench(args) -> int:
    bench(args.preset, args.reps, args.report, work_dir=args.workdir)
    return 0


def _cmd_validate(args) -> int:
    directory = Path(args.dir)
    manifest = load_manifest(directory)  # digest audit; raises StaleArtifactError
    findings = []
    worst_ok = True
    for rel in sorted(manifest.artifacts):
        if not (rel.startswith("chunk_") and rel.endswith(".ply")):
            continue
        mesh, meta = import_ply(directory / rel)
        report = validate_mesh(mesh)
        entry = {
            "file": rel,
            "vertices": report.vertex_count,
            "triangles": report.triangle_count,
            "closed": report.closed,
            "boundary_edges": report.boundary_edge_count,
            "degenerate_triangles": report.degenerate_count,
            "components": report.component_count,
            "euler_characteristic": report.euler_characteristic,
            "notes": report.notes,
        }
        findings.append(entry)
        if report.degenerate_count > 0 or report.notes:
            worst_ok = False
    out = {
        "manifest": MANIFEST_NAME,
        "stages": manifest.stages,
        "artifact_count": len(manifest.artifacts),
        "chunks": findings,
    }
    report_path = directory / "validation_report.json"
    report_path.write_text(json.dumps(out, indent=2) + "\n")
    log.info("digest audit passed for %d artifacts; %d chunk meshes inspected",
             len(manifest.artifacts), len(findings))
    if not worst_ok:
        raise ContractViolation("mesh invariant violations found; see validation_report.json")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    handlers = {
        "generate": _cmd_generate,
        "preview": _cmd_preview,
        "bench": _cmd_bench,
        "validate": _cmd_validate,
    }
    try:
        return handlers[args.command](args)
    except CavegenError as exc:
        log.error("%s", exc)
        return exc.exit_code
    except Exception:  # pragma: no cover - unexpected internal failure
        log.exception("internal error")
        return 5


if __name__ == "__main__":
    sys.exit(main())
