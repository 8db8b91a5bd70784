"""Procedural underground environments: graph skeletons, SDF meshing, baked textures."""

__version__ = "0.1.0"
