from __future__ import annotations

from pathlib import Path

import numpy as np

from ..application.manifolds import assemble_manifold
from ..domain.errors import ArtifactWriteError, MeshQualityError
from ..domain.models import MANIFOLD_KINDS, Curvature, Manifold, TorusGrid

MESH_HEADER = "fgi-mesh v1"
_GRID_KEYS = ("nx", "ny", "Lx", "Ly")


def _meta_line(M: Manifold) -> str:
    fields = {"kind": M.kind, "K": repr(M.curvature.K), "Ktilde": repr(M.curvature.Ktilde)}
    if M.radius is not None:
        fields["radius"] = repr(M.radius)
    if M.grid is not None:
        fields.update(nx=str(M.grid.nx), ny=str(M.grid.ny), Lx=repr(M.grid.Lx), Ly=repr(M.grid.Ly))
    return "meta " + " ".join(f"{key}={value}" for key, value in fields.items())


def format_mesh(M: Manifold) -> str:
    lines = [MESH_HEADER, _meta_line(M)]
    for (x, y, z), w in zip(M.vertices.tolist(), M.vertex_weights.tolist()):
        lines.append(f"v {x!r} {y!r} {z!r} {w!r}")
    for i, j, k in M.triangles.tolist():
        lines.append(f"f {i} {j} {k}")
    return "\n".join(lines) + "\n"


def write_mesh(M: Manifold, path: Path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(format_mesh(M), encoding="utf-8")
    except OSError as exc:
        raise ArtifactWriteError(path, str(exc)) from exc
    return path


def _parse_meta(tokens: list[str], lineno: int) -> dict[str, str]:
    meta = {}
    for token in tokens:
        key, sep, value = token.partition("=")
        if not sep or not key:
            raise MeshQualityError(f"line {lineno}: malformed meta field {token!r}")
        meta[key] = value
    return meta


def parse_mesh(text: str) -> Manifold:
    lines = text.splitlines()
    if not lines or lines[0].strip() != MESH_HEADER:
        raise MeshQualityError(f"line 1: expected header {MESH_HEADER!r}")

    meta: dict[str, str] = {}
    vertices, weights, triangles = [], [], []
    for lineno, raw in enumerate(lines[1:], start=2):
        tokens = raw.split()
        if not tokens or tokens[0].startswith("#"):
            continue
        tag, rest = tokens[0], tokens[1:]
        try:
            if tag == "meta":
                meta.update(_parse_meta(rest, lineno))
            elif tag == "v" and len(rest) == 4:
                *xyz, w = (float(token) for token in rest)
                vertices.append(xyz)
                weights.append(w)
            elif tag == "f" and len(rest) == 3:
                triangles.append([int(token) for token in rest])
            else:
                raise MeshQualityError(f"line {lineno}: unexpected record {raw.strip()!r}")
        except ValueError as exc:
            if isinstance(exc, MeshQualityError):
                raise
            raise MeshQualityError(f"line {lineno}: {exc}") from exc

    kind = meta.get("kind", "generic-mesh")
    if kind not in MANIFOLD_KINDS:
        raise MeshQualityError(f"Unknown manifold kind {kind!r}; expected one of {MANIFOLD_KINDS}.")
    if not vertices or not triangles:
        raise MeshQualityError("A mesh needs at least one vertex and one face.")
    vertices_arr = np.asarray(vertices, dtype=float)
    triangles_arr = np.asarray(triangles, dtype=np.int64)
    if triangles_arr.min() < 0 or triangles_arr.max() >= len(vertices_arr):
        raise MeshQualityError("A face references a missing vertex.")

    try:
        curvature = Curvature(K=float(meta.get("K", 0.0)), Ktilde=float(meta.get("Ktilde", 0.0)))
        radius = float(meta["radius"]) if "radius" in meta else None
        grid = None
        if kind == "flat-torus":
            missing = [key for key in _GRID_KEYS if key not in meta]
            if missing:
                raise MeshQualityError(f"A flat-torus mesh needs meta fields {missing}.")
            grid = TorusGrid(int(meta["nx"]), int(meta["ny"]), float(meta["Lx"]), float(meta["Ly"]))
            if grid.nx * grid.ny != len(vertices_arr):
                raise MeshQualityError(f"Grid {grid.nx}x{grid.ny} does not match {len(vertices_arr)} vertices.")
    except ValueError as exc:
        if isinstance(exc, MeshQualityError):
            raise
        raise MeshQualityError(f"Malformed meta value: {exc}") from exc
    if kind == "sphere" and radius is None:
        raise MeshQualityError("A sphere mesh needs a radius meta field.")

    return assemble_manifold(
        kind, vertices_arr, triangles_arr, np.asarray(weights, dtype=float), curvature, radius=radius, grid=grid
    )


def read_mesh(path: Path) -> Manifold:
    return parse_mesh(Path(path).read_text(encoding="utf-8"))
