from pathlib import Path

import numpy as np
import pytest

from src.application.manifolds import build_sphere_mesh, build_torus_mesh
from src.domain.errors import MeshQualityError
from src.infrastructure.mesh_io import MESH_HEADER, format_mesh, parse_mesh, read_mesh, write_mesh


def test_written_sphere_reads_back_unchanged(tmp_path: Path):
    M = build_sphere_mesh(1, radius=2.0)

    path = write_mesh(M, tmp_path / "meshes" / "sphere.mesh")
    loaded = read_mesh(path)

    assert loaded.kind == "sphere"
    assert loaded.radius == 2.0
    assert loaded.curvature == M.curvature
    assert np.array_equal(loaded.vertices, M.vertices)
    assert np.array_equal(loaded.vertex_weights, M.vertex_weights)
    assert np.array_equal(loaded.triangles, M.triangles)


def test_torus_keeps_its_grid():
    T = build_torus_mesh(6, 4, Lx=2.0)

    loaded = parse_mesh(format_mesh(T))

    assert loaded.grid == T.grid
    assert loaded.kind == "flat-torus"


def test_text_layout():
    text = format_mesh(build_sphere_mesh(0))
    lines = text.splitlines()

    assert lines[0] == MESH_HEADER
    assert lines[1].startswith("meta kind=sphere ")
    assert sum(line.startswith("v ") for line in lines) == 12
    assert sum(line.startswith("f ") for line in lines) == 20


def test_malformed_record_names_the_line():
    lines = format_mesh(build_sphere_mesh(0)).splitlines()
    first_face = next(i for i, line in enumerate(lines) if line.startswith("f "))
    lines[first_face] = "f zero 1 2"
    text = "\n".join(lines)

    with pytest.raises(MeshQualityError, match="line"):
        parse_mesh(text)


def test_missing_header_and_grid_fields_rejected():
    text = format_mesh(build_torus_mesh(4, 4))

    with pytest.raises(MeshQualityError, match="line 1"):
        parse_mesh(text.split("\n", 1)[1])
    with pytest.raises(MeshQualityError):
        parse_mesh(text.replace(" nx=4", ""))
