import numpy as np
import pytest

from src.application.gradients import lattice_difference, require_torus, vertex_gradient
from src.application.manifolds import build_sphere_mesh, build_torus_mesh
from src.domain.errors import ArgumentError


def test_lattice_difference_is_periodic_central_difference():
    T = build_torus_mesh(16, 8)
    x = T.vertices[:, 0]
    h = T.grid.hx

    out = lattice_difference(T, np.sin(2.0 * np.pi * x), 0)

    expected = np.cos(2.0 * np.pi * x) * np.sin(2.0 * np.pi * h) / h
    assert np.allclose(out, expected, atol=1e-12)
    assert np.allclose(lattice_difference(T, np.sin(2.0 * np.pi * x), 1), 0.0)


def test_lattice_difference_rejects_bad_axis_and_sphere():
    T = build_torus_mesh(4, 4)

    with pytest.raises(ArgumentError):
        lattice_difference(T, np.zeros(16), 2)
    with pytest.raises(ArgumentError):
        require_torus(build_sphere_mesh(0))


def test_gradient_of_constant_vanishes():
    for M in (build_sphere_mesh(1), build_torus_mesh(6, 6)):
        field = vertex_gradient(M, np.full(M.n_vertices, 3.5))

        assert np.allclose(field.vectors, 0.0, atol=1e-12)


def test_sphere_gradient_of_height_is_tangent_and_accurate():
    M = build_sphere_mesh(3)
    z = M.vertices[:, 2]

    field = vertex_gradient(M, z)

    exact = np.array([0.0, 0.0, 1.0]) - z[:, None] * M.vertices
    assert np.max(np.abs(np.einsum("nd,nd->n", field.vectors, M.vertices))) < 1e-10
    assert np.max(np.linalg.norm(field.vectors - exact, axis=1)) < 5e-2


def test_torus_gradient_has_no_normal_component():
    T = build_torus_mesh(8, 8)

    field = vertex_gradient(T, T.vertices[:, 1] ** 2)

    assert np.all(field.vectors[:, 2] == 0.0)
    assert field.frames.shape == (64, 2, 3)


def test_field_shape_checked():
    with pytest.raises(ArgumentError):
        vertex_gradient(build_torus_mesh(4, 4), np.zeros(15))
