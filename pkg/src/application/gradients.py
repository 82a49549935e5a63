from __future__ import annotations

from typing import Any

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix

from ..domain.errors import ArgumentError, MeshQualityError
from ..domain.models import Manifold, TangentField
from .connections import connection_for

LATTICE_AXES = (0, 1)


def _field(M: Manifold, values: Any) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.shape != (M.n_vertices,):
        raise ArgumentError(f"Field has shape {values.shape}, expected ({M.n_vertices},).")
    return values


def require_torus(M: Manifold) -> None:
    if M.kind != "flat-torus" or M.grid is None:
        raise ArgumentError(f"Lattice operations need a flat torus, got a {M.kind} manifold.")


def lattice_difference(T: Manifold, values: Any, axis: int) -> np.ndarray:
    """Periodic central difference along lattice direction 0 (x) or 1 (y)."""
    require_torus(T)
    if axis not in LATTICE_AXES:
        raise ArgumentError(f"Lattice direction must be 0 or 1, got {axis!r}.")
    grid = T.grid
    grid_values = _field(T, values).reshape(grid.ny, grid.nx)
    roll_axis = 1 if axis == 0 else 0
    step = grid.hx if axis == 0 else grid.hy
    diff = (np.roll(grid_values, -1, axis=roll_axis) - np.roll(grid_values, 1, axis=roll_axis)) / (2.0 * step)
    return diff.ravel()


def vertex_frames(M: Manifold) -> np.ndarray:
    cached = M.cache.get("vertex_frames")
    if cached is not None:
        return cached
    connection = connection_for(M)
    frames = np.stack([connection.tangent_basis(x) for x in M.vertices])
    frames.setflags(write=False)
    M.cache["vertex_frames"] = frames
    return frames


def gradient_operator(M: Manifold) -> csr_matrix:
    """
    Sparse (3N, N) operator of the 1-ring least-squares gradient. Neighbours are
    placed in tangent coordinates through the log map; rings with at least four
    neighbours also fit an isotropic |d|^2 term.
    """
    cached = M.cache.get("gradient_operator")
    if cached is not None:
        return cached
    connection = connection_for(M)
    frames = vertex_frames(M)
    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    data: list[np.ndarray] = []
    for i, ring in enumerate(M.adjacency):
        x = M.vertices[i]
        basis = frames[i]
        ring_idx = np.asarray(ring, dtype=np.int64)
        offsets = np.array([basis @ connection.log(x, M.vertices[j]) for j in ring_idx])
        if np.linalg.matrix_rank(offsets) < 2:
            raise MeshQualityError(f"The 1-ring of vertex {i} has rank < 2.")
        design = offsets
        if ring_idx.size >= 4:
            quadratic = np.column_stack([offsets, np.einsum("kd,kd->k", offsets, offsets)])
            if np.linalg.matrix_rank(quadratic) == 3:
                design = quadratic
        coefficients = np.linalg.pinv(design)[:2]
        weights = basis.T @ coefficients
        for d in range(3):
            rows.append(np.full(ring_idx.size + 1, 3 * i + d))
            cols.append(np.concatenate([ring_idx, [i]]))
            data.append(np.concatenate([weights[d], [-weights[d].sum()]]))
    operator = coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(3 * M.n_vertices, M.n_vertices),
    ).tocsr()
    M.cache["gradient_operator"] = operator
    return operator


def vertex_gradient(M: Manifold, values: Any) -> TangentField:
    """
    Per-vertex gradient: periodic central differences on the torus grid,
    1-ring least squares on every other surface.
    """
    values = _field(M, values)
    if M.kind == "flat-torus":
        vectors = np.column_stack(
            [lattice_difference(M, values, 0), lattice_difference(M, values, 1), np.zeros(M.n_vertices)]
        )
    else:
        vectors = (gradient_operator(M) @ values).reshape(M.n_vertices, 3)
    return TangentField(M, vectors, vertex_frames(M))
