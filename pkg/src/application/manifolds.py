from __future__ import annotations

from typing import Any

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from ..domain.errors import ArgumentError, ConfigurationError, MeshQualityError
from ..domain.models import Curvature, GeodesicPath, Manifold, TorusGrid
from ..domain.specs import CostSpec
from .connections import FlatTorusConnection, SphereConnection, connection_for

MAX_SUBDIVISIONS = 7
MIN_TORUS_CELLS = 4
DEFAULT_MAX_DENSE_VERTICES = 5000
_ROW_CHUNK = 256


def build_sphere_mesh(subdivisions: int, radius: float = 1.0) -> Manifold:
    """
    Icosphere of the given radius. Vertex 0 is the north pole and vertex 11
    the south pole; subdivision only appends vertices.
    """
    if isinstance(subdivisions, bool) or not isinstance(subdivisions, (int, np.integer)):
        raise ConfigurationError("subdivisions must be an integer.", [("/manifold/subdivisions", "not an integer")])
    if not 0 <= subdivisions <= MAX_SUBDIVISIONS:
        raise ConfigurationError(
            f"subdivisions must be in [0, {MAX_SUBDIVISIONS}], got {subdivisions}.",
            [("/manifold/subdivisions", "out of range")],
        )
    if not radius > 0:
        raise ConfigurationError(f"radius must be positive, got {radius}.", [("/manifold/radius", "not positive")])

    vertices, faces = _icosahedron()
    for _ in range(int(subdivisions)):
        vertices, faces = _subdivide(vertices, faces)

    unit = np.asarray(vertices, dtype=float)
    unit /= np.linalg.norm(unit, axis=1)[:, None]
    triangles = np.asarray(faces, dtype=np.int64)
    weights = _spherical_lumped_weights(unit, triangles) * radius**2
    curvature = Curvature(K=1.0 / radius**2, Ktilde=1.0 / radius**2)
    return assemble_manifold("sphere", unit * radius, triangles, weights, curvature, radius=float(radius))


def build_torus_mesh(nx: int, ny: int, Lx: float = 1.0, Ly: float = 1.0) -> Manifold:
    violations = []
    for name, value in (("nx", nx), ("ny", ny)):
        if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < MIN_TORUS_CELLS:
            violations.append((f"/manifold/{name}", f"must be an integer >= {MIN_TORUS_CELLS}"))
    for name, value in (("Lx", Lx), ("Ly", Ly)):
        if not value > 0:
            violations.append((f"/manifold/{name}", "must be positive"))
    if violations:
        raise ConfigurationError("Invalid torus parameters.", violations)

    grid = TorusGrid(int(nx), int(ny), float(Lx), float(Ly))
    ii, jj = np.meshgrid(np.arange(grid.nx), np.arange(grid.ny))
    ii, jj = ii.ravel(), jj.ravel()
    vertices = np.column_stack([ii * grid.hx, jj * grid.hy, np.zeros(ii.size)])

    v00 = jj * grid.nx + ii
    v10 = jj * grid.nx + (ii + 1) % grid.nx
    v01 = ((jj + 1) % grid.ny) * grid.nx + ii
    v11 = ((jj + 1) % grid.ny) * grid.nx + (ii + 1) % grid.nx
    triangles = np.empty((2 * v00.size, 3), dtype=np.int64)
    triangles[0::2] = np.column_stack([v00, v10, v11])
    triangles[1::2] = np.column_stack([v00, v11, v01])

    weights = np.full(grid.nx * grid.ny, grid.hx * grid.hy)
    return assemble_manifold("flat-torus", vertices, triangles, weights, Curvature(0.0, 0.0), grid=grid)


def build_generic_mesh(
    vertices: Any,
    triangles: Any,
    weights: Any | None = None,
    curvature: Curvature | None = None,
) -> Manifold:
    vertices = np.asarray(vertices, dtype=float)
    triangles = np.asarray(triangles, dtype=np.int64)
    if vertices.ndim != 2 or vertices.shape[1] != 3:
        raise MeshQualityError("Vertices must be an (N, 3) array.")
    if triangles.ndim != 2 or triangles.shape[1] != 3:
        raise MeshQualityError("Triangles must be an (F, 3) array.")
    if triangles.size and (triangles.min() < 0 or triangles.max() >= len(vertices)):
        raise MeshQualityError("Triangle references a missing vertex.")
    if weights is None:
        tri = vertices[triangles]
        areas = 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)
        weights = np.bincount(triangles.ravel(), weights=np.repeat(areas / 3.0, 3), minlength=len(vertices))
    weights = np.asarray(weights, dtype=float)
    return assemble_manifold("generic-mesh", vertices, triangles, weights, curvature or Curvature(0.0, 0.0))


def assemble_manifold(
    kind: str,
    vertices: np.ndarray,
    triangles: np.ndarray,
    weights: np.ndarray,
    curvature: Curvature,
    radius: float | None = None,
    grid: TorusGrid | None = None,
) -> Manifold:
    adjacency = _closed_adjacency(triangles, len(vertices))
    if np.any(weights <= 0):
        raise MeshQualityError("Every vertex needs a positive weight.")
    return Manifold(
        kind=kind,
        vertices=vertices,
        triangles=triangles,
        vertex_weights=weights,
        adjacency=adjacency,
        curvature=curvature,
        radius=radius,
        grid=grid,
    )


def _closed_adjacency(triangles: np.ndarray, n_vertices: int) -> tuple[tuple[int, ...], ...]:
    edges = np.sort(np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]]), axis=1)
    unique, counts = np.unique(edges, axis=0, return_counts=True)
    if np.any(counts != 2):
        bad = unique[counts != 2][0]
        raise MeshQualityError(
            f"Edge ({bad[0]}, {bad[1]}) belongs to {counts[counts != 2][0]} triangles; the surface must be closed."
        )
    neighbours: list[set[int]] = [set() for _ in range(n_vertices)]
    for a, b in unique:
        neighbours[a].add(int(b))
        neighbours[b].add(int(a))
    if any(not ring for ring in neighbours):
        raise MeshQualityError("Mesh has isolated vertices.")
    return tuple(tuple(sorted(ring)) for ring in neighbours)


def _icosahedron() -> tuple[list[np.ndarray], list[tuple[int, int, int]]]:
    z = 1.0 / np.sqrt(5.0)
    rho = 2.0 / np.sqrt(5.0)
    vertices = [np.array([0.0, 0.0, 1.0])]
    for k in range(5):
        angle = 2.0 * np.pi * k / 5.0
        vertices.append(np.array([rho * np.cos(angle), rho * np.sin(angle), z]))
    for k in range(5):
        angle = 2.0 * np.pi * k / 5.0 + np.pi / 5.0
        vertices.append(np.array([rho * np.cos(angle), rho * np.sin(angle), -z]))
    vertices.append(np.array([0.0, 0.0, -1.0]))

    faces: list[tuple[int, int, int]] = []
    for k in range(5):
        upper, upper_next = 1 + k, 1 + (k + 1) % 5
        lower, lower_next = 6 + k, 6 + (k + 1) % 5
        faces.append((0, upper, upper_next))
        faces.append((upper, lower, upper_next))
        faces.append((upper_next, lower, lower_next))
        faces.append((11, lower_next, lower))
    return vertices, faces


def _subdivide(
    vertices: list[np.ndarray], faces: list[tuple[int, int, int]]
) -> tuple[list[np.ndarray], list[tuple[int, int, int]]]:
    vertices = list(vertices)
    midpoints: dict[tuple[int, int], int] = {}

    def midpoint(a: int, b: int) -> int:
        key = (a, b) if a < b else (b, a)
        index = midpoints.get(key)
        if index is None:
            m = vertices[a] + vertices[b]
            vertices.append(m / np.linalg.norm(m))
            index = len(vertices) - 1
            midpoints[key] = index
        return index

    refined: list[tuple[int, int, int]] = []
    for a, b, c in faces:
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        refined.extend([(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)])
    return vertices, refined


def _spherical_lumped_weights(unit: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    a, b, c = unit[triangles[:, 0]], unit[triangles[:, 1]], unit[triangles[:, 2]]
    triple = np.abs(np.einsum("nd,nd->n", a, np.cross(b, c)))
    denom = 1.0 + np.einsum("nd,nd->n", a, b) + np.einsum("nd,nd->n", b, c) + np.einsum("nd,nd->n", c, a)
    excess = 2.0 * np.arctan2(triple, denom)
    return np.bincount(triangles.ravel(), weights=np.repeat(excess / 3.0, 3), minlength=len(unit))


def geodesic_distance(M: Manifold, i: int, j: int) -> float:
    i, j = M.check_vertex(i), M.check_vertex(j)
    if i == j:
        return 0.0
    if M.kind == "sphere":
        return connection_for(M).distance(M.vertices[i], M.vertices[j])
    if M.kind == "flat-torus":
        grid = M.grid
        di = abs(i % grid.nx - j % grid.nx)
        dj = abs(i // grid.nx - j // grid.nx)
        return float(np.hypot(min(di, grid.nx - di) * grid.hx, min(dj, grid.ny - dj) * grid.hy))
    return float(distance_matrix(M)[i, j])


def distance_matrix(M: Manifold, max_vertices: int = DEFAULT_MAX_DENSE_VERTICES) -> np.ndarray:
    """All-pairs geodesic distances; cached on the manifold."""
    cached = M.cache.get("distance_matrix")
    if cached is not None:
        return cached
    if M.n_vertices > max_vertices:
        raise ConfigurationError(
            f"Refusing a dense {M.n_vertices}x{M.n_vertices} cost matrix (limit {max_vertices} vertices)."
        )
    if M.kind == "sphere":
        D = _sphere_distances(M)
    elif M.kind == "flat-torus":
        D = _torus_distances(M.grid)
    else:
        D = dijkstra(edge_graph(M), directed=False)
        D = np.minimum(D, D.T)
    np.fill_diagonal(D, 0.0)
    D.setflags(write=False)
    M.cache["distance_matrix"] = D
    return D


def _sphere_distances(M: Manifold) -> np.ndarray:
    unit = M.vertices / M.radius
    D = np.empty((M.n_vertices, M.n_vertices))
    for start in range(0, M.n_vertices, _ROW_CHUNK):
        block = unit[start : start + _ROW_CHUNK]
        cross = np.linalg.norm(np.cross(block[:, None, :], unit[None, :, :]), axis=2)
        D[start : start + _ROW_CHUNK] = M.radius * np.arctan2(cross, block @ unit.T)
    return D


def _torus_distances(grid: TorusGrid) -> np.ndarray:
    idx = np.arange(grid.nx * grid.ny)
    ii, jj = idx % grid.nx, idx // grid.nx
    di = np.abs(ii[:, None] - ii[None, :])
    dj = np.abs(jj[:, None] - jj[None, :])
    di = np.minimum(di, grid.nx - di)
    dj = np.minimum(dj, grid.ny - dj)
    return np.hypot(di * grid.hx, dj * grid.hy)


def edge_graph(M: Manifold) -> csr_matrix:
    cached = M.cache.get("edge_graph")
    if cached is not None:
        return cached
    rows, cols = [], []
    for a, ring in enumerate(M.adjacency):
        for b in ring:
            if a < b:
                rows.append(a)
                cols.append(b)
    rows_arr, cols_arr = np.asarray(rows), np.asarray(cols)
    lengths = np.linalg.norm(M.vertices[rows_arr] - M.vertices[cols_arr], axis=1)
    graph = csr_matrix((lengths, (rows_arr, cols_arr)), shape=(M.n_vertices, M.n_vertices))
    M.cache["edge_graph"] = graph
    return graph


def diameter(M: Manifold) -> float:
    if M.kind == "sphere":
        return float(np.pi * M.radius)
    if M.kind == "flat-torus":
        return float(np.hypot(M.grid.Lx / 2.0, M.grid.Ly / 2.0))
    return float(distance_matrix(M).max())


def cost_matrix(M: Manifold, c: CostSpec, max_vertices: int = DEFAULT_MAX_DENSE_VERTICES) -> np.ndarray:
    return c.h(distance_matrix(M, max_vertices))


def geodesic_path(M: Manifold, i: int, j: int, steps: int, tie_break: bool = False) -> GeodesicPath:
    i, j = M.check_vertex(i), M.check_vertex(j)
    if i == j:
        raise ArgumentError("A geodesic path needs two distinct vertices.")
    if M.kind == "generic-mesh":
        return _graph_path(M, i, j, _check_steps(steps))
    return geodesic_between(M, M.vertices[i], M.vertices[j], steps, tie_break=tie_break)


def geodesic_between(M: Manifold, p: Any, q: Any, steps: int, tie_break: bool = False) -> GeodesicPath:
    """Minimizing geodesic between arbitrary points of an analytic manifold."""
    steps = _check_steps(steps)
    connection = connection_for(M)
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if isinstance(connection, SphereConnection):
        u, length = connection.direction(p, q, tie_break=tie_break)
        if length == 0.0:
            raise ArgumentError("A geodesic path needs two distinct points.")
        times = length * np.arange(steps + 1) / steps
        samples, tangents = connection.great_circle(p, u, times)
        return GeodesicPath(M, samples, times, tangents, float(length))
    if isinstance(connection, FlatTorusConnection):
        delta = connection.log(p, q)
        length = float(np.linalg.norm(delta))
        if length == 0.0:
            raise ArgumentError("A geodesic path needs two distinct points.")
        fractions = np.arange(steps + 1) / steps
        samples = p[None, :] + fractions[:, None] * delta[None, :]
        tangents = np.repeat((delta / length)[None, :], steps + 1, axis=0)
        return GeodesicPath(M, samples, length * fractions, tangents, length)
    raise ArgumentError("Point-to-point geodesics are only available on analytic manifolds.")


def _check_steps(steps: Any) -> int:
    if isinstance(steps, bool) or not isinstance(steps, (int, np.integer)) or steps < 2:
        raise ArgumentError(f"steps must be an integer >= 2, got {steps!r}.")
    return int(steps)


def _graph_path(M: Manifold, i: int, j: int, steps: int) -> GeodesicPath:
    _, predecessors = dijkstra(edge_graph(M), directed=False, indices=i, return_predecessors=True)
    chain = [j]
    while chain[-1] != i:
        previous = int(predecessors[chain[-1]])
        if previous < 0:
            raise MeshQualityError(f"Vertices {i} and {j} are not connected.")
        chain.append(previous)
    polyline = M.vertices[chain[::-1]]
    segments = np.linalg.norm(np.diff(polyline, axis=0), axis=1)
    cumulative = np.concatenate([[0.0], np.cumsum(segments)])
    length = float(cumulative[-1])
    times = length * np.arange(steps + 1) / steps

    samples = np.empty((steps + 1, 3))
    tangents = np.empty((steps + 1, 3))
    for k, t in enumerate(times):
        seg = min(int(np.searchsorted(cumulative, t, side="right")) - 1, len(segments) - 1)
        frac = (t - cumulative[seg]) / segments[seg]
        samples[k] = polyline[seg] + frac * (polyline[seg + 1] - polyline[seg])
        tangents[k] = (polyline[seg + 1] - polyline[seg]) / segments[seg]
    samples[-1] = polyline[-1]
    return GeodesicPath(M, samples, times, tangents, length)


def nearest_vertex(M: Manifold, point: Any) -> int:
    """Closest vertex to a point of the surface (torus points are wrapped first)."""
    point = np.asarray(point, dtype=float)
    if M.kind == "flat-torus":
        grid = M.grid
        i = int(np.round(point[0] / grid.hx)) % grid.nx
        j = int(np.round(point[1] / grid.hy)) % grid.ny
        return grid.index(i, j)
    return int(np.argmin(np.linalg.norm(M.vertices - point, axis=1)))
