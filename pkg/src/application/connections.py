from __future__ import annotations

import abc
from typing import Any

import numpy as np
from scipy.spatial import cKDTree

from ..domain.errors import ArgumentError, DegenerateGeodesicError
from ..domain.models import Manifold, TorusGrid

TANGENCY_TOLERANCE = 1e-9


def _as_vector(v: Any) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.shape == (2,):
        arr = np.array([arr[0], arr[1], 0.0])
    if arr.shape != (3,):
        raise ArgumentError(f"Expected a 3-vector, got shape {arr.shape}.")
    return arr


def rotate(v: np.ndarray, axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation of v about the unit axis."""
    c, s = np.cos(angle), np.sin(angle)
    return v * c + np.cross(axis, v) * s + axis * np.dot(axis, v) * (1.0 - c)


class Connection(metaclass=abc.ABCMeta):
    """
    Levi-Civita data of a discretized surface: exp, log, parallel transport.
    Points and tangent vectors are ambient 3-vectors.
    """

    @abc.abstractmethod
    def normal(self, x: np.ndarray) -> np.ndarray:
        """Unit normal at x."""

    @abc.abstractmethod
    def exp(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Exponential map at x applied to the tangent vector v."""

    @abc.abstractmethod
    def log(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Tangent vector at x whose exponential is y."""

    @abc.abstractmethod
    def transport(self, x: np.ndarray, y: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Moves v from T_x to T_y along the minimizing geodesic."""

    def distance(self, x: np.ndarray, y: np.ndarray) -> float:
        return float(np.linalg.norm(self.log(x, y)))

    def project(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        n = self.normal(x)
        return v - np.dot(v, n) * n

    def tangent_residual(self, x: np.ndarray, v: np.ndarray) -> float:
        return float(abs(np.dot(v, self.normal(x))))

    def require_tangent(self, x: np.ndarray, v: np.ndarray, tol: float = TANGENCY_TOLERANCE) -> np.ndarray:
        v = _as_vector(v)
        scale = max(1.0, float(np.linalg.norm(v)))
        if self.tangent_residual(x, v) > tol * scale:
            raise ArgumentError(f"Vector {v.tolist()} is not tangent at {np.asarray(x).tolist()}.")
        return v

    def tangent_basis(self, x: np.ndarray) -> np.ndarray:
        """Deterministic orthonormal frame (2 x 3) of T_x."""
        n = self.normal(x)
        k = int(np.argmin(np.abs(n)))
        e = np.zeros(3)
        e[k] = 1.0
        e = e - np.dot(e, n) * n
        e /= np.linalg.norm(e)
        return np.vstack([e, np.cross(n, e)])

    def geodesic_point(self, x: np.ndarray, y: np.ndarray, t: float) -> np.ndarray:
        return self.exp(x, t * self.log(x, y))


class SphereConnection(Connection):
    def __init__(self, radius: float):
        self.radius = float(radius)

    def __str__(self) -> str:
        return f"sphere(r={self.radius})"

    def normal(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) / np.linalg.norm(x)

    def angle(self, x: np.ndarray, y: np.ndarray) -> float:
        return float(np.arctan2(np.linalg.norm(np.cross(x, y)), np.dot(x, y)))

    def distance(self, x: np.ndarray, y: np.ndarray) -> float:
        return self.radius * self.angle(x, y)

    def tie_break(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Canonical great circle through an antipodal pair: e1 (else e2) orthogonalized against x."""
        a = self.normal(x)
        for k in range(3):
            e = np.zeros(3)
            e[k] = 1.0
            e = e - np.dot(e, a) * a
            norm = np.linalg.norm(e)
            if norm > 1e-8:
                u = e / norm
                return u, np.cross(a, u)
        raise ArgumentError("Cannot build a tie-break direction.")  # pragma: no cover

    def direction(self, x: np.ndarray, y: np.ndarray, tie_break: bool = False) -> tuple[np.ndarray, float]:
        """Unit initial velocity and length of the minimizing great circle from x to y."""
        d = self.distance(x, y)
        if d >= np.pi * self.radius - 1e-9:
            u, plane_normal = self.tie_break(x)
            if not tie_break:
                raise DegenerateGeodesicError(
                    "Antipodal points: the minimizing geodesic is not unique.",
                    direction=u,
                    plane_normal=plane_normal,
                )
            return u, np.pi * self.radius
        a = self.normal(x)
        w = y - np.dot(y, a) * a
        norm = np.linalg.norm(w)
        if norm == 0.0 or d == 0.0:
            return np.zeros(3), 0.0
        return w / norm, d

    def exp(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        speed = np.linalg.norm(v)
        if speed == 0.0:
            return x.copy()
        theta = speed / self.radius
        out = np.cos(theta) * x + self.radius * np.sin(theta) * (v / speed)
        return out * (self.radius / np.linalg.norm(out))

    def log(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        u, d = self.direction(x, y)
        return d * u

    def transport(self, x: np.ndarray, y: np.ndarray, v: np.ndarray) -> np.ndarray:
        u, d = self.direction(x, y)
        return self.transport_along(x, u, d, v)

    def transport_along(self, x: np.ndarray, u: np.ndarray, length: float, v: np.ndarray) -> np.ndarray:
        if length == 0.0:
            return np.asarray(v, dtype=float).copy()
        axis = np.cross(self.normal(x), u)
        return rotate(np.asarray(v, dtype=float), axis, length / self.radius)

    def great_circle(self, x: np.ndarray, u: np.ndarray, times: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        a = self.normal(x)
        p = a * self.radius
        theta = times / self.radius
        cos_t = np.cos(theta)[:, None]
        sin_t = np.sin(theta)[:, None]
        samples = cos_t * p + self.radius * sin_t * u
        tangents = -sin_t * a + cos_t * u
        return samples, tangents


class FlatTorusConnection(Connection):
    """Flat connection of the periodic rectangle; points are kept unwrapped."""

    _NORMAL = np.array([0.0, 0.0, 1.0])

    def __init__(self, grid: TorusGrid):
        self.grid = grid

    def __str__(self) -> str:
        return f"flat-torus(Lx={self.grid.Lx}, Ly={self.grid.Ly})"

    def normal(self, x: np.ndarray) -> np.ndarray:
        return self._NORMAL

    def exp(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) + self.project(x, np.asarray(v, dtype=float))

    def log(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        d = np.asarray(y, dtype=float) - np.asarray(x, dtype=float)
        dx = d[0] - self.grid.Lx * np.round(d[0] / self.grid.Lx)
        dy = d[1] - self.grid.Ly * np.round(d[1] / self.grid.Ly)
        return np.array([dx, dy, 0.0])

    def transport(self, x: np.ndarray, y: np.ndarray, v: np.ndarray) -> np.ndarray:
        return self.project(y, np.asarray(v, dtype=float))

    def tangent_basis(self, x: np.ndarray) -> np.ndarray:
        return np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])


class MeshConnection(Connection):
    """
    First-order connection of a generic closed mesh: tangent planes from
    area-weighted vertex normals, exp as an ambient step snapped back to the
    nearest tangent plane, transport by projection with norm preserved.
    """

    def __init__(self, manifold: Manifold):
        self.manifold = manifold
        self.vertex_normals = vertex_normals(manifold)
        self._tree = cKDTree(manifold.vertices)

    def __str__(self) -> str:
        return f"generic-mesh(N={self.manifold.n_vertices})"

    def nearest_vertex(self, x: np.ndarray) -> int:
        _, index = self._tree.query(np.asarray(x, dtype=float))
        return int(index)

    def normal(self, x: np.ndarray) -> np.ndarray:
        return self.vertex_normals[self.nearest_vertex(x)]

    def exp(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        y = np.asarray(x, dtype=float) + self.project(x, np.asarray(v, dtype=float))
        k = self.nearest_vertex(y)
        n = self.vertex_normals[k]
        return y - np.dot(y - self.manifold.vertices[k], n) * n

    def log(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        chord = np.asarray(y, dtype=float) - np.asarray(x, dtype=float)
        w = self.project(x, chord)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return np.zeros(3)
        return w * (np.linalg.norm(chord) / norm)

    def transport(self, x: np.ndarray, y: np.ndarray, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        w = self.project(y, v)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return w
        return w * (np.linalg.norm(v) / norm)


def vertex_normals(manifold: Manifold) -> np.ndarray:
    tri = manifold.vertices[manifold.triangles]
    face_normals = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    normals = np.zeros_like(manifold.vertices)
    for corner in range(3):
        np.add.at(normals, manifold.triangles[:, corner], face_normals)
    normals /= np.linalg.norm(normals, axis=1)[:, None]
    centroid = manifold.vertices.mean(axis=0)
    if np.sum(np.einsum("nd,nd->n", normals, manifold.vertices - centroid)) < 0:
        normals = -normals
    return normals


def connection_for(manifold: Manifold) -> Connection:
    cached = manifold.cache.get("connection")
    if cached is not None:
        return cached
    if manifold.kind == "sphere":
        connection: Connection = SphereConnection(manifold.radius or 1.0)
    elif manifold.kind == "flat-torus":
        if manifold.grid is None:
            raise ArgumentError("Flat torus manifold is missing its grid.")
        connection = FlatTorusConnection(manifold.grid)
    else:
        connection = MeshConnection(manifold)
    manifold.cache["connection"] = connection
    return connection


def schild_ladder(connection: Connection, points: np.ndarray, v: np.ndarray) -> np.ndarray:
    """
    Transports v from points[0] to points[-1] along the sampled curve with
    one Schild rung per segment. Rungs are scaled to the segment length.
    """
    points = np.asarray(points, dtype=float)
    current = connection.project(points[0], _as_vector(v))
    norm = float(np.linalg.norm(current))
    if norm == 0.0:
        return np.zeros(3)
    for x, y in zip(points[:-1], points[1:]):
        step = max(connection.distance(x, y), 1e-12)
        scale = step / max(float(np.linalg.norm(current)), 1e-300)
        tip = connection.exp(x, scale * current)
        midpoint = connection.exp(y, 0.5 * connection.log(y, tip))
        far = connection.exp(x, 2.0 * connection.log(x, midpoint))
        current = connection.project(y, connection.log(y, far) / scale)
    return current


def transport_around_loop(manifold: Manifold, points: Any, v: Any) -> np.ndarray:
    """Parallel transport of v around the closed geodesic polygon through points."""
    connection = connection_for(manifold)
    points = [np.asarray(p, dtype=float) for p in points]
    if len(points) < 3:
        raise ArgumentError("A geodesic polygon needs at least three corners.")
    current = connection.require_tangent(points[0], v)
    for x, y in zip(points, points[1:] + points[:1]):
        current = connection.transport(x, y, current)
    return current
