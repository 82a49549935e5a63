from __future__ import annotations

from typing import Callable, Mapping

import numpy as np
from scipy.special import expit

from ..domain.errors import ConfigurationError
from ..domain.models import DensityField, Manifold
from ..domain.scenario import DensityConfig
from .connections import connection_for, rotate
from .manifolds import distance_matrix, nearest_vertex

Transform = Callable[[np.ndarray], np.ndarray]


def _identity(point: np.ndarray) -> np.ndarray:
    return point


def _default_center(M: Manifold) -> np.ndarray:
    if M.kind == "flat-torus":
        return np.array([M.grid.Lx / 2.0, M.grid.Ly / 2.0, 0.0])
    if M.kind == "sphere":
        return np.array([0.0, 0.0, M.radius])
    return M.vertices[0].copy()


def _as_point(M: Manifold, values: tuple[float, ...] | None, pointer: str) -> np.ndarray:
    if values is None:
        return _default_center(M)
    point = np.asarray(values, dtype=float)
    if M.kind == "flat-torus":
        if point.shape != (2,):
            raise ConfigurationError("A torus point has two coordinates.", [(pointer, "expected [x, y]")])
        return np.array([point[0], point[1], 0.0])
    if point.shape != (3,) or not np.linalg.norm(point) > 0:
        raise ConfigurationError("A surface point needs three coordinates.", [(pointer, "expected nonzero [x, y, z]")])
    if M.kind == "sphere":
        return point * (M.radius / np.linalg.norm(point))
    return point


def _distances_to(M: Manifold, point: np.ndarray) -> np.ndarray:
    connection = connection_for(M)
    if M.kind == "sphere":
        unit = point / np.linalg.norm(point)
        cross = np.linalg.norm(np.cross(M.vertices / M.radius, unit), axis=1)
        return M.radius * np.arctan2(cross, M.vertices @ unit / M.radius)
    if M.kind == "flat-torus":
        return np.array([np.linalg.norm(connection.log(point, x)) for x in M.vertices])
    return distance_matrix(M)[nearest_vertex(M, point)]


def _shift(M: Manifold, cfg: DensityConfig) -> Transform:
    pointer = f"/densities/{cfg.name}/v"
    if cfg.v is None:
        raise ConfigurationError("translate-of needs a translation v.", [(pointer, "missing")])
    v = np.asarray(cfg.v, dtype=float)
    if M.kind == "flat-torus":
        if v.shape != (2,):
            raise ConfigurationError("A torus translation has two components.", [(pointer, "expected [vx, vy]")])
        offset = np.array([v[0], v[1], 0.0])
        return lambda point: point + offset
    if M.kind == "sphere":
        if v.shape != (3,):
            raise ConfigurationError("A sphere rotation vector has three components.", [(pointer, "expected [x, y, z]")])
        angle = float(np.linalg.norm(v))
        if angle == 0.0:
            return _identity
        axis = v / angle
        return lambda point: rotate(point, axis, angle)
    raise ConfigurationError("Translations need a sphere or a torus.", [(pointer, "no group action on a generic mesh")])


def evaluate_density(
    M: Manifold,
    configs: Mapping[str, DensityConfig],
    name: str,
    transform: Transform = _identity,
    _stack: tuple[str, ...] = (),
) -> np.ndarray:
    """Unnormalized values of a named generator, with its anchor moved by transform."""
    if name in _stack:
        cycle = " -> ".join(_stack + (name,))
        raise ConfigurationError(f"Density definitions form a cycle: {cycle}.", [(f"/densities/{name}/base", "cycle")])
    cfg = configs.get(name)
    if cfg is None:
        pointer = f"/densities/{_stack[-1]}/base" if _stack else f"/densities/{name}"
        raise ConfigurationError(f"Unknown density {name!r}.", [(pointer, f"no density named {name!r}")])

    if cfg.type == "uniform":
        return np.ones(M.n_vertices)

    if cfg.type == "gaussian-bump":
        center = transform(_as_point(M, cfg.center, f"/densities/{name}/center"))
        d = _distances_to(M, center)
        return cfg.floor + np.exp(-0.5 * (d / cfg.width) ** 2)

    if cfg.type == "cap":
        if M.kind != "sphere":
            raise ConfigurationError("cap densities live on the sphere.", [(f"/densities/{name}/type", "sphere only")])
        if cfg.axis is None or cfg.angle is None:
            raise ConfigurationError(
                "cap densities need an axis and an angle.",
                [(f"/densities/{name}/{key}", "missing") for key in ("axis", "angle") if getattr(cfg, key) is None],
            )
        axis = transform(_as_point(M, cfg.axis, f"/densities/{name}/axis"))
        theta = _distances_to(M, axis) / M.radius
        return cfg.floor + expit((cfg.angle - theta) / cfg.width)

    if cfg.type == "translate-of":
        if cfg.base is None:
            raise ConfigurationError("translate-of needs a base.", [(f"/densities/{name}/base", "missing")])
        own = _shift(M, cfg)
        return evaluate_density(M, configs, cfg.base, lambda point: transform(own(point)), _stack + (name,))

    raise ConfigurationError(f"Unknown density type {cfg.type!r}.", [(f"/densities/{name}/type", "unknown type")])


def build_densities(M: Manifold, configs: Mapping[str, DensityConfig]) -> dict[str, DensityField]:
    return {name: DensityField.normalized(M, evaluate_density(M, configs, name)) for name in sorted(configs)}
