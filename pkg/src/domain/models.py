from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Any

import numpy as np

from .errors import ArgumentError, InputError

MANIFOLD_KINDS = ("sphere", "flat-torus", "generic-mesh")
DENSITY_MASS_TOLERANCE = 1e-12


@dataclass(frozen=True)
class Curvature:
    K: float
    Ktilde: float

    def to_dict(self) -> dict[str, Any]:
        return {"K": self.K, "Ktilde": self.Ktilde}


@dataclass(frozen=True)
class TorusGrid:
    nx: int
    ny: int
    Lx: float
    Ly: float

    @property
    def hx(self) -> float:
        return self.Lx / self.nx

    @property
    def hy(self) -> float:
        return self.Ly / self.ny

    def index(self, i: int, j: int) -> int:
        return (j % self.ny) * self.nx + (i % self.nx)

    def to_dict(self) -> dict[str, Any]:
        return {"nx": self.nx, "ny": self.ny, "Lx": self.Lx, "Ly": self.Ly}


@dataclass(frozen=True, eq=False)
class Manifold:
    """
    Closed triangulated surface with lumped vertex weights.
    Torus vertices sit on the fundamental domain; vertex v = j * nx + i.
    Arrays must not be mutated after construction.
    """

    kind: str
    vertices: np.ndarray
    triangles: np.ndarray
    vertex_weights: np.ndarray
    adjacency: tuple[tuple[int, ...], ...]
    curvature: Curvature
    radius: float | None = None
    grid: TorusGrid | None = None
    cache: dict[str, Any] = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_vertices(self) -> int:
        return int(self.vertices.shape[0])

    @property
    def total_weight(self) -> float:
        return float(self.vertex_weights.sum())

    @cached_property
    def analytic_area(self) -> float | None:
        if self.kind == "sphere" and self.radius is not None:
            return 4.0 * np.pi * self.radius**2
        if self.kind == "flat-torus" and self.grid is not None:
            return self.grid.Lx * self.grid.Ly
        return None

    @cached_property
    def mesh_area(self) -> float:
        """Sum of flat triangle areas (the torus grid is flat already)."""
        if self.kind == "flat-torus" and self.grid is not None:
            return self.grid.Lx * self.grid.Ly
        tri = self.vertices[self.triangles]
        cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        return float(0.5 * np.linalg.norm(cross, axis=1).sum())

    def check_vertex(self, index: Any) -> int:
        if isinstance(index, (bool, np.bool_)) or not isinstance(index, (int, np.integer)):
            raise ArgumentError(f"Vertex index must be an integer, got {index!r}.")
        if not 0 <= int(index) < self.n_vertices:
            raise ArgumentError(f"Vertex index {index} outside [0, {self.n_vertices}).")
        return int(index)

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "n_vertices": self.n_vertices,
            "n_triangles": int(self.triangles.shape[0]),
            "radius": self.radius,
            "grid": self.grid.to_dict() if self.grid else None,
            "curvature": self.curvature.to_dict(),
            "total_weight": self.total_weight,
        }


@dataclass(frozen=True, eq=False)
class DensityField:
    """Per-vertex density with respect to the vertex weights."""

    manifold: Manifold
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.manifold.n_vertices,):
            raise InputError(
                f"Density has shape {values.shape}, expected ({self.manifold.n_vertices},)."
            )
        if not np.all(np.isfinite(values)):
            raise InputError("Density values must be finite.")
        if np.any(values < 0):
            raise InputError("Density values must be nonnegative.")
        total = float(np.dot(values, self.manifold.vertex_weights))
        if abs(total - 1.0) > DENSITY_MASS_TOLERANCE:
            raise InputError(f"Density mass is {total!r}; expected 1 within {DENSITY_MASS_TOLERANCE}.")
        object.__setattr__(self, "values", values)

    @classmethod
    def normalized(cls, manifold: Manifold, values: Any) -> "DensityField":
        values = np.asarray(values, dtype=float)
        total = float(np.dot(values, manifold.vertex_weights))
        if not total > 0:
            raise InputError("Cannot normalize a density with zero mass.")
        return cls(manifold, values / total)

    @classmethod
    def from_masses(cls, manifold: Manifold, masses: Any) -> "DensityField":
        masses = np.asarray(masses, dtype=float)
        return cls.normalized(manifold, masses / manifold.vertex_weights)

    @property
    def masses(self) -> np.ndarray:
        return self.values * self.manifold.vertex_weights

    @property
    def is_strictly_positive(self) -> bool:
        return bool(np.all(self.values > 0))


@dataclass(frozen=True, eq=False)
class TransportPlan:
    """Sparse nonnegative coupling stored as (row, col, mass) triplets sorted by (row, col)."""

    rows: np.ndarray
    cols: np.ndarray
    masses: np.ndarray
    shape: tuple[int, int]

    @classmethod
    def from_dense(cls, dense: np.ndarray, threshold: float = 0.0) -> "TransportPlan":
        dense = np.asarray(dense, dtype=float)
        rows, cols = np.nonzero(dense > threshold)
        return cls(rows.astype(np.int64), cols.astype(np.int64), dense[rows, cols], dense.shape)

    @property
    def row_marginal(self) -> np.ndarray:
        return np.bincount(self.rows, weights=self.masses, minlength=self.shape[0])

    @property
    def col_marginal(self) -> np.ndarray:
        return np.bincount(self.cols, weights=self.masses, minlength=self.shape[1])

    @property
    def support_size(self) -> int:
        return int(np.count_nonzero(self.masses > 1e-12))

    def to_dense(self) -> np.ndarray:
        dense = np.zeros(self.shape, dtype=float)
        np.add.at(dense, (self.rows, self.cols), self.masses)
        return dense

    def integrate(self, matrix: np.ndarray) -> float:
        return float(np.sum(self.masses * matrix[self.rows, self.cols]))

    def cost(self, C: np.ndarray) -> float:
        return self.integrate(C)


@dataclass(frozen=True, eq=False)
class PotentialPair:
    """Kantorovich potentials, normalized so that psi[anchor] == 0."""

    phi: np.ndarray
    psi: np.ndarray
    anchor: int

    def shifted(self, a: float) -> "PotentialPair":
        return PotentialPair(self.phi + a, self.psi - a, self.anchor)


@dataclass(frozen=True, eq=False)
class TransportMap:
    source_indices: np.ndarray
    targets: np.ndarray
    target_vertices: np.ndarray
    displacements: np.ndarray


@dataclass(frozen=True, eq=False)
class GeodesicPath:
    """
    Unit-speed minimizing geodesic sampled on a uniform parameter grid.
    Torus samples are unwrapped (they may leave the fundamental domain).
    """

    manifold: Manifold
    samples: np.ndarray
    times: np.ndarray
    tangents: np.ndarray
    length: float

    @property
    def n_samples(self) -> int:
        return int(self.samples.shape[0])

    @property
    def start(self) -> np.ndarray:
        return self.samples[0]

    @property
    def end(self) -> np.ndarray:
        return self.samples[-1]

    @property
    def segment_lengths(self) -> np.ndarray:
        return np.diff(self.times)


@dataclass(frozen=True, eq=False)
class VariationField:
    """Ambient tangent vectors xi(t_k), one per path sample."""

    path: GeodesicPath
    vectors: np.ndarray

    def __post_init__(self) -> None:
        vectors = np.asarray(self.vectors, dtype=float)
        if vectors.shape != self.path.samples.shape:
            raise ArgumentError(
                f"Variation field has shape {vectors.shape}, expected {self.path.samples.shape}."
            )
        object.__setattr__(self, "vectors", vectors)


@dataclass(frozen=True, eq=False)
class FrameField:
    path: GeodesicPath
    frames: np.ndarray
    defect: float
    max_gap: float
    derivative_norms: np.ndarray
    transported_start: np.ndarray
    transported_end: np.ndarray

    def to_dict(self) -> dict[str, Any]:
        return {
            "defect": self.defect,
            "max_gap": self.max_gap,
            "max_derivative_norm": float(self.derivative_norms.max()),
            "length": self.path.length,
            "n_samples": self.path.n_samples,
        }


@dataclass(frozen=True, eq=False)
class TangentField:
    """Ambient per-vertex tangent vectors with the orthonormal frames they are expressed in."""

    manifold: Manifold
    vectors: np.ndarray
    frames: np.ndarray

    def coefficients(self) -> np.ndarray:
        return np.einsum("nkd,nd->nk", self.frames, self.vectors)

    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.vectors, axis=1)


@dataclass(frozen=True)
class LengthVariation:
    first_fd: float
    second_fd: float

    def to_dict(self) -> dict[str, Any]:
        return {"first_fd": self.first_fd, "second_fd": self.second_fd}


@dataclass(frozen=True)
class CurvatureCheckRecord:
    check: str
    trials: int
    max_ratio: float
    bound: float
    passed: bool
    seed: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "check": self.check,
            "trials": self.trials,
            "max_ratio": self.max_ratio,
            "bound": self.bound,
            "pass": self.passed,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class FgiReport:
    lhs: float
    rhs: float
    n_vertices: int
    cost_family: str
    ell_family: str
    K: float
    solver: str = "exact"
    excluded_mass: float = 0.0

    @property
    def slack(self) -> float:
        return self.lhs - self.rhs

    def to_dict(self) -> dict[str, Any]:
        return {
            "lhs": self.lhs,
            "rhs": self.rhs,
            "slack": self.slack,
            "N": self.n_vertices,
            "cost_family": self.cost_family,
            "ell_family": self.ell_family,
            "K": self.K,
            "solver": self.solver,
            "excluded_mass": self.excluded_mass,
        }


@dataclass(frozen=True)
class CompetitorDefect:
    second_diff: float
    feasibility_residual: float
    mono_residual: float
    shift: tuple[int, int]

    def to_dict(self) -> dict[str, Any]:
        return {
            "second_diff": self.second_diff,
            "feasibility_residual": self.feasibility_residual,
            "mono_residual": self.mono_residual,
            "shift": list(self.shift),
        }


@dataclass(frozen=True)
class ContractionPoint:
    t: float
    w2: float
    bound: float


@dataclass(frozen=True)
class BvReport:
    mode: str
    bv_mu_bar: float
    bv_nu: float
    bv_f: float | None
    K: float
    transport_term: float
    w1_bound: float | None = None
    cost_bound: float | None = None

    @property
    def lhs(self) -> float:
        return self.bv_mu_bar + self.transport_term

    @property
    def rhs(self) -> float:
        if self.mode == "projection":
            return self.bv_nu + 2.0 * (self.bv_f or 0.0)
        return self.bv_nu

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    def to_dict(self) -> dict[str, Any]:
        return {
            "mode": self.mode,
            "bv_mu_bar": self.bv_mu_bar,
            "bv_nu": self.bv_nu,
            "bv_f": self.bv_f,
            "K": self.K,
            "transport_term": self.transport_term,
            "w1_bound": self.w1_bound,
            "cost_bound": self.cost_bound,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "slack": self.slack,
        }


@dataclass(frozen=True, eq=False)
class ProjectionResult:
    mu_bar: DensityField
    plan: TransportPlan
    potentials: PotentialPair
    cost: float
    duality_gap: float


@dataclass(frozen=True, eq=False)
class RegularizedResult:
    mu_bar: DensityField
    energies: list[float]
    iterations: int
    converged: bool


@dataclass(frozen=True)
class VariationCase:
    case: int
    length: float
    first: float
    first_fd: float
    upper: float
    exact: float
    second_fd: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "case": self.case,
            "length": self.length,
            "first": self.first,
            "first_fd": self.first_fd,
            "upper": self.upper,
            "exact": self.exact,
            "second_fd": self.second_fd,
        }


@dataclass(frozen=True)
class RunOutcome:
    run_id: str
    passed: bool
    artifacts: tuple[str, ...]
    summary: dict[str, Any]
