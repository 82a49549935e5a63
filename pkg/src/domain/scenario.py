from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any

from .specs import CostSpec, EllSpec, PenaltySpec, ScalarSpec

EXPERIMENT_TYPES = (
    "fgi",
    "directional",
    "competitor",
    "heatflow",
    "bv-projection",
    "bv-regularized",
    "geometry-lab",
)
MANIFOLD_KINDS = ("sphere", "torus", "mesh")
DENSITY_TYPES = ("uniform", "gaussian-bump", "cap", "translate-of")


@dataclass(frozen=True)
class ManifoldConfig:
    kind: str
    subdivisions: int = 2
    radius: float = 1.0
    nx: int = 16
    ny: int = 16
    Lx: float = 1.0
    Ly: float = 1.0
    path: str | None = None


@dataclass(frozen=True)
class DensityConfig:
    """
    Named density generator. center is a torus point (x, y) or a sphere point;
    v is a torus translation or a sphere rotation vector (axis * angle).
    """

    name: str
    type: str
    center: tuple[float, ...] | None = None
    width: float = 0.1
    floor: float = 0.0
    axis: tuple[float, ...] | None = None
    angle: float | None = None
    base: str | None = None
    v: tuple[float, ...] | None = None


@dataclass(frozen=True)
class CapConfig:
    value: float | None = None
    density: str | None = None
    scale: float = 1.0


@dataclass(frozen=True)
class ExperimentConfig:
    type: str
    solver: str = "exact"
    eps: float = 1e-3
    ladder: tuple[int, ...] = ()
    t_final: float = 0.1
    dt: float = 0.02
    axis: int | None = None
    f: ScalarSpec = field(default_factory=ScalarSpec)
    p: float | None = None
    shift: tuple[float, float] | None = None
    quotient_steps: tuple[int, ...] = (4, 2, 1)
    cap: CapConfig | None = None
    eta: PenaltySpec = field(default_factory=PenaltySpec)
    iterations: int = 200
    tol: float = 1e-8
    trials: int = 10000
    sigma: float | None = None
    instances: int = 20
    samples: int = 256
    steps: int = 64
    s: float = 1e-2


@dataclass(frozen=True)
class Tolerances:
    slack: float = 5e-3
    contraction: float = 0.05
    nonexpansive: float = 5e-3
    identity: float = 1e-10
    duality: float = 1e-9
    feasibility: float = 1e-8
    variation: float = 5e-3
    refinement: float = 1.5
    refinement_floor: float = 1e-8


@dataclass(frozen=True)
class ScenarioConfig:
    manifold: ManifoldConfig
    densities: dict[str, DensityConfig]
    experiment: ExperimentConfig
    mu: str | None = None
    nu: str | None = None
    cost: CostSpec = field(default_factory=CostSpec)
    ell: EllSpec = field(default_factory=EllSpec)
    tolerances: Tolerances = field(default_factory=Tolerances)
    seed: int = 0
    output_dir: str | None = None
    source: dict[str, Any] = field(default_factory=dict, repr=False, compare=False)

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return replace(self, seed=int(seed))
