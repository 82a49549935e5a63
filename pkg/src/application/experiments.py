from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from functools import cached_property
from typing import Any

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix, diags
from scipy.sparse.linalg import splu

from ..domain.errors import ArgumentError, ConvergenceError, InfeasibilityError, NumericalError, SolverError
from ..domain.models import (
    BvReport,
    ContractionPoint,
    DensityField,
    Manifold,
    PotentialPair,
    ProjectionResult,
    RegularizedResult,
    TransportPlan,
)
from ..domain.specs import CostSpec, PenaltySpec
from ..infrastructure.run_logger import RunLogger
from .gradients import vertex_gradient
from .manifolds import DEFAULT_MAX_DENSE_VERTICES, cost_matrix, distance_matrix
from .transport import masses_duality_gap, solve_exact, solve_masses

CLAMP_THRESHOLD = 1e-12
UNIFORM_TOLERANCE = 1e-12
MASS_TOLERANCE = 1e-12
MAX_HALVINGS = 30
BV_MODES = ("contraction", "projection")


def _edge_vectors(M: Manifold, start: np.ndarray, end: np.ndarray) -> np.ndarray:
    d = M.vertices[end] - M.vertices[start]
    if M.kind == "flat-torus":
        d[:, 0] -= M.grid.Lx * np.round(d[:, 0] / M.grid.Lx)
        d[:, 1] -= M.grid.Ly * np.round(d[:, 1] / M.grid.Ly)
    return d


def cotangent_stiffness(M: Manifold) -> csr_matrix:
    """
    Symmetric positive semidefinite stiffness S with S_ij = -(cot a + cot b) / 2
    off the diagonal and zero row sums. Torus edges use the minimal image.
    """
    tri = M.triangles
    rows, cols, data = [], [], []
    for corner in range(3):
        k, i, j = tri[:, corner], tri[:, (corner + 1) % 3], tri[:, (corner + 2) % 3]
        a = _edge_vectors(M, k, i)
        b = _edge_vectors(M, k, j)
        cot = np.einsum("nd,nd->n", a, b) / np.linalg.norm(np.cross(a, b), axis=1)
        rows.extend([i, j])
        cols.extend([j, i])
        data.extend([-0.5 * cot, -0.5 * cot])
    off = coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(M.n_vertices, M.n_vertices),
    ).tocsr()
    return (off - diags(np.asarray(off.sum(axis=1)).ravel())).tocsr()


class HeatOperator:
    """Implicit Euler step (Mass + dt S) rho' = Mass rho with lumped mass = vertex weights."""

    def __init__(self, manifold: Manifold, dt: float):
        if not dt > 0:
            raise ArgumentError(f"dt must be positive, got {dt}.")
        self.manifold = manifold
        self.dt = float(dt)
        cached = manifold.cache.get("stiffness")
        if cached is None:
            cached = cotangent_stiffness(manifold)
            manifold.cache["stiffness"] = cached
        self.stiffness: csr_matrix = cached
        self.mass = manifold.vertex_weights

    @cached_property
    def factor(self) -> Any:
        system = (diags(self.mass) + self.dt * self.stiffness).tocsc()
        try:
            return splu(system)
        except RuntimeError as exc:
            raise NumericalError(f"Factorisation of the heat system failed: {exc}") from exc


def heat_step(H: HeatOperator, rho: DensityField, run_logger: RunLogger | None = None) -> DensityField:
    """
    One implicit step. Values below -CLAMP_THRESHOLD are clamped and logged as
    ``heat_clamp``; round-off negatives above it are zeroed silently.
    """
    if rho.manifold is not H.manifold:
        raise ArgumentError("Density and heat operator live on different manifolds.")
    values = H.factor.solve(H.mass * rho.values)
    if not np.all(np.isfinite(values)):
        raise NumericalError("Heat step produced non-finite values.")
    violating = values < -CLAMP_THRESHOLD
    if np.any(violating) and run_logger is not None:
        clamped = float(-np.dot(values[violating], H.mass[violating]))
        run_logger.log("heat_clamp", {"clamped_mass": clamped, "vertices": int(violating.sum())})
    values = np.where(values < 0, 0.0, values)
    return DensityField.normalized(H.manifold, values)


def _w2(C: np.ndarray, pair: tuple[DensityField, DensityField]) -> float:
    plan, _ = solve_exact(pair[0], pair[1], C)
    return float(np.sqrt(max(2.0 * plan.cost(C), 0.0)))


def contraction_experiment(
    M: Manifold,
    mu0: DensityField,
    nu0: DensityField,
    t_final: float,
    dt: float,
    c: CostSpec,
    workers: int = 1,
    run_logger: RunLogger | None = None,
    max_vertices: int = DEFAULT_MAX_DENSE_VERTICES,
) -> list[ContractionPoint]:
    """
    Heat-flows both densities (after one warm-up step) and records
    W2(t) = sqrt(2 * optimal cost) next to e^{-Kt} W2(0).
    """
    if c.family != "quadratic":
        raise ArgumentError("The contraction experiment uses the quadratic cost d^2 / 2.")
    if not t_final > 0:
        raise ArgumentError(f"t_final must be positive, got {t_final}.")
    H = HeatOperator(M, dt)
    mu = heat_step(H, mu0, run_logger)
    nu = heat_step(H, nu0, run_logger)
    steps = int(round(t_final / dt))
    snapshots = [(mu, nu)]
    for _ in range(steps):
        mu = heat_step(H, mu, run_logger)
        nu = heat_step(H, nu, run_logger)
        snapshots.append((mu, nu))

    C = cost_matrix(M, c, max_vertices)

    def measure(indexed: tuple[int, tuple[DensityField, DensityField]]) -> float:
        index, pair = indexed
        try:
            return _w2(C, pair)
        except SolverError as exc:
            raise SolverError(f"W2 solve failed at step {index}: {exc}") from exc

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        w2 = list(pool.map(measure, enumerate(snapshots)))

    K = M.curvature.K
    return [
        ContractionPoint(t=k * H.dt, w2=value, bound=float(np.exp(-K * k * H.dt) * w2[0]))
        for k, value in enumerate(w2)
    ]


def bv_norm(M: Manifold, rho: DensityField | np.ndarray) -> float:
    """sum_i w_i |grad rho|(i)."""
    values = rho.values if isinstance(rho, DensityField) else np.asarray(rho, dtype=float)
    return float(np.dot(M.vertex_weights, vertex_gradient(M, values).norms()))


def capacitated_transport(
    caps: Any, b: Any, C: np.ndarray
) -> tuple[TransportPlan, PotentialPair, float]:
    """
    min <C, gamma> over gamma >= 0 with column sums b and row sums <= caps,
    solved as a balanced problem with a zero-cost slack column.
    Returns the plan restricted to the real columns, the potentials of the
    balanced problem and its duality gap.
    """
    caps = np.asarray(caps, dtype=float)
    b = np.asarray(b, dtype=float)
    surplus = float(caps.sum() - b.sum())
    if surplus < -MASS_TOLERANCE:
        raise InfeasibilityError(
            f"Capped source mass {caps.sum()!r} cannot carry target mass {b.sum()!r}."
        )
    demand = np.append(b, max(surplus, 0.0))
    extended = np.hstack([C, np.zeros((C.shape[0], 1))])
    plan, potentials = solve_masses(caps, demand, extended)
    gap = masses_duality_gap(plan, potentials, extended, caps, demand)
    real = plan.cols < C.shape[1]
    restricted = TransportPlan(plan.rows[real], plan.cols[real], plan.masses[real], C.shape)
    return restricted, potentials, gap


def wasserstein_projection(
    nu: DensityField,
    f: Any,
    c: CostSpec,
    max_vertices: int = DEFAULT_MAX_DENSE_VERTICES,
) -> ProjectionResult:
    """argmin C_c(mu, nu) over probability densities mu <= f."""
    M = nu.manifold
    f = np.asarray(f, dtype=float)
    if f.shape != (M.n_vertices,) or np.any(f < 0):
        raise ArgumentError("The cap must be a nonnegative per-vertex array.")
    caps = f * M.vertex_weights
    if caps.sum() < 1.0 - MASS_TOLERANCE:
        raise InfeasibilityError(f"The cap carries mass {caps.sum()!r} < 1; no admissible density exists.")
    C = cost_matrix(M, c, max_vertices)
    plan, potentials, gap = capacitated_transport(caps, nu.masses, C)
    mu_bar = DensityField.from_masses(M, plan.row_marginal)
    pair = PotentialPair(potentials.phi, potentials.psi[: M.n_vertices], potentials.anchor)
    return ProjectionResult(mu_bar=mu_bar, plan=plan, potentials=pair, cost=plan.cost(C), duality_gap=gap)


def _energy(
    M: Manifold, masses: np.ndarray, nu: DensityField, eta: PenaltySpec, C: np.ndarray
) -> tuple[float, PotentialPair]:
    mu = DensityField.from_masses(M, masses)
    plan, potentials = solve_exact(mu, nu, C)
    internal = float(np.dot(M.vertex_weights, eta.eta(mu.values)))
    return plan.cost(C) + internal, potentials


def regularized_min(
    nu: DensityField,
    eta: PenaltySpec,
    c: CostSpec,
    iterations: int = 200,
    tol: float = 1e-8,
    step0: float = 1.0,
    initial: DensityField | None = None,
    run_logger: RunLogger | None = None,
    max_vertices: int = DEFAULT_MAX_DENSE_VERTICES,
) -> RegularizedResult:
    """
    Entropic mirror descent on vertex masses for C_c(mu, nu) + sum w eta(mu).
    The gradient is phi + eta'(mu) with phi the anchored optimal potential.
    Steps scale as 1/sqrt(k); a step that does not lower the energy is halved,
    and the working scale doubles after a step accepted at once. When every
    halving fails the current point is returned with ``converged=False``.

    A uniform target minimises both terms for any convex penalty (Jensen), so
    it is returned as is.
    """
    if iterations < 1:
        raise ArgumentError("iterations must be >= 1.")
    M = nu.manifold
    w = M.vertex_weights
    C = cost_matrix(M, c, max_vertices)
    if initial is None and float(np.ptp(nu.values)) <= UNIFORM_TOLERANCE * float(nu.values.max()):
        energy, _ = _energy(M, nu.masses, nu, eta, C)
        return RegularizedResult(nu, [energy], 0, True)
    if initial is None:
        start = nu.values if nu.is_strictly_positive else nu.values + 1e-3
        initial = DensityField.normalized(M, start)
    masses = initial.masses
    energy, potentials = _energy(M, masses, nu, eta, C)
    energies = [energy]
    scale: float | None = None

    for k in range(1, iterations + 1):
        g = potentials.phi + eta.derivative(masses / w)
        centered = g - float(np.dot(masses, g))
        spread = float(np.max(np.abs(centered)))
        if spread == 0.0:
            return RegularizedResult(DensityField.from_masses(M, masses), energies, k - 1, True)
        if scale is None:
            scale = step0 / spread

        accepted = None
        for attempt in range(MAX_HALVINGS + 1):
            step = scale / np.sqrt(k)
            trial = masses * np.exp(np.clip(-step * centered, -50.0, 50.0))
            trial /= trial.sum()
            trial_energy, trial_potentials = _energy(M, trial, nu, eta, C)
            if trial_energy < energy:
                accepted = (trial, trial_energy, trial_potentials, attempt)
                break
            scale /= 2.0
        if accepted is None:
            if run_logger is not None:
                run_logger.log("line_search_exhausted", {"iteration": k, "energy": energy, "halvings": MAX_HALVINGS})
            return RegularizedResult(DensityField.from_masses(M, masses), energies, k, False)

        trial, trial_energy, trial_potentials, attempt = accepted
        decrease = energy - trial_energy
        masses, energy, potentials = trial, trial_energy, trial_potentials
        energies.append(energy)
        if attempt == 0:
            scale *= 2.0
        if run_logger is not None:
            run_logger.log("level_completed", {"iteration": k, "energy": energy, "step": step})
        if decrease < tol * max(1.0, abs(energy)):
            return RegularizedResult(DensityField.from_masses(M, masses), energies, k, True)

    raise ConvergenceError(
        f"Regularized minimisation did not converge in {iterations} iterations.",
        diagnostics={"energies": energies},
    )


def bv_estimate_report(
    mu_bar: DensityField,
    nu: DensityField,
    plan: TransportPlan,
    M: Manifold,
    mode: str,
    f: Any | None = None,
    c: CostSpec | None = None,
) -> BvReport:
    """
    contraction: |grad mu_bar|_1 + K sum gamma d <= |grad nu|_1
    projection:  |grad mu_bar|_1 + K sum gamma d <= |grad nu|_1 + 2 |grad f|_1
    """
    if mode not in BV_MODES:
        raise ArgumentError(f"Unknown BV mode {mode!r}; expected one of {BV_MODES}.")
    if mode == "projection" and f is None:
        raise ArgumentError("The projection estimate needs the cap f.")
    D = distance_matrix(M)
    K = M.curvature.K
    transport = float(K * plan.integrate(D))

    w1_bound = cost_bound = None
    if K > 0:
        w1_plan, _ = solve_exact(mu_bar, nu, D)
        w1_bound = float(K * w1_plan.cost(D))
    elif K < 0 and c is not None:
        cost = plan.cost(c.h(D))
        cost_bound = float(K * c.h_inverse(max(cost, 0.0)))

    return BvReport(
        mode=mode,
        bv_mu_bar=bv_norm(M, mu_bar),
        bv_nu=bv_norm(M, nu),
        bv_f=bv_norm(M, f) if f is not None else None,
        K=K,
        transport_term=transport,
        w1_bound=w1_bound,
        cost_bound=cost_bound,
    )
