from __future__ import annotations

from typing import Any

import numpy as np

from ..domain.errors import ArgumentError, InputError
from ..domain.models import CompetitorDefect, DensityField, FgiReport, Manifold, PotentialPair, TransportPlan
from ..domain.specs import CostSpec, EllSpec, ScalarSpec
from .gradients import LATTICE_AXES, lattice_difference, require_torus, vertex_gradient
from .manifolds import DEFAULT_MAX_DENSE_VERTICES, cost_matrix, distance_matrix
from .transport import sinkhorn, solve_exact

SOLVERS = ("exact", "sinkhorn")
CUT_LOCUS_TOLERANCE = 1e-9
LATTICE_TOLERANCE = 1e-9


def ell_prime_vec(l: EllSpec, v: Any) -> np.ndarray:
    """ell'(|v|) v / |v|, and 0 at v = 0 whatever ell'(0) is. Works row-wise on stacks of vectors."""
    v = np.asarray(v, dtype=float)
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)
    scale = np.where(norms > 0, l.derivative(norms) / safe, 0.0)
    return scale * v


def _check_pair(M: Manifold, mu: DensityField, nu: DensityField) -> None:
    if mu.manifold is not M or nu.manifold is not M:
        raise ArgumentError("Densities must live on the manifold being tested.")


def five_gradients_sides(
    M: Manifold,
    mu: DensityField,
    nu: DensityField,
    c: CostSpec,
    l: EllSpec,
    plan: TransportPlan,
    potentials: PotentialPair,
) -> tuple[float, float, float]:
    """Both sides for a given plan and potentials, plus the plan mass dropped on the cut locus."""
    grad_phi = vertex_gradient(M, potentials.phi).vectors
    grad_psi = vertex_gradient(M, potentials.psi).vectors
    grad_mu = vertex_gradient(M, mu.values).vectors
    grad_nu = vertex_gradient(M, nu.values).vectors
    pairing = np.einsum("nd,nd->n", ell_prime_vec(l, grad_phi), grad_mu) + np.einsum(
        "nd,nd->n", ell_prime_vec(l, grad_psi), grad_nu
    )
    lhs = float(np.dot(M.vertex_weights, pairing))

    d = distance_matrix(M)[plan.rows, plan.cols]
    keep = np.ones(d.size, dtype=bool)
    if M.kind == "sphere":
        keep = d < np.pi * M.radius - CUT_LOCUS_TOLERANCE
    excluded_mass = float(plan.masses[~keep].sum())
    integrand = l.derivative(c.dh(d[keep])) * d[keep]
    rhs = float(M.curvature.K * np.dot(plan.masses[keep], integrand))
    return lhs, rhs, excluded_mass


def check_five_gradients(
    M: Manifold,
    mu: DensityField,
    nu: DensityField,
    c: CostSpec,
    l: EllSpec,
    solver: str = "exact",
    eps: float = 1e-3,
    max_vertices: int = DEFAULT_MAX_DENSE_VERTICES,
) -> FgiReport:
    """
    lhs = sum_i w_i [<ell'(grad phi), grad mu> + <ell'(grad psi), grad nu>]
    rhs = K sum_ij gamma_ij ell'(h'(d_ij)) d_ij
    """
    if solver not in SOLVERS:
        raise ArgumentError(f"Unknown solver {solver!r}; expected one of {SOLVERS}.")
    if c.is_linear:
        raise ArgumentError("The five-gradients check needs a strictly convex cost; linear is a W1 utility.")
    _check_pair(M, mu, nu)
    if not (mu.is_strictly_positive and nu.is_strictly_positive):
        raise InputError("The five-gradients check needs strictly positive densities.")

    C = cost_matrix(M, c, max_vertices)
    if solver == "exact":
        plan, potentials = solve_exact(mu, nu, C)
    else:
        dense, potentials = sinkhorn(mu, nu, C, eps)
        plan = TransportPlan.from_dense(dense)
    lhs, rhs, excluded = five_gradients_sides(M, mu, nu, c, l, plan, potentials)
    return FgiReport(
        lhs=lhs,
        rhs=rhs,
        n_vertices=M.n_vertices,
        cost_family=c.family,
        ell_family=l.family,
        K=M.curvature.K,
        solver=solver,
        excluded_mass=excluded,
    )


def _torus_potentials(
    T: Manifold, mu: DensityField, nu: DensityField, c: CostSpec, potentials: PotentialPair | None
) -> PotentialPair:
    if potentials is not None:
        return potentials
    _, potentials = solve_exact(mu, nu, cost_matrix(T, c))
    return potentials


def directional_fgi(
    T: Manifold,
    axis: int,
    f: ScalarSpec,
    mu: DensityField,
    nu: DensityField,
    c: CostSpec,
    potentials: PotentialPair | None = None,
) -> float:
    """-sum_i w_i [f'(X phi) X mu + f'(X psi) X nu] along a lattice direction; <= 0 in the continuum."""
    require_torus(T)
    _check_pair(T, mu, nu)
    potentials = _torus_potentials(T, mu, nu, c, potentials)
    x_phi = lattice_difference(T, potentials.phi, axis)
    x_psi = lattice_difference(T, potentials.psi, axis)
    x_mu = lattice_difference(T, mu.values, axis)
    x_nu = lattice_difference(T, nu.values, axis)
    pairing = f.derivative(x_phi) * x_mu + f.derivative(x_psi) * x_nu
    return float(-np.dot(T.vertex_weights, pairing))


def anisotropic_five_gradients(
    T: Manifold,
    p: float,
    mu: DensityField,
    nu: DensityField,
    c: CostSpec,
    potentials: PotentialPair | None = None,
) -> float:
    """Same quantity for G(x) = sum_k |x_k|^p / p, evaluated with the full gradient at once."""
    if not p > 1.0:
        raise ArgumentError(f"G needs p > 1, got {p}.")
    require_torus(T)
    _check_pair(T, mu, nu)
    potentials = _torus_potentials(T, mu, nu, c, potentials)

    def grad_g(x: np.ndarray) -> np.ndarray:
        return np.sign(x) * np.power(np.abs(x), p - 1.0)

    grad_phi = vertex_gradient(T, potentials.phi).vectors
    grad_psi = vertex_gradient(T, potentials.psi).vectors
    grad_mu = vertex_gradient(T, mu.values).vectors
    grad_nu = vertex_gradient(T, nu.values).vectors
    pairing = np.einsum("nd,nd->n", grad_g(grad_phi), grad_mu) + np.einsum("nd,nd->n", grad_g(grad_psi), grad_nu)
    return float(-np.dot(T.vertex_weights, pairing))


def lattice_steps(T: Manifold, shift: Any) -> tuple[int, int]:
    """Grid offsets of a physical translation; it must be a multiple of the spacing."""
    require_torus(T)
    shift = np.asarray(shift, dtype=float)
    if shift.shape != (2,):
        raise ArgumentError(f"A torus translation has two components, got shape {shift.shape}.")
    steps = []
    for value, h in zip(shift, (T.grid.hx, T.grid.hy)):
        k = round(float(value) / h)
        if abs(float(value) - k * h) > LATTICE_TOLERANCE * max(1.0, abs(float(value))):
            raise ArgumentError(f"Translation {shift.tolist()} is not a lattice vector (spacing {h}).")
        steps.append(int(k))
    return steps[0], steps[1]


def translate(T: Manifold, values: Any, steps: tuple[int, int]) -> np.ndarray:
    """g(x) = values(x + v) for a lattice vector v given in grid steps."""
    grid = T.grid
    arr = np.asarray(values, dtype=float).reshape(grid.ny, grid.nx)
    return np.roll(np.roll(arr, -steps[0], axis=1), -steps[1], axis=0).ravel()


def _translated_energy(T: Manifold, potentials: PotentialPair, mu: DensityField, nu: DensityField, steps) -> float:
    phi = translate(T, potentials.phi, steps)
    psi = translate(T, potentials.psi, steps)
    return float(np.dot(phi, mu.masses) + np.dot(psi, nu.masses))


def competitor_defect(
    T: Manifold,
    potentials: PotentialPair,
    plan: TransportPlan,
    C: np.ndarray,
    shift: Any,
    f: ScalarSpec,
    mu: DensityField,
    nu: DensityField,
    samples: int = 256,
    seed: int = 0,
) -> CompetitorDefect:
    """
    Translation competitors of optimal potentials:
    second_diff = E(v) + E(-v) - 2 E(0) with E(v) = sum phi(. + v) mu + sum psi(. + v) nu,
    feasibility of (phi + t f'((phi_v - phi)/t), psi + t f'((psi_v - psi)/t)) on supp gamma,
    and f'(a) + f'(b) <= 0 whenever a + b <= 0.
    """
    require_torus(T)
    steps = lattice_steps(T, shift)
    minus = (-steps[0], -steps[1])
    second_diff = (
        _translated_energy(T, potentials, mu, nu, steps)
        + _translated_energy(T, potentials, mu, nu, minus)
        - 2.0 * _translated_energy(T, potentials, mu, nu, (0, 0))
    )

    support = plan.masses > 1e-12
    rows, cols = plan.rows[support], plan.cols[support]
    t = float(np.hypot(steps[0] * T.grid.hx, steps[1] * T.grid.hy))
    rng = np.random.Generator(np.random.PCG64(seed))
    if t == 0.0:
        feasibility = 0.0
        pair_a = pair_b = np.zeros(0)
    else:
        a_all = (translate(T, potentials.phi, steps) - potentials.phi) / t
        b_all = (translate(T, potentials.psi, steps) - potentials.psi) / t
        phi_tilde = potentials.phi + t * f.derivative(a_all)
        psi_tilde = potentials.psi + t * f.derivative(b_all)
        excess = phi_tilde[rows] + psi_tilde[cols] - C[rows, cols]
        feasibility = float(max(0.0, excess.max())) if excess.size else 0.0
        pair_a, pair_b = a_all[rows], b_all[cols]
        admissible = pair_a + pair_b <= 0.0
        pair_a, pair_b = pair_a[admissible], pair_b[admissible]

    radius = max(1.0, float(np.abs(pair_a).max()) if pair_a.size else 1.0)
    a = rng.uniform(-radius, radius, size=samples)
    b = -a - np.abs(rng.uniform(-radius, radius, size=samples))
    a = np.concatenate([a, pair_a])
    b = np.concatenate([b, pair_b])
    mono = float(max(0.0, np.max(f.derivative(a) + f.derivative(b)))) if a.size else 0.0
    return CompetitorDefect(
        second_diff=float(second_diff), feasibility_residual=feasibility, mono_residual=mono, shift=steps
    )


def difference_quotient_l1(
    T: Manifold, values: Any, derivative: Any, axis: int, t_ladder: Any
) -> list[float]:
    """||(f o Phi_t - f)/t - Xf||_L1 for each lattice step t."""
    require_torus(T)
    if axis not in LATTICE_AXES:
        raise ArgumentError(f"Lattice direction must be 0 or 1, got {axis!r}.")
    values = np.asarray(values, dtype=float)
    derivative = np.asarray(derivative, dtype=float)
    h = T.grid.hx if axis == 0 else T.grid.hy
    errors = []
    for t in t_ladder:
        t = float(t)
        k = round(t / h)
        if k == 0 or abs(t - k * h) > LATTICE_TOLERANCE * max(1.0, abs(t)):
            raise ArgumentError(f"Step {t} is not a nonzero multiple of the grid spacing {h}.")
        steps = (k, 0) if axis == 0 else (0, k)
        quotient = (translate(T, values, steps) - values) / t
        errors.append(float(np.dot(T.vertex_weights, np.abs(quotient - derivative))))
    return errors
