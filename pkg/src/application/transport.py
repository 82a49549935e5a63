from __future__ import annotations

from typing import Any

import numpy as np
import ot
from scipy.special import logsumexp

from ..domain.errors import ArgumentError, ConvergenceError, InputError, RangeError, SolverError
from ..domain.models import DensityField, Manifold, PotentialPair, TransportMap, TransportPlan
from ..domain.specs import CostSpec
from .connections import connection_for
from .gradients import vertex_gradient
from .manifolds import diameter, nearest_vertex

BALANCE_TOLERANCE = 1e-10
FEASIBILITY_TOLERANCE = 1e-9
SUPPORT_THRESHOLD = 1e-12
EMD_OPTIMAL = 1
EMD_MAX_ITER_REACHED = 3
PIVOTS_PER_CELL = 100
MAX_PIVOTS_CAP = 2**31 - 1
SINKHORN_CHECK_EVERY = 10


def _masses(mu: DensityField, nu: DensityField, C: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a, b = mu.masses, nu.masses
    if C.shape != (a.size, b.size):
        raise ArgumentError(f"Cost matrix has shape {C.shape}, expected ({a.size}, {b.size}).")
    if mu.manifold.n_vertices != nu.manifold.n_vertices:
        raise ArgumentError("Source and target densities live on different manifolds.")
    return a, b


def solve_exact(mu: DensityField, nu: DensityField, C: np.ndarray) -> tuple[TransportPlan, PotentialPair]:
    """Exact optimal plan and anchored Kantorovich potentials (network simplex)."""
    a, b = _masses(mu, nu, np.asarray(C))
    return solve_masses(a, b, np.asarray(C, dtype=float))


def solve_masses(a: np.ndarray, b: np.ndarray, C: np.ndarray) -> tuple[TransportPlan, PotentialPair]:
    """
    Network simplex (POT's ``emd``) on the active rows and columns of (a, b).
    Potentials of inactive vertices are filled in by c-transforms.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(a < 0) or np.any(b < 0):
        raise InputError("Masses must be nonnegative.")
    imbalance = float(a.sum() - b.sum())
    if abs(imbalance) > BALANCE_TOLERANCE:
        raise InputError(f"Unbalanced masses: source - target = {imbalance!r}.")

    rows = np.flatnonzero(a > 0)
    cols = np.flatnonzero(b > 0)
    if rows.size == 0 or cols.size == 0:
        raise InputError("Both marginals need positive mass.")
    sub = np.ascontiguousarray(C[np.ix_(rows, cols)])
    supply = a[rows].copy()
    demand = b[cols].copy()
    demand[-1] += supply.sum() - demand.sum()

    dense, u, v = _network_simplex(supply, demand, sub)

    i, j = np.nonzero(dense > 0)
    plan = TransportPlan(
        rows[i].astype(np.int64), cols[j].astype(np.int64), dense[i, j].astype(float), (a.size, b.size)
    )

    # anchor psi at the first target with mass
    u = u + v[0]
    v = v - v[0]
    phi = np.full(a.size, np.nan)
    psi = np.full(b.size, np.nan)
    phi[rows] = u
    psi[cols] = v
    inactive_rows = np.setdiff1d(np.arange(a.size), rows)
    inactive_cols = np.setdiff1d(np.arange(b.size), cols)
    if inactive_cols.size:
        psi[inactive_cols] = c_transform(phi[rows], C[np.ix_(rows, inactive_cols)])
    if inactive_rows.size:
        phi[inactive_rows] = c_transform(psi, C[inactive_rows].T)
    if inactive_cols.size:
        psi[inactive_cols] = c_transform(phi, C[:, inactive_cols])
    return plan, PotentialPair(phi, psi, int(cols[0]))


def _network_simplex(
    supply: np.ndarray, demand: np.ndarray, C: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Dense optimal basic plan and the basis duals u_i + v_j = C_ij on its support."""
    n, m = supply.size, demand.size
    max_pivots = int(min(MAX_PIVOTS_CAP, PIVOTS_PER_CELL * n * m + 100000))
    dense, log = ot.emd(supply, demand, C, numItermax=max_pivots, log=True, center_dual=False)
    code = int(log["result_code"])
    if code == EMD_MAX_ITER_REACHED:
        raise SolverError(f"Network simplex exceeded {max_pivots} pivots without reaching optimality.")
    if code != EMD_OPTIMAL:
        raise SolverError(f"Network simplex failed: {log.get('warning') or 'result code ' + str(code)}.")
    return np.asarray(dense, dtype=float), np.asarray(log["u"], dtype=float), np.asarray(log["v"], dtype=float)


def c_transform(chi: Any, C: np.ndarray) -> np.ndarray:
    """(chi^c)_j = min_i (C_ij - chi_i)."""
    chi = np.asarray(chi, dtype=float)
    return np.min(C - chi[:, None], axis=0)


def dual_value(potentials: PotentialPair, a: np.ndarray, b: np.ndarray) -> float:
    return float(np.dot(potentials.phi, a) + np.dot(potentials.psi, b))


def duality_gap(
    plan: TransportPlan, potentials: PotentialPair, C: np.ndarray, mu: DensityField, nu: DensityField
) -> float:
    return masses_duality_gap(plan, potentials, C, mu.masses, nu.masses)


def masses_duality_gap(
    plan: TransportPlan, potentials: PotentialPair, C: np.ndarray, a: np.ndarray, b: np.ndarray
) -> float:
    violation = potentials.phi[:, None] + potentials.psi[None, :] - C
    worst = int(np.argmax(violation))
    i, j = divmod(worst, C.shape[1])
    if violation[i, j] > FEASIBILITY_TOLERANCE:
        raise ArgumentError(
            f"Potentials are infeasible at pair ({i}, {j}): phi + psi - C = {violation[i, j]!r}."
        )
    return plan.cost(C) - dual_value(potentials, a, b)


def support_slackness(plan: TransportPlan, potentials: PotentialPair, C: np.ndarray) -> float:
    support = plan.masses > SUPPORT_THRESHOLD
    if not np.any(support):
        return 0.0
    rows, cols = plan.rows[support], plan.cols[support]
    residual = C[rows, cols] - potentials.phi[rows] - potentials.psi[cols]
    return float(np.max(np.abs(residual)))


def _round_to_marginals(plan: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Two-sided marginal correction onto the transport polytope."""
    row = plan.sum(axis=1)
    x = np.minimum(1.0, np.divide(a, row, out=np.ones_like(a), where=row > 0))
    plan = plan * x[:, None]
    col = plan.sum(axis=0)
    y = np.minimum(1.0, np.divide(b, col, out=np.ones_like(b), where=col > 0))
    plan = plan * y[None, :]
    err_a = a - plan.sum(axis=1)
    err_b = b - plan.sum(axis=0)
    total = err_a.sum()
    if total > 0:
        plan = plan + np.outer(err_a, err_b) / total
    return plan


def sinkhorn(
    mu: DensityField,
    nu: DensityField,
    C: np.ndarray,
    eps_final: float,
    schedule: int | None = None,
    max_iter: int = 50000,
    tol: float = 1e-10,
    log: bool = False,
) -> tuple[np.ndarray, PotentialPair] | tuple[np.ndarray, PotentialPair, dict[str, Any]]:
    """
    Log-domain Sinkhorn with epsilon halving down to eps_final.

    ``schedule=S`` runs the S + 1 levels eps_final * 2**(S - k); ``None``
    starts from the first level at or above max(C) / 4. Only the final level
    has to meet ``tol`` on the row-marginal error. The returned plan is
    rounded onto the marginals and the potentials are shifted to be feasible
    and anchored at the first target with mass.
    """
    if not eps_final > 0:
        raise ArgumentError(f"eps_final must be positive, got {eps_final}.")
    C = np.asarray(C, dtype=float)
    a_full, b_full = _masses(mu, nu, C)
    rows = np.flatnonzero(a_full > 0)
    cols = np.flatnonzero(b_full > 0)
    a, b = a_full[rows], b_full[cols]
    sub = C[np.ix_(rows, cols)]

    if schedule is None:
        top = float(sub.max()) / 4.0
        schedule = max(0, int(np.ceil(np.log2(top / eps_final)))) if top > eps_final else 0
    levels = [eps_final * 2.0 ** (schedule - k) for k in range(schedule + 1)]

    log_a, log_b = np.log(a), np.log(b)
    f = np.zeros(a.size)
    g = np.zeros(b.size)
    history: list[dict[str, Any]] = []
    for level, eps in enumerate(levels):
        err = np.inf
        iterations = 0
        for iterations in range(1, max_iter + 1):
            f = eps * log_a - eps * logsumexp((g[None, :] - sub) / eps, axis=1)
            g = eps * log_b - eps * logsumexp((f[:, None] - sub) / eps, axis=0)
            if iterations % SINKHORN_CHECK_EVERY == 0 or iterations == max_iter:
                row = np.exp(logsumexp((f[:, None] + g[None, :] - sub) / eps, axis=1))
                err = float(np.abs(row - a).sum())
                if err < tol:
                    break
        history.append({"eps": eps, "iterations": iterations, "error": err})
        if level == len(levels) - 1 and not err < tol:
            raise ConvergenceError(
                f"Sinkhorn did not converge at eps={eps!r} after {max_iter} iterations (error {err!r}).",
                diagnostics={"levels": history},
            )

    dense_sub = np.exp((f[:, None] + g[None, :] - sub) / levels[-1])
    dense_sub = _round_to_marginals(dense_sub, a, b)
    plan = np.zeros(C.shape)
    plan[np.ix_(rows, cols)] = dense_sub

    violation = float(np.max(f[:, None] + g[None, :] - sub))
    if violation > 0:
        f = f - violation
    phi = np.full(C.shape[0], np.nan)
    psi = np.full(C.shape[1], np.nan)
    phi[rows] = f
    psi[cols] = g
    inactive_rows = np.setdiff1d(np.arange(C.shape[0]), rows)
    inactive_cols = np.setdiff1d(np.arange(C.shape[1]), cols)
    if inactive_cols.size:
        psi[inactive_cols] = c_transform(f, C[np.ix_(rows, inactive_cols)])
    if inactive_rows.size:
        phi[inactive_rows] = c_transform(psi, C[inactive_rows].T)
    anchor = int(cols[0])
    shift = psi[anchor]
    potentials = PotentialPair(phi + shift, psi - shift, anchor)
    if log:
        return plan, potentials, {"levels": history, "err": history[-1]["error"]}
    return plan, potentials


def recover_map(potentials: PotentialPair, M: Manifold, c: CostSpec, mu: DensityField) -> TransportMap:
    """T(x) = exp_x(lambda^-1(|grad phi|) * (-grad phi / |grad phi|)) on the support of mu."""
    if c.is_linear:
        raise ArgumentError("Map recovery needs an invertible lambda = h'; the linear cost has none.")
    connection = connection_for(M)
    gradient = vertex_gradient(M, potentials.phi).vectors
    limit = diameter(M)
    sources = np.flatnonzero(mu.values > 0)
    targets = np.empty((sources.size, 3))
    target_vertices = np.empty(sources.size, dtype=np.int64)
    displacements = np.empty((sources.size, 3))
    for k, i in enumerate(sources):
        g = gradient[i]
        norm = float(np.linalg.norm(g))
        x = M.vertices[i]
        if norm <= 1e-10:
            targets[k] = x
            target_vertices[k] = i
            displacements[k] = 0.0
            continue
        distance = float(c.lambda_inverse(norm))
        if distance > limit + 1e-12:
            raise RangeError(
                f"|grad phi| = {norm!r} at vertex {i} needs a step of {distance!r} beyond the diameter {limit!r}."
            )
        step = -(g / norm) * distance
        targets[k] = connection.exp(x, step)
        target_vertices[k] = nearest_vertex(M, targets[k])
        displacements[k] = step
    return TransportMap(sources, targets, target_vertices, displacements)


def pushforward_masses(transport_map: TransportMap, mu: DensityField) -> np.ndarray:
    masses = np.zeros(mu.manifold.n_vertices)
    np.add.at(masses, transport_map.target_vertices, mu.masses[transport_map.source_indices])
    return masses


def barycentric_displacement(M: Manifold, plan: TransportPlan, mu: DensityField) -> np.ndarray:
    """sum_j gamma_ij log_{x_i}(x_j) / (mu_i w_i) per source vertex."""
    connection = connection_for(M)
    out = np.zeros((M.n_vertices, 3))
    for i, j, mass in zip(plan.rows, plan.cols, plan.masses):
        out[i] += mass * connection.log(M.vertices[i], M.vertices[j])
    masses = mu.masses
    positive = masses > 0
    out[positive] /= masses[positive][:, None]
    return out
