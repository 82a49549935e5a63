import numpy as np
import pytest

from src.application import experiments
from src.application.experiments import (
    HeatOperator,
    bv_estimate_report,
    bv_norm,
    capacitated_transport,
    contraction_experiment,
    cotangent_stiffness,
    heat_step,
    regularized_min,
    wasserstein_projection,
)
from src.application.manifolds import build_sphere_mesh, build_torus_mesh, cost_matrix
from src.application.transport import solve_exact
from src.domain.errors import ArgumentError, ConvergenceError, InfeasibilityError
from src.domain.models import DensityField
from src.domain.specs import CostSpec, PenaltySpec


def _bump(M, center, width=0.2, floor=0.05):
    d = np.linalg.norm(M.vertices - np.asarray(center), axis=1)
    return DensityField.normalized(M, floor + np.exp(-0.5 * (d / width) ** 2))


class StubRunLogger:
    def __init__(self):
        self.entries = []

    def log(self, event, payload):
        self.entries.append((event, payload))


class StubFactor:
    def __init__(self, values):
        self.values = np.asarray(values, dtype=float)

    def solve(self, rhs):
        return self.values.copy()


def _heat_with_solution(M, values):
    H = HeatOperator(M, 0.01)
    H.__dict__["factor"] = StubFactor(values)
    return H


def _tv(first, second):
    return 0.5 * float(np.abs(first.masses - second.masses).sum())


def test_stiffness_is_symmetric_with_zero_row_sums():
    for M in (build_sphere_mesh(1), build_torus_mesh(6, 6)):
        S = cotangent_stiffness(M).toarray()

        assert np.allclose(S, S.T)
        assert np.allclose(S.sum(axis=1), 0.0, atol=1e-12)
        assert np.all(np.linalg.eigvalsh(S) > -1e-10)


def test_heat_step_keeps_uniform_and_smooths_a_bump():
    T = build_torus_mesh(6, 6)
    H = HeatOperator(T, 0.01)
    uniform = DensityField.normalized(T, np.ones(T.n_vertices))
    bump = _bump(T, [0.5, 0.5, 0.0])

    assert np.allclose(heat_step(H, uniform).values, uniform.values)
    smoothed = heat_step(H, bump)
    assert float(np.dot(smoothed.values, T.vertex_weights)) == pytest.approx(1.0, abs=1e-12)
    assert smoothed.values.max() < bump.values.max()
    assert smoothed.values.min() > bump.values.min()


def test_heat_operator_validates_inputs():
    T = build_torus_mesh(4, 4)

    with pytest.raises(ArgumentError):
        HeatOperator(T, 0.0)
    other = build_torus_mesh(4, 4)
    with pytest.raises(ArgumentError):
        heat_step(HeatOperator(T, 0.1), DensityField.normalized(other, np.ones(16)))


def test_flat_contraction_is_nonexpansive_and_thread_independent():
    T = build_torus_mesh(6, 6)
    mu = _bump(T, [0.3, 0.3, 0.0])
    nu = _bump(T, [0.7, 0.6, 0.0], width=0.15)

    single = contraction_experiment(T, mu, nu, 0.04, 0.02, CostSpec("quadratic"))
    pooled = contraction_experiment(T, mu, nu, 0.04, 0.02, CostSpec("quadratic"), workers=2)

    assert [point.t for point in single] == pytest.approx([0.0, 0.02, 0.04])
    assert [point.w2 for point in single] == [point.w2 for point in pooled]
    w2 = [point.w2 for point in single]
    assert all(later <= earlier + 1e-9 for earlier, later in zip(w2, w2[1:]))
    assert all(point.bound == w2[0] for point in single)


def test_contraction_needs_quadratic_cost_and_positive_time():
    T = build_torus_mesh(4, 4)
    mu = _bump(T, [0.5, 0.5, 0.0])

    with pytest.raises(ArgumentError):
        contraction_experiment(T, mu, mu, 0.1, 0.02, CostSpec("power", p=3.0))
    with pytest.raises(ArgumentError):
        contraction_experiment(T, mu, mu, 0.0, 0.02, CostSpec("quadratic"))


def test_bv_norm_of_constant_vanishes():
    S = build_sphere_mesh(1)

    assert bv_norm(S, np.full(S.n_vertices, 2.0)) == pytest.approx(0.0, abs=1e-12)
    assert bv_norm(S, _bump(S, [0.0, 0.0, 1.0], width=0.5)) > 0.0


def test_capacitated_transport_respects_caps():
    caps = np.array([0.5, 0.5, 0.5])
    b = np.array([0.6, 0.4])
    C = np.array([[0.0, 1.0], [1.0, 0.0], [0.5, 0.5]])

    plan, _, gap = capacitated_transport(caps, b, C)

    assert np.allclose(plan.col_marginal, b)
    assert np.all(plan.row_marginal <= caps + 1e-12)
    assert plan.cost(C) == pytest.approx(0.05)
    assert gap == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(InfeasibilityError):
        capacitated_transport(np.array([0.2, 0.2]), b, C[:2])


def test_projection_under_a_loose_cap_is_the_identity():
    T = build_torus_mesh(6, 6)
    nu = _bump(T, [0.5, 0.5, 0.0])

    result = wasserstein_projection(nu, nu.values + 0.1, CostSpec("quadratic"))

    assert np.allclose(result.mu_bar.values, nu.values)
    assert result.cost == pytest.approx(0.0, abs=1e-15)


def test_projection_respects_a_tight_cap():
    T = build_torus_mesh(6, 6)
    nu = _bump(T, [0.5, 0.5, 0.0], width=0.1)
    f = np.full(T.n_vertices, 1.5)

    result = wasserstein_projection(nu, f, CostSpec("quadratic"))

    assert np.all(result.mu_bar.values <= f + 1e-9)
    assert result.cost > 0.0
    assert abs(result.duality_gap) <= 1e-9
    assert np.allclose(result.plan.col_marginal, nu.masses)


def test_projection_rejects_bad_caps():
    T = build_torus_mesh(4, 4)
    nu = DensityField.normalized(T, np.ones(16))

    with pytest.raises(InfeasibilityError):
        wasserstein_projection(nu, np.full(16, 0.5), CostSpec())
    with pytest.raises(ArgumentError):
        wasserstein_projection(nu, -np.ones(16), CostSpec())


def test_regularized_minimum_of_uniform_target_is_trivial():
    T = build_torus_mesh(4, 4)
    nu = DensityField.normalized(T, np.ones(T.n_vertices))

    result = regularized_min(nu, PenaltySpec("entropy"), CostSpec("quadratic"), iterations=5)

    assert result.converged
    assert np.allclose(result.mu_bar.values, nu.values, atol=1e-12)
    assert len(result.energies) == 1


def test_regularized_descent_lowers_the_energy():
    T = build_torus_mesh(4, 4)
    nu = _bump(T, [0.5, 0.5, 0.0], width=0.15)
    logger = StubRunLogger()

    result = regularized_min(nu, PenaltySpec("quadratic"), CostSpec("quadratic"), tol=1e-4, run_logger=logger)

    assert result.iterations >= 1
    assert all(later < earlier for earlier, later in zip(result.energies, result.energies[1:]))
    assert result.mu_bar.values.max() < nu.values.max()
    assert logger.entries and logger.entries[0][0] == "level_completed"


def test_regularized_iteration_cap_raises_with_energies():
    T = build_torus_mesh(4, 4)
    nu = _bump(T, [0.5, 0.5, 0.0], width=0.15)

    with pytest.raises(ConvergenceError) as excinfo:
        regularized_min(nu, PenaltySpec("quadratic"), CostSpec("quadratic"), iterations=1, tol=0.0)

    assert len(excinfo.value.diagnostics["energies"]) == 2
    with pytest.raises(ArgumentError):
        regularized_min(nu, PenaltySpec("quadratic"), CostSpec("quadratic"), iterations=0)


def test_bv_report_modes():
    S = build_sphere_mesh(1)
    nu = _bump(S, [0.0, 0.0, 1.0], width=0.6)
    plan, _ = solve_exact(nu, nu, cost_matrix(S, CostSpec("quadratic")))

    report = bv_estimate_report(nu, nu, plan, S, "contraction")

    assert report.transport_term == pytest.approx(0.0, abs=1e-15)
    assert report.w1_bound == pytest.approx(0.0, abs=1e-12)
    assert report.slack == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ArgumentError):
        bv_estimate_report(nu, nu, plan, S, "heat")
    with pytest.raises(ArgumentError):
        bv_estimate_report(nu, nu, plan, S, "projection")


def test_heat_step_zeroes_round_off_negatives_without_logging():
    T = build_torus_mesh(4, 4)
    values = np.ones(T.n_vertices)
    values[3] = -1e-14
    logger = StubRunLogger()

    rho = heat_step(_heat_with_solution(T, values), DensityField.normalized(T, np.ones(16)), logger)

    assert rho.values[3] == 0.0
    assert logger.entries == []


def test_heat_step_logs_real_clamps():
    T = build_torus_mesh(4, 4)
    values = np.ones(T.n_vertices)
    values[[2, 5]] = -1e-3
    logger = StubRunLogger()

    rho = heat_step(_heat_with_solution(T, values), DensityField.normalized(T, np.ones(16)), logger)

    assert np.all(rho.values >= 0.0)
    assert rho.values[2] == 0.0
    [(event, payload)] = logger.entries
    assert event == "heat_clamp"
    assert payload["vertices"] == 2
    assert payload["clamped_mass"] == pytest.approx(2e-3 * T.vertex_weights[2])


@pytest.mark.slow
def test_sphere_heat_flow_contracts_at_unit_curvature():
    S = build_sphere_mesh(2)
    mu = _bump(S, [0.0, 0.0, 1.0], width=0.4)
    nu = _bump(S, [np.sin(0.6), 0.0, np.cos(0.6)], width=0.4)

    points = contraction_experiment(S, mu, nu, 0.5, 0.01, CostSpec("quadratic"), workers=2)

    assert len(points) == 51
    assert points[0].w2 > 0.0
    for point in points:
        assert point.bound == pytest.approx(np.exp(-point.t) * points[0].w2)
        assert point.w2 <= point.bound * 1.05


def test_bv_norm_matches_the_analytic_total_variation():
    T = build_torus_mesh(64, 64)
    x = T.vertices[:, 0]

    def rho(amplitude):
        return DensityField.normalized(T, 1.0 + amplitude * np.sin(2.0 * np.pi * x))

    # |d/dx (1 + sin(2 pi x) / 2)| integrates to 2 over the unit torus
    assert bv_norm(T, rho(0.5)) == pytest.approx(2.0, rel=0.03)
    assert bv_norm(T, rho(0.5)) == pytest.approx(2.0 * bv_norm(T, rho(0.25)), rel=1e-10)


def test_exhausted_line_search_reports_no_convergence(monkeypatch: pytest.MonkeyPatch):
    T = build_torus_mesh(4, 4)
    nu = _bump(T, [0.5, 0.5, 0.0], width=0.15)
    logger = StubRunLogger()
    monkeypatch.setattr(experiments, "MAX_HALVINGS", 0)

    result = regularized_min(
        nu, PenaltySpec("quadratic"), CostSpec("quadratic"), step0=1e6, run_logger=logger
    )

    assert result.converged is False
    assert result.iterations == 1
    assert len(result.energies) == 1
    assert np.allclose(result.mu_bar.values, nu.values)
    assert logger.entries[-1][0] == "line_search_exhausted"


def test_regularized_minimum_of_uniform_sphere_target_is_returned_directly():
    S = build_sphere_mesh(1)
    nu = DensityField.normalized(S, np.ones(S.n_vertices))

    result = regularized_min(nu, PenaltySpec("quadratic", weight=3.0), CostSpec("quadratic"))

    assert result.converged is True
    assert result.iterations == 0
    assert result.mu_bar is nu
    assert result.energies[0] == pytest.approx(1.5 / float(S.vertex_weights.sum()))


def test_dominant_entropy_drives_the_minimiser_to_uniform():
    T = build_torus_mesh(4, 4)
    nu = _bump(T, [0.5, 0.5, 0.0], width=0.15)
    uniform = DensityField.normalized(T, np.ones(T.n_vertices))

    result = regularized_min(
        nu, PenaltySpec("entropy", weight=1e6), CostSpec("quadratic"), iterations=500, tol=1e-9
    )

    assert _tv(result.mu_bar, uniform) <= 1e-3


def test_vanishing_penalty_keeps_the_minimiser_at_the_target():
    T = build_torus_mesh(4, 4)
    nu = _bump(T, [0.5, 0.5, 0.0], width=0.15)
    C = cost_matrix(T, CostSpec("quadratic"))

    result = regularized_min(nu, PenaltySpec("entropy", weight=1e-6), CostSpec("quadratic"), iterations=500)
    plan, _ = solve_exact(result.mu_bar, nu, C)

    assert _tv(result.mu_bar, nu) <= 1e-3
    assert plan.cost(C) <= 1e-4


def test_regularized_minimum_beats_the_mixture_family():
    T = build_torus_mesh(6, 6)
    nu = _bump(T, [0.5, 0.5, 0.0], width=0.2)
    eta = PenaltySpec("quadratic")
    C = cost_matrix(T, CostSpec("quadratic"))
    w = T.vertex_weights

    def energy(mu):
        plan, _ = solve_exact(mu, nu, C)
        return plan.cost(C) + float(np.dot(w, eta.eta(mu.values)))

    family = [
        energy(DensityField.normalized(T, (1.0 - lam) * nu.values + lam)) for lam in np.linspace(0.0, 1.0, 21)
    ]
    result = regularized_min(nu, eta, CostSpec("quadratic"), iterations=500, tol=1e-10)

    assert result.energies[-1] <= min(family) + 1e-4
