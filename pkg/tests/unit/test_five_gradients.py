import numpy as np
import pytest

from src.application.five_gradients import (
    anisotropic_five_gradients,
    check_five_gradients,
    competitor_defect,
    difference_quotient_l1,
    directional_fgi,
    ell_prime_vec,
    five_gradients_sides,
    lattice_steps,
    translate,
)
from src.application.manifolds import build_sphere_mesh, build_torus_mesh, cost_matrix
from src.application.transport import solve_exact
from src.domain.errors import ArgumentError, InputError
from src.domain.models import DensityField
from src.domain.specs import CostSpec, EllSpec, ScalarSpec


def _bump(M, center, width=0.2, floor=0.05):
    d = np.linalg.norm(M.vertices - np.asarray(center), axis=1)
    return DensityField.normalized(M, floor + np.exp(-0.5 * (d / width) ** 2))


def _torus_pair(n=6):
    T = build_torus_mesh(n, n)
    return T, _bump(T, [0.3, 0.4, 0.0]), _bump(T, [0.6, 0.5, 0.0], width=0.25)


def test_identical_densities_have_zero_slack():
    T = build_torus_mesh(6, 6)
    S = build_sphere_mesh(1)
    for M, mu in ((T, _bump(T, [0.5, 0.5, 0.0])), (S, _bump(S, [0.0, 0.0, 1.0], width=0.6))):
        report = check_five_gradients(M, mu, mu, CostSpec("quadratic"), EllSpec("quadratic"))

        assert report.lhs == pytest.approx(0.0, abs=1e-10)
        assert report.rhs == pytest.approx(0.0, abs=1e-10)
        assert report.slack == pytest.approx(0.0, abs=1e-10)
        assert report.to_dict()["N"] == M.n_vertices


def test_flat_torus_slack_is_nonnegative():
    T, mu, nu = _torus_pair()

    report = check_five_gradients(T, mu, nu, CostSpec("quadratic"), EllSpec("quadratic"))

    assert report.K == 0.0
    assert report.rhs == 0.0
    assert np.isfinite(report.lhs)


def test_check_rejects_linear_cost_unknown_solver_and_vanishing_density():
    T, mu, nu = _torus_pair(4)

    with pytest.raises(ArgumentError):
        check_five_gradients(T, mu, nu, CostSpec("linear"), EllSpec())
    with pytest.raises(ArgumentError):
        check_five_gradients(T, mu, nu, CostSpec(), EllSpec(), solver="simplex")
    hole = np.ones(T.n_vertices)
    hole[3] = 0.0
    with pytest.raises(InputError):
        check_five_gradients(T, DensityField.normalized(T, hole), nu, CostSpec(), EllSpec())


def test_densities_must_share_the_manifold():
    T, mu, _ = _torus_pair(4)
    other = build_torus_mesh(4, 4)

    with pytest.raises(ArgumentError):
        check_five_gradients(T, mu, _bump(other, [0.5, 0.5, 0.0]), CostSpec(), EllSpec())


def test_sinkhorn_solver_gives_finite_report():
    T, mu, nu = _torus_pair(4)

    report = check_five_gradients(T, mu, nu, CostSpec(), EllSpec(), solver="sinkhorn", eps=1e-2)

    assert report.solver == "sinkhorn"
    assert np.isfinite(report.slack)


def test_ell_prime_vec_vanishes_at_zero():
    l = EllSpec("linear")
    v = np.array([[0.0, 0.0, 0.0], [3.0, 4.0, 0.0]])

    out = ell_prime_vec(l, v)

    assert np.array_equal(out[0], np.zeros(3))
    assert np.allclose(out[1], [0.6, 0.8, 0.0])


def test_ell_prime_vec_examples_and_direction():
    v = np.array([3.0, 4.0, 0.0])

    assert np.allclose(ell_prime_vec(EllSpec("quadratic"), v), [3.0, 4.0, 0.0])
    assert np.allclose(ell_prime_vec(EllSpec("linear"), v), [0.6, 0.8, 0.0])
    families = (
        EllSpec("linear"),
        EllSpec("quadratic"),
        EllSpec("power", p=3.0),
        EllSpec("shifted-quadratic", shift=0.5),
    )
    for l in families:
        for c in (0.7, 2.0, 5.0):
            out = ell_prime_vec(l, c * v)
            assert np.linalg.norm(np.cross(out, v)) <= 1e-12 * max(1.0, float(np.linalg.norm(out)))
            assert float(np.dot(out, v)) >= 0.0


def test_directional_sum_matches_quadratic_ell():
    T, mu, nu = _torus_pair()
    c = CostSpec("quadratic")
    plan, potentials = solve_exact(mu, nu, cost_matrix(T, c))

    lhs, _, _ = five_gradients_sides(T, mu, nu, c, EllSpec("quadratic"), plan, potentials)
    total = sum(directional_fgi(T, axis, ScalarSpec("quadratic"), mu, nu, c, potentials) for axis in (0, 1))

    assert total == pytest.approx(-lhs, rel=1e-10, abs=1e-10)


def test_anisotropic_value_splits_over_axes():
    T, mu, nu = _torus_pair()
    c = CostSpec("quadratic")
    _, potentials = solve_exact(mu, nu, cost_matrix(T, c))
    f = ScalarSpec("power", p=3.0)

    split = sum(directional_fgi(T, axis, f, mu, nu, c, potentials) for axis in (0, 1))

    assert anisotropic_five_gradients(T, 3.0, mu, nu, c, potentials) == pytest.approx(split, rel=1e-10, abs=1e-12)
    with pytest.raises(ArgumentError):
        anisotropic_five_gradients(T, 1.0, mu, nu, c, potentials)


def test_directional_needs_a_torus():
    S = build_sphere_mesh(0)
    mu = DensityField.normalized(S, np.ones(S.n_vertices))

    with pytest.raises(ArgumentError):
        directional_fgi(S, 0, ScalarSpec(), mu, mu, CostSpec())


def test_lattice_steps_and_translation():
    T = build_torus_mesh(8, 4)

    assert lattice_steps(T, [0.25, -0.5]) == (2, -2)
    with pytest.raises(ArgumentError):
        lattice_steps(T, [0.1, 0.0])
    with pytest.raises(ArgumentError):
        lattice_steps(T, [0.25])

    values = np.arange(T.n_vertices, dtype=float)
    moved = translate(T, values, (1, 0))
    assert moved[T.grid.index(0, 0)] == values[T.grid.index(1, 0)]
    assert moved[T.grid.index(7, 3)] == values[T.grid.index(0, 3)]


def test_translation_competitor_with_quadratic_f():
    T, mu, nu = _torus_pair(8)
    C = cost_matrix(T, CostSpec("quadratic"))
    plan, potentials = solve_exact(mu, nu, C)

    defect = competitor_defect(T, potentials, plan, C, [0.25, 0.125], ScalarSpec("quadratic"), mu, nu, seed=1)

    assert defect.shift == (2, 1)
    assert defect.second_diff <= 1e-10
    assert defect.feasibility_residual <= 1e-8
    assert defect.mono_residual == 0.0


def test_zero_shift_competitor_is_trivial():
    T, mu, nu = _torus_pair(4)
    C = cost_matrix(T, CostSpec("quadratic"))
    plan, potentials = solve_exact(mu, nu, C)

    defect = competitor_defect(T, potentials, plan, C, [0.0, 0.0], ScalarSpec("cosh"), mu, nu)

    assert defect.second_diff == pytest.approx(0.0, abs=1e-15)
    assert defect.feasibility_residual == 0.0


def test_difference_quotient_error_shrinks_with_step():
    T = build_torus_mesh(32, 4)
    x = T.vertices[:, 0]
    h = T.grid.hx

    errors = difference_quotient_l1(T, np.sin(2.0 * np.pi * x), 2.0 * np.pi * np.cos(2.0 * np.pi * x), 0, [4 * h, 2 * h, h])

    assert errors[0] > errors[1] > errors[2] > 0.0
    with pytest.raises(ArgumentError):
        difference_quotient_l1(T, x, x, 0, [0.5 * h])
