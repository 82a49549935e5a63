import numpy as np
import pytest

from src.application.densities import build_densities, evaluate_density
from src.application.manifolds import build_sphere_mesh, build_torus_mesh
from src.domain.errors import ConfigurationError
from src.domain.scenario import DensityConfig


def _configs(*configs):
    return {cfg.name: cfg for cfg in configs}


def test_uniform_density_is_constant():
    T = build_torus_mesh(4, 4)

    densities = build_densities(T, _configs(DensityConfig("flat", "uniform")))

    assert np.allclose(densities["flat"].values, 1.0)


def test_gaussian_bump_peaks_at_its_center_on_the_torus():
    T = build_torus_mesh(8, 8)
    cfg = DensityConfig("bump", "gaussian-bump", center=(0.25, 0.75), width=0.1, floor=0.01)

    values = evaluate_density(T, _configs(cfg), "bump")

    assert int(np.argmax(values)) == T.grid.index(2, 6)
    assert values.min() >= 0.01


def test_bump_distance_wraps_around_the_torus():
    T = build_torus_mesh(8, 8)
    cfg = DensityConfig("bump", "gaussian-bump", center=(0.0, 0.0), width=0.1)

    values = evaluate_density(T, _configs(cfg), "bump")

    assert values[T.grid.index(7, 0)] == pytest.approx(values[T.grid.index(1, 0)])


def test_cap_lives_on_the_sphere_only():
    S = build_sphere_mesh(1)
    cap = DensityConfig("cap", "cap", axis=(0.0, 0.0, 1.0), angle=0.5, width=0.05)

    values = evaluate_density(S, _configs(cap), "cap")

    assert values[0] > 0.99
    assert values[11] < 1e-3
    with pytest.raises(ConfigurationError):
        evaluate_density(build_torus_mesh(4, 4), _configs(cap), "cap")


def test_cap_without_angle_names_the_missing_key():
    S = build_sphere_mesh(0)
    cap = DensityConfig("cap", "cap", axis=(0.0, 0.0, 1.0))

    with pytest.raises(ConfigurationError) as excinfo:
        evaluate_density(S, _configs(cap), "cap")

    assert excinfo.value.violations == [("/densities/cap/angle", "missing")]


def test_translate_of_moves_the_torus_bump():
    T = build_torus_mesh(8, 8)
    configs = _configs(
        DensityConfig("mu", "gaussian-bump", center=(0.25, 0.25), width=0.1),
        DensityConfig("nu", "translate-of", base="mu", v=(0.25, 0.5)),
    )

    densities = build_densities(T, configs)

    assert int(np.argmax(densities["nu"].values)) == T.grid.index(4, 6)
    assert np.allclose(np.sort(densities["nu"].values), np.sort(densities["mu"].values))


def test_translate_of_rotates_the_sphere_cap():
    S = build_sphere_mesh(1)
    configs = _configs(
        DensityConfig("north", "cap", axis=(0.0, 0.0, 1.0), angle=0.4, width=0.05),
        DensityConfig("south", "translate-of", base="north", v=(np.pi, 0.0, 0.0)),
    )

    values = evaluate_density(S, configs, "south")

    assert int(np.argmax(values)) == 11


def test_translate_of_chains_compose():
    T = build_torus_mesh(8, 8)
    configs = _configs(
        DensityConfig("a", "gaussian-bump", center=(0.0, 0.0), width=0.1),
        DensityConfig("b", "translate-of", base="a", v=(0.125, 0.0)),
        DensityConfig("c", "translate-of", base="b", v=(0.0, 0.25)),
    )

    values = evaluate_density(T, configs, "c")

    assert int(np.argmax(values)) == T.grid.index(1, 2)


def test_cycles_and_unknown_bases_are_configuration_errors():
    T = build_torus_mesh(4, 4)
    cycle = _configs(
        DensityConfig("a", "translate-of", base="b", v=(0.0, 0.0)),
        DensityConfig("b", "translate-of", base="a", v=(0.0, 0.0)),
    )
    dangling = _configs(DensityConfig("a", "translate-of", base="ghost", v=(0.0, 0.0)))

    with pytest.raises(ConfigurationError, match="cycle"):
        evaluate_density(T, cycle, "a")
    with pytest.raises(ConfigurationError) as excinfo:
        evaluate_density(T, dangling, "a")
    assert excinfo.value.violations[0][0] == "/densities/a/base"


def test_torus_translation_needs_two_components():
    T = build_torus_mesh(4, 4)
    configs = _configs(
        DensityConfig("a", "uniform"),
        DensityConfig("b", "translate-of", base="a", v=(0.1, 0.2, 0.3)),
    )

    with pytest.raises(ConfigurationError):
        evaluate_density(T, configs, "b")
