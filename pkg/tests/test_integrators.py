from dataclasses import replace

import numpy as np
import pytest

from src.core.galerkin_space import make_fem_space, make_space, make_spectral_space, project_l2, rational_step
from src.core.noise import coarsen_path, sample_increments
from src.models.problem import DriftSpec, ScalarMap, make_problem, with_terms
from src.solvers.integrators import (
    diagonal_moment_recursion,
    exact_linear_additive,
    grid_steps,
    implicit_euler_maruyama,
    reference_solution,
)
from src.utils.exceptions import ConfigurationError, NumericError


def test_grid_steps():
    assert grid_steps(1.0, 0.25) == 4
    assert grid_steps(1.0, 0.3) == 3
    assert grid_steps(1.0, 1.0 / 3.0) == 3
    with pytest.raises(ConfigurationError):
        grid_steps(1.0, 2.0)
    with pytest.raises(ConfigurationError):
        grid_steps(1.0, 0.0)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_linear_additive_matches_per_mode_recursion(small_basis, seed):
    problem = make_problem("P1", small_basis)
    space = make_spectral_space(small_basis, 16)
    k = 1.0 / 64
    path = sample_increments(problem.covariance, k, 64, seed)
    run = implicit_euler_maruyama(problem, space, k, path)
    oracle = exact_linear_additive(problem, space, k, path)
    np.testing.assert_allclose(run.coords, oracle.coords, rtol=0, atol=1e-12)
    np.testing.assert_array_equal(run.steps, np.arange(65))


@pytest.mark.parametrize("kind", ["spectral", "fem_p1"])
def test_noiseless_scheme_is_rational_power(small_basis, kind):
    problem = make_problem("heat", small_basis)
    space = make_space(kind, 16, small_basis)
    k = 1.0 / 32
    path = sample_increments(problem.covariance, k, 32, seed=4)
    run = implicit_euler_maruyama(problem, space, k, path, record=[0, 7, 32])
    start = project_l2(space, problem.initial)
    for j in (0, 7, 32):
        expected = rational_step(space, start, k, j).coords
        np.testing.assert_allclose(run.state(j).coords, expected, rtol=1e-10, atol=1e-13)


def test_recorded_steps_only(small_basis):
    problem = make_problem("P3", small_basis)
    space = make_fem_space(8)
    k = 1.0 / 16
    path = sample_increments(problem.covariance, k, 16, seed=9)
    run = implicit_euler_maruyama(problem, space, k, path, record=[4, 16, 40])
    np.testing.assert_array_equal(run.steps, [4, 16])
    assert run.final_step == 16
    assert np.all(np.isfinite(run.final.coords))
    assert run.state_at(0.25).coords.shape == (space.dim,)
    with pytest.raises(ConfigurationError):
        run.state(5)


def test_runs_are_deterministic(small_basis):
    problem = make_problem("P3", small_basis)
    space = make_spectral_space(small_basis, 8)
    k = 1.0 / 16
    a = implicit_euler_maruyama(problem, space, k, sample_increments(problem.covariance, k, 16, 21))
    b = implicit_euler_maruyama(problem, space, k, sample_increments(problem.covariance, k, 16, 21))
    np.testing.assert_array_equal(a.coords, b.coords)


def test_path_grid_must_match(small_basis):
    problem = make_problem("P1", small_basis)
    space = make_spectral_space(small_basis, 8)
    path = sample_increments(problem.covariance, 1.0 / 16, 16, 0)
    with pytest.raises(ConfigurationError):
        implicit_euler_maruyama(problem, space, 1.0 / 8, path)
    with pytest.raises(ConfigurationError):
        implicit_euler_maruyama(problem, space, 1.0 / 16, path.truncate(8))


def test_non_finite_state_names_step_and_seed(small_basis):
    explode = ScalarMap("explode", lambda x: np.full_like(x, np.inf), 1.0)
    problem = with_terms(make_problem("P1", small_basis), drift=DriftSpec("nemytskii", phi=explode))
    space = make_spectral_space(small_basis, 8)
    path = sample_increments(problem.covariance, 0.25, 4, seed=13)
    with pytest.raises(NumericError) as info:
        implicit_euler_maruyama(problem, space, 0.25, path)
    assert info.value.step == 1
    assert info.value.seed == 13


def test_reference_must_dominate(small_basis):
    problem = make_problem("P1", small_basis)
    ref_space = make_spectral_space(small_basis, 16)
    path = sample_increments(problem.covariance, 1.0 / 16, 16, 0)
    with pytest.raises(ConfigurationError):
        reference_solution(problem, ref_space, 1.0 / 16, path, tests=[(make_spectral_space(small_basis, 32), 1.0 / 8)])
    with pytest.raises(ConfigurationError):
        reference_solution(problem, ref_space, 1.0 / 16, path, tests=[(ref_space, 3.0 / 32)])
    run = reference_solution(problem, ref_space, 1.0 / 16, path, tests=[(make_spectral_space(small_basis, 8), 1.0 / 4)])
    assert run.final_step == 16


def test_coarse_run_on_summed_path_matches_recursion(small_basis):
    problem = make_problem("P1", small_basis)
    space = make_spectral_space(small_basis, 8)
    fine = sample_increments(problem.covariance, 1.0 / 32, 32, seed=6)
    coarse = coarsen_path(fine, 4)
    run = implicit_euler_maruyama(problem, space, 1.0 / 8, coarse)
    oracle = exact_linear_additive(problem, space, 1.0 / 8, coarse)
    np.testing.assert_allclose(run.final.coords, oracle.final.coords, rtol=0, atol=1e-12)


@pytest.mark.slow
def test_diagonal_second_moments(small_basis):
    problem = replace(make_problem("P4", small_basis), T=0.25)
    space = make_spectral_space(small_basis, 8)
    k = 1.0 / 16
    moments = diagonal_moment_recursion(problem, space, k)
    assert moments.shape == (5, 8)
    finals = np.array([
        implicit_euler_maruyama(problem, space, k, sample_increments(problem.covariance, k, 4, seed), record=[4]).final.coords
        for seed in range(4000)
    ])
    np.testing.assert_allclose(np.mean(finals[:, 0] ** 2), moments[-1, 0], rtol=0.1)


def test_oracles_require_matching_problem(small_basis):
    space = make_spectral_space(small_basis, 8)
    with pytest.raises(ConfigurationError):
        diagonal_moment_recursion(make_problem("P1", small_basis), space, 0.1)
    p3 = make_problem("P3", small_basis)
    path = sample_increments(p3.covariance, 0.1, 10, 0)
    with pytest.raises(ConfigurationError):
        exact_linear_additive(p3, space, 0.1, path)
    with pytest.raises(ConfigurationError):
        exact_linear_additive(make_problem("P1", small_basis), make_fem_space(8), 0.1, path)
