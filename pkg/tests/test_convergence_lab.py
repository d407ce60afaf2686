import numpy as np
import pytest

from src.analysis import convergence_lab
from src.analysis.convergence_lab import (
    Discretization,
    convergence_study,
    expected_rate,
    holder_check,
    moment_estimate,
    step_stiffness,
    strong_error,
)
from src.core.galerkin_space import lift_coords, make_fem_space, make_spectral_space
from src.core.noise import coarsen_path, sample_increments
from src.core.spectral_core import build_basis
from src.models.problem import make_problem
from src.solvers.integrators import exact_linear_additive
from src.utils.config import config
from src.utils.exceptions import ConfigurationError


@pytest.fixture
def p1(small_basis):
    return make_problem("P1", small_basis)


def test_moment_estimate():
    errors = np.array([0.1, 0.2, 0.3, 0.4])
    est = moment_estimate(errors, 2.0, 1.0, seed=0, resamples=200)
    assert est.value == pytest.approx(np.sqrt(np.mean(errors ** 2)))
    assert est.stderr > 0
    assert est.samples == 4
    single = moment_estimate(np.array([0.5]), 4.0, 1.0, seed=0)
    assert single.value == pytest.approx(0.5)
    assert single.stderr == 0.0


def test_identical_configurations_have_zero_error(p1, small_basis):
    level = Discretization(make_spectral_space(small_basis, 8), 1.0 / 16)
    est = strong_error(p1, level, level, samples=3, base_seed=1, threads=1)
    assert est.value == 0.0
    assert est.stderr == 0.0


def test_per_sample_errors_match_recursion_oracle(p1, small_basis):
    coarse = Discretization(make_spectral_space(small_basis, 8), 1.0 / 8)
    ref = Discretization(make_spectral_space(small_basis, 32), 1.0 / 32)
    est = strong_error(p1, coarse, ref, samples=4, base_seed=10, threads=2)
    assert est.eval_time == pytest.approx(1.0)
    for i in range(4):
        fine = sample_increments(p1.covariance, ref.k, 32, 10 + i)
        ref_run = exact_linear_additive(p1, ref.space, ref.k, fine)
        coarse_run = exact_linear_additive(p1, coarse.space, coarse.k, coarsen_path(fine, 4))
        diff = (lift_coords(coarse.space, coarse_run.final.coords, small_basis.mode_count)
                - lift_coords(ref.space, ref_run.final.coords, small_basis.mode_count))
        assert est.errors[i] == pytest.approx(np.linalg.norm(diff), abs=1e-12)


def test_more_samples_agree_within_standard_errors(p1, small_basis):
    coarse = Discretization(make_spectral_space(small_basis, 4), 1.0 / 8)
    ref = Discretization(make_spectral_space(small_basis, 16), 1.0 / 64)
    small = strong_error(p1, coarse, ref, samples=40, base_seed=0)
    large = strong_error(p1, coarse, ref, samples=80, base_seed=0)
    assert abs(small.value - large.value) < 3.0 * max(small.stderr, large.stderr)


def test_strong_error_preconditions(p1, small_basis):
    coarse = Discretization(make_spectral_space(small_basis, 16), 1.0 / 8)
    with pytest.raises(ConfigurationError):
        strong_error(p1, coarse, Discretization(make_spectral_space(small_basis, 8), 1.0 / 32), samples=2)
    with pytest.raises(ConfigurationError):
        strong_error(p1, coarse, Discretization(make_spectral_space(small_basis, 32), 3.0 / 64), samples=2)
    with pytest.raises(ConfigurationError):
        strong_error(p1, coarse, coarse, samples=0)
    with pytest.raises(ConfigurationError):
        strong_error(p1, coarse, coarse, samples=2, p=1.0)


def test_study_validates_levels(p1, small_basis):
    ref = Discretization(make_spectral_space(small_basis, 32), 1.0 / 64)
    with pytest.raises(ConfigurationError):
        convergence_study(p1, "spatial", [2, 4], None, ref, samples=2)
    with pytest.raises(ConfigurationError):
        convergence_study(p1, "spatial", [2, 4, 16], None, ref, samples=2)
    with pytest.raises(ConfigurationError):
        convergence_study(p1, "spatial", [8, 4, 2], None, ref, samples=2)
    with pytest.raises(ConfigurationError):
        convergence_study(p1, "temporal", [0.25, 0.125, 1.0 / 16], 8, ref, samples=2)
    with pytest.raises(ConfigurationError):
        convergence_study(p1, "diagonal", [2, 4, 8], None, ref, samples=2)


def test_study_is_reproducible_and_coupled(p1, small_basis):
    ref = Discretization(make_spectral_space(small_basis, 32), 1.0 / 16)
    kwargs = dict(samples=6, base_seed=3, reference_check=False, threads=2)
    first = convergence_study(p1, "spatial", [2, 4, 8], None, ref, **kwargs)
    second = convergence_study(p1, "spatial", [2, 4, 8], None, ref, threads=1,
                               **{k: v for k, v in kwargs.items() if k != "threads"})
    np.testing.assert_array_equal(first.values, second.values)
    assert first.slope == second.slope
    assert first.coupling_digest == second.coupling_digest
    assert first.param_kind == "h"
    assert first.labels == [2.0, 4.0, 8.0]
    assert np.all(np.isfinite(first.slope_ci))
    assert first.monotone
    assert first.reference_shift is None


def test_study_reference_check(p1, small_basis):
    ref = Discretization(make_spectral_space(small_basis, 16), 1.0 / 16)
    report = convergence_study(p1, "spatial", [1, 2, 4], None, ref, samples=4, base_seed=0, threads=1)
    assert report.reference_shift is not None and report.reference_shift >= 0.0
    assert isinstance(report.reference_ok, bool)


def test_temporal_study_on_fem_space(small_basis):
    problem = make_problem("P3", small_basis, T=0.5)
    ref = Discretization(make_fem_space(8), 1.0 / 2048)
    report = convergence_study(problem, "temporal", [1.0 / 8, 1.0 / 16, 1.0 / 32], 8, ref,
                               samples=3, base_seed=5, space_kind="fem_p1", reference_check=False, threads=1)
    assert report.param_kind == "k"
    assert len(report.levels) == 3
    assert report.levels[0][1].eval_time == pytest.approx(0.5)
    assert np.all(report.values > 0)


def test_expected_rates(p1):
    assert expected_rate(p1, "spatial") == (2.0, pytest.approx((1.7, 2.3)))
    assert expected_rate(p1, "temporal")[0] == 0.5


def test_holder_increments_grow_with_lag(p1, small_basis):
    ref = Discretization(make_spectral_space(small_basis, 16), 1.0 / 2048)
    lags = [m / 2048 for m in (4, 8, 16, 32)]
    report = holder_check(p1, ref, lags, samples=200, seed=0)
    assert report.param_kind == "delta"
    assert report.expected == 0.5
    values_by_lag = report.values[np.argsort(report.params)]
    assert np.all(np.diff(values_by_lag) > 0)
    assert 0.4 <= report.slope <= 0.6
    assert report.passed
    assert report.settings["t0"] == pytest.approx(0.5)


def test_holder_slope_on_multiplicative_problem(small_basis):
    problem = make_problem("P3", small_basis)
    ref = Discretization(make_spectral_space(small_basis, 16), 1.0 / 2048)
    report = holder_check(problem, ref, [m / 2048 for m in (4, 8, 16, 32)], samples=100, seed=1)
    assert 0.4 <= report.slope <= 0.6


def test_holder_on_noiseless_problem_is_reported_only(small_basis):
    problem = make_problem("heat", small_basis)
    ref = Discretization(make_spectral_space(small_basis, 16), 1.0 / 128)
    report = holder_check(problem, ref, [1.0 / 128, 1.0 / 64, 1.0 / 32], samples=2, seed=0, threads=1)
    assert report.expected is None
    assert report.passed
    assert report.slope > 0.5


def test_holder_lags_must_be_grid_multiples(p1, small_basis):
    ref = Discretization(make_spectral_space(small_basis, 16), 1.0 / 128)
    with pytest.raises(ConfigurationError):
        holder_check(p1, ref, [1.0 / 100, 1.0 / 50], samples=2, seed=0)
    with pytest.raises(ConfigurationError):
        holder_check(p1, ref, [1.0 / 128], samples=2, seed=0)


def test_reference_run_checks_every_coarse_level(p1, small_basis, monkeypatch):
    seen = []
    original = convergence_lab.reference_solution

    def recording(problem, ref_space, k_ref, path, tests=(), record=None):
        seen.append(list(tests))
        return original(problem, ref_space, k_ref, path, tests=tests, record=record)

    monkeypatch.setattr(convergence_lab, "reference_solution", recording)
    coarse = Discretization(make_spectral_space(small_basis, 8), 1.0 / 8)
    ref = Discretization(make_spectral_space(small_basis, 32), 1.0 / 32)
    strong_error(p1, coarse, ref, samples=2, base_seed=0, threads=1)
    assert seen == [[(coarse.space, coarse.k)]] * 2


def test_reference_shift_fails_the_study(p1, small_basis, monkeypatch):
    ref = Discretization(make_spectral_space(small_basis, 32), 1.0 / 16)
    kwargs = dict(samples=6, base_seed=3, window=(-10.0, 10.0), threads=1)
    report = convergence_study(p1, "spatial", [2, 4, 8], None, ref, **kwargs)
    assert report.monotone and report.reference_ok
    assert report.passed

    monkeypatch.setattr(config, "reference_shift_limit", 0.0)
    report = convergence_study(p1, "spatial", [2, 4, 8], None, ref, **kwargs)
    assert report.reference_ok is False
    assert not report.passed


def test_step_stiffness_is_reported_for_spatial_studies(p1, small_basis):
    assert step_stiffness(2.0 ** -12, 32) == pytest.approx(2.0 ** -12 * (33 * np.pi) ** 2)
    ref = Discretization(make_spectral_space(small_basis, 32), 1.0 / 16)
    report = convergence_study(p1, "spatial", [2, 4, 8], None, ref, samples=2, reference_check=False, threads=1)
    assert report.step_stiffness == pytest.approx((9 * np.pi) ** 2 / 16)
    temporal = convergence_study(p1, "temporal", [1.0 / 4, 1.0 / 8, 1.0 / 16], None,
                                 Discretization(make_spectral_space(small_basis, 8), 1.0 / 1024),
                                 samples=2, reference_check=False, threads=1)
    assert temporal.step_stiffness is None


@pytest.mark.parametrize("name", ["P1", "P3"])
def test_errors_insensitive_to_reference_modes(name):
    values = []
    for modes in (64, 128):
        basis = build_basis(modes)
        problem = make_problem(name, basis, noise_modes=64)
        coarse = Discretization(make_spectral_space(basis, 8), 1.0 / 8)
        ref = Discretization(make_spectral_space(basis, 32), 1.0 / 32)
        values.append(strong_error(problem, coarse, ref, samples=8, base_seed=2, threads=1).value)
    assert values[1] == pytest.approx(values[0], rel=1e-3)


def test_errors_insensitive_to_noise_modes():
    basis = build_basis(128)
    coarse = Discretization(make_spectral_space(basis, 8), 1.0 / 8)
    ref = Discretization(make_spectral_space(basis, 32), 1.0 / 32)
    small, large = (strong_error(make_problem("P1", basis, noise_modes=m), coarse, ref, samples=40, base_seed=0)
                    for m in (64, 128))
    assert abs(small.value - large.value) < 3.0 * max(small.stderr, large.stderr)


@pytest.mark.slow
def test_fem_spatial_rate_on_additive_problem(basis):
    problem = make_problem("P1", basis)
    ref = Discretization(make_fem_space(256), 2.0 ** -12)
    report = convergence_study(problem, "spatial", [8, 16, 32, 64], None, ref, samples=60, base_seed=42,
                               space_kind="fem_p1", reference_check=False)
    assert 1.7 <= report.slope <= 2.3
    assert report.passed


@pytest.mark.slow
def test_spectral_spatial_rate_on_multiplicative_problem(small_basis):
    problem = make_problem("P3", small_basis)
    ref = Discretization(make_spectral_space(small_basis, 64), 2.0 ** -14)
    report = convergence_study(problem, "spatial", [4, 8, 16], None, ref, samples=100, base_seed=42,
                               reference_check=False)
    assert report.step_stiffness < config.spatial_step_limit
    assert 1.25 <= report.slope <= 1.75
    assert report.passed


@pytest.mark.slow
def test_temporal_rate_on_multiplicative_problem(small_basis):
    problem = make_problem("P3", small_basis)
    ref = Discretization(make_spectral_space(small_basis, 16), 2.0 ** -12)
    report = convergence_study(problem, "temporal", [2.0 ** -n for n in range(3, 7)], 16, ref, samples=60,
                               base_seed=42, reference_check=False)
    assert 0.38 <= report.slope <= 0.62
    assert report.passed
