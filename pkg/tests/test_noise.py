import numpy as np
import pytest

from src.core.noise import (
    coarsen_path,
    diagonal_hs_norm,
    hs_norm,
    increment_field,
    make_covariance,
    sample_increments,
    standard_normals,
)
from src.utils.exceptions import ConfigurationError


def test_covariance_requires_trace_class():
    with pytest.raises(ConfigurationError, match="trace class"):
        make_covariance(0.5, 16)
    with pytest.raises(ConfigurationError):
        make_covariance(1.0, 0)


def test_covariance_eigenvalues_and_tail():
    cov = make_covariance(1.0, 100)
    np.testing.assert_allclose(cov.eigenvalues[:3], [1.0, 0.25, 1.0 / 9.0])
    exact_tail = np.pi ** 2 / 6.0 - cov.trace
    assert 0 < exact_tail <= cov.tail_bound


def test_increments_are_reproducible():
    cov = make_covariance(1.0, 32)
    a = sample_increments(cov, 0.01, 50, seed=7)
    b = sample_increments(cov, 0.01, 50, seed=7)
    c = sample_increments(cov, 0.01, 50, seed=8)
    np.testing.assert_array_equal(a.increments, b.increments)
    assert a.checksum == b.checksum
    assert a.checksum != c.checksum


def test_normals_regenerate_any_step_range():
    full = standard_normals(11, 0, 12, 37)
    part = standard_normals(11, 5, 4, 37)
    np.testing.assert_array_equal(part, full[5:9])


def test_negative_seed_rejected():
    with pytest.raises(ConfigurationError):
        standard_normals(-1, 0, 2, 4)


def test_increment_variances():
    cov = make_covariance(1.0, 4)
    k = 0.01
    path = sample_increments(cov, k, 20000, seed=3)
    observed = path.increments.var(axis=0)
    np.testing.assert_allclose(observed, cov.eigenvalues * k, rtol=0.05)
    assert abs(path.increments.mean()) < 0.01


def test_increment_means_per_coefficient():
    cov = make_covariance(1.0, 16)
    k = 0.01
    steps = 20000
    path = sample_increments(cov, k, steps, seed=8)
    stderr = np.sqrt(cov.eigenvalues * k / steps)
    assert np.all(np.abs(path.increments.mean(axis=0)) < 4.0 * stderr)


def test_increments_are_read_only():
    path = sample_increments(make_covariance(1.0, 4), 0.1, 3, seed=0)
    with pytest.raises(ValueError):
        path.increments[0, 0] = 0.0


def test_coarsening_sums_blocks_in_order():
    path = sample_increments(make_covariance(1.1, 16), 1.0 / 64, 64, seed=5)
    coarse = coarsen_path(path, 4)
    inc = path.increments
    expected = ((inc[0::4] + inc[1::4]) + inc[2::4]) + inc[3::4]
    np.testing.assert_array_equal(coarse.increments, expected)
    assert coarse.k == pytest.approx(1.0 / 16)
    assert coarse.steps == 16
    assert coarse.origin_checksum == path.checksum
    assert coarsen_path(coarse, 2).origin_checksum == path.checksum
    assert coarsen_path(path, 1) is path


def test_coarsening_requires_divisor():
    path = sample_increments(make_covariance(1.0, 4), 0.1, 10, seed=0)
    with pytest.raises(ConfigurationError):
        coarsen_path(path, 3)


def test_truncate_keeps_prefix():
    path = sample_increments(make_covariance(1.0, 4), 0.1, 10, seed=0)
    short = path.truncate(4)
    np.testing.assert_array_equal(short.increments, path.increments[:4])
    with pytest.raises(ConfigurationError):
        path.truncate(11)


def test_increment_field(small_basis):
    path = sample_increments(make_covariance(1.0, 8), 0.1, 2, seed=1)
    field = increment_field(path, 2, small_basis)
    np.testing.assert_array_equal(field.coeffs, path.increments[1])


def test_hs_norm_of_diagonal_operator(small_basis):
    cov = make_covariance(1.2, 40)
    gains = np.arange(1, 41, dtype=float) ** -0.3
    sqrt_q = cov.sqrt_eigenvalues

    def action(m):
        image = small_basis.zeros(40)
        image.coeffs[m - 1] = gains[m - 1] * sqrt_q[m - 1]
        return image

    for r in (0.0, 0.5, 1.0):
        assert hs_norm(action, cov, r) == pytest.approx(diagonal_hs_norm(gains, cov, r, small_basis), rel=1e-12)
