import numpy as np
import pytest
from scipy.integrate import quad

from src.core.galerkin_space import (
    DiscreteField,
    apply_Ah,
    coupling_matrix,
    discrete_fractional,
    discrete_semigroup,
    implicit_euler_steps,
    lift,
    make_fem_space,
    make_space,
    make_spectral_space,
    ph_stability_constant,
    project_l2,
    project_ritz,
    rational_step,
    ritz_error_norms,
)
from src.core.spectral_core import SobolevVector, apply_fractional_power, sobolev_norm
from src.utils.exceptions import ConfigurationError, DomainError, ShapeError


def random_vector(rng, basis, decay=1.0):
    n = np.arange(1, basis.mode_count + 1)
    return SobolevVector(rng.standard_normal(basis.mode_count) * n ** -decay, basis)


@pytest.fixture(params=["spectral", "fem_p1"])
def space(request, basis):
    return make_space(request.param, 16, basis)


def test_fem_assembly_and_discrete_spectrum():
    space = make_fem_space(8)
    h = 1.0 / 8
    assert space.dim == 7
    np.testing.assert_allclose(np.diag(space.mass), 2.0 * h / 3.0)
    np.testing.assert_allclose(np.diag(space.stiffness, 1), -1.0 / h)
    n = np.arange(1, 8)
    c = np.cos(n * np.pi * h)
    expected = 6.0 / h ** 2 * (1.0 - c) / (2.0 + c)
    np.testing.assert_allclose(space.eigenvalues, expected, rtol=1e-10)
    assert space.eigenvalues[0] > np.pi ** 2


def test_fem_eigenvectors_are_mass_orthonormal():
    space = make_fem_space(32)
    v = space.eigenvectors
    np.testing.assert_allclose(v.T @ space.mass @ v, np.eye(space.dim), atol=1e-10)


def test_space_constructors_validate(basis):
    with pytest.raises(ConfigurationError):
        make_spectral_space(basis, basis.mode_count)
    with pytest.raises(ConfigurationError):
        make_fem_space(1)
    with pytest.raises(ConfigurationError):
        make_space("fem_p2", 8, basis)
    assert make_space("fem", 8, basis).kind == "fem_p1"


def test_spectral_mesh_size(basis):
    space = make_spectral_space(basis, 15)
    assert space.h == pytest.approx(1.0 / (16 * np.pi))
    assert space.eigenvectors is None


def test_discrete_field_shape_check(space):
    with pytest.raises(ShapeError):
        DiscreteField(np.zeros(space.dim + 1), space)


def test_coupling_matrix_closed_form():
    space = make_fem_space(8)
    phi = coupling_matrix(space, 20)
    h = space.h
    for i in (0, 3, 6):
        xi = space.nodes[i]
        for n in (1, 5, 20):
            hat = lambda y: max(0.0, 1.0 - abs(y - xi) / h) * np.sqrt(2.0) * np.sin(n * np.pi * y)
            exact, _ = quad(hat, xi - h, xi + h, points=[xi], epsabs=1e-14, epsrel=1e-13)
            assert phi[i, n - 1] == pytest.approx(exact, abs=1e-12)
    with pytest.raises(ValueError):
        phi[0, 0] = 1.0


def test_spectral_projection_truncates(basis, rng):
    space = make_spectral_space(basis, 10)
    x = random_vector(rng, basis)
    np.testing.assert_array_equal(project_l2(space, x).coords, x.coeffs[:10])
    np.testing.assert_allclose(project_ritz(space, x).coords, x.coeffs[:10], rtol=0, atol=1e-12)


def test_discrete_norm_identity(space, rng):
    # ||A_h^{1/2} y_h||^2 = a(y_h, y_h)
    for _ in range(20):
        y = DiscreteField(rng.standard_normal(space.dim), space)
        assert discrete_fractional(space, y, 0.5).norm() ** 2 == pytest.approx(y.energy(), rel=1e-10)


def test_discrete_negative_norm_is_bounded(space, basis, rng):
    # ||A_h^{-1/2} P_h x|| <= ||x||_{-1}
    for decay in (0.0, 1.0):
        for _ in range(20):
            x = random_vector(rng, basis, decay=decay)
            discrete = discrete_fractional(space, project_l2(space, x), -0.5).norm()
            assert discrete <= sobolev_norm(x, -1.0) * (1.0 + 1e-10)


def test_inverse_relation_between_projectors(space, basis, rng):
    # A_h^{-1} P_h x = R_h A^{-1} x
    for _ in range(20):
        x = random_vector(rng, basis)
        left = discrete_fractional(space, project_l2(space, x), -1.0).coords
        right = project_ritz(space, apply_fractional_power(x, -1.0)).coords
        np.testing.assert_allclose(left, right, rtol=1e-10, atol=1e-14)


def test_ritz_projection_is_galerkin_orthogonal(basis, rng):
    space = make_fem_space(16)
    x = random_vector(rng, basis, decay=2.0)
    coords = project_ritz(space, x).coords
    # a(R_h x - x, phi_i) = K c - (lambda x, phi_i)
    residual = space.stiffness_apply(coords) - coupling_matrix(space, basis.mode_count) @ (x.eigenvalues * x.coeffs)
    np.testing.assert_allclose(residual, 0.0, atol=1e-10 * np.abs(space.stiffness_apply(coords)).max())


def test_l2_projection_of_discrete_function(basis, rng):
    space = make_fem_space(8)
    x_h = DiscreteField(rng.standard_normal(space.dim), space)
    again = project_l2(space, lift(space, x_h, basis))
    np.testing.assert_allclose(again.coords, x_h.coords, atol=1e-4)


def test_lift_preserves_norm_up_to_truncation(basis, rng):
    space = make_fem_space(8)
    x_h = DiscreteField(rng.standard_normal(space.dim), space)
    lifted = lift(space, x_h, basis)
    assert np.linalg.norm(lifted.coeffs) == pytest.approx(x_h.norm(), rel=1e-4)


def test_rational_step_contracts_and_matches_solves(space, rng):
    x = DiscreteField(rng.standard_normal(space.dim), space)
    previous = x.norm()
    for j in range(1, 6):
        step = rational_step(space, x, 0.01, j)
        assert step.norm() <= previous * (1.0 + 1e-12)
        previous = step.norm()
    np.testing.assert_allclose(rational_step(space, x, 0.01, 5).coords,
                               implicit_euler_steps(space, x, 0.01, 5).coords, rtol=1e-10, atol=1e-13)
    np.testing.assert_array_equal(rational_step(space, x, 0.01, 0).coords, x.coords)


def test_operator_domain_errors(space, rng):
    x = DiscreteField(rng.standard_normal(space.dim), space)
    with pytest.raises(DomainError):
        discrete_semigroup(space, x, -0.1)
    with pytest.raises(DomainError):
        rational_step(space, x, 0.0, 1)
    with pytest.raises(DomainError):
        rational_step(space, x, 0.1, -1)


def test_discrete_semigroup_decays_like_lowest_mode(space):
    x = DiscreteField(np.ones(space.dim), space)
    t = 0.1
    ratio = discrete_semigroup(space, x, t).norm() / x.norm()
    assert ratio <= np.exp(-space.eigenvalues[0] * t) * (1.0 + 1e-12)


def test_ritz_error_converges_at_second_order(basis):
    errors = [ritz_error_norms(make_fem_space(n), basis, [1])[0] for n in (16, 32, 64)]
    assert errors[0] < 0.01
    for coarse, fine in zip(errors, errors[1:]):
        assert 3.5 < coarse / fine < 4.5


def test_spectral_ritz_error_is_exact(basis):
    space = make_spectral_space(basis, 8)
    np.testing.assert_array_equal(ritz_error_norms(space, basis, [1, 8, 9]), [0.0, 0.0, 1.0])


def test_ph_stability_constants(basis):
    assert ph_stability_constant(make_spectral_space(basis, 8), basis) == 1.0
    for n in (8, 16):
        constant = ph_stability_constant(make_fem_space(n), basis)
        assert 0.9 < constant < 10.0


def test_apply_Ah_matches_discrete_spectrum(space):
    v = space.eigenvectors[:, 2] if space.eigenvectors is not None else np.eye(space.dim)[2]
    image = apply_Ah(space, DiscreteField(v.copy(), space))
    np.testing.assert_allclose(image.coords, space.eigenvalues[2] * v, rtol=1e-9, atol=1e-9 * space.eigenvalues[2])
