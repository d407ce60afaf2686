from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional, Sequence
import logging

import numpy as np
from scipy import linalg

from src.core.spectral_core import SQRT2, EigenBasis, SobolevVector
from src.utils.exceptions import ConfigurationError, DomainError, NumericError, ShapeError

logger = logging.getLogger(__name__)

SPECTRAL = "spectral"
FEM_P1 = "fem_p1"
_ORTHONORMALITY_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class GalerkinSpace:
    """Finite-dimensional subspace S_h with its mass/stiffness data and discrete spectrum

    Mass and stiffness are kept in symmetric upper banded form (row 0 the
    superdiagonal, row 1 the diagonal). The spectral kind is diagonal and has
    no stored eigenvector matrix: its discrete eigenvectors are the
    coordinate vectors.
    """
    kind: str
    size: int
    h: float
    nodes: np.ndarray
    mass_band: np.ndarray
    stiffness_band: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: Optional[np.ndarray] = None

    @property
    def dim(self) -> int:
        return int(self.eigenvalues.size)

    @property
    def is_spectral(self) -> bool:
        return self.kind == SPECTRAL

    @property
    def mass(self) -> np.ndarray:
        return _dense(self.mass_band)

    @property
    def stiffness(self) -> np.ndarray:
        return _dense(self.stiffness_band)

    def describe(self) -> str:
        if self.is_spectral:
            return f"spectral(N={self.size})"
        return f"fem_p1(elements={self.size})"

    def mass_apply(self, coords: np.ndarray) -> np.ndarray:
        if self.is_spectral:
            return np.array(coords, dtype=float, copy=True)
        return _band_apply(self.mass_band, coords)

    def stiffness_apply(self, coords: np.ndarray) -> np.ndarray:
        if self.is_spectral:
            return _diag_scale(self.eigenvalues, coords)
        return _band_apply(self.stiffness_band, coords)

    def solve_mass(self, rhs: np.ndarray) -> np.ndarray:
        if self.is_spectral:
            return np.array(rhs, dtype=float, copy=True)
        return linalg.solveh_banded(self.mass_band, rhs)

    def solve_stiffness(self, rhs: np.ndarray) -> np.ndarray:
        if self.is_spectral:
            return _diag_scale(1.0 / self.eigenvalues, rhs)
        return linalg.solveh_banded(self.stiffness_band, rhs)

    def shifted_solver(self, k: float) -> Callable[[np.ndarray], np.ndarray]:
        """Solver for (M + kK) c = b, factorized once"""
        if self.is_spectral:
            denom = 1.0 + k * self.eigenvalues
            return lambda rhs: _diag_scale(1.0 / denom, rhs) if np.ndim(rhs) > 1 else rhs / denom
        factor = linalg.cholesky_banded(self.mass_band + k * self.stiffness_band)
        return lambda rhs: linalg.cho_solve_banded((factor, False), rhs)


@dataclass(frozen=True, eq=False)
class DiscreteField:
    """Element of S_h in nodal (FEM) or modal (spectral) coordinates"""
    coords: np.ndarray
    space: GalerkinSpace

    def __post_init__(self):
        if self.coords.shape != (self.space.dim,):
            raise ShapeError(f"expected {self.space.dim} coordinates, got shape {self.coords.shape}")

    def norm(self) -> float:
        """||x_h|| = (c^T M c)^(1/2)"""
        return float(np.sqrt(max(np.dot(self.coords, self.space.mass_apply(self.coords)), 0.0)))

    def energy(self) -> float:
        """a(x_h, x_h) = c^T K c"""
        return float(np.dot(self.coords, self.space.stiffness_apply(self.coords)))

    def __sub__(self, other: "DiscreteField") -> "DiscreteField":
        return DiscreteField(self.coords - other.coords, self.space)


def _dense(band: np.ndarray) -> np.ndarray:
    return np.diag(band[1]) + np.diag(band[0, 1:], 1) + np.diag(band[0, 1:], -1)


def _band_apply(band: np.ndarray, coords: np.ndarray) -> np.ndarray:
    coords = np.asarray(coords, dtype=float)
    diag = band[1] if coords.ndim == 1 else band[1][:, None]
    off = band[0, 1:] if coords.ndim == 1 else band[0, 1:][:, None]
    out = diag * coords
    out[:-1] += off * coords[1:]
    out[1:] += off * coords[:-1]
    return out


def _diag_scale(diag: np.ndarray, coords: np.ndarray) -> np.ndarray:
    coords = np.asarray(coords, dtype=float)
    return diag * coords if coords.ndim == 1 else diag[:, None] * coords


def make_spectral_space(basis: EigenBasis, N: int) -> GalerkinSpace:
    """S_h = span{e_1..e_N} with h = lambda_{N+1}^(-1/2)"""
    if N < 1 or N >= basis.mode_count:
        raise ConfigurationError(
            f"spectral space needs 1 <= N < {basis.mode_count} reference modes, got N={N}"
        )
    lam = basis.eigenvalues[:N].copy()
    return GalerkinSpace(
        kind=SPECTRAL,
        size=N,
        h=float(basis.eigenvalues[N] ** -0.5),
        nodes=np.empty(0),
        mass_band=np.vstack([np.zeros(N), np.ones(N)]),
        stiffness_band=np.vstack([np.zeros(N), lam]),
        eigenvalues=lam,
    )


def make_fem_space(num_elements: int) -> GalerkinSpace:
    """Piecewise linear elements on a uniform mesh of (0,1), zero on the boundary"""
    if num_elements < 2:
        raise ConfigurationError(f"num_elements must be at least 2, got {num_elements}")
    h = 1.0 / num_elements
    dim = num_elements - 1
    nodes = h * np.arange(1, num_elements)
    off = np.zeros(dim)
    off[1:] = 1.0
    mass_band = np.vstack([off * (h / 6.0), np.full(dim, 2.0 * h / 3.0)])
    stiffness_band = np.vstack([off * (-1.0 / h), np.full(dim, 2.0 / h)])

    eigenvalues, eigenvectors = linalg.eigh(_dense(stiffness_band), _dense(mass_band))
    residual = np.max(np.abs(eigenvectors.T @ _band_apply(mass_band, eigenvectors) - np.eye(dim)))
    if residual > _ORTHONORMALITY_TOL:
        raise NumericError(f"generalized eigenvectors not M-orthonormal (residual {residual:.2e})")
    logger.debug(f"FEM space with {num_elements} elements, lambda_h1={eigenvalues[0]:.6f}")
    return GalerkinSpace(
        kind=FEM_P1,
        size=num_elements,
        h=h,
        nodes=nodes,
        mass_band=mass_band,
        stiffness_band=stiffness_band,
        eigenvalues=eigenvalues,
        eigenvectors=eigenvectors,
    )


def make_space(kind: str, size: int, basis: EigenBasis) -> GalerkinSpace:
    if kind == SPECTRAL:
        return make_spectral_space(basis, size)
    if kind in (FEM_P1, "fem"):
        return make_fem_space(size)
    raise ConfigurationError(f"unknown space kind '{kind}'")


@lru_cache(maxsize=64)
def coupling_matrix(space: GalerkinSpace, length: int) -> np.ndarray:
    """(phi_i, e_n) for the FEM hat basis, n = 1..length, in closed form

    The integral of a hat of width 2h centred at x_i against sin(w y) is
    sin(w x_i) * 4 sin^2(w h / 2) / (w^2 h).
    """
    if space.is_spectral:
        raise ConfigurationError("spectral spaces couple by coefficient truncation")
    w = np.pi * np.arange(1, length + 1)
    sigma = 4.0 * np.sin(0.5 * w * space.h) ** 2 / (w ** 2 * space.h)
    matrix = SQRT2 * np.sin(np.outer(space.nodes, w)) * sigma
    matrix.flags.writeable = False
    return matrix


@lru_cache(maxsize=64)
def modal_coupling(space: GalerkinSpace, length: int) -> np.ndarray:
    """(phi_{h,m}, e_n) for the discrete eigenvectors, shape (dim, length)"""
    if space.is_spectral:
        matrix = np.zeros((space.dim, length))
        n = min(space.dim, length)
        matrix[np.arange(n), np.arange(n)] = 1.0
    else:
        matrix = space.eigenvectors.T @ coupling_matrix(space, length)
    matrix.flags.writeable = False
    return matrix


def load_vector(space: GalerkinSpace, coeffs: np.ndarray) -> np.ndarray:
    """b_i = <x, phi_i> for a reference-frame coefficient sequence"""
    coeffs = np.asarray(coeffs, dtype=float)
    if space.is_spectral:
        out = np.zeros(space.dim)
        n = min(space.dim, coeffs.size)
        out[:n] = coeffs[:n]
        return out
    return coupling_matrix(space, coeffs.size) @ coeffs


def load_rows(space: GalerkinSpace, rows: np.ndarray) -> np.ndarray:
    """load_vector applied to every row of a 2D block"""
    rows = np.asarray(rows, dtype=float)
    if space.is_spectral:
        out = np.zeros((rows.shape[0], space.dim))
        n = min(space.dim, rows.shape[1])
        out[:, :n] = rows[:, :n]
        return out
    return rows @ coupling_matrix(space, rows.shape[1]).T


def lift_coords(space: GalerkinSpace, coords: np.ndarray, length: int) -> np.ndarray:
    """(x_h, e_n), n = 1..length"""
    if space.is_spectral:
        out = np.zeros(length)
        n = min(space.dim, length)
        out[:n] = coords[:n]
        return out
    return coupling_matrix(space, length).T @ coords


def modal_apply(space: GalerkinSpace, coords: np.ndarray, factors: np.ndarray) -> np.ndarray:
    """Scale discrete eigenmode m by factors[m]"""
    if space.is_spectral:
        return factors * coords
    v = space.eigenvectors
    return v @ (factors * (v.T @ space.mass_apply(coords)))


def rational(z):
    """R(z) = 1/(1+z), the implicit Euler rational function"""
    return 1.0 / (1.0 + np.asarray(z, dtype=float))


def project_l2(space: GalerkinSpace, x: SobolevVector) -> DiscreteField:
    """P_h x: M c = b with b_i = <x, phi_i>"""
    b = load_vector(space, x.coeffs)
    return DiscreteField(space.solve_mass(b), space)


def project_ritz(space: GalerkinSpace, x: SobolevVector) -> DiscreteField:
    """R_h x: K c = r with r_i = a(x, phi_i) = lambda_n-weighted load"""
    r = load_vector(space, x.eigenvalues * x.coeffs)
    return DiscreteField(space.solve_stiffness(r), space)


def apply_Ah(space: GalerkinSpace, x_h: DiscreteField) -> DiscreteField:
    """A_h x_h = M^{-1} K c"""
    return DiscreteField(space.solve_mass(space.stiffness_apply(x_h.coords)), space)


def discrete_semigroup(space: GalerkinSpace, x_h: DiscreteField, t: float) -> DiscreteField:
    """E_h(t) x_h via the discrete eigendecomposition"""
    if t < 0:
        raise DomainError(f"semigroup time must be nonnegative, got {t}")
    return DiscreteField(modal_apply(space, x_h.coords, np.exp(-space.eigenvalues * t)), space)


def rational_step(space: GalerkinSpace, x_h: DiscreteField, k: float, j: int) -> DiscreteField:
    """R(k A_h)^j x_h = (I + k A_h)^{-j} x_h"""
    if k <= 0:
        raise DomainError(f"time step must be positive, got {k}")
    if j < 0:
        raise DomainError(f"power must be nonnegative, got {j}")
    if j == 0:
        return DiscreteField(x_h.coords.copy(), space)
    return DiscreteField(modal_apply(space, x_h.coords, rational(k * space.eigenvalues) ** j), space)


def implicit_euler_steps(space: GalerkinSpace, x_h: DiscreteField, k: float, j: int) -> DiscreteField:
    """j successive solves of (M + kK) c_new = M c"""
    solve = space.shifted_solver(k)
    coords = x_h.coords
    for _ in range(j):
        coords = solve(space.mass_apply(coords))
    return DiscreteField(np.asarray(coords, dtype=float), space)


def discrete_fractional(space: GalerkinSpace, x_h: DiscreteField, s: float) -> DiscreteField:
    """A_h^s x_h"""
    if s == 0:
        return DiscreteField(x_h.coords.copy(), space)
    return DiscreteField(modal_apply(space, x_h.coords, space.eigenvalues ** s), space)


def lift(space: GalerkinSpace, x_h: DiscreteField, basis: EigenBasis) -> SobolevVector:
    """Embed x_h into the reference frame: coefficients (x_h, e_n)"""
    return SobolevVector(lift_coords(space, x_h.coords, basis.mode_count), basis)


def ph_stability_constant(space: GalerkinSpace, basis: EigenBasis) -> float:
    """Operator norm of P_h on the H^1-type space, at the reference truncation

    The squared norm is the largest eigenvalue of G S with the H^{-1} Gram
    matrix G = Phi Lambda^{-1} Phi^T of the hat functions and
    S = M^{-1} K M^{-1}.
    """
    if space.is_spectral:
        return 1.0
    phi = coupling_matrix(space, basis.mode_count)
    gram = (phi / basis.eigenvalues) @ phi.T
    inv_s = space.mass @ space.solve_stiffness(space.mass)
    top = linalg.eigh(gram, 0.5 * (inv_s + inv_s.T), eigvals_only=True)[-1]
    return float(np.sqrt(top))


def ritz_error_norms(space: GalerkinSpace, basis: EigenBasis, modes: Sequence[int]) -> np.ndarray:
    """||R_h e_n - e_n|| for each listed mode, without lift truncation

    ||R_h e_n - e_n||^2 = c^T M c - 2 (phi . c) + 1 with K c = lambda_n phi_n.
    """
    modes = np.asarray(modes, dtype=int)
    if space.is_spectral:
        return np.where(modes <= space.dim, 0.0, 1.0)
    phi = coupling_matrix(space, int(modes.max()))[:, modes - 1]
    coords = space.solve_stiffness(phi * basis.eigenvalues[modes - 1])
    sq = np.sum(coords * space.mass_apply(coords), axis=0) - 2.0 * np.sum(phi * coords, axis=0) + 1.0
    return np.sqrt(np.maximum(sq, 0.0))
