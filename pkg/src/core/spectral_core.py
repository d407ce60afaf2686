from dataclasses import dataclass
from typing import Optional, Sequence, Union
import logging

import numpy as np
from scipy import fft

from src.utils.exceptions import ConfigurationError, DomainError, ShapeError

logger = logging.getLogger(__name__)

SQRT2 = np.sqrt(2.0)
_EVAL_CHUNK = 512


@dataclass(frozen=True, eq=False)
class EigenBasis:
    """Eigenpairs of the 1D Dirichlet Laplacian on (0,1) and a matching quadrature

    The quadrature is the composite one-point Gauss-Legendre (midpoint) rule
    on uniform panels. With at least ``mode_count + 1`` panels it integrates
    every product e_n e_m with n, m <= mode_count exactly, and synthesis and
    analysis on its nodes are sine transforms.
    """
    mode_count: int
    eigenvalues: np.ndarray
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def quadrature_size(self) -> int:
        return int(self.nodes.size)

    @property
    def frequencies(self) -> np.ndarray:
        return np.pi * np.arange(1, self.mode_count + 1)

    def eigenfunction(self, n: int, y: Union[float, np.ndarray]) -> np.ndarray:
        """e_n(y) = sqrt(2) sin(n pi y)"""
        return SQRT2 * np.sin(n * np.pi * np.asarray(y, dtype=float))

    def vector(self, coeffs: Sequence[float]) -> "SobolevVector":
        return SobolevVector(np.asarray(coeffs, dtype=float), self)

    def zeros(self, length: Optional[int] = None) -> "SobolevVector":
        return SobolevVector(np.zeros(length or self.mode_count), self)

    def unit(self, n: int, length: Optional[int] = None) -> "SobolevVector":
        """The eigenvector e_n as a coefficient sequence"""
        coeffs = np.zeros(length or self.mode_count)
        coeffs[n - 1] = 1.0
        return SobolevVector(coeffs, self)


@dataclass(frozen=True, eq=False)
class SobolevVector:
    """Truncated coefficient sequence (x, e_n), n = 1..len(coeffs)"""
    coeffs: np.ndarray
    basis: EigenBasis

    def __post_init__(self):
        if self.coeffs.ndim != 1:
            raise ShapeError(f"coefficients must be one-dimensional, got shape {self.coeffs.shape}")
        if self.coeffs.size > self.basis.mode_count:
            raise ShapeError(
                f"{self.coeffs.size} coefficients exceed the reference truncation {self.basis.mode_count}"
            )

    @property
    def size(self) -> int:
        return int(self.coeffs.size)

    @property
    def eigenvalues(self) -> np.ndarray:
        return self.basis.eigenvalues[: self.size]

    def padded(self, length: Optional[int] = None) -> np.ndarray:
        length = length or self.basis.mode_count
        out = np.zeros(length)
        n = min(length, self.size)
        out[:n] = self.coeffs[:n]
        return out

    def truncated(self, length: int) -> "SobolevVector":
        return SobolevVector(self.padded(length), self.basis)

    def _combine(self, other: "SobolevVector", sign: float) -> "SobolevVector":
        length = max(self.size, other.size)
        return SobolevVector(self.padded(length) + sign * other.padded(length), self.basis)

    def __add__(self, other: "SobolevVector") -> "SobolevVector":
        return self._combine(other, 1.0)

    def __sub__(self, other: "SobolevVector") -> "SobolevVector":
        return self._combine(other, -1.0)

    def __neg__(self) -> "SobolevVector":
        return SobolevVector(-self.coeffs, self.basis)

    def __mul__(self, scalar: float) -> "SobolevVector":
        return SobolevVector(scalar * self.coeffs, self.basis)

    __rmul__ = __mul__


def build_basis(mode_count: int, quadrature_size: Optional[int] = None) -> EigenBasis:
    """Build the reference eigenbasis with ``mode_count`` modes"""
    if quadrature_size is None:
        quadrature_size = 2 * mode_count
    if mode_count < 1:
        raise ConfigurationError(f"mode_count must be positive, got {mode_count}")
    if quadrature_size < 2 * mode_count:
        raise ConfigurationError(
            f"quadrature_size {quadrature_size} cannot resolve {mode_count} modes (need >= {2 * mode_count})"
        )
    n = np.arange(1, mode_count + 1, dtype=float)
    nodes = (np.arange(quadrature_size) + 0.5) / quadrature_size
    weights = np.full(quadrature_size, 1.0 / quadrature_size)
    logger.debug(f"Built eigenbasis with {mode_count} modes and {quadrature_size} quadrature nodes")
    return EigenBasis(
        mode_count=mode_count,
        eigenvalues=(n * np.pi) ** 2,
        nodes=nodes,
        weights=weights,
    )


def sobolev_norm(v: SobolevVector, s: float) -> float:
    """||v||_s = (sum lambda_n^s c_n^2)^(1/2); any real s"""
    if s == 0:
        return float(np.sqrt(np.dot(v.coeffs, v.coeffs)))
    weighted = v.eigenvalues ** (0.5 * s) * v.coeffs
    return float(np.sqrt(np.dot(weighted, weighted)))


def inner(v: SobolevVector, w: SobolevVector) -> float:
    n = min(v.size, w.size)
    return float(np.dot(v.coeffs[:n], w.coeffs[:n]))


def apply_semigroup(v: SobolevVector, t: float) -> SobolevVector:
    """E(t)v = sum exp(-lambda_n t) c_n e_n"""
    if t < 0:
        raise DomainError(f"semigroup time must be nonnegative, got {t}")
    return SobolevVector(np.exp(-v.eigenvalues * t) * v.coeffs, v.basis)


def apply_fractional_power(v: SobolevVector, s: float) -> SobolevVector:
    """Scale mode n by lambda_n^s; s = r/2 realizes A^(r/2)"""
    if s == 0:
        return SobolevVector(v.coeffs.copy(), v.basis)
    return SobolevVector(v.eigenvalues ** s * v.coeffs, v.basis)


def evaluate_field(v: SobolevVector, points: Sequence[float]) -> np.ndarray:
    """Pointwise synthesis sum c_n e_n(y) at arbitrary interior points"""
    y = np.atleast_1d(np.asarray(points, dtype=float))
    if np.any(y <= 0.0) or np.any(y >= 1.0):
        raise DomainError("evaluation points must lie inside (0,1)")
    freq = v.basis.frequencies[: v.size]
    out = np.empty(y.size)
    for start in range(0, y.size, _EVAL_CHUNK):
        chunk = y[start:start + _EVAL_CHUNK]
        out[start:start + chunk.size] = SQRT2 * np.sin(np.outer(chunk, freq)) @ v.coeffs
    return out


def grid_values(v: SobolevVector) -> np.ndarray:
    """Synthesis on the quadrature nodes (type-III sine transform)"""
    q = v.basis.quadrature_size
    padded = np.zeros(q)
    padded[: v.size] = v.coeffs
    return fft.dst(padded, type=3) / SQRT2


def analyze_field(values: Sequence[float], basis: EigenBasis, mode_count: Optional[int] = None) -> SobolevVector:
    """Coefficients (u, e_n) of nodal samples by the quadrature rule (type-II sine transform)"""
    values = np.asarray(values, dtype=float)
    mode_count = mode_count or basis.mode_count
    if values.shape[0] != basis.quadrature_size:
        raise ShapeError(
            f"expected {basis.quadrature_size} nodal values, got {values.shape[0]}"
        )
    if mode_count > basis.mode_count:
        raise ConfigurationError(f"cannot analyze {mode_count} modes with a {basis.mode_count}-mode basis")
    coeffs = fft.dst(values, type=2, axis=0)[:mode_count] / (SQRT2 * basis.quadrature_size)
    return SobolevVector(coeffs, basis)


def analyze_columns(values: np.ndarray, basis: EigenBasis, mode_count: int) -> np.ndarray:
    """Column-wise analysis of a (quadrature_size, n) block"""
    if values.shape[0] != basis.quadrature_size:
        raise ShapeError(f"expected {basis.quadrature_size} rows, got {values.shape[0]}")
    return fft.dst(values, type=2, axis=0)[:mode_count] / (SQRT2 * basis.quadrature_size)


def smoothing_supremum(basis: EigenBasis, nu: float, t: float) -> float:
    """sup_n lambda_n^nu exp(-lambda_n t) over the reference modes"""
    lam = basis.eigenvalues
    return float(np.exp(np.max(nu * np.log(lam) - lam * t)))


def smoothing_bound(nu: float, t: float) -> float:
    """sup_{lambda > 0} lambda^nu exp(-lambda t) = (nu/e)^nu t^-nu"""
    if nu == 0:
        return 1.0
    return float((nu / np.e) ** nu * t ** (-nu))


def semigroup_defect_supremum(basis: EigenBasis, nu: float, t: float) -> float:
    """sup_n lambda_n^-nu (1 - exp(-lambda_n t)), bounded by t^nu for nu in [0,1]"""
    lam = basis.eigenvalues
    return float(np.max(lam ** (-nu) * -np.expm1(-lam * t)))
