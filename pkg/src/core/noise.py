from dataclasses import dataclass, field
from typing import Callable, Optional, Union
import hashlib
import logging

import numpy as np
from scipy.special import ndtri

from src.core.spectral_core import EigenBasis, SobolevVector
from src.utils.exceptions import ConfigurationError

logger = logging.getLogger(__name__)

# 64-bit uniforms carry 53 random bits; the half-ulp shift keeps them off 0
_UNIFORM_SHIFT = 2.0 ** -54
_PHILOX_WORDS = 4


@dataclass(frozen=True, eq=False)
class CovarianceSpec:
    """Diagonal covariance Q with q_m = m^(-2 beta) against the eigenbasis"""
    beta: float
    truncation: int
    eigenvalues: np.ndarray

    @property
    def trace(self) -> float:
        return float(np.sum(self.eigenvalues))

    @property
    def tail_bound(self) -> float:
        """Upper bound of sum_{m > truncation} q_m by the integral test"""
        return float(self.truncation ** (1.0 - 2.0 * self.beta) / (2.0 * self.beta - 1.0))

    @property
    def sqrt_eigenvalues(self) -> np.ndarray:
        return np.sqrt(self.eigenvalues)


def make_covariance(beta: float, truncation: int) -> CovarianceSpec:
    if not beta > 0.5:
        raise ConfigurationError(
            f"beta must exceed 1/2 for Q to be trace class (sum m^(-2 beta) diverges), got beta={beta}"
        )
    if truncation < 1:
        raise ConfigurationError(f"noise truncation must be positive, got {truncation}")
    m = np.arange(1, truncation + 1, dtype=float)
    return CovarianceSpec(beta=float(beta), truncation=int(truncation), eigenvalues=m ** (-2.0 * beta))


@dataclass(frozen=True, eq=False)
class NoisePath:
    """Truncated Q-Wiener increments on the grid t_j = j k

    ``increments[j - 1, m - 1]`` holds (Delta W^j, e_m). ``source_checksum``
    identifies the fine path a coarsened path was summed from.
    """
    k: float
    steps: int
    increments: np.ndarray
    seed: int
    covariance: CovarianceSpec
    first_step: int = 0
    source_checksum: Optional[str] = None
    checksum: str = field(init=False)

    def __post_init__(self):
        self.increments.flags.writeable = False
        digest = hashlib.sha256(np.ascontiguousarray(self.increments).tobytes()).hexdigest()
        object.__setattr__(self, "checksum", digest)

    @property
    def times(self) -> np.ndarray:
        return self.k * np.arange(self.steps + 1)

    @property
    def origin_checksum(self) -> str:
        """Checksum of the fine increments this path was built from"""
        return self.source_checksum or self.checksum

    def increment(self, j: int) -> np.ndarray:
        """(Delta W^j, e_m) for j = 1..steps"""
        return self.increments[j - 1]

    def truncate(self, steps: int) -> "NoisePath":
        if not 1 <= steps <= self.steps:
            raise ConfigurationError(f"cannot truncate a {self.steps}-step path to {steps} steps")
        return NoisePath(
            k=self.k,
            steps=steps,
            increments=self.increments[:steps].copy(),
            seed=self.seed,
            covariance=self.covariance,
            first_step=self.first_step,
            source_checksum=self.source_checksum,
        )


def _stride(truncation: int) -> int:
    return _PHILOX_WORDS * -(-truncation // _PHILOX_WORDS)


def standard_normals(seed: int, first_step: int, steps: int, truncation: int) -> np.ndarray:
    """Counter-based standard normals xi_{j,m}, rows j = first_step+1 .. first_step+steps

    Row j is produced from Philox counter blocks that depend only on
    (seed, j), so any sub-range of steps regenerates the same values.
    """
    if seed < 0:
        raise ConfigurationError(f"noise seed must be nonnegative, got {seed}")
    stride = _stride(truncation)
    bit_generator = np.random.Philox(key=seed, counter=first_step * stride // _PHILOX_WORDS)
    uniforms = np.random.Generator(bit_generator).random((steps, stride))
    return ndtri(uniforms[:, :truncation] + _UNIFORM_SHIFT)


def sample_increments(cov: CovarianceSpec, k: float, steps: int, seed: int, first_step: int = 0) -> NoisePath:
    """Delta W^j coefficients sqrt(q_m k) xi_{j,m}"""
    if k <= 0:
        raise ConfigurationError(f"time step must be positive, got {k}")
    if steps < 1:
        raise ConfigurationError(f"steps must be positive, got {steps}")
    xi = standard_normals(seed, first_step, steps, cov.truncation)
    increments = xi * np.sqrt(cov.eigenvalues * k)
    logger.debug(f"Sampled {steps} increments with {cov.truncation} modes (seed={seed})")
    return NoisePath(k=k, steps=steps, increments=increments, seed=seed, covariance=cov, first_step=first_step)


def coarsen_path(path: NoisePath, factor: int) -> NoisePath:
    """Sum consecutive blocks of ``factor`` fine increments, ascending in j"""
    if factor < 1 or path.steps % factor != 0:
        raise ConfigurationError(f"factor {factor} does not divide the {path.steps} steps of the path")
    if factor == 1:
        return path
    acc = path.increments[0::factor].copy()
    for offset in range(1, factor):
        acc = acc + path.increments[offset::factor]
    return NoisePath(
        k=path.k * factor,
        steps=path.steps // factor,
        increments=acc,
        seed=path.seed,
        covariance=path.covariance,
        first_step=path.first_step // factor,
        source_checksum=path.origin_checksum,
    )


def increment_field(path: NoisePath, j: int, basis: EigenBasis) -> SobolevVector:
    """Delta W^j as an H-valued coefficient vector in the reference frame"""
    return SobolevVector(np.asarray(path.increment(j)), basis)


OpAction = Callable[[int], Union[SobolevVector, np.ndarray]]


def hs_norm(op_action: OpAction, cov: CovarianceSpec, r: float, basis: Optional[EigenBasis] = None) -> float:
    """||Phi||_{L_{2,r}^0} = (sum_m ||A^{r/2} Phi q_m^{1/2} e_m||^2)^{1/2}

    ``op_action(m)`` returns the image of q_m^{1/2} e_m, as a SobolevVector
    or as a raw coefficient array (which then needs ``basis`` for r != 0).
    """
    total = 0.0
    for m in range(1, cov.truncation + 1):
        image = op_action(m)
        coeffs = image.coeffs if isinstance(image, SobolevVector) else np.asarray(image, dtype=float)
        if r != 0:
            lam = (image.basis if isinstance(image, SobolevVector) else basis).eigenvalues[: coeffs.size]
            coeffs = lam ** (0.5 * r) * coeffs
        total += float(np.dot(coeffs, coeffs))
    return float(np.sqrt(total))


def diagonal_hs_norm(gains: np.ndarray, cov: CovarianceSpec, r: float, basis: EigenBasis) -> float:
    """hs_norm for Phi e_m = gains[m] e_m in closed form: (sum q_m gains_m^2 lambda_m^r)^{1/2}"""
    n = min(gains.size, cov.truncation)
    weights = cov.eigenvalues[:n] * gains[:n] ** 2
    if r != 0:
        weights = weights * basis.eigenvalues[:n] ** r
    return float(np.sqrt(np.sum(weights)))
