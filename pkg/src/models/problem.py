from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Optional
import logging

import numpy as np

from src.core.noise import CovarianceSpec, diagonal_hs_norm, make_covariance
from src.core.spectral_core import (
    SQRT2,
    EigenBasis,
    SobolevVector,
    analyze_columns,
    analyze_field,
    apply_fractional_power,
    grid_values,
    sobolev_norm,
)
from src.utils.exceptions import ConfigurationError

logger = logging.getLogger(__name__)

# beta + beta_g = r + REGULARITY_MARGIN keeps sum lambda_m^r q_m gamma_m^2 finite with room 0.1
REGULARITY_MARGIN = 0.55
_PROBE_MODES = 64
_HS_CHUNK = 256


@dataclass(frozen=True)
class ScalarMap:
    """Pointwise map xi -> phi(xi) with its declared Lipschitz constant"""
    name: str
    func: Callable[[np.ndarray], np.ndarray]
    lipschitz: float
    slope: Optional[float] = None  # set when the map is linear through 0
    sup: Optional[float] = None

    def __call__(self, values: np.ndarray) -> np.ndarray:
        return self.func(values)


SCALAR_MAPS: Dict[str, ScalarMap] = {
    "identity": ScalarMap("identity", lambda x: np.array(x, dtype=float, copy=True), 1.0, slope=1.0),
    "sin": ScalarMap("sin", np.sin, 1.0, sup=1.0),
    "neg_sin": ScalarMap("neg_sin", lambda x: -np.sin(x), 1.0, sup=1.0),
    "half_sin_plus_one": ScalarMap("half_sin_plus_one", lambda x: 1.0 + 0.5 * np.sin(x), 0.5, sup=1.5),
    "two_sin_two_plus_one": ScalarMap("two_sin_two_plus_one", lambda x: 1.0 + 2.0 * np.sin(2.0 * x), 4.0, sup=3.0),
    "zero": ScalarMap("zero", np.zeros_like, 0.0, slope=0.0, sup=0.0),
    "one": ScalarMap("one", np.ones_like, 0.0, sup=1.0),
}


def scalar_map(name: str) -> ScalarMap:
    try:
        return SCALAR_MAPS[name]
    except KeyError:
        raise ConfigurationError(f"unknown scalar map '{name}' (known: {', '.join(SCALAR_MAPS)})")


@dataclass(frozen=True)
class DriftSpec:
    kind: str  # zero | nemytskii | fractional_nemytskii
    phi: ScalarMap = SCALAR_MAPS["zero"]
    exponent: float = 0.0


@dataclass(frozen=True, eq=False)
class DiffusionSpec:
    kind: str  # additive | linear_diagonal | nemytskii_mult
    gains: Optional[np.ndarray] = None
    sigma: Optional[ScalarMap] = None
    scale: float = 1.0


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """dX + (AX + f(X)) dt = g(X) dW on (0,1) with Dirichlet conditions"""
    name: str
    r: float
    p: float
    T: float
    drift: DriftSpec
    diffusion: DiffusionSpec
    initial: SobolevVector
    covariance: CovarianceSpec

    def __post_init__(self):
        if not 0.0 <= self.r <= 1.0:
            raise ConfigurationError(f"regularity r must lie in [0,1], got {self.r}")
        if self.p < 2:
            raise ConfigurationError(f"moment order p must be at least 2, got {self.p}")
        if self.T <= 0:
            raise ConfigurationError(f"final time T must be positive, got {self.T}")
        if self.covariance.truncation > self.basis.mode_count:
            raise ConfigurationError(
                f"noise truncation {self.covariance.truncation} exceeds the reference truncation {self.basis.mode_count}"
            )
        if self.drift.kind == "fractional_nemytskii" and self.drift.exponent > 0.5 * (1.0 - self.r) + 1e-12:
            raise ConfigurationError(
                f"drift exponent {self.drift.exponent} exceeds (1-r)/2 = {0.5 * (1.0 - self.r)}"
            )

    @property
    def basis(self) -> EigenBasis:
        return self.initial.basis

    @property
    def is_deterministic(self) -> bool:
        d = self.diffusion
        if d.kind == "nemytskii_mult":
            return d.sigma.sup == 0.0
        return d.gains is None or not np.any(d.gains)

    @property
    def needs_coefficients(self) -> bool:
        """Whether the diffusion acts on modal coefficients rather than grid values"""
        return self.diffusion.kind == "linear_diagonal"

    @property
    def drift_slope(self) -> Optional[float]:
        """c when f(u) = c u, None for nonlinear or fractional drifts"""
        if self.drift.kind == "zero":
            return 0.0
        if self.drift.kind == "nemytskii":
            return self.drift.phi.slope
        return None

    @property
    def f_lipschitz_bound(self) -> float:
        """Declared C in ||f(u) - f(v)||_{-1+r} <= C ||u - v||"""
        lam1 = self.basis.eigenvalues[0]
        if self.drift.kind == "zero":
            return 0.0
        if self.drift.kind == "nemytskii":
            return self.drift.phi.lipschitz * lam1 ** (0.5 * (self.r - 1.0))
        return self.drift.phi.lipschitz * lam1 ** (self.drift.exponent - 0.5 * (1.0 - self.r))

    @property
    def g_lipschitz_bound(self) -> float:
        """Declared C in ||g(u) - g(v)||_{L_2^0} <= C ||u - v||"""
        d = self.diffusion
        if d.kind == "additive":
            return 0.0
        if d.kind == "linear_diagonal":
            n = self.covariance.truncation
            return float(abs(d.scale) * np.max(np.sqrt(self.covariance.eigenvalues) * np.abs(d.gains[:n])))
        return float(d.sigma.lipschitz * np.sqrt(2.0 * self.covariance.trace))

    def describe(self) -> str:
        return (f"{self.name}: r={self.r}, T={self.T}, drift={self.drift.kind}, "
                f"diffusion={self.diffusion.kind}, beta={self.covariance.beta}")


def initial_bump(basis: EigenBasis) -> SobolevVector:
    """X_0(y) = y(1 - y): coefficients 4 sqrt(2)/(n pi)^3 for odd n"""
    n = np.arange(1, basis.mode_count + 1)
    coeffs = np.where(n % 2 == 1, 4.0 * SQRT2 / (n * np.pi) ** 3, 0.0)
    return SobolevVector(coeffs, basis)


def power_gains(decay: float, length: int) -> np.ndarray:
    return np.arange(1, length + 1, dtype=float) ** (-decay)


BUILTIN_PROBLEMS = ("P1", "P2", "P3", "P3f", "P4", "heat")


def make_problem(
    name: str,
    basis: EigenBasis,
    T: float = 1.0,
    r: Optional[float] = None,
    beta: Optional[float] = None,
    gamma_decay: Optional[float] = None,
    noise_modes: Optional[int] = None,
    p: float = 2.0,
) -> ProblemSpec:
    """Build a named problem, optionally overriding r, beta and the gain decay

    P1/P2 additive, P3 Nemytskii multiplicative (sigma = 1 + 2 sin 2x) with -sin drift, P3f the same
    with the drift behind A^{(1-r)/2}, P4 linear diagonal multiplicative,
    heat the noiseless equation. Unset gain decays follow
    beta + decay = r + 0.55.
    """
    defaults = {
        "P1": (1.0, 1.0), "P2": (0.5, 1.05), "P3": (0.5, 1.02),
        "P3f": (0.5, 1.02), "P4": (0.5, 1.0), "heat": (1.0, 1.0),
    }
    if name not in defaults:
        raise ConfigurationError(f"unknown problem '{name}' (built-in: {', '.join(BUILTIN_PROBLEMS)})")
    r_default, beta_default = defaults[name]
    r = r_default if r is None else float(r)
    beta = beta_default if beta is None else float(beta)
    covariance = make_covariance(beta, noise_modes or basis.mode_count)
    if gamma_decay is None:
        gamma_decay = max(r + REGULARITY_MARGIN - beta, 0.0)
    gains = power_gains(gamma_decay, covariance.truncation)

    drift = DriftSpec("zero")
    if name in ("P1", "P2"):
        diffusion = DiffusionSpec("additive", gains=gains)
    elif name == "P3":
        drift = DriftSpec("nemytskii", phi=SCALAR_MAPS["neg_sin"])
        diffusion = DiffusionSpec("nemytskii_mult", sigma=SCALAR_MAPS["two_sin_two_plus_one"])
    elif name == "P3f":
        drift = DriftSpec("fractional_nemytskii", phi=SCALAR_MAPS["neg_sin"], exponent=0.5 * (1.0 - r))
        diffusion = DiffusionSpec("nemytskii_mult", sigma=SCALAR_MAPS["two_sin_two_plus_one"])
    elif name == "P4":
        diffusion = DiffusionSpec("linear_diagonal", gains=gains, scale=1.0)
    else:
        diffusion = DiffusionSpec("additive", gains=np.zeros(covariance.truncation))

    problem = ProblemSpec(
        name=name, r=r, p=p, T=float(T), drift=drift, diffusion=diffusion,
        initial=initial_bump(basis), covariance=covariance,
    )
    logger.debug(f"Built problem {problem.describe()}")
    return problem


def with_terms(problem: ProblemSpec, drift: Optional[DriftSpec] = None,
               diffusion: Optional[DiffusionSpec] = None) -> ProblemSpec:
    return replace(problem, drift=drift or problem.drift, diffusion=diffusion or problem.diffusion)


def noise_values(dW: np.ndarray, basis: EigenBasis) -> np.ndarray:
    """Delta W as a field on the quadrature nodes"""
    return grid_values(SobolevVector(np.asarray(dW, dtype=float), basis))


def drift_from_values(problem: ProblemSpec, values: np.ndarray) -> Optional[np.ndarray]:
    """f(u) coefficients from grid values of u; None when f = 0"""
    drift = problem.drift
    if drift.kind == "zero":
        return None
    coeffs = analyze_field(drift.phi(values), problem.basis)
    if drift.kind == "fractional_nemytskii":
        coeffs = apply_fractional_power(coeffs, drift.exponent)
    return coeffs.coeffs


def diffusion_from_values(problem: ProblemSpec, values: Optional[np.ndarray],
                          coeffs: Optional[np.ndarray], dW: np.ndarray) -> np.ndarray:
    """g(u) Delta W coefficients; ``dW`` holds (Delta W, e_m) as stored in a NoisePath"""
    d = problem.diffusion
    dW = np.asarray(dW, dtype=float)
    n = dW.size
    if d.kind == "additive":
        return d.gains[:n] * dW
    if d.kind == "linear_diagonal":
        u = np.zeros(n)
        m = min(n, coeffs.size)
        u[:m] = coeffs[:m]
        return d.scale * d.gains[:n] * u * dW
    product = d.sigma(values) * noise_values(dW, problem.basis)
    return analyze_field(product, problem.basis).coeffs


def eval_drift(problem: ProblemSpec, u: SobolevVector) -> SobolevVector:
    coeffs = drift_from_values(problem, grid_values(u))
    if coeffs is None:
        return problem.basis.zeros(u.size)
    return SobolevVector(coeffs, problem.basis)


def eval_diffusion_action(problem: ProblemSpec, u: SobolevVector, dW: np.ndarray) -> SobolevVector:
    values = None if problem.needs_coefficients else grid_values(u)
    return SobolevVector(diffusion_from_values(problem, values, u.coeffs, dW), problem.basis)


def diffusion_hs_norm(problem: ProblemSpec, u: SobolevVector, r: float,
                      v: Optional[SobolevVector] = None) -> float:
    """||g(u)||_{L_{2,r}^0}, or ||g(u) - g(v)|| when v is given

    The Nemytskii case applies sigma(u) - sigma(v) to q_m^{1/2} e_m in blocks
    of modes on the quadrature grid.
    """
    d = problem.diffusion
    cov = problem.covariance
    basis = problem.basis
    n = cov.truncation
    if d.kind == "additive":
        return 0.0 if v is not None else diagonal_hs_norm(d.gains, cov, r, basis)
    if d.kind == "linear_diagonal":
        w = u.padded(n) - (v.padded(n) if v is not None else 0.0)
        return diagonal_hs_norm(d.scale * d.gains[:n] * w, cov, r, basis)

    factor = d.sigma(grid_values(u))
    if v is not None:
        factor = factor - d.sigma(grid_values(v))
    lam_r = basis.eigenvalues ** (0.5 * r)
    total = 0.0
    for start in range(0, n, _HS_CHUNK):
        m = np.arange(start + 1, min(start + _HS_CHUNK, n) + 1)
        images = (SQRT2 * np.sin(np.outer(basis.nodes, m * np.pi)) * np.sqrt(cov.eigenvalues[m - 1])) * factor[:, None]
        coeffs = analyze_columns(images, basis, basis.mode_count) * lam_r[:, None]
        total += float(np.sum(coeffs ** 2))
    return float(np.sqrt(total))


@dataclass(frozen=True)
class LipschitzProbe:
    f_ratio_max: float
    g_ratio_max: float
    f_bound: float
    g_bound: float

    def within_bounds(self, slack: float = 0.05) -> bool:
        return (self.f_ratio_max <= self.f_bound * (1.0 + slack) + 1e-14
                and self.g_ratio_max <= self.g_bound * (1.0 + slack) + 1e-14)


@dataclass(frozen=True)
class GrowthProbe:
    ratio_max: float
    ratios: List[float]


def random_smooth_field(rng: np.random.Generator, basis: EigenBasis) -> SobolevVector:
    """Random u with coefficients ~ n^-2 on the leading modes, random amplitude"""
    n = min(_PROBE_MODES, basis.mode_count)
    coeffs = np.zeros(basis.mode_count)
    coeffs[:n] = rng.standard_normal(n) * np.arange(1, n + 1, dtype=float) ** -2.0
    return SobolevVector(coeffs * rng.uniform(0.1, 3.0), basis)


def lipschitz_probe(problem: ProblemSpec, trials: int, seed: int) -> LipschitzProbe:
    """Worst observed Lipschitz ratios of f (into H^{-1+r}) and g (into L_2^0) over random pairs"""
    if trials < 1:
        raise ConfigurationError(f"trials must be positive, got {trials}")
    rng = np.random.Generator(np.random.Philox(key=seed))
    f_max = g_max = 0.0
    for _ in range(trials):
        u = random_smooth_field(rng, problem.basis)
        v = random_smooth_field(rng, problem.basis)
        gap = sobolev_norm(u - v, 0.0)
        if gap == 0.0:
            continue
        f_diff = eval_drift(problem, u) - eval_drift(problem, v)
        f_max = max(f_max, sobolev_norm(f_diff, problem.r - 1.0) / gap)
        g_max = max(g_max, diffusion_hs_norm(problem, u, 0.0, v) / gap)
    logger.info(f"Lipschitz probe on {problem.name}: f ratio {f_max:.4g}, g ratio {g_max:.4g}")
    return LipschitzProbe(f_max, g_max, problem.f_lipschitz_bound, problem.g_lipschitz_bound)


def growth_probe(problem: ProblemSpec, trials: int, seed: int) -> GrowthProbe:
    """||g(u)||_{L_{2,r}^0} / (1 + ||u||_r) over random smooth u"""
    if trials < 1:
        raise ConfigurationError(f"trials must be positive, got {trials}")
    rng = np.random.Generator(np.random.Philox(key=seed))
    ratios = []
    for _ in range(trials):
        u = random_smooth_field(rng, problem.basis)
        ratios.append(diffusion_hs_norm(problem, u, problem.r) / (1.0 + sobolev_norm(u, problem.r)))
    return GrowthProbe(ratio_max=float(max(ratios)), ratios=ratios)
