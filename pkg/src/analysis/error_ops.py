"""
Error operators F_h(t) = E_h(t)P_h - E(t) and F_kh(t) = E_kh(t)P_h - E(t)

Rate checks measure operator norms over worst-case input families:
spectral spaces are diagonal in the eigenbasis, so single modes are exact
maximizers; FEM norms are the exact operator norm on the span of the first
2(N_h + 1) eigenmodes, from a quadratic form assembled through the discrete
eigendecomposition (no lift truncation enters).
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple
import logging

import numpy as np
from scipy import linalg
from scipy.integrate import quad_vec

from src.analysis.regression import fit_rate
from src.core.galerkin_space import (
    GalerkinSpace,
    discrete_semigroup,
    lift,
    make_space,
    modal_coupling,
    project_l2,
    rational,
    rational_step,
    ritz_error_norms,
    ph_stability_constant,
)
from src.core.spectral_core import EigenBasis, SobolevVector, apply_semigroup, smoothing_bound
from src.utils.config import config
from src.utils.exceptions import ConfigurationError, DomainError, NumericError

logger = logging.getLogger(__name__)

_JUMP_TOL = 1e-14
_T_CHUNK = 64
_JUMP_POINTS = 64
_QUAD_EPSREL = 1e-8
DEFAULT_FINE_SIZE = {"spectral": 1024, "fem_p1": 256}

LEMMAS: Dict[str, Tuple[str, str, Tuple[str, ...]]] = {
    "Fh1_i": ("Fh", "pointwise", ("mu", "nu")),
    "Fh1_ii": ("Fh", "pointwise", ("rho",)),
    "Fh1_iii": ("Fh", "pointwise", ("rho",)),
    "Fh2_i": ("Fh", "int_norm", ("rho",)),
    "Fh2_ii": ("Fh", "sq_int", ("rho",)),
    "Fkh1_i": ("Fkh", "pointwise", ("mu", "nu")),
    "Fkh1_ii": ("Fkh", "pointwise", ("rho",)),
    "Fkh1_iii": ("Fkh", "pointwise", ("rho",)),
    "Fkh2_i": ("Fkh", "int_norm", ("rho",)),
    "Fkh2_ii": ("Fkh", "sq_int", ("rho",)),
    "smoothing_E": ("E", "smoothing", ("nu",)),
    "smoothing_Eh": ("Eh", "smoothing", ("rho",)),
    "smoothing_r": ("R", "smoothing", ("rho",)),
}


@dataclass(frozen=True)
class LemmaShape:
    """Weights and expected exponents of one estimate

    The measured quantity is t^t_power ||F(t) x|| / ||x||_input_order.
    """
    lemma_id: str
    operator: str
    functional: str
    t_power: float
    input_order: float
    h_rate: Optional[float]
    k_rate: Optional[float]
    exponent: float = 0.0


@dataclass
class RateReport:
    lemma_id: str
    param_kind: str
    space_kind: str
    levels: List[float]
    params: np.ndarray
    values: np.ndarray
    slope: float
    slope_stderr: float
    intercept: float
    expected: Optional[float]
    tolerance: float
    passed: bool
    ratios: np.ndarray
    argmax_t: np.ndarray = field(default_factory=lambda: np.empty(0))
    interior: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=bool))
    bound: Optional[float] = None
    settings: Dict[str, float] = field(default_factory=dict)

    @property
    def mode(self) -> str:
        return "rate" if self.expected is not None else "bounded"

    def rows(self) -> List[Tuple[float, float, float]]:
        """(level, param, value) per level"""
        return list(zip(self.levels, self.params.tolist(), self.values.tolist()))


@dataclass(frozen=True)
class IntegralFunctionals:
    int_norm: float
    sq_int: float


@dataclass(frozen=True)
class StabilityReport:
    sizes: List[int]
    h: List[float]
    constants: List[float]
    non_increasing: bool


# -- time factors -------------------------------------------------------------

def step_index(t, k: float) -> np.ndarray:
    """j with t in [t_{j-1}, t_j), right continuous at the grid points"""
    return np.floor(np.asarray(t, dtype=float) / k * (1.0 + _JUMP_TOL)).astype(np.int64) + 1


def _full_steps(t, k: float):
    t = np.asarray(t, dtype=float)
    full = np.floor(t / k * (1.0 + _JUMP_TOL))
    return full, np.maximum(t - full * k, 0.0)


def time_factor(lam, k: float, t):
    """e^{-lam t} for k = 0, R(k lam)^j otherwise"""
    lam = np.asarray(lam, dtype=float)
    if k == 0:
        return np.exp(-lam * t)
    return rational(k * lam) ** step_index(t, k)


def factor_integral(lam, k: float, t):
    """int_0^t time_factor(lam, k, s) ds"""
    lam = np.asarray(lam, dtype=float)
    if k == 0:
        return -np.expm1(-lam * t) / lam
    full, rem = _full_steps(t, k)
    log_growth = np.log1p(k * lam)
    return -np.expm1(-full * log_growth) / lam + rem * np.exp(-(full + 1) * log_growth)


def factor_square_integral(lam, k: float, t):
    """int_0^t time_factor(lam, k, s)^2 ds"""
    lam = np.asarray(lam, dtype=float)
    if k == 0:
        return -np.expm1(-2.0 * lam * t) / (2.0 * lam)
    full, rem = _full_steps(t, k)
    log_growth = np.log1p(k * lam)
    geometric = -np.expm1(-2.0 * full * log_growth) / (lam * (2.0 + k * lam))
    return geometric + rem * np.exp(-2.0 * (full + 1) * log_growth)


def cross_integral(lam_d, lam_c, k: float, t):
    """int_0^t time_factor(lam_d, k, s) e^{-lam_c s} ds"""
    lam_d = np.asarray(lam_d, dtype=float)
    lam_c = np.asarray(lam_c, dtype=float)
    if k == 0:
        total = lam_d + lam_c
        return -np.expm1(-total * t) / total
    full, rem = _full_steps(t, k)
    log_growth = np.log1p(k * lam_d)
    step_decay = -np.expm1(-lam_c * k) / lam_c
    one_minus_q = (k * lam_d - np.expm1(-lam_c * k)) / (1.0 + k * lam_d)
    geometric = np.exp(-log_growth) * -np.expm1(-full * (log_growth + lam_c * k)) / one_minus_q * step_decay
    tail = np.exp(-(full + 1) * log_growth - lam_c * full * k) * -np.expm1(-lam_c * rem) / lam_c
    return geometric + tail


def rational_smoothing_constant(rho: float, max_steps: int) -> float:
    """max_j sup_z j^rho z^rho (1+z)^{-j}, attained at z = rho/(j - rho)"""
    if rho == 0:
        return 1.0
    j = np.arange(1, max_steps + 1, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = (j * rho / (j - rho)) ** rho * ((j - rho) / j) ** j
    vals = np.where(j <= rho, j ** rho, vals)
    return float(np.max(vals))


# -- operators ----------------------------------------------------------------

def apply_Fh(space: GalerkinSpace, t: float, x: SobolevVector) -> SobolevVector:
    """F_h(t) x in the reference frame; t = 0 gives (P_h - I) x"""
    if t < 0:
        raise DomainError(f"F_h needs t >= 0, got {t}")
    approx = project_l2(space, x)
    if t > 0:
        approx = discrete_semigroup(space, approx, t)
    return lift(space, approx, x.basis) - apply_semigroup(x, t)


def apply_Fkh(space: GalerkinSpace, k: float, t: float, x: SobolevVector) -> SobolevVector:
    """F_kh(t) x with E_kh(t) = R(kA_h)^j on [t_{j-1}, t_j)"""
    if k <= 0:
        raise DomainError(f"time step must be positive, got {k}")
    if t <= 0:
        raise DomainError(f"F_kh needs t > 0, got {t}")
    j = int(step_index(t, k))
    approx = rational_step(space, project_l2(space, x), k, j)
    return lift(space, approx, x.basis) - apply_semigroup(x, t)


def integral_functionals(space: GalerkinSpace, k: float, t: float, x: SobolevVector,
                         method: str = "auto") -> IntegralFunctionals:
    """||int_0^t F(s) x ds|| and (int_0^t ||F(s) x||^2 ds)^{1/2}; k = 0 is the semidiscrete F_h

    Spectral spaces use per-mode closed forms. FEM spaces integrate the
    discrete-eigenmode representation adaptively (``method="quadrature"``,
    the default there) or by the same closed forms (``method="closed"``).
    """
    if k < 0:
        raise DomainError(f"time step must be nonnegative, got {k}")
    if t < 0:
        raise DomainError(f"integration horizon must be nonnegative, got {t}")
    if t == 0:
        return IntegralFunctionals(0.0, 0.0)
    if space.is_spectral:
        return _spectral_functionals(space, k, t, x)
    if method in ("auto", "quadrature"):
        return _quadrature_functionals(space, k, t, x)
    if method == "closed":
        return _closed_functionals(space, k, t, x)
    raise ConfigurationError(f"unknown integration method '{method}'")


def _spectral_functionals(space: GalerkinSpace, k: float, t: float, x: SobolevVector) -> IntegralFunctionals:
    lam = x.eigenvalues
    resolved = np.arange(1, x.size + 1) <= space.dim
    c_int = factor_integral(lam, 0.0, t)
    c_sq = factor_square_integral(lam, 0.0, t)
    if k == 0:
        f_int = np.where(resolved, 0.0, -c_int)
        f_sq = np.where(resolved, 0.0, c_sq)
    else:
        f_int = np.where(resolved, factor_integral(lam, k, t) - c_int, -c_int)
        mixed = factor_square_integral(lam, k, t) - 2.0 * cross_integral(lam, lam, k, t) + c_sq
        f_sq = np.where(resolved, np.maximum(mixed, 0.0), c_sq)
    return IntegralFunctionals(
        int_norm=float(np.linalg.norm(f_int * x.coeffs)),
        sq_int=float(np.sqrt(np.sum(f_sq * x.coeffs ** 2))),
    )


def _closed_functionals(space: GalerkinSpace, k: float, t: float, x: SobolevVector) -> IntegralFunctionals:
    coupling = modal_coupling(space, x.size)
    lam_h = space.eigenvalues
    lam = x.eigenvalues
    a = coupling @ x.coeffs
    u = factor_integral(lam_h, k, t) * a
    v = factor_integral(lam, 0.0, t) * x.coeffs
    int_sq = u @ u - 2.0 * u @ (coupling @ v) + v @ v
    cross = cross_integral(lam_h[:, None], lam[None, :], k, t)
    sq = (np.sum(factor_square_integral(lam_h, k, t) * a * a)
          - 2.0 * a @ ((cross * coupling) @ x.coeffs)
          + np.sum(factor_square_integral(lam, 0.0, t) * x.coeffs ** 2))
    return IntegralFunctionals(float(np.sqrt(max(int_sq, 0.0))), float(np.sqrt(max(sq, 0.0))))


def _quadrature_functionals(space: GalerkinSpace, k: float, t: float, x: SobolevVector) -> IntegralFunctionals:
    coupling = modal_coupling(space, x.size)
    lam_h = space.eigenvalues
    lam = x.eigenvalues
    a = coupling @ x.coeffs
    dim = space.dim

    def integrand(s):
        d = time_factor(lam_h, k, s) * a
        c = np.exp(-lam * s) * x.coeffs
        pointwise = d @ d - 2.0 * d @ (coupling @ c) + c @ c
        return np.concatenate((d, c, [pointwise]))

    breaks = set((t * np.logspace(-8, 0, 17)).tolist())
    if k > 0:
        breaks.update((k * np.arange(1, int(np.ceil(t / k)))).tolist())
    points = sorted(b for b in breaks if 0 < b < t)
    res, err, info = quad_vec(integrand, 0.0, t, epsrel=_QUAD_EPSREL, points=points,
                              limit=max(10000, 4 * len(points)), full_output=True)
    if not info.success:
        raise NumericError(f"time quadrature did not converge (estimated error {err:.3e})")
    u, v, sq = res[:dim], res[dim:-1], res[-1]
    int_sq = u @ u - 2.0 * u @ (coupling @ v) + v @ v
    return IntegralFunctionals(float(np.sqrt(max(int_sq, 0.0))), float(np.sqrt(max(sq, 0.0))))


# -- rate checks --------------------------------------------------------------

def lemma_shape(lemma_id: str, params: Mapping[str, float]) -> LemmaShape:
    if lemma_id not in LEMMAS:
        raise ConfigurationError(f"unknown lemma '{lemma_id}' (known: {', '.join(LEMMAS)})")
    operator, functional, names = LEMMAS[lemma_id]
    missing = [n for n in names if params.get(n) is None]
    if missing:
        raise ConfigurationError(f"{lemma_id} needs parameter(s) {', '.join(missing)}")
    part = lemma_id.rsplit("_", 1)[-1]

    if functional == "smoothing":
        value = float(params[names[0]])
        upper = 1.0 if lemma_id == "smoothing_r" else np.inf
        if not 0.0 <= value <= upper:
            raise ConfigurationError(f"{lemma_id}: {names[0]}={value} outside [0, {upper}]")
        return LemmaShape(lemma_id, operator, functional, value, 0.0, None, None, exponent=value)

    if part == "i" and functional == "pointwise":
        mu, nu = float(params["mu"]), float(params["nu"])
        if not 0.0 <= nu <= mu <= 2.0:
            raise ConfigurationError(f"{lemma_id} needs 0 <= nu <= mu <= 2, got mu={mu}, nu={nu}")
        return LemmaShape(lemma_id, operator, functional, 0.5 * (mu - nu), nu, mu, 0.5 * mu)

    rho = float(params["rho"])
    if not 0.0 <= rho <= 1.0:
        raise ConfigurationError(f"{lemma_id} needs 0 <= rho <= 1, got rho={rho}")
    if functional == "int_norm":
        return LemmaShape(lemma_id, operator, functional, 0.0, -rho, 2.0 - rho, 1.0 - 0.5 * rho)
    if functional == "sq_int":
        return LemmaShape(lemma_id, operator, functional, 0.0, rho, 1.0 + rho, 0.5 * (1.0 + rho))
    if part == "ii":
        return LemmaShape(lemma_id, operator, functional, 0.5 * rho, -rho, None, None)
    return LemmaShape(lemma_id, operator, functional, 1.0, -rho, 2.0 - rho, 1.0 - 0.5 * rho)


def sup_time_grid(T: float, t_lo: float, k: float = 0.0) -> np.ndarray:
    """Log-spaced grid on [t_lo, T] plus the jump points t_j and their left limits"""
    count = int(np.ceil(np.log10(T / t_lo) * config.t_points_per_decade)) + 1
    grid = np.logspace(np.log10(t_lo), np.log10(T), count)
    if k > 0:
        j = np.arange(1, min(_JUMP_POINTS, int(T / k * (1.0 + _JUMP_TOL))) + 1)
        grid = np.concatenate((grid, j * k, j * k * (1.0 - 1e-12)))
    grid = grid[(grid > 0) & (grid <= T * (1.0 + _JUMP_TOL))]
    return np.unique(grid)


@dataclass(frozen=True)
class _Level:
    label: float
    param: float
    space: GalerkinSpace
    k: float


def _spectral_rows(shape: LemmaShape, level: _Level, basis: EigenBasis, t: np.ndarray) -> np.ndarray:
    """Per (t, mode) weighted values for a spectral space over all reference modes"""
    lam = basis.eigenvalues
    resolved = np.arange(1, lam.size + 1) <= level.space.dim
    k = level.k
    tt = t[:, None]
    if shape.functional == "pointwise":
        c = np.exp(-lam * tt)
        vals = np.abs(np.where(resolved, time_factor(lam, k, tt) - c, -c))
    elif shape.functional == "int_norm":
        c = factor_integral(lam, 0.0, tt)
        vals = np.abs(np.where(resolved, factor_integral(lam, k, tt) - c, -c))
    else:
        c = factor_square_integral(lam, 0.0, tt)
        if k == 0:
            sq = np.where(resolved, 0.0, c)
        else:
            mixed = factor_square_integral(lam, k, tt) - 2.0 * cross_integral(lam, lam, k, tt) + c
            sq = np.where(resolved, mixed, c)
        vals = np.sqrt(np.maximum(sq, 0.0))
    return vals * lam ** (-0.5 * shape.input_order)


def _fem_gram(shape: LemmaShape, coupling: np.ndarray, lam_h: np.ndarray, lam: np.ndarray,
              k: float, t: float) -> np.ndarray:
    """Matrix of the quadratic form x -> ||F(t) x||^2 (or its time functional) on span{e_n}"""
    if shape.functional == "sq_int":
        cross = cross_integral(lam_h[:, None], lam[None, :], k, t)
        mixed = coupling.T @ (cross * coupling)
        return ((coupling.T * factor_square_integral(lam_h, k, t)) @ coupling
                - mixed - mixed.T + np.diag(factor_square_integral(lam, 0.0, t)))
    if shape.functional == "int_norm":
        d = factor_integral(lam_h, k, t)
        c = factor_integral(lam, 0.0, t)
    else:
        d = time_factor(lam_h, k, t)
        c = np.exp(-lam * t)
    s = (coupling.T * d) @ coupling
    return (coupling.T * d * d) @ coupling - s * c[None, :] - c[:, None] * s + np.diag(c * c)


def _error_operator_level(shape: LemmaShape, level: _Level, basis: EigenBasis,
                          t: np.ndarray) -> Tuple[float, float, bool]:
    t_weight = t ** shape.t_power
    if level.space.is_spectral:
        best = np.empty(t.size)
        for start in range(0, t.size, _T_CHUNK):
            block = t[start:start + _T_CHUNK]
            best[start:start + block.size] = _spectral_rows(shape, level, basis, block).max(axis=1)
    else:
        length = min(2 * (level.space.dim + 1), basis.mode_count)
        coupling = modal_coupling(level.space, length)
        lam = basis.eigenvalues[:length]
        weight = lam ** (-0.5 * shape.input_order)
        best = np.empty(t.size)
        for i, ti in enumerate(t):
            gram = _fem_gram(shape, coupling, level.space.eigenvalues, lam, level.k, ti)
            weighted = weight[:, None] * (0.5 * (gram + gram.T)) * weight[None, :]
            top = linalg.eigh(weighted, eigvals_only=True, subset_by_index=[length - 1, length - 1])[0]
            best[i] = np.sqrt(max(top, 0.0))
    values = best * t_weight
    idx = int(np.argmax(values))
    return float(values[idx]), float(t[idx]), 0 < idx < t.size - 1


def _smoothing_level(shape: LemmaShape, level: _Level, basis: EigenBasis,
                     t: np.ndarray) -> Tuple[float, float, bool]:
    rho = shape.exponent
    if shape.operator == "E":
        lam = basis.eigenvalues[: level.space.dim]
    else:
        lam = level.space.eigenvalues
    if shape.operator == "R":
        steps = np.arange(1, int(t[-1] / level.k * (1.0 + _JUMP_TOL)) + 1)
        t = steps * level.k
        log_vals = rho * np.log(t)[:, None] + rho * np.log(lam)[None, :] - steps[:, None] * np.log1p(level.k * lam)[None, :]
    else:
        log_vals = rho * np.log(t)[:, None] + rho * np.log(lam)[None, :] - t[:, None] * lam[None, :]
    per_t = np.exp(log_vals.max(axis=1))
    idx = int(np.argmax(per_t))
    return float(per_t[idx]), float(t[idx]), 0 < idx < t.size - 1


def lemma_rate_check(
    lemma_id: str,
    params: Mapping[str, float],
    space_kind: str,
    levels: Sequence[float],
    basis: EigenBasis,
    axis: Optional[str] = None,
    fixed: Optional[float] = None,
    T: float = 1.0,
    tolerance: Optional[float] = None,
    threads: Optional[int] = None,
) -> RateReport:
    """Measure Q(level) = sup_t sup_x of the weighted error-operator quantity and fit its rate

    Spatial levels are space sizes (N for spectral, element counts for FEM),
    temporal levels are step sizes on the fixed space of size ``fixed``.
    Rate estimates pass when the fitted slope is within the tolerance of the
    expected exponent; bounded estimates pass when Q grows by less than the
    configured margin across levels (and stays below the sharp constant for
    the smoothing checks).
    """
    shape = lemma_shape(lemma_id, params)
    if axis is None:
        axis = "temporal" if shape.operator in ("Fkh", "R") else "spatial"
    if axis not in ("spatial", "temporal"):
        raise ConfigurationError(f"axis must be spatial or temporal, got '{axis}'")
    if axis == "temporal" and shape.operator in ("Fh", "E", "Eh"):
        raise ConfigurationError(f"{lemma_id} has no time step to refine")
    if axis == "spatial" and shape.operator == "R":
        raise ConfigurationError(f"{lemma_id} is a check over time steps")
    if shape.operator == "E" and space_kind != "spectral":
        raise ConfigurationError("smoothing_E levels are spectral mode counts")
    if len(levels) < 2:
        raise ConfigurationError(f"a rate check needs at least 2 levels, got {len(levels)}")

    built: List[_Level] = []
    if axis == "spatial":
        spaces = [make_space(space_kind, int(n), basis) for n in levels]
        k = 0.0
        if shape.operator == "Fkh":
            k = float(fixed) if fixed else min(s.h for s in spaces) ** 2 / 64.0
        built = [_Level(float(n), s.h, s, k) for n, s in zip(levels, spaces)]
        param_kind = "h"
        expected = shape.h_rate
    else:
        fine = make_space(space_kind, int(fixed or DEFAULT_FINE_SIZE.get(space_kind, 1024)), basis)
        for k in levels:
            if not 0 < k <= T:
                raise ConfigurationError(f"time step {k} outside (0, T={T}]")
        built = [_Level(float(k), float(k), fine, float(k)) for k in levels]
        param_kind = "k"
        expected = shape.k_rate
    params_arr = np.array([lv.param for lv in built])
    if np.any(np.diff(params_arr) >= 0):
        raise ConfigurationError(f"levels must refine strictly, got {param_kind} = {params_arr.tolist()}")

    h_min = min(lv.space.h for lv in built)
    t_lo = min(config.t_min, 1e-3 * h_min ** 2)
    evaluate = _smoothing_level if shape.functional == "smoothing" else _error_operator_level

    def run(level: _Level):
        t = sup_time_grid(T, t_lo, level.k)
        return evaluate(shape, level, basis, t)

    workers = max(1, min(threads or config.threads, len(built)))
    logger.info(f"Checking {lemma_id} {dict(params)} on {space_kind} over {len(built)} {param_kind}-levels")
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(run, built))
    values = np.array([r[0] for r in results])
    argmax_t = np.array([r[1] for r in results])
    interior = np.array([r[2] for r in results], dtype=bool)
    if not interior.all():
        logger.warning(f"{lemma_id}: supremum on the t-grid boundary at levels "
                       f"{[lv.label for lv, ok in zip(built, interior) if not ok]}")

    if tolerance is None:
        tolerance = config.spectral_tolerance if space_kind == "spectral" else config.fem_tolerance
    if np.all(values > 0):
        fit = fit_rate([(p, v, None) for p, v in zip(params_arr, values)])
        slope, slope_stderr, intercept = fit.slope, fit.slope_stderr, fit.intercept
    else:
        slope, slope_stderr, intercept = float("nan"), float("nan"), float("nan")

    bound = None
    if shape.functional == "smoothing":
        if shape.operator == "R":
            max_steps = max(int(T / lv.k * (1.0 + _JUMP_TOL)) for lv in built)
            bound = rational_smoothing_constant(shape.exponent, max_steps)
        else:
            bound = smoothing_bound(shape.exponent, 1.0)

    if expected is not None:
        passed = bool(np.isfinite(slope) and abs(slope - expected) <= tolerance)
        ratios = values / params_arr ** expected
    else:
        growth = float(np.max(values) / values[0] - 1.0) if values[0] > 0 else float("inf")
        passed = growth <= config.bounded_growth
        if bound is not None:
            passed = passed and bool(np.all(values <= bound * (1.0 + 1e-9)))
        ratios = values / (bound if bound else values[0])

    logger.info(f"{lemma_id}: slope={slope:.4f} expected={expected} -> {'PASS' if passed else 'FAIL'}")
    return RateReport(
        lemma_id=lemma_id,
        param_kind=param_kind,
        space_kind=space_kind,
        levels=[lv.label for lv in built],
        params=params_arr,
        values=values,
        slope=slope,
        slope_stderr=slope_stderr,
        intercept=intercept,
        expected=expected,
        tolerance=tolerance,
        passed=passed,
        ratios=ratios,
        argmax_t=argmax_t,
        interior=interior,
        bound=bound,
        settings={key: float(v) for key, v in params.items() if v is not None},
    )


def ritz_rate_check(sizes: Sequence[int], order: int, basis: EigenBasis, space_kind: str = "fem_p1",
                    modes: Optional[Sequence[int]] = None, tolerance: float = 0.1) -> RateReport:
    """Observed order of sup_n ||R_h e_n - e_n|| / ||e_n||_order over h

    ``modes`` fixes the inputs; by default every mode up to 2(N_h + 1) is tried.
    """
    if order not in (1, 2):
        raise ConfigurationError(f"Ritz orders are 1 or 2, got {order}")
    spaces = [make_space(space_kind, int(n), basis) for n in sizes]
    values = []
    for space in spaces:
        family = np.asarray(modes if modes is not None
                            else np.arange(1, min(2 * (space.dim + 1), basis.mode_count) + 1))
        errs = ritz_error_norms(space, basis, family)
        values.append(float(np.max(errs * basis.eigenvalues[family - 1] ** (-0.5 * order))))
    params_arr = np.array([s.h for s in spaces])
    values = np.array(values)
    fit = fit_rate([(p, v, None) for p, v in zip(params_arr, values)])
    passed = abs(fit.slope - order) <= tolerance
    logger.info(f"Ritz order {order} on {space_kind}: slope={fit.slope:.4f} -> {'PASS' if passed else 'FAIL'}")
    return RateReport(
        lemma_id=f"ritz_s{order}",
        param_kind="h",
        space_kind=space_kind,
        levels=[float(n) for n in sizes],
        params=params_arr,
        values=values,
        slope=fit.slope,
        slope_stderr=fit.slope_stderr,
        intercept=fit.intercept,
        expected=float(order),
        tolerance=tolerance,
        passed=passed,
        ratios=values / params_arr ** order,
        settings={"order": float(order)},
    )


def ph_stability_check(sizes: Sequence[int], basis: EigenBasis, space_kind: str = "fem_p1") -> StabilityReport:
    """Measured H^1 stability constants of P_h across refinements"""
    spaces = [make_space(space_kind, int(n), basis) for n in sizes]
    constants = [ph_stability_constant(s, basis) for s in spaces]
    non_increasing = all(b <= a * (1.0 + config.bounded_growth) for a, b in zip(constants, constants[1:]))
    logger.info(f"P_h stability constants on {space_kind}: {[round(c, 6) for c in constants]}")
    return StabilityReport(
        sizes=[int(n) for n in sizes],
        h=[s.h for s in spaces],
        constants=constants,
        non_increasing=non_increasing,
    )
