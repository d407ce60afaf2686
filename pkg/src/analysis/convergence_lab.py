from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence, Tuple, TypeVar
import hashlib
import logging

import numpy as np

from src.analysis.error_ops import RateReport
from src.analysis.regression import RateFit, fit_rate
from src.core.galerkin_space import GalerkinSpace, lift_coords, make_space
from src.core.noise import coarsen_path, sample_increments
from src.models.problem import ProblemSpec
from src.solvers.integrators import grid_steps, implicit_euler_maruyama, reference_solution
from src.utils.config import config
from src.utils.exceptions import ConfigurationError, ConvergenceStudyError, NumericError, SpdeLabError

logger = logging.getLogger(__name__)

# bootstrap keys live above every noise key so the streams never overlap
_BOOTSTRAP_STREAM = 1 << 64
_RATIO_TOL = 1e-9
MIN_SPATIAL_REFINEMENT = 4
MIN_TEMPORAL_REFINEMENT = 64

T_ = TypeVar("T_")


@dataclass(frozen=True)
class Discretization:
    space: GalerkinSpace
    k: float

    def describe(self) -> str:
        return f"{self.space.describe()}, k={self.k:.6g}"


@dataclass(frozen=True, eq=False)
class ErrorEstimate:
    """(E ||X_coarse(T') - X_ref(T')||^p)^(1/p) with a bootstrap standard error"""
    value: float
    stderr: float
    samples: int
    p: float
    eval_time: float
    errors: np.ndarray = field(repr=False)


@dataclass(eq=False)
class ConvergenceReport:
    axis: str
    problem: str
    param_kind: str
    labels: List[float]
    levels: List[Tuple[float, ErrorEstimate]]
    slope: float
    slope_stderr: float
    slope_ci: Tuple[float, float]
    intercept: float
    expected: float
    window: Tuple[float, float]
    passed: bool
    monotone: bool
    config_digest: str
    coupling_digest: str
    reference_shift: Optional[float] = None
    reference_ok: Optional[bool] = None
    step_stiffness: Optional[float] = None

    @property
    def params(self) -> np.ndarray:
        return np.array([param for param, _ in self.levels])

    @property
    def values(self) -> np.ndarray:
        return np.array([est.value for _, est in self.levels])


def _map_ordered(fn: Callable[[int], T_], count: int, threads: Optional[int]) -> List[T_]:
    """Evaluate fn(0..count-1) on a thread pool, results in index order"""
    workers = max(1, min(threads or config.threads, count))
    if workers == 1:
        return [fn(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(count)))


def _step_ratio(k: float, k_ref: float) -> int:
    ratio = k / k_ref
    factor = int(round(ratio))
    if factor < 1 or abs(ratio - factor) > _RATIO_TOL * ratio:
        raise ConfigurationError(f"reference step {k_ref} does not divide step {k}")
    return factor


def _check_dominates(coarse: Discretization, ref: Discretization):
    _step_ratio(coarse.k, ref.k)
    if coarse.space.kind == ref.space.kind and coarse.space.dim > ref.space.dim:
        raise ConfigurationError(
            f"reference {ref.space.describe()} is coarser than {coarse.space.describe()}"
        )


def moment_estimate(errors: np.ndarray, p: float, eval_time: float, seed: int,
                    resamples: Optional[int] = None) -> ErrorEstimate:
    """L^p(Omega) norm of per-sample errors with a bootstrap standard error"""
    errors = np.asarray(errors, dtype=float)
    value = float(np.mean(errors ** p) ** (1.0 / p))
    stderr = 0.0
    if errors.size > 1:
        rng = np.random.Generator(np.random.Philox(key=_BOOTSTRAP_STREAM + seed))
        idx = rng.integers(0, errors.size, size=(resamples or config.bootstrap_resamples, errors.size))
        boot = np.mean(errors[idx] ** p, axis=1) ** (1.0 / p)
        stderr = float(np.std(boot, ddof=1))
    return ErrorEstimate(value=value, stderr=stderr, samples=int(errors.size), p=float(p),
                         eval_time=float(eval_time), errors=errors)


def _eval_problem(problem: ProblemSpec, coarse: Sequence[Discretization]) -> ProblemSpec:
    """Problem cut at T' = the largest grid point shared by every coarse step"""
    k_max = max(level.k for level in coarse)
    eval_time = grid_steps(problem.T, k_max) * k_max
    return replace(problem, T=eval_time)


@dataclass(frozen=True)
class _SampleResult:
    errors: np.ndarray
    checksum: str
    failure: Optional[Tuple[int, Exception]]


def _sample_errors(problem: ProblemSpec, ref: Discretization, coarse: Sequence[Discretization],
                   seed: int) -> _SampleResult:
    """One coupled sample: fine path, reference run, then each coarse level on the summed path"""
    mode_count = problem.basis.mode_count
    fine_steps = grid_steps(problem.T, ref.k)
    path = sample_increments(problem.covariance, ref.k, fine_steps, seed)
    reference = reference_solution(problem, ref.space, ref.k, path,
                                   tests=[(level.space, level.k) for level in coarse], record=[fine_steps])
    ref_final = lift_coords(ref.space, reference.coords[-1], mode_count)

    errors = np.full(len(coarse), np.nan)
    for i, level in enumerate(coarse):
        try:
            factor = _step_ratio(level.k, ref.k)
            coarse_path = coarsen_path(path, factor)
            if coarse_path.origin_checksum != path.checksum:
                raise NumericError("coarse run is not driven by the reference path", seed=seed)
            run = implicit_euler_maruyama(problem, level.space, level.k, coarse_path,
                                          record=[fine_steps // factor])
            diff = lift_coords(level.space, run.coords[-1], mode_count) - ref_final
            errors[i] = float(np.linalg.norm(diff))
            if not np.isfinite(errors[i]):
                raise NumericError(f"non-finite error sample (seed={seed})", seed=seed)
        except SpdeLabError as e:
            logger.error(f"Sample with seed {seed} failed at {level.describe()}: {e}")
            return _SampleResult(errors, path.checksum, (i, e))
    logger.debug(f"Sample seed={seed}: errors {np.array2string(errors, precision=3)}")
    return _SampleResult(errors, path.checksum, None)


def _run_levels(problem: ProblemSpec, ref: Discretization, coarse: Sequence[Discretization],
                samples: int, base_seed: int, threads: Optional[int]) -> Tuple[np.ndarray, str, Optional[Tuple[int, Exception]]]:
    results = _map_ordered(lambda i: _sample_errors(problem, ref, coarse, base_seed + i), samples, threads)
    errors = np.vstack([r.errors for r in results])
    digest = hashlib.sha256("".join(r.checksum for r in results).encode()).hexdigest()
    failures = [r.failure for r in results if r.failure is not None]
    first = min(failures, key=lambda f: f[0]) if failures else None
    return errors, digest, first


def strong_error(problem: ProblemSpec, coarse: Discretization, ref: Discretization, samples: int,
                 p: float = 2.0, base_seed: int = 0, threads: Optional[int] = None) -> ErrorEstimate:
    """Strong error of the coarse scheme against the coupled reference at T'"""
    if samples < 1:
        raise ConfigurationError(f"samples must be positive, got {samples}")
    if p < 2:
        raise ConfigurationError(f"moment order p must be at least 2, got {p}")
    _check_dominates(coarse, ref)
    cut = _eval_problem(problem, [coarse])
    errors, _, failure = _run_levels(cut, ref, [coarse], samples, base_seed, threads)
    if failure is not None:
        raise failure[1]
    return moment_estimate(errors[:, 0], p, cut.T, base_seed)


def expected_rate(problem: ProblemSpec, axis: str) -> Tuple[float, Tuple[float, float]]:
    """Expected slope and acceptance window: 1 + r in h (+/- 0.2 + 0.1 r), 1/2 in k (+/- 0.12)"""
    if axis == "spatial":
        half = 0.2 + 0.1 * problem.r
        return 1.0 + problem.r, (1.0 + problem.r - half, 1.0 + problem.r + half)
    return 0.5, (0.38, 0.62)


def step_stiffness(k: float, size: int) -> float:
    """k lambda_{N+1}: how far the step damps the first mode a size-N space leaves out"""
    return float(k * ((size + 1) * np.pi) ** 2)


def _study_levels(problem: ProblemSpec, axis: str, levels: Sequence[float], fixed: Optional[float],
                  ref: Discretization, space_kind: str) -> List[Tuple[float, float, Discretization]]:
    basis = problem.basis
    if len(levels) < 3:
        raise ConfigurationError(f"a convergence study needs at least 3 levels, got {len(levels)}")
    if axis == "spatial":
        k = float(fixed) if fixed else ref.k
        built = []
        for n in levels:
            space = make_space(space_kind, int(n), basis)
            built.append((float(n), space.h, Discretization(space, k)))
        finest = max(int(n) for n in levels)
        if ref.space.kind == space_kind and ref.space.size < MIN_SPATIAL_REFINEMENT * finest:
            raise ConfigurationError(
                f"reference {ref.space.describe()} must be at least {MIN_SPATIAL_REFINEMENT}x finer than size {finest}"
            )
    elif axis == "temporal":
        space = make_space(space_kind, int(fixed), basis) if fixed else ref.space
        built = [(float(k), float(k), Discretization(space, float(k))) for k in levels]
        if ref.k * MIN_TEMPORAL_REFINEMENT > min(levels) * (1.0 + _RATIO_TOL):
            raise ConfigurationError(
                f"reference step {ref.k} must be at least {MIN_TEMPORAL_REFINEMENT}x finer than {min(levels)}"
            )
    else:
        raise ConfigurationError(f"axis must be spatial or temporal, got '{axis}'")
    params = np.array([b[1] for b in built])
    if np.any(np.diff(params) >= 0):
        raise ConfigurationError(f"levels must refine strictly, got {params.tolist()}")
    for _, _, level in built:
        _check_dominates(level, ref)
    return built


def convergence_study(
    problem: ProblemSpec,
    axis: str,
    levels: Sequence[float],
    fixed: Optional[float],
    ref: Discretization,
    samples: int,
    p: float = 2.0,
    base_seed: int = 0,
    space_kind: str = "spectral",
    reference_check: bool = True,
    window: Optional[Tuple[float, float]] = None,
    config_digest: str = "",
    threads: Optional[int] = None,
) -> ConvergenceReport:
    """Strong errors over refinement levels, all coupled to the same reference realizations

    Spatial levels are space sizes with the time step ``fixed`` (default the
    reference step); temporal levels are time steps on the space of size
    ``fixed`` (default the reference space).
    """
    built = _study_levels(problem, axis, levels, fixed, ref, space_kind)
    coarse = [b[2] for b in built]
    cut = _eval_problem(problem, coarse)
    logger.info(f"Convergence study ({axis}) on {problem.name}: {len(built)} levels, "
                f"{samples} samples, reference {ref.describe()}, T'={cut.T:.6g}")

    errors, coupling_digest, failure = _run_levels(cut, ref, coarse, samples, base_seed, threads)
    complete = len(built) if failure is None else failure[0]
    estimates = [moment_estimate(errors[:, i], p, cut.T, base_seed) for i in range(complete)]
    expected, default_window = expected_rate(problem, axis)
    window = window or default_window
    param_kind = "h" if axis == "spatial" else "k"

    def report(upto: int, fit: Optional[RateFit]) -> ConvergenceReport:
        levels_done = [(built[i][1], estimates[i]) for i in range(upto)]
        values = [est.value for _, est in levels_done]
        monotone = all(b < a for a, b in zip(values, values[1:]))
        slope = fit.slope if fit else float("nan")
        return ConvergenceReport(
            axis=axis,
            problem=problem.name,
            param_kind=param_kind,
            labels=[built[i][0] for i in range(upto)],
            levels=levels_done,
            slope=slope,
            slope_stderr=fit.slope_stderr if fit else float("nan"),
            slope_ci=fit.confidence_interval(0.95) if fit else (float("nan"), float("nan")),
            intercept=fit.intercept if fit else float("nan"),
            expected=expected,
            window=tuple(window),
            passed=bool(fit is not None and window[0] <= slope <= window[1] and monotone),
            monotone=monotone,
            config_digest=config_digest,
            coupling_digest=coupling_digest,
        )

    def fit_levels(upto: int) -> Optional[RateFit]:
        if upto < 2:
            return None
        try:
            return fit_rate([(built[i][1], estimates[i].value, estimates[i].stderr) for i in range(upto)])
        except SpdeLabError as e:
            logger.warning(f"Rate fit failed: {e}")
            return None

    if failure is not None:
        partial = report(complete, fit_levels(complete))
        level_label = built[failure[0]][0]
        raise ConvergenceStudyError(f"level {level_label} failed: {failure[1]}", partial=partial)

    result = report(len(built), fit_levels(len(built)))
    if axis == "spatial":
        finest = max(int(label) for label in result.labels)
        result.step_stiffness = step_stiffness(coarse[0].k, finest)
        if result.step_stiffness > config.spatial_step_limit:
            logger.warning(f"Step {coarse[0].k:.6g} damps the modes above size {finest} "
                           f"(k lambda = {result.step_stiffness:.3g}); the fitted slope may overshoot 1 + r")
    if not result.monotone:
        logger.warning(f"Errors are not strictly decreasing across levels: {result.values.tolist()}")

    if reference_check:
        finer = (Discretization(make_space(ref.space.kind, 2 * ref.space.size, problem.basis), ref.k)
                 if axis == "spatial" else Discretization(ref.space, 0.5 * ref.k))
        finest = coarse[-1]
        shifted, _, shift_failure = _run_levels(cut, finer, [finest], samples, base_seed, threads)
        if shift_failure is not None:
            raise ConvergenceStudyError(f"reference check failed: {shift_failure[1]}", partial=result)
        again = moment_estimate(shifted[:, 0], p, cut.T, base_seed)
        base = estimates[-1].value
        result.reference_shift = abs(again.value - base) / base if base > 0 else 0.0
        result.reference_ok = result.reference_shift < config.reference_shift_limit
        if not result.reference_ok:
            logger.warning(f"Finest level moved by {result.reference_shift:.1%} against a 2x finer reference")
            result.passed = False

    logger.info(f"Study slope {result.slope:.4f}, 95% CI [{result.slope_ci[0]:.4f}, {result.slope_ci[1]:.4f}], "
                f"window {result.window} -> {'PASS' if result.passed else 'FAIL'}")
    return result


def holder_check(problem: ProblemSpec, ref: Discretization, lags: Sequence[float], samples: int,
                 seed: int, t0: Optional[float] = None, tolerance: float = 0.1,
                 threads: Optional[int] = None) -> RateReport:
    """Fit of (E ||X(t0 + d) - X(t0)||^2)^(1/2) against the lag d

    Stochastic problems should show slope 1/2; for noiseless problems the
    slope is reported without an expectation.
    """
    if samples < 1:
        raise ConfigurationError(f"samples must be positive, got {samples}")
    lag_steps = sorted(_step_ratio(d, ref.k) for d in lags)
    if len(lag_steps) < 2 or len(set(lag_steps)) != len(lag_steps):
        raise ConfigurationError("holder_check needs at least 2 distinct lags")
    base = int(round((problem.T / 2.0 if t0 is None else t0) / ref.k))
    last = base + lag_steps[-1]
    if last > grid_steps(problem.T, ref.k):
        raise ConfigurationError(f"t0 + largest lag exceeds T={problem.T}")
    cut = replace(problem, T=last * ref.k)
    record = [base] + [base + m for m in lag_steps]

    def sample(i: int) -> np.ndarray:
        path = sample_increments(cut.covariance, ref.k, last, seed + i)
        run = implicit_euler_maruyama(cut, ref.space, ref.k, path, record=record)
        start = run.state(base)
        return np.array([(run.state(base + m) - start).norm() ** 2 for m in lag_steps])

    squares = np.vstack(_map_ordered(sample, samples, threads))
    values = np.sqrt(np.mean(squares, axis=0))
    params = np.array(lag_steps, dtype=float) * ref.k
    fit = fit_rate([(d, v, None) for d, v in zip(params[::-1], values[::-1])])
    expected = None if problem.is_deterministic else 0.5
    passed = True if expected is None else abs(fit.slope - expected) <= tolerance
    logger.info(f"Holder check on {problem.name}: slope={fit.slope:.4f} -> {'PASS' if passed else 'FAIL'}")
    return RateReport(
        lemma_id="holder",
        param_kind="delta",
        space_kind=ref.space.kind,
        levels=params[::-1].tolist(),
        params=params[::-1],
        values=values[::-1],
        slope=fit.slope,
        slope_stderr=fit.slope_stderr,
        intercept=fit.intercept,
        expected=expected,
        tolerance=tolerance,
        passed=passed,
        ratios=values[::-1] / params[::-1] ** 0.5,
        settings={"t0": base * ref.k, "samples": float(samples)},
    )
