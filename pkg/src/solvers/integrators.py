from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple
import logging

import numpy as np

from src.core.galerkin_space import (
    DiscreteField,
    GalerkinSpace,
    lift_coords,
    load_rows,
    load_vector,
    project_l2,
)
from src.core.noise import NoisePath
from src.core.spectral_core import SobolevVector, grid_values
from src.models.problem import ProblemSpec, diffusion_from_values, drift_from_values
from src.utils.exceptions import ConfigurationError, NumericError

logger = logging.getLogger(__name__)

_GRID_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class SolutionPath:
    """Recorded states X_h^j of one run; ``coords[i]`` belongs to step ``steps[i]``"""
    space: GalerkinSpace
    k: float
    coords: np.ndarray
    steps: np.ndarray
    seed: int

    def __post_init__(self):
        self.coords.flags.writeable = False

    @property
    def final_step(self) -> int:
        return int(self.steps[-1])

    @property
    def final(self) -> DiscreteField:
        return DiscreteField(self.coords[-1], self.space)

    @property
    def states(self) -> List[DiscreteField]:
        return [DiscreteField(c, self.space) for c in self.coords]

    def state(self, j: int) -> DiscreteField:
        idx = np.searchsorted(self.steps, j)
        if idx >= self.steps.size or self.steps[idx] != j:
            raise ConfigurationError(f"step {j} was not recorded")
        return DiscreteField(self.coords[idx], self.space)

    def state_at(self, t: float) -> DiscreteField:
        return self.state(int(round(t / self.k)))


def grid_steps(T: float, k: float) -> int:
    """N_k with N_k k <= T < (N_k + 1) k"""
    if k <= 0:
        raise ConfigurationError(f"time step must be positive, got {k}")
    if k > T * (1.0 + _GRID_TOL):
        raise ConfigurationError(f"time step {k} exceeds the final time {T}")
    return int(np.floor(T / k * (1.0 + _GRID_TOL)))


def _check_grid(problem: ProblemSpec, k: float, path: NoisePath) -> int:
    steps = grid_steps(problem.T, k)
    if abs(path.k - k) > _GRID_TOL * k:
        raise ConfigurationError(f"noise path step {path.k} does not match the scheme step {k}")
    if path.steps < steps:
        raise ConfigurationError(f"noise path has {path.steps} steps, the scheme needs {steps}")
    return steps


def _state_values(space: GalerkinSpace, coords: np.ndarray, problem: ProblemSpec) -> np.ndarray:
    """X_h on the quadrature nodes; FEM states are interpolated exactly from nodal values"""
    basis = problem.basis
    if space.is_spectral:
        return grid_values(SobolevVector(coords, basis))
    xp = np.concatenate(([0.0], space.nodes, [1.0]))
    fp = np.concatenate(([0.0], coords, [0.0]))
    return np.interp(basis.nodes, xp, fp)


def implicit_euler_maruyama(
    problem: ProblemSpec,
    space: GalerkinSpace,
    k: float,
    path: NoisePath,
    record: Optional[Iterable[int]] = None,
) -> SolutionPath:
    """Linear implicit Euler-Maruyama with f and g at the old iterate

    (M + kK) c^j = M c^{j-1} - k b_f(X^{j-1}) + b_g(X^{j-1}, dW^j)
    """
    steps = _check_grid(problem, k, path)
    wanted = np.arange(steps + 1) if record is None else np.unique([j for j in record if 0 <= j <= steps])
    basis = problem.basis
    needs_values = problem.drift.kind != "zero" or problem.diffusion.kind == "nemytskii_mult"
    solve = space.shifted_solver(k)

    coords = project_l2(space, problem.initial).coords
    out = np.empty((wanted.size, space.dim))
    slot = 0
    if wanted.size and wanted[0] == 0:
        out[0] = coords
        slot = 1

    additive = None
    if problem.diffusion.kind == "additive":
        width = path.increments.shape[1]
        additive = load_rows(space, problem.diffusion.gains[:width] * path.increments[:steps])

    for j in range(1, steps + 1):
        values = _state_values(space, coords, problem) if needs_values else None
        modal = None
        if problem.needs_coefficients:
            modal = coords if space.is_spectral else lift_coords(space, coords, basis.mode_count)
        rhs = space.mass_apply(coords)
        drift = drift_from_values(problem, values) if values is not None else None
        if drift is not None:
            rhs -= k * load_vector(space, drift)
        if additive is not None:
            rhs += additive[j - 1]
        else:
            rhs += load_vector(space, diffusion_from_values(problem, values, modal, path.increment(j)))
        coords = solve(rhs)
        if not np.all(np.isfinite(coords)):
            logger.error(f"Non-finite state at step {j} (seed={path.seed}, {space.describe()})")
            raise NumericError(f"non-finite state at step {j}", step=j, seed=path.seed)
        if slot < wanted.size and wanted[slot] == j:
            out[slot] = coords
            slot += 1

    return SolutionPath(space=space, k=k, coords=out, steps=wanted, seed=path.seed)


def reference_solution(
    problem: ProblemSpec,
    ref_space: GalerkinSpace,
    k_ref: float,
    path: NoisePath,
    tests: Sequence[Tuple[GalerkinSpace, float]] = (),
    record: Optional[Iterable[int]] = None,
) -> SolutionPath:
    """Fine run standing in for the mild solution; ``tests`` lists the (space, k) it must dominate"""
    for space, k in tests:
        ratio = k / k_ref
        if ratio < 1.0 - _GRID_TOL or abs(ratio - round(ratio)) > _GRID_TOL * ratio:
            raise ConfigurationError(f"reference step {k_ref} does not divide test step {k}")
        if space.kind == ref_space.kind and space.dim > ref_space.dim:
            raise ConfigurationError(
                f"reference {ref_space.describe()} is coarser than test space {space.describe()}"
            )
    return implicit_euler_maruyama(problem, ref_space, k_ref, path, record=record)


def _require_spectral(space: GalerkinSpace, what: str):
    if not space.is_spectral:
        raise ConfigurationError(f"{what} needs a spectral space, got {space.describe()}")


def exact_linear_additive(problem: ProblemSpec, space: GalerkinSpace, k: float, path: NoisePath) -> SolutionPath:
    """Scalar per-mode recursion c^j = ((1 - k a) c^{j-1} + gamma_m dW_m^j) / (1 + k lambda_m)"""
    _require_spectral(space, "exact_linear_additive")
    slope = problem.drift_slope
    if slope is None or problem.diffusion.kind != "additive":
        raise ConfigurationError(f"{problem.name} is not linear with additive noise")
    steps = _check_grid(problem, k, path)
    n = space.dim
    lam = problem.basis.eigenvalues[:n]
    m = min(n, path.covariance.truncation)
    gains = np.zeros(n)
    gains[:m] = problem.diffusion.gains[:m]

    out = np.empty((steps + 1, n))
    c = problem.initial.padded(n)
    out[0] = c
    for j in range(1, steps + 1):
        dw = np.zeros(n)
        dw[:m] = path.increment(j)[:m]
        c = ((1.0 - k * slope) * c + gains * dw) / (1.0 + k * lam)
        out[j] = c
    return SolutionPath(space=space, k=k, coords=out, steps=np.arange(steps + 1), seed=path.seed)


def diagonal_moment_recursion(problem: ProblemSpec, space: GalerkinSpace, k: float) -> np.ndarray:
    """E[(c_m^j)^2] for the linear diagonal multiplicative scheme, shape (N_k + 1, N)

    E[c^2]_j = E[c^2]_{j-1} ((1 - k a)^2 + kappa^2 gamma_m^2 q_m k) / (1 + k lambda_m)^2
    """
    _require_spectral(space, "diagonal_moment_recursion")
    slope = problem.drift_slope
    if slope is None or problem.diffusion.kind != "linear_diagonal":
        raise ConfigurationError(f"{problem.name} is not a linear diagonal multiplicative problem")
    steps = grid_steps(problem.T, k)
    n = space.dim
    lam = problem.basis.eigenvalues[:n]
    m = min(n, problem.covariance.truncation)
    noise = np.zeros(n)
    noise[:m] = (problem.diffusion.scale * problem.diffusion.gains[:m]) ** 2 * problem.covariance.eigenvalues[:m] * k
    growth = ((1.0 - k * slope) ** 2 + noise) / (1.0 + k * lam) ** 2
    return problem.initial.padded(n) ** 2 * growth[None, :] ** np.arange(steps + 1)[:, None]
