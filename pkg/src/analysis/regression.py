from dataclasses import dataclass
from typing import Optional, Sequence, Tuple
import logging

import numpy as np
from scipy import stats
from sklearn.linear_model import LinearRegression

from src.utils.exceptions import ConfigurationError, DomainError

logger = logging.getLogger(__name__)

RatePoint = Tuple[float, float, Optional[float]]


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    slope_stderr: float
    dof: int
    weighted: bool

    def confidence_interval(self, level: float = 0.95) -> Tuple[float, float]:
        """Normal interval for stderr-weighted fits, Student t on the residual dof otherwise"""
        if self.weighted or self.dof < 1:
            q = stats.norm.ppf(0.5 + 0.5 * level)
        else:
            q = stats.t.ppf(0.5 + 0.5 * level, self.dof)
        return (self.slope - q * self.slope_stderr, self.slope + q * self.slope_stderr)


def fit_rate(points: Sequence[RatePoint]) -> RateFit:
    """Least squares fit of log(error) = slope * log(param) + intercept

    With positive stderrs the fit is weighted by (error/stderr)^2, the inverse
    variance of log(error) to first order, and the slope stderr follows from
    those weights. Without them the stderr comes from the residuals.
    """
    if len(points) < 2:
        raise ConfigurationError(f"fit_rate needs at least 2 points, got {len(points)}")
    params = np.array([p[0] for p in points], dtype=float)
    errors = np.array([p[1] for p in points], dtype=float)
    if np.any(params <= 0):
        raise DomainError("rate fit parameters must be positive")
    if np.any(errors <= 0) or not np.all(np.isfinite(errors)):
        raise DomainError(f"cannot take the log of non-positive errors {errors.tolist()}")

    stderrs = np.array([np.nan if p[2] is None else p[2] for p in points], dtype=float)
    weighted = bool(np.all(np.isfinite(stderrs)) and np.all(stderrs > 0))
    x = np.log(params)
    y = np.log(errors)
    w = (errors / stderrs) ** 2 if weighted else np.ones_like(x)

    model = LinearRegression().fit(x.reshape(-1, 1), y, sample_weight=w)
    slope = float(model.coef_[0])
    intercept = float(model.intercept_)
    dof = len(points) - 2

    x_bar = np.sum(w * x) / np.sum(w)
    spread = float(np.sum(w * (x - x_bar) ** 2))
    if spread <= 0:
        raise DomainError("rate fit needs at least two distinct parameters")
    if weighted:
        slope_stderr = float(np.sqrt(1.0 / spread))
    elif dof > 0:
        residuals = y - (slope * x + intercept)
        slope_stderr = float(np.sqrt(np.sum(residuals ** 2) / dof / spread))
    else:
        slope_stderr = 0.0
    logger.debug(f"Rate fit over {len(points)} points: slope={slope:.4f} +/- {slope_stderr:.4f}")
    return RateFit(slope=slope, intercept=intercept, slope_stderr=slope_stderr, dof=dof, weighted=weighted)
