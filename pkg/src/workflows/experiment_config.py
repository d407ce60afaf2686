from typing import Any, Dict, List, Literal, Optional, Tuple, Union
import json
import logging

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from src.analysis.convergence_lab import step_stiffness
from src.analysis.error_ops import LEMMAS
from src.models.problem import BUILTIN_PROBLEMS
from src.utils.config import config

logger = logging.getLogger(__name__)

COMMANDS = ("lemma", "converge", "holder", "probe")
DEFAULT_LEVEL_COUNT = 5
DEFAULT_REFERENCE_STEP = 2.0 ** -12
# default spectral spatial ladder is 4, 8, 16, 32
SPECTRAL_SPATIAL_LEVEL_COUNT = 4
NOISE_MODES_PER_SIZE = 4


class ExperimentConfig(BaseModel):
    """One experiment run; every key is also a long command-line flag"""

    model_config = ConfigDict(extra="forbid")

    command: Literal["lemma", "converge", "holder", "probe"]

    # problem
    problem: str = "P1"
    T: float = Field(1.0, gt=0)
    r: Optional[float] = Field(None, ge=0, le=1)
    beta: Optional[float] = None
    gamma_decay: Optional[float] = Field(None, ge=0)
    noise_modes: Optional[int] = Field(None, ge=1)

    # discretization
    space: Literal["spectral", "fem_p1", "fem"] = "spectral"
    axis: Optional[Literal["spatial", "temporal"]] = None
    levels: Optional[Union[int, List[float]]] = None
    fixed: Optional[float] = Field(None, gt=0)
    reference_size: Optional[int] = Field(None, ge=1)
    reference_step: Optional[float] = Field(None, gt=0)
    reference_modes: int = Field(default_factory=lambda: config.reference_modes, ge=8)
    reference_check: bool = True

    # Monte Carlo
    samples: int = Field(200, ge=1)
    p: float = Field(2.0, ge=2)
    seed: int = Field(42, ge=0)

    # lemma checks
    id: Optional[str] = None
    mu: Optional[float] = None
    nu: Optional[float] = None
    rho: Optional[float] = None
    fine_size: Optional[int] = Field(None, ge=2)
    tolerance: Optional[float] = Field(None, gt=0)
    window: Optional[Tuple[float, float]] = None

    # holder / probe
    lags: Optional[List[float]] = None
    t0: Optional[float] = Field(None, gt=0)
    trials: int = Field(100, ge=1)

    # output
    output_dir: str = Field(default_factory=lambda: config.output_dir)
    plot: bool = True
    threads: Optional[int] = Field(None, ge=1)

    @field_validator("beta")
    @classmethod
    def check_trace_class(cls, v: Optional[float]) -> Optional[float]:
        if v is not None and v <= 0.5:
            raise ValueError(f"beta = {v} must exceed 1/2 for the covariance Q to be trace class")
        return v

    @field_validator("problem")
    @classmethod
    def check_problem(cls, v: str) -> str:
        if v not in BUILTIN_PROBLEMS:
            raise ValueError(f"unknown problem '{v}', expected one of {', '.join(BUILTIN_PROBLEMS)}")
        return v

    @field_validator("levels", "lags")
    @classmethod
    def check_positive(cls, v):
        if isinstance(v, int) and v < 2:
            raise ValueError("a level count must be at least 2")
        if isinstance(v, list) and any(x <= 0 for x in v):
            raise ValueError("entries must be positive")
        return v

    @model_validator(mode="after")
    def check_command(self) -> "ExperimentConfig":
        issues = []
        if self.command == "lemma":
            if self.id is None:
                issues.append("lemma needs an id")
            elif self.id not in LEMMAS and self.id not in ("ritz_s1", "ritz_s2", "ph_stability"):
                issues.append(f"unknown lemma id '{self.id}'")
            else:
                needed = LEMMAS.get(self.id, (None, None, ()))[2]
                issues.extend(f"{self.id} needs {name}" for name in needed if getattr(self, name) is None)
        if self.command == "converge" and self.axis is None:
            issues.append("converge needs an axis (spatial or temporal)")
        if self.command == "converge" and self.levels is not None and self.level_count < 3:
            issues.append("converge needs at least 3 levels")
        if self.window is not None and self.window[0] >= self.window[1]:
            issues.append("window must be an increasing pair")
        if self.noise_modes is not None and self.noise_modes > self.reference_modes:
            issues.append("noise_modes cannot exceed reference_modes")
        if issues:
            raise ValueError("; ".join(issues))
        return self

    @property
    def space_kind(self) -> str:
        return "fem_p1" if self.space == "fem" else self.space

    @property
    def level_count(self) -> int:
        if isinstance(self.levels, list):
            return len(self.levels)
        if self.levels:
            return self.levels
        return SPECTRAL_SPATIAL_LEVEL_COUNT if self.resolves_spatial_step else DEFAULT_LEVEL_COUNT

    @property
    def resolves_spatial_step(self) -> bool:
        return (self.command == "converge" and self.axis == "spatial" and self.space_kind == "spectral"
                and self.fixed is None)

    def resolved_axis(self) -> str:
        if self.axis is not None:
            return self.axis
        if self.command == "lemma" and self.id in LEMMAS and LEMMAS[self.id][0] in ("Fkh", "R"):
            return "temporal"
        return "spatial"

    def resolved_levels(self) -> List[float]:
        """Explicit levels, or a dyadic ladder of ``levels`` entries"""
        if isinstance(self.levels, list):
            return [float(x) for x in self.levels]
        count = self.level_count
        if self.resolved_axis() == "temporal":
            first = 3 if self.command == "converge" else 4
            return [2.0 ** -(first + i) for i in range(count)]
        start = 4 if self.space_kind == "spectral" else 8
        return [float(start * 2 ** i) for i in range(count)]

    def resolved_lags(self) -> List[float]:
        if self.lags:
            return list(self.lags)
        return [self.resolved_reference_step() * 2 ** (i + 2) for i in range(DEFAULT_LEVEL_COUNT)]

    def resolved_reference_step(self) -> float:
        """Explicit reference step, else 2^-12 halved until spectral spatial levels stay resolved"""
        if self.reference_step is not None:
            return self.reference_step
        k = DEFAULT_REFERENCE_STEP
        if self.resolves_spatial_step:
            finest = int(max(self.resolved_levels()))
            while step_stiffness(k, finest) > config.spatial_step_limit:
                k *= 0.5
        return k

    def resolved_noise_modes(self, reference_size: int) -> Optional[int]:
        """Explicit noise truncation; spectral spatial studies default to a multiple of the reference size"""
        if self.noise_modes is not None or not self.resolves_spatial_step:
            return self.noise_modes
        return min(self.reference_modes, NOISE_MODES_PER_SIZE * reference_size)


def _format_error(error: Dict[str, Any]) -> str:
    where = ".".join(str(part) for part in error["loc"]) or "config"
    if error["type"] == "missing":
        return f"missing {where}"
    if error["type"] == "extra_forbidden":
        return f"unknown key {where}"
    message = error["msg"].removeprefix("Value error, ")
    return message if where == "config" else f"{where}: {message}"


def parse_config(data: Any) -> Tuple[Optional[ExperimentConfig], List[str]]:
    if not isinstance(data, dict):
        return None, ["config must be a JSON object"]
    try:
        return ExperimentConfig.model_validate(data), []
    except ValidationError as e:
        return None, [_format_error(err) for err in e.errors()]


def validate_config(raw_text: str) -> Tuple[Optional[ExperimentConfig], List[str]]:
    """Parse a JSON config, collecting every validation error instead of raising"""
    if not raw_text or not raw_text.strip():
        return None, ["missing command"]
    try:
        data = json.loads(raw_text)
    except json.JSONDecodeError as e:
        return None, [f"invalid JSON: {e}"]
    cfg, errors = parse_config(data)
    if errors:
        logger.debug(f"Config rejected with {len(errors)} errors")
    return cfg, errors


def apply_environment(cfg: ExperimentConfig) -> ExperimentConfig:
    """SPDELAB_SEED overrides the configured seed"""
    if config.seed_override is not None and config.seed_override != cfg.seed:
        logger.info(f"Seed {cfg.seed} overridden by SPDELAB_SEED={config.seed_override}")
        return cfg.model_copy(update={"seed": config.seed_override})
    return cfg
