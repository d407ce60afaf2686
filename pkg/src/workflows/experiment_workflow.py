from langgraph.graph import StateGraph, END
from typing import TypedDict, List, Dict, Any, Optional, Callable, Mapping, Union
import logging
import os
import time

import numpy as np

from src.analysis.convergence_lab import ConvergenceReport, Discretization, convergence_study, holder_check
from src.analysis.error_ops import (
    LEMMAS,
    RateReport,
    StabilityReport,
    lemma_rate_check,
    ph_stability_check,
    ritz_rate_check,
)
from src.core.galerkin_space import make_space
from src.core.spectral_core import build_basis
from src.models.problem import ProblemSpec, growth_probe, lipschitz_probe, make_problem
from src.utils.exceptions import ConfigurationError, ConvergenceStudyError, SpdeLabError
from src.utils.helpers import (
    RunManifest,
    config_digest,
    utc_timestamp,
    write_loglog_plot,
    write_manifest,
    write_results_csv,
)
from src.workflows.experiment_config import ExperimentConfig, apply_environment, parse_config

logger = logging.getLogger(__name__)

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_IO = 3

DEFAULT_STUDY_SPACE = {"spectral": 64, "fem_p1": 64}


# State carried through the experiment graph
class ExperimentState(TypedDict):
    settings: Dict[str, Any]
    experiment_config: Optional[ExperimentConfig]
    experiment: str
    digest: str
    rows: List[Dict[str, Any]]
    plot: Optional[Dict[str, Any]]
    summary: Dict[str, Any]
    passed: Optional[bool]
    failed_stage: Optional[str]
    artifacts: List[str]
    errors: List[str]
    exit_status: int
    current_step: str
    progress: int
    started_at: str
    clock: float
    progress_callback: Optional[Callable]


def _level_rows(base: Dict[str, Any], labels, params, values, stderrs=None, samples=None, p=None):
    rows = []
    for i, (label, param, value) in enumerate(zip(labels, params, values)):
        rows.append({
            **base,
            "level": _label(label),
            "param": param,
            "samples": samples,
            "p": p,
            "error": value,
            "stderr": None if stderrs is None else stderrs[i],
        })
    return rows


def _label(value: float) -> str:
    return str(int(value)) if float(value).is_integer() else "%.17g" % value


class ExperimentWorkflow:
    """LangGraph experiment runner: validate, compute, write artifacts, assess"""

    def __init__(self):
        self.workflow = self.build_workflow()
        self.progress_steps = {
            "validating": 10,
            "computing": 70,
            "writing_artifacts": 90,
            "assessing": 100,
        }

    def update_progress(self, state: ExperimentState, step: str):
        state["current_step"] = step
        state["progress"] = self.progress_steps.get(step, state.get("progress", 0))
        logger.info(f"Experiment {state.get('experiment') or 'pending'}: {state['progress']}% - {step}")
        if state.get("progress_callback"):
            try:
                state["progress_callback"](state["progress"], step)
            except Exception as e:
                logger.warning(f"Progress callback failed: {e}")

    def build_workflow(self):
        """Build the LangGraph workflow"""
        workflow = StateGraph(ExperimentState)

        workflow.add_node("validate", self.validate_node)
        workflow.add_node("compute", self.compute_node)
        workflow.add_node("write_artifacts", self.write_artifacts_node)
        workflow.add_node("assess", self.assess_node)

        workflow.set_entry_point("validate")
        workflow.add_conditional_edges(
            "validate",
            self.after_validation,
            {"compute": "compute", "end": END},
        )
        # configuration problems found while computing end without files
        workflow.add_conditional_edges(
            "compute",
            self.after_compute,
            {"write": "write_artifacts", "end": END},
        )
        workflow.add_conditional_edges(
            "write_artifacts",
            self.after_write,
            {"assess": "assess", "end": END},
        )
        workflow.add_edge("assess", END)
        return workflow.compile()

    def after_validation(self, state: ExperimentState) -> str:
        return "end" if state["experiment_config"] is None else "compute"

    def after_compute(self, state: ExperimentState) -> str:
        return "end" if state["exit_status"] == EXIT_CONFIG else "write"

    def after_write(self, state: ExperimentState) -> str:
        return "end" if state["exit_status"] == EXIT_IO else "assess"

    def validate_node(self, state: ExperimentState) -> ExperimentState:
        """Validate every setting before anything is computed"""
        self.update_progress(state, "validating")
        cfg, errors = parse_config(state["settings"])
        if errors:
            for message in errors:
                logger.error(f"Invalid configuration: {message}")
            state["errors"].extend(errors)
            state["exit_status"] = EXIT_CONFIG
            state["failed_stage"] = "validate"
            return state
        cfg = apply_environment(cfg)
        state["experiment_config"] = cfg
        state["digest"] = config_digest(cfg.model_dump(mode="json"))
        state["experiment"] = self.experiment_name(cfg)
        return state

    @staticmethod
    def experiment_name(cfg: ExperimentConfig) -> str:
        if cfg.command == "lemma":
            return f"lemma_{cfg.id}_{cfg.space_kind}"
        if cfg.command == "converge":
            return f"converge_{cfg.problem}_{cfg.axis}_{cfg.space_kind}"
        return f"{cfg.command}_{cfg.problem}"

    def compute_node(self, state: ExperimentState) -> ExperimentState:
        """Dispatch to the requested check"""
        self.update_progress(state, "computing")
        cfg = state["experiment_config"]
        base = {"experiment": state["experiment"], "config_digest": state["digest"]}
        try:
            handler = {
                "lemma": self.run_lemma,
                "converge": self.run_converge,
                "holder": self.run_holder,
                "probe": self.run_probe,
            }[cfg.command]
            handler(cfg, base, state)
        except ConfigurationError as e:
            logger.error(f"Configuration error during {cfg.command}: {e}")
            state["errors"].append(str(e))
            state["exit_status"] = EXIT_CONFIG
            state["failed_stage"] = "compute"
        except ConvergenceStudyError as e:
            logger.error(f"Convergence study aborted: {e}")
            state["errors"].append(str(e))
            state["passed"] = False
            state["failed_stage"] = "compute"
            if isinstance(e.partial, ConvergenceReport):
                self.convergence_rows(e.partial, cfg, base, state)
                state["passed"] = False
        except SpdeLabError as e:
            logger.error(f"Experiment failed: {e}")
            state["errors"].append(str(e))
            state["passed"] = False
            state["failed_stage"] = "compute"
        return state

    def _problem(self, cfg: ExperimentConfig, noise_modes: Optional[int] = None) -> ProblemSpec:
        basis = build_basis(cfg.reference_modes)
        return make_problem(cfg.problem, basis, T=cfg.T, r=cfg.r, beta=cfg.beta,
                            gamma_decay=cfg.gamma_decay, noise_modes=noise_modes or cfg.noise_modes, p=cfg.p)

    def rate_rows(self, report: RateReport, base: Dict[str, Any], state: ExperimentState,
                  samples: Optional[int] = None, p: Optional[float] = None):
        base = {**base, "param_kind": report.param_kind}
        state["rows"].extend(_level_rows(base, report.levels, report.params, report.values,
                                         samples=samples, p=p))
        state["rows"].append({**base, "level": "fit", "samples": samples, "p": p, "slope": report.slope,
                              "slope_stderr": report.slope_stderr, "pass": report.passed})
        state["plot"] = {"params": report.params.tolist(), "values": report.values.tolist(),
                         "slope": report.slope, "intercept": report.intercept,
                         "param_kind": report.param_kind, "stderrs": None}
        state["summary"].update({
            "slope": report.slope,
            "slope_stderr": report.slope_stderr,
            "expected": report.expected,
            "tolerance": report.tolerance,
            "mode": report.mode,
            "bound": report.bound,
            "sup_on_grid_boundary": [float(x) for x, ok in zip(report.levels, report.interior) if not ok],
        })
        state["passed"] = report.passed

    def stability_rows(self, report: StabilityReport, base: Dict[str, Any], state: ExperimentState):
        base = {**base, "param_kind": "h"}
        state["rows"].extend(_level_rows(base, report.sizes, report.h, report.constants))
        state["rows"].append({**base, "level": "fit", "pass": report.non_increasing})
        state["summary"]["constants"] = report.constants
        state["passed"] = report.non_increasing

    def run_lemma(self, cfg: ExperimentConfig, base: Dict[str, Any], state: ExperimentState):
        basis = build_basis(cfg.reference_modes)
        levels = cfg.resolved_levels()
        if cfg.id == "ph_stability":
            self.stability_rows(ph_stability_check([int(n) for n in levels], basis, cfg.space_kind), base, state)
            return
        if cfg.id in ("ritz_s1", "ritz_s2"):
            report = ritz_rate_check([int(n) for n in levels], int(cfg.id[-1]), basis, cfg.space_kind,
                                     tolerance=cfg.tolerance or 0.1)
        else:
            params = {name: getattr(cfg, name) for name in LEMMAS[cfg.id][2]}
            report = lemma_rate_check(
                cfg.id, params, cfg.space_kind, levels, basis,
                axis=cfg.resolved_axis(),
                fixed=cfg.fixed or cfg.fine_size,
                T=cfg.T,
                tolerance=cfg.tolerance,
                threads=cfg.threads,
            )
        self.rate_rows(report, base, state)

    @staticmethod
    def _reference_size(cfg: ExperimentConfig, levels: List[float], axis: str) -> int:
        if cfg.reference_size:
            return cfg.reference_size
        if axis == "spatial":
            return 4 * int(max(levels))
        return int(cfg.fixed or DEFAULT_STUDY_SPACE[cfg.space_kind])

    def convergence_rows(self, report: ConvergenceReport, cfg: ExperimentConfig, base: Dict[str, Any],
                         state: ExperimentState):
        base = {**base, "param_kind": report.param_kind}
        estimates = [est for _, est in report.levels]
        state["rows"].extend(_level_rows(
            base, report.labels, report.params.tolist(), [e.value for e in estimates],
            stderrs=[e.stderr for e in estimates], samples=cfg.samples, p=cfg.p,
        ))
        state["rows"].append({**base, "level": "fit", "samples": cfg.samples, "p": cfg.p, "slope": report.slope,
                              "slope_stderr": report.slope_stderr, "pass": report.passed})
        if len(estimates) >= 2:
            state["plot"] = {"params": report.params.tolist(), "values": report.values.tolist(),
                             "slope": report.slope, "intercept": report.intercept,
                             "param_kind": report.param_kind, "stderrs": [e.stderr for e in estimates]}
        state["summary"].update({
            "slope": report.slope,
            "slope_stderr": report.slope_stderr,
            "slope_ci": list(report.slope_ci),
            "expected": report.expected,
            "window": list(report.window),
            "monotone": report.monotone,
            "eval_time": estimates[0].eval_time if estimates else None,
            "reference_shift": report.reference_shift,
            "reference_ok": report.reference_ok,
            "step_stiffness": report.step_stiffness,
            "coupling_digest": report.coupling_digest,
        })
        state["passed"] = report.passed

    def run_converge(self, cfg: ExperimentConfig, base: Dict[str, Any], state: ExperimentState):
        axis = cfg.axis
        levels = cfg.resolved_levels()
        size = self._reference_size(cfg, levels, axis)
        problem = self._problem(cfg, cfg.resolved_noise_modes(size))
        ref = Discretization(make_space(cfg.space_kind, size, problem.basis), cfg.resolved_reference_step())
        report = convergence_study(
            problem, axis, levels,
            fixed=cfg.fixed,
            ref=ref,
            samples=cfg.samples,
            p=cfg.p,
            base_seed=cfg.seed,
            space_kind=cfg.space_kind,
            reference_check=cfg.reference_check,
            window=cfg.window,
            config_digest=state["digest"],
            threads=cfg.threads,
        )
        self.convergence_rows(report, cfg, base, state)
        state["summary"].update({"reference_step": ref.k, "noise_modes": problem.covariance.truncation})

    def run_holder(self, cfg: ExperimentConfig, base: Dict[str, Any], state: ExperimentState):
        problem = self._problem(cfg)
        size = cfg.reference_size or cfg.fixed or DEFAULT_STUDY_SPACE[cfg.space_kind]
        ref = Discretization(make_space(cfg.space_kind, int(size), problem.basis), cfg.resolved_reference_step())
        report = holder_check(problem, ref, cfg.resolved_lags(), cfg.samples, cfg.seed,
                              t0=cfg.t0, tolerance=cfg.tolerance or 0.1, threads=cfg.threads)
        self.rate_rows(report, base, state, samples=cfg.samples, p=2.0)

    def run_probe(self, cfg: ExperimentConfig, base: Dict[str, Any], state: ExperimentState):
        problem = self._problem(cfg)
        lip = lipschitz_probe(problem, cfg.trials, cfg.seed)
        growth = growth_probe(problem, cfg.trials, cfg.seed)
        within = lip.within_bounds()
        bounded = bool(np.isfinite(growth.ratio_max))
        base = {**base, "param_kind": "bound", "samples": cfg.trials}
        state["rows"].extend([
            {**base, "level": "f_lipschitz", "param": lip.f_bound, "error": lip.f_ratio_max,
             "pass": lip.f_ratio_max <= lip.f_bound * 1.05 + 1e-14},
            {**base, "level": "g_lipschitz", "param": lip.g_bound, "error": lip.g_ratio_max,
             "pass": lip.g_ratio_max <= lip.g_bound * 1.05 + 1e-14},
            {**base, "level": "growth", "error": growth.ratio_max, "pass": bounded},
        ])
        state["summary"].update({"problem": problem.describe(), "growth_ratio_max": growth.ratio_max})
        state["passed"] = within and bounded

    def write_artifacts_node(self, state: ExperimentState) -> ExperimentState:
        """Single writer for CSV, manifest and plot"""
        self.update_progress(state, "writing_artifacts")
        cfg = state["experiment_config"]
        stem = os.path.join(cfg.output_dir, state["experiment"])
        try:
            state["artifacts"].append(write_results_csv(state["rows"], f"{stem}.csv"))
            if cfg.plot and state["plot"] is not None:
                plot = state["plot"]
                try:
                    state["artifacts"].append(write_loglog_plot(
                        plot["params"], plot["values"], plot["slope"], plot["intercept"], f"{stem}.svg",
                        title=state["experiment"], param_kind=plot["param_kind"], stderrs=plot["stderrs"],
                    ))
                except OSError:
                    raise
                except Exception as e:
                    # kaleido missing or broken; the CSV carries the same data
                    logger.warning(f"Plot export failed: {e}")
                    state["errors"].append(f"plot export failed: {e}")
            manifest = RunManifest(
                experiment=state["experiment"],
                config=cfg.model_dump(mode="json"),
                config_digest=state["digest"],
                started_at=state["started_at"],
                wall_time_seconds=time.perf_counter() - state["clock"],
                passed=state["passed"],
                summary=state["summary"],
                errors=state["errors"],
                artifacts=list(state["artifacts"]),
            )
            state["artifacts"].append(write_manifest(manifest, f"{stem}.manifest.json"))
        except OSError as e:
            logger.error(f"Could not write artifacts under {cfg.output_dir}: {e}")
            state["errors"].append(f"I/O failure: {e}")
            state["exit_status"] = EXIT_IO
            state["failed_stage"] = "write_artifacts"
        return state

    def assess_node(self, state: ExperimentState) -> ExperimentState:
        self.update_progress(state, "assessing")
        state["exit_status"] = EXIT_PASS if state["passed"] else EXIT_FAIL
        verdict = "PASS" if state["passed"] else "FAIL"
        logger.info(f"Experiment {state['experiment']}: {verdict} (slope={state['summary'].get('slope')})")
        return state

    def run(self, settings: Mapping[str, Any], progress_callback: Optional[Callable] = None) -> ExperimentState:
        initial_state = ExperimentState(
            settings=dict(settings),
            experiment_config=None,
            experiment="",
            digest="",
            rows=[],
            plot=None,
            summary={},
            passed=None,
            failed_stage=None,
            artifacts=[],
            errors=[],
            exit_status=EXIT_PASS,
            current_step="initialized",
            progress=0,
            started_at=utc_timestamp(),
            clock=time.perf_counter(),
            progress_callback=progress_callback,
        )
        return self.workflow.invoke(initial_state)


def run_experiment(settings: Union[ExperimentConfig, Mapping[str, Any]],
                   progress_callback: Optional[Callable] = None) -> ExperimentState:
    """Run one experiment; ``exit_status`` on the returned state is the process exit code"""
    if isinstance(settings, ExperimentConfig):
        settings = settings.model_dump(exclude_unset=True)
    return ExperimentWorkflow().run(settings, progress_callback)
