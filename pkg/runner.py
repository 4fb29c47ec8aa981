"""
Experiment Runner Module
Parses experiment configs, builds problems and runs every (algorithm, seed) job
on a thread pool, collecting one metrics record per iteration.
"""

from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from core import BlockPoint, BregmanKernel, ConfigError, InertialSchedule, KernelKind, STiBPALMError
from dataset_generator import DatasetGenerator
from diagnostics import compute_psi, psi_constants, stationarity_residual
from estimators import EstimatorKind, SagaMode, batch_size_from_fraction, current_upsilon
from matrix_io import load_matrix, save_matrix
from problems import (
    BidConfig,
    BlindDeconvolutionProblem,
    ProblemSpec,
    QuadraticProblem,
    SnmfConfig,
    SparseNMFProblem,
)
from solvers import (
    SolverConfig,
    StepsizeVerdict,
    adapt_kernel,
    check_config,
    config_vr_constants,
    effective_alpha_caps,
    estimate_partial_lipschitz,
    preset,
    solve,
)
from src.config import Config

logger = logging.getLogger(__name__)

TOP_LEVEL_KEYS = {
    "name", "problem", "algorithms", "solver", "batch_fraction", "epochs", "seeds",
    "diagnostics", "diagnostics_every", "output_dir", "workers", "strict", "save_factors",
}
PROBLEM_KEYS = {
    "snmf": {"kind", "data", "rank", "sparsity", "eta_fit"},
    "synthetic": {"kind", "rows", "cols", "rank", "density", "noise", "seed", "sparsity", "eta_fit"},
    "bid": {"kind", "image", "generate", "kernel_size", "eta_reg", "sigma", "n_strips"},
    "quadratic": {"kind", "n", "l", "m", "seed"},
}
BID_GENERATE_KEYS = {"size", "kernel", "kernel_size", "noise", "seed", "angle"}
SOLVER_KEYS = {
    "theta", "adaptive_theta", "theta_safety", "inertia", "refresh_prob", "saga_mode",
    "epsilon", "ensure_full_every", "estimator", "quartic_radius",
}


def _check_keys(section: str, data: Dict[str, Any], allowed, strict: bool) -> None:
    unknown = sorted(set(data) - set(allowed))
    if not unknown:
        return
    if strict:
        raise ConfigError(f"unknown keys in {section}: {', '.join(unknown)}")
    for key in unknown:
        logger.warning("ignoring unknown key %r in %s", key, section)


def _check_solver_options(solver: Dict[str, Any]) -> None:
    try:
        EstimatorKind(solver.get("estimator", "sarah"))
        SagaMode(solver.get("saga_mode", "table"))
    except ValueError as exc:
        raise ConfigError(f"invalid solver option: {exc}") from None
    InertialSchedule.parse(solver.get("inertia", "ramp"))
    theta = solver.get("theta", "auto")
    if not (theta in ("auto", None) or isinstance(theta, (int, float, list, tuple))):
        raise ConfigError(f"theta must be 'auto', a number or a pair, got {theta!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: a problem, the algorithms to compare and the seeds to average over."""

    problem: Dict[str, Any]
    algorithms: Tuple[str, ...] = ("PALM", "STiBPALM-SARAH")
    solver: Dict[str, Any] = field(default_factory=dict)
    batch_fraction: float = Config.BATCH_FRACTION
    epochs: float = 10.0
    seeds: Tuple[int, ...] = (0,)
    diagnostics: bool = False
    diagnostics_every: int = 1
    output_dir: str = Config.OUTPUT_DIR
    workers: int = Config.WORKERS
    strict: bool = Config.STRICT
    save_factors: bool = False
    name: str = "experiment"

    def __post_init__(self):
        if not 0 < self.batch_fraction <= 1:
            raise ConfigError(f"batch_fraction must lie in (0, 1], got {self.batch_fraction}")
        if not self.seeds:
            raise ConfigError("seeds must be a nonempty list")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not self.algorithms:
            raise ConfigError("algorithms must be a nonempty list")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if self.diagnostics_every < 1:
            raise ConfigError("diagnostics_every must be >= 1")
        kind = self.problem.get("kind")
        if kind not in PROBLEM_KEYS:
            raise ConfigError(f"unknown problem kind {kind!r}; expected one of {', '.join(PROBLEM_KEYS)}")

    @classmethod
    def from_dict(cls, data: Dict[str, Any], strict: Optional[bool] = None,
                  base_dir: Optional[Path] = None) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("experiment config must be a JSON object")
        strict = bool(data.get("strict", Config.STRICT)) if strict is None else strict
        _check_keys("config", data, TOP_LEVEL_KEYS, strict)
        problem = dict(data.get("problem") or {})
        kind = problem.get("kind")
        if kind in PROBLEM_KEYS:
            _check_keys(f"problem ({kind})", problem, PROBLEM_KEYS[kind], strict)
            if kind == "bid" and isinstance(problem.get("generate"), dict):
                _check_keys("problem.generate", problem["generate"], BID_GENERATE_KEYS, strict)
        solver = dict(data.get("solver") or {})
        _check_keys("solver", solver, SOLVER_KEYS, strict)
        _check_solver_options(solver)
        if base_dir is not None:
            for key in ("data", "image"):
                if isinstance(problem.get(key), str) and not Path(problem[key]).is_absolute():
                    problem[key] = str(Path(base_dir) / problem[key])
        try:
            return cls(
                problem=problem,
                algorithms=tuple(data.get("algorithms", cls.algorithms)),
                solver=solver,
                batch_fraction=float(data.get("batch_fraction", Config.BATCH_FRACTION)),
                epochs=float(data.get("epochs", 10.0)),
                seeds=tuple(int(s) for s in data.get("seeds", (0,))),
                diagnostics=bool(data.get("diagnostics", False)),
                diagnostics_every=int(data.get("diagnostics_every", 1)),
                output_dir=str(data.get("output_dir", Config.OUTPUT_DIR)),
                workers=int(data.get("workers", Config.WORKERS)),
                strict=strict,
                save_factors=bool(data.get("save_factors", False)),
                name=str(data.get("name", "experiment")),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"invalid config value: {exc}") from exc

    @classmethod
    def from_file(cls, path: str, strict: Optional[bool] = None) -> "ExperimentConfig":
        file = Path(path)
        if not file.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = json.loads(file.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(data, strict=strict, base_dir=file.parent)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name, "problem": self.problem, "algorithms": list(self.algorithms),
            "solver": self.solver, "batch_fraction": self.batch_fraction, "epochs": self.epochs,
            "seeds": list(self.seeds), "diagnostics": self.diagnostics,
            "diagnostics_every": self.diagnostics_every, "output_dir": self.output_dir,
            "workers": self.workers, "strict": self.strict, "save_factors": self.save_factors,
        }


# ----- Problem construction -----

def build_problem(spec: Dict[str, Any]) -> ProblemSpec:
    kind = spec.get("kind")
    if kind == "snmf":
        if "data" not in spec:
            raise ConfigError("snmf problem needs a 'data' matrix path")
        A = load_matrix(spec["data"])
        return _snmf_problem(A, spec, default_sparsity=Config.SPARSITY)
    if kind == "synthetic":
        try:
            rows, cols, rank = int(spec["rows"]), int(spec["cols"]), int(spec["rank"])
        except KeyError as exc:
            raise ConfigError(f"synthetic problem is missing {exc.args[0]!r}") from None
        density = float(spec.get("density", Config.SPARSITY))
        planted = DatasetGenerator(int(spec.get("seed", 0))).planted_snmf(
            rows, cols, rank, density, float(spec.get("noise", 0.0)))
        return _snmf_problem(planted.A, spec, default_sparsity=density)
    if kind == "bid":
        if "image" in spec:
            A = load_matrix(spec["image"])
        elif "generate" in spec:
            gen = dict(spec["generate"])
            generator = DatasetGenerator(int(gen.get("seed", 0)))
            k = int(gen.get("kernel_size", spec.get("kernel_size", 9)))
            if gen.get("kernel", "motion") == "disk":
                K = generator.disk_kernel(k)
            else:
                K = generator.motion_kernel(k, angle=float(gen.get("angle", 45.0)))
            A = generator.blur(generator.test_image(int(gen.get("size", 64))), K,
                               float(gen.get("noise", 0.0))).blurred
        else:
            raise ConfigError("bid problem needs an 'image' path or a 'generate' block")
        cfg = BidConfig(A, int(spec.get("kernel_size", 9)), float(spec.get("eta_reg", Config.ETA_REG)),
                        float(spec.get("sigma", Config.SIGMA)),
                        min(int(spec.get("n_strips", Config.N_STRIPS)), A.shape[0]))
        return BlindDeconvolutionProblem(cfg)
    if kind == "quadratic":
        return QuadraticProblem.random(int(spec.get("n", 40)), int(spec.get("l", 3)),
                                       int(spec.get("m", 3)), int(spec.get("seed", 0)))
    raise ConfigError(f"unknown problem kind {kind!r}")


def _snmf_problem(A: np.ndarray, spec: Dict[str, Any], default_sparsity: float) -> SparseNMFProblem:
    if "rank" not in spec:
        raise ConfigError("snmf problem needs 'rank'")
    s = SnmfConfig.sparsity_from(spec.get("sparsity", default_sparsity), A.shape[0])
    return SparseNMFProblem(SnmfConfig(A, int(spec["rank"]), s, float(spec.get("eta_fit", Config.ETA_FIT))))


# ----- Solver configuration -----

def base_solver_config(experiment: ExperimentConfig, problem: ProblemSpec, seed: int) -> SolverConfig:
    opts = experiment.solver
    default_adaptive = isinstance(problem, SparseNMFProblem)
    default_refresh = Config.BID_REFRESH_PROB if isinstance(problem, BlindDeconvolutionProblem) else Config.REFRESH_PROB
    return SolverConfig(
        estimator=EstimatorKind(opts.get("estimator", "sarah")),
        batch_size=batch_size_from_fraction(problem.n, experiment.batch_fraction),
        refresh_prob=float(opts.get("refresh_prob", default_refresh)),
        saga_mode=opts.get("saga_mode", "table"),
        adaptive_theta=bool(opts.get("adaptive_theta", default_adaptive)),
        theta_safety=float(opts.get("theta_safety", 1.0)),
        max_epochs=experiment.epochs,
        seed=seed,
        epsilon=float(opts.get("epsilon", Config.EPSILON)),
        ensure_full_every=int(opts.get("ensure_full_every", 0)),
        inertia=InertialSchedule.parse(opts.get("inertia", "ramp")),
        diagnostics=experiment.diagnostics,
    )


def resolve_kernels(config: SolverConfig, problem: ProblemSpec, z0: BlockPoint,
                    theta: Any = "auto", quartic_radius: float = 0.0) -> SolverConfig:
    """
    Fix the kernel moduli: explicit numbers, or safety * partial moduli at z0 for 'auto'.

    A quartic x kernel gets its scale from the requested modulus on the annulus
    radius <= ||x|| <= bound, with radius defaulting to half of ||x0||. With
    adaptive theta the kernels are the ones the first step will rescale to, so
    the step-size check sees the kernel the run starts with.
    """
    modulus_x = estimate_partial_lipschitz(problem, "y", z0)
    modulus_y = estimate_partial_lipschitz(problem, "x", z0)
    if theta == "auto" or theta is None:
        theta1, theta2 = config.theta_safety * modulus_x, config.theta_safety * modulus_y
    elif isinstance(theta, (list, tuple)) and len(theta) == 2:
        theta1, theta2 = float(theta[0]), float(theta[1])
    else:
        theta1 = theta2 = float(theta)
    tiny = np.finfo(float).tiny
    theta1, theta2 = max(theta1, tiny), max(theta2, tiny)
    if config.kernel_x.kind is KernelKind.QUARTIC:
        norm_x0 = float(np.linalg.norm(z0.x))
        radius = quartic_radius if quartic_radius > 0 else 0.5 * norm_x0
        scale = math.sqrt(theta1) / radius if radius > 0 else math.sqrt(theta1)
        kernel_x = BregmanKernel(KernelKind.QUARTIC, scale, radius, 10.0 * max(norm_x0, radius))
    else:
        kernel_x = BregmanKernel(KernelKind.QUADRATIC, theta1)
    kernel_y = BregmanKernel(config.kernel_y.kind, theta2)
    if config.adaptive_theta:
        if not (theta == "auto" or theta is None):
            logger.warning("%s: adaptive theta replaces the configured theta %r", config.name, theta)
        kernel_x = adapt_kernel(kernel_x, modulus_x, config.theta_safety)
        kernel_y = adapt_kernel(kernel_y, modulus_y, config.theta_safety)
    return replace(config, kernel_x=kernel_x, kernel_y=kernel_y)


def validate_experiment(experiment: ExperimentConfig, problem: Optional[ProblemSpec] = None
                        ) -> Dict[str, Optional[StepsizeVerdict]]:
    """Step-size verdict per algorithm at the first seed's starting point; None for SGD runs."""
    problem = problem or build_problem(experiment.problem)
    seed = experiment.seeds[0]
    z0 = problem.initial_point(np.random.default_rng(seed))
    lipschitz = problem.lipschitz_hint(z0)
    verdicts = {}
    for name in experiment.algorithms:
        cfg = _job_config(experiment, problem, name, seed, z0)
        if cfg.estimator is EstimatorKind.SGD:
            verdicts[cfg.name] = None
        else:
            verdicts[cfg.name] = check_config(cfg, lipschitz, problem.n)
    return verdicts


def _job_config(experiment: ExperimentConfig, problem: ProblemSpec, algorithm: str, seed: int,
                z0: BlockPoint) -> SolverConfig:
    cfg = preset(algorithm, base_solver_config(experiment, problem, seed))
    return resolve_kernels(cfg, problem, z0, experiment.solver.get("theta", "auto"),
                           float(experiment.solver.get("quartic_radius", 0.0)))


# ----- Running -----

@dataclass
class RunInfo:
    run_id: str
    algorithm: str
    seed: int
    status: str = "ok"
    error: Optional[str] = None
    initial_objective: Optional[float] = None
    final_objective: Optional[float] = None
    iterations: int = 0
    wall_time_s: float = 0.0
    stepsize: Optional[str] = None
    stepsize_margin: Optional[float] = None
    flagged: bool = False
    # ||z_{k+1} - z_k||^2 per step, kept only for diagnostics runs
    sq_steps: List[float] = field(default_factory=list, repr=False)


@dataclass
class RunMetrics:
    """All iteration records of an experiment plus one RunInfo per job."""

    records: pd.DataFrame
    runs: List[RunInfo]
    config: Optional[ExperimentConfig] = None

    @property
    def failures(self) -> List[RunInfo]:
        return [r for r in self.runs if r.status == "failed"]

    @property
    def flagged(self) -> List[RunInfo]:
        return [r for r in self.runs if r.flagged]


def _run_job(experiment: ExperimentConfig, problem: ProblemSpec, algorithm: str, seed: int
             ) -> Tuple[RunInfo, List[Dict[str, Any]]]:
    z0 = problem.initial_point(np.random.default_rng(seed))
    cfg = _job_config(experiment, problem, algorithm, seed, z0)
    run_id = f"{cfg.name}-s{seed}"
    info = RunInfo(run_id, cfg.name, seed)
    records: List[Dict[str, Any]] = []
    info.initial_objective = problem.eval_objective(z0).value

    lipschitz = problem.lipschitz_hint(z0)
    vr = config_vr_constants(cfg, lipschitz, problem.n)
    if vr is None:
        info.stepsize = "not variance-reduced"
        info.flagged = True
        logger.warning("%s: SGD estimator is not variance-reduced; step-size condition not applicable", run_id)
    else:
        verdict = check_config(cfg, lipschitz, problem.n)
        info.stepsize = verdict.describe()
        info.stepsize_margin = verdict.margin
        if not verdict.satisfied:
            if experiment.strict:
                raise ConfigError(f"{run_id}: step-size condition violated ({verdict.describe()})")
            info.flagged = True
            logger.warning("%s: step-size condition violated (%s)", run_id, verdict.describe())

    psi_consts = None
    alphas, gammas = effective_alpha_caps(cfg), cfg.gamma_caps
    if experiment.diagnostics and vr is not None:
        theta = min(cfg.kernel_x.strong_convexity, cfg.kernel_y.strong_convexity)
        psi_consts = psi_constants(vr, lipschitz.L, gammas, alphas, theta, cfg.epsilon)

    started = time.monotonic()
    logger.info("starting %s", run_id)

    def record(state) -> None:
        point = state.point
        objective = problem.eval_objective(point)
        row = {
            "run_id": run_id, "seed": seed, "algorithm": cfg.name, "epoch": state.epoch,
            "iter": state.k, "wall_time_s": time.monotonic() - started,
            "objective": objective.value, "feasible": objective.feasible,
            "psi": None, "stationarity": None, "upsilon": None,
        }
        if experiment.diagnostics and state.k % experiment.diagnostics_every == 0:
            last = state.last
            upsilon = current_upsilon(state.estimator)
            row["upsilon"] = upsilon
            row["stationarity"] = stationarity_residual(
                problem, state.window, (last.grad_x, last.grad_y), (last.kernel_x, last.kernel_y),
                (last.alpha1, last.alpha2), (last.beta1, last.beta2)).combined
            if psi_consts is not None:
                row["psi"] = compute_psi(objective.value, upsilon, state.window, psi_consts, vr,
                                         lipschitz.L, alphas, gammas)
        if experiment.diagnostics:
            info.sq_steps.append(state.window.sq_distances()[0])
        records.append(row)

    final = solve(problem, cfg, z0, callback=record)
    info.wall_time_s = time.monotonic() - started
    info.iterations = final.k
    info.final_objective = records[-1]["objective"] if records else info.initial_objective
    if experiment.save_factors:
        factors = Path(experiment.output_dir) / "factors"
        save_matrix(factors / f"{run_id}_X.bin", np.atleast_2d(final.point.x))
        save_matrix(factors / f"{run_id}_Y.bin", np.atleast_2d(final.point.y))
    logger.info("finished %s: objective %.6g after %d iterations in %.2fs",
                run_id, info.final_objective, info.iterations, info.wall_time_s)
    return info, records


def _guarded_job(experiment: ExperimentConfig, problem: ProblemSpec, algorithm: str, seed: int
                 ) -> Tuple[RunInfo, List[Dict[str, Any]]]:
    try:
        return _run_job(experiment, problem, algorithm, seed)
    except (STiBPALMError, ValueError, FloatingPointError) as exc:
        name = algorithm
        logger.error("run %s seed %d failed: %s", name, seed, exc)
        return RunInfo(f"{name}-s{seed}", name, seed, status="failed", error=str(exc)), []


def run_experiment(experiment: ExperimentConfig, problem: Optional[ProblemSpec] = None) -> RunMetrics:
    """
    Run every (algorithm, seed) job; a failing job is logged and marked, the rest continue.

    Records are merged ordered by run_id, then iteration, so the result does not
    depend on the number of workers.
    """
    problem = problem or build_problem(experiment.problem)
    jobs = [(algorithm, seed) for algorithm in experiment.algorithms for seed in experiment.seeds]
    logger.info("running %d jobs on %d worker(s)", len(jobs), experiment.workers)
    with ThreadPoolExecutor(max_workers=experiment.workers) as pool:
        results = list(pool.map(lambda job: _guarded_job(experiment, problem, *job), jobs))

    runs = sorted((info for info, _ in results), key=lambda r: r.run_id)
    rows = [row for _, records in results for row in records]
    frame = pd.DataFrame(rows, columns=Config.CSV_COLUMNS)
    if not frame.empty:
        frame = frame.sort_values(["run_id", "iter"], kind="stable").reset_index(drop=True)
    return RunMetrics(frame, runs, experiment)
