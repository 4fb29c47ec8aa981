"""
Solvers Module
The unified two-step inertial Bregman stochastic PALM iteration, its presets and
the step-size condition check.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional, Tuple

import numpy as np

from core import (
    BlockPoint,
    BregmanKernel,
    ConfigError,
    ConvergenceError,
    InertialSchedule,
    IterateWindow,
    KernelKind,
    RngStreams,
    STiBPALMError,
    SolverError,
    ZERO_SCHEDULE,
    extrapolate,
    kernel_gradient,
)
from estimators import (
    BatchSampler,
    EstimatorKind,
    EstimatorState,
    RefreshDecision,
    SagaMode,
    VRConstants,
    estimate_grad_x,
    estimate_grad_y,
    force_refresh,
    init_estimator,
    sarah_flip_restart,
    vr_constants,
)
from problems import LipschitzEstimates, ProblemSpec
from src.config import Config

logger = logging.getLogger(__name__)

_SCHEDULES = ("gamma1_sched", "gamma2_sched", "mu1_sched", "mu2_sched",
              "alpha1_sched", "alpha2_sched", "beta1_sched", "beta2_sched")


@dataclass(frozen=True)
class SolverConfig:
    """
    Parameters of one solver run.

    gamma/mu schedules shift the gradient evaluation points, alpha/beta weight the
    linear inertial terms of the subproblems. With `center_shift` the alpha/beta
    values are multiplied by the kernel scale, which turns the linear terms into a
    shift of the proximal centre.
    """

    gamma1_sched: InertialSchedule = ZERO_SCHEDULE
    gamma2_sched: InertialSchedule = ZERO_SCHEDULE
    mu1_sched: InertialSchedule = ZERO_SCHEDULE
    mu2_sched: InertialSchedule = ZERO_SCHEDULE
    alpha1_sched: InertialSchedule = ZERO_SCHEDULE
    alpha2_sched: InertialSchedule = ZERO_SCHEDULE
    beta1_sched: InertialSchedule = ZERO_SCHEDULE
    beta2_sched: InertialSchedule = ZERO_SCHEDULE
    center_shift: bool = False
    kernel_x: BregmanKernel = field(default_factory=BregmanKernel)
    kernel_y: BregmanKernel = field(default_factory=BregmanKernel)
    estimator: EstimatorKind = EstimatorKind.FULL
    batch_size: int = 1
    refresh_prob: float = Config.REFRESH_PROB
    saga_mode: SagaMode = SagaMode.TABLE
    adaptive_theta: bool = False
    theta_safety: float = 1.0
    max_epochs: float = 10.0
    seed: int = 0
    epsilon: float = Config.EPSILON
    ensure_full_every: int = 0
    inertia: InertialSchedule = field(default_factory=InertialSchedule.ramp)
    diagnostics: bool = False
    name: str = "custom"

    def __post_init__(self):
        for attr in _SCHEDULES + ("inertia",):
            object.__setattr__(self, attr, InertialSchedule.parse(getattr(self, attr)))
        object.__setattr__(self, "estimator", EstimatorKind(self.estimator))
        object.__setattr__(self, "saga_mode", SagaMode(self.saga_mode))
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if self.max_epochs <= 0:
            raise ConfigError(f"max_epochs must be positive, got {self.max_epochs}")
        if self.epsilon <= 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if self.theta_safety <= 0:
            raise ConfigError(f"theta_safety must be positive, got {self.theta_safety}")
        if self.ensure_full_every < 0:
            raise ConfigError("ensure_full_every must be >= 0")
        if self.estimator is EstimatorKind.SARAH and not 0 < self.refresh_prob < 1:
            raise ConfigError(f"refresh_prob must lie in (0, 1), got {self.refresh_prob}")

    @property
    def gamma_caps(self) -> Tuple[float, float]:
        """(gamma_1, gamma_2): caps over both the x and y extrapolation schedules."""
        return (max(self.gamma1_sched.cap, self.mu1_sched.cap),
                max(self.gamma2_sched.cap, self.mu2_sched.cap))

    @property
    def alpha_caps(self) -> Tuple[float, float]:
        return (max(self.alpha1_sched.cap, self.beta1_sched.cap),
                max(self.alpha2_sched.cap, self.beta2_sched.cap))


class InertialCoefficients(NamedTuple):
    gamma1: float
    gamma2: float
    mu1: float
    mu2: float
    alpha1: float
    alpha2: float
    beta1: float
    beta2: float


def coefficients_at(config: SolverConfig, k: int) -> InertialCoefficients:
    return InertialCoefficients(*(getattr(config, name)(k) for name in _SCHEDULES))


# ----- Presets -----

PRESETS = ("PALM", "iPALM", "TiPALM", "BTiPALM", "SPRING", "SiPALM", "STiBPALM", "BSTiPALM")
_STOCHASTIC = {"SPRING", "SiPALM", "STiBPALM", "BSTiPALM"}
_ONE_STEP = {"iPALM", "SiPALM"}
_TWO_STEP = {"TiPALM", "BTiPALM", "STiBPALM", "BSTiPALM"}
_QUARTIC = {"BTiPALM", "BSTiPALM"}


def parse_algorithm(label: str) -> Tuple[str, Optional[EstimatorKind]]:
    """'STiBPALM-SARAH' -> ('STiBPALM', SARAH); 'PALM' -> ('PALM', None)."""
    match = re.fullmatch(r"([A-Za-z]+)(?:-(Full|SGD|SAGA|SARAH))?", label.strip(), flags=re.IGNORECASE)
    if not match:
        raise ConfigError(f"unknown algorithm {label!r}")
    lookup = {p.lower(): p for p in PRESETS}
    name = lookup.get(match.group(1).lower())
    if name is None:
        raise ConfigError(f"unknown algorithm {label!r}; expected one of {', '.join(PRESETS)}")
    suffix = match.group(2)
    return name, EstimatorKind(suffix.lower()) if suffix else None


def preset(name: str, base: SolverConfig = SolverConfig()) -> SolverConfig:
    """
    Return `base` with the flag pattern of the named algorithm.

    Deterministic presets force the Full estimator; stochastic ones keep the base
    estimator unless the name carries a suffix (e.g. 'SPRING-SAGA'). Enabled
    inertial schedules are all set to `base.inertia`.
    """
    algo, suffix = parse_algorithm(name)
    estimator = base.estimator
    if algo in _STOCHASTIC:
        if suffix is not None:
            estimator = suffix
    else:
        if suffix not in (None, EstimatorKind.FULL):
            raise ConfigError(f"{algo} is deterministic and takes no estimator suffix")
        estimator = EstimatorKind.FULL

    one = base.inertia if algo in _ONE_STEP | _TWO_STEP else ZERO_SCHEDULE
    two = base.inertia if algo in _TWO_STEP else ZERO_SCHEDULE
    kernel_x = base.kernel_x
    if algo in _QUARTIC:
        if kernel_x.kind is not KernelKind.QUARTIC:
            kernel_x = BregmanKernel(KernelKind.QUARTIC, kernel_x.scale, kernel_x.radius, kernel_x.bound)
    elif kernel_x.kind is not KernelKind.QUADRATIC:
        kernel_x = BregmanKernel(KernelKind.QUADRATIC, kernel_x.scale)

    label = algo if algo not in _STOCHASTIC else f"{algo}-{EstimatorKind(estimator).label}"
    return replace(
        base,
        gamma1_sched=one, mu1_sched=one, alpha1_sched=one, beta1_sched=one,
        gamma2_sched=two, mu2_sched=two, alpha2_sched=two, beta2_sched=two,
        center_shift=algo in _ONE_STEP,
        kernel_x=kernel_x,
        estimator=estimator,
        name=label,
    )


# ----- Step-size condition -----

class StepsizeVerdict(NamedTuple):
    satisfied: bool
    margin: float
    rhs: float

    def describe(self) -> str:
        state = "Satisfied" if self.satisfied else "Violated"
        return f"{state}, margin {self.margin:.6g}"


def validate_stepsize(theta1: float, theta2: float, L: float, alpha1: float, alpha2: float,
                      gamma1: float, gamma2: float, vr: VRConstants, epsilon: float) -> StepsizeVerdict:
    """
    min(theta1, theta2) > L + 2 a1 + 2 a2 + 2 sqrt(10 (V1 + V_ups/rho) + 4 L^2 (g1^2 + g2^2)) + 6 eps.

    The inequality is strict; the margin is min(theta1, theta2) minus the right-hand side.
    """
    if vr.rho <= 0:
        raise ConfigError("rho must be positive")
    values = (theta1, theta2, L, alpha1, alpha2, gamma1, gamma2, epsilon)
    if min(values) < 0:
        raise ConfigError("step-size inputs must be nonnegative")
    root = math.sqrt(10.0 * (vr.V1 + vr.V_upsilon / vr.rho) + 4.0 * L ** 2 * (gamma1 ** 2 + gamma2 ** 2))
    rhs = L + 2.0 * alpha1 + 2.0 * alpha2 + 2.0 * root + 6.0 * epsilon
    theta = min(theta1, theta2)
    return StepsizeVerdict(theta > rhs, theta - rhs, rhs)


def config_vr_constants(config: SolverConfig, lipschitz: LipschitzEstimates, n: int) -> Optional[VRConstants]:
    """Constants for the configured estimator, or None for SGD."""
    if config.estimator is EstimatorKind.SGD:
        return None
    g1, g2 = config.gamma_caps
    return vr_constants(config.estimator, lipschitz.N, g1, g2, config.batch_size, n, 1.0 / config.refresh_prob)


def effective_alpha_caps(config: SolverConfig) -> Tuple[float, float]:
    """
    Linear-term caps as the subproblems see them.

    With `center_shift` each block is scaled by its own kernel: alpha by the x
    kernel, beta by the y kernel.
    """
    if not config.center_shift:
        return config.alpha_caps
    sx, sy = config.kernel_x.scale, config.kernel_y.scale
    return (max(config.alpha1_sched.cap * sx, config.beta1_sched.cap * sy),
            max(config.alpha2_sched.cap * sx, config.beta2_sched.cap * sy))


def check_config(config: SolverConfig, lipschitz: LipschitzEstimates, n: int) -> StepsizeVerdict:
    """Step-size condition for a whole config; effective alphas include the centre-shift scaling."""
    vr = config_vr_constants(config, lipschitz, n)
    if vr is None:
        raise ConfigError("the SGD estimator is not variance-reduced; no step-size condition applies")
    a1, a2 = effective_alpha_caps(config)
    g1, g2 = config.gamma_caps
    theta1 = config.kernel_x.strong_convexity
    theta2 = config.kernel_y.strong_convexity
    return validate_stepsize(theta1, theta2, lipschitz.L, a1, a2, g1, g2, vr, config.epsilon)


def estimate_partial_lipschitz(problem: ProblemSpec, fixed_block: str, point: BlockPoint) -> float:
    """
    Modulus of the partial gradient in the block that is NOT fixed.

    fixed_block='y' gives the x-block modulus at point.y, fixed_block='x' the
    y-block modulus at point.x.
    """
    try:
        if fixed_block == "y":
            return float(problem.partial_lipschitz_x(point.y))
        if fixed_block == "x":
            return float(problem.partial_lipschitz_y(point.x))
    except ConvergenceError:
        logger.error("power iteration failed while estimating the %s-block modulus", fixed_block)
        raise
    raise ConfigError(f"fixed_block must be 'x' or 'y', got {fixed_block!r}")


# ----- Subproblems -----

def _radial_solve(kernel: BregmanKernel, v: np.ndarray) -> np.ndarray:
    """Solve c^2 ||x||^2 x = v: x = (r / ||v||) v with r = (||v|| / c^2)^(1/3)."""
    norm_v = float(np.linalg.norm(v))
    if norm_v == 0.0:
        return np.zeros_like(v)
    r = (norm_v / kernel.scale ** 2) ** (1.0 / 3.0)
    return (r / norm_v) * v


def _linear_shift(window_blocks, d, a1, a2):
    current, prev, prev2 = window_blocks
    shift = d
    if a1 != 0.0:
        shift = shift + a1 * (prev - current)
    if a2 != 0.0:
        shift = shift + a2 * (prev2 - prev)
    return shift


def _solve_block(prox, d, blocks, kernel: BregmanKernel, a1: float, a2: float) -> np.ndarray:
    if kernel.scale <= 0:
        raise ConfigError(f"kernel scale must be positive, got {kernel.scale}")
    shift = _linear_shift(blocks, d, a1, a2)
    current = blocks[0]
    if kernel.kind is KernelKind.QUADRATIC:
        return prox(current - shift / kernel.scale, kernel.scale)
    v = kernel_gradient(kernel, current) - shift
    return prox(_radial_solve(kernel, v), kernel.scale)


def solve_x_subproblem(problem: ProblemSpec, d: np.ndarray, window: IterateWindow, kernel_x: BregmanKernel,
                       a1: float, a2: float) -> np.ndarray:
    """argmin_x f(x) + <x, d> + D_phi1(x, x_k) + a1 <x, x_{k-1} - x_k> + a2 <x, x_{k-2} - x_{k-1}>."""
    return _solve_block(problem.prox_f, d, window.xs()[:3], kernel_x, a1, a2)


def solve_y_subproblem(problem: ProblemSpec, d: np.ndarray, window: IterateWindow, kernel_y: BregmanKernel,
                       b1: float, b2: float) -> np.ndarray:
    return _solve_block(problem.prox_g, d, window.ys()[:3], kernel_y, b1, b2)


# ----- Iteration -----

@dataclass(frozen=True)
class StepRecord:
    """What one step used; retained for the stationarity residual of the next iterate."""

    grad_x: np.ndarray
    grad_y: np.ndarray
    kernel_x: BregmanKernel
    kernel_y: BregmanKernel
    alpha1: float
    alpha2: float
    beta1: float
    beta2: float
    refreshed: bool = False


@dataclass(frozen=True)
class SolverState:
    """
    Iterate window plus everything the next step needs.

    The estimator state is single-owner and mutated in place by `step`; the rest
    is replaced.
    """

    window: IterateWindow
    estimator: EstimatorState
    config: SolverConfig
    sampler: BatchSampler
    streams: RngStreams
    kernel_x: BregmanKernel
    kernel_y: BregmanKernel
    k: int = 0
    last: Optional[StepRecord] = None

    @property
    def point(self) -> BlockPoint:
        return self.window.current

    @property
    def epoch(self) -> float:
        return self.estimator.epochs


def initial_state(problem: ProblemSpec, config: SolverConfig, z0: Optional[BlockPoint] = None) -> SolverState:
    streams = RngStreams(config.seed)
    if z0 is None:
        z0 = problem.initial_point(np.random.default_rng(config.seed))
    if config.batch_size > problem.n:
        raise ConfigError(f"batch size {config.batch_size} exceeds component count {problem.n}")
    estimator = init_estimator(config.estimator, problem, z0, config.batch_size,
                               config.saga_mode, config.refresh_prob, track=config.diagnostics)
    sampler = BatchSampler(problem.n, config.batch_size, streams.batches)
    return SolverState(IterateWindow.start(z0), estimator, config, sampler, streams,
                       config.kernel_x, config.kernel_y)


def adapt_kernel(kernel: BregmanKernel, modulus: float, safety: float) -> BregmanKernel:
    """Kernel rescaled to safety * modulus, the rule adaptive theta applies every step."""
    return kernel.with_scale(max(safety * modulus, np.finfo(float).tiny))


def step(problem: ProblemSpec, state: SolverState) -> SolverState:
    """
    One iteration: u_k, x batch, x estimate, x_{k+1}, v_k, y batch, y estimate
    at (x_{k+1}, v_k), y_{k+1}, window push.
    """
    k = state.k
    try:
        return _step(problem, state)
    except STiBPALMError as exc:
        raise SolverError(k, exc) from exc
    except (ValueError, FloatingPointError) as exc:
        raise SolverError(k, exc) from exc


def _step(problem: ProblemSpec, state: SolverState) -> SolverState:
    cfg = state.config
    k = state.k
    w = state.window
    x_k, x_km1, x_km2, _ = w.xs()
    y_k, y_km1, y_km2, _ = w.ys()
    c = coefficients_at(cfg, k)
    est = state.estimator

    refreshed = False
    if est.kind is EstimatorKind.SARAH:
        if cfg.ensure_full_every and k % cfg.ensure_full_every == 0:
            force_refresh(est)
        else:
            sarah_flip_restart(est, state.streams.coins)
        refreshed = k == 0 or est.refresh is RefreshDecision.FULL_REFRESH

    kernel_x = state.kernel_x
    if cfg.adaptive_theta:
        kernel_x = adapt_kernel(kernel_x, estimate_partial_lipschitz(problem, "y", w.current), cfg.theta_safety)

    u_k = extrapolate(x_k, x_km1, x_km2, c.gamma1, c.gamma2)
    batch_x = state.sampler.draw()
    d_x = estimate_grad_x(est, problem, u_k, y_k, batch_x)
    a1, a2 = c.alpha1, c.alpha2
    if cfg.center_shift:
        a1, a2 = a1 * kernel_x.scale, a2 * kernel_x.scale
    x_next = solve_x_subproblem(problem, d_x, w, kernel_x, a1, a2)

    kernel_y = state.kernel_y
    if cfg.adaptive_theta:
        kernel_y = adapt_kernel(kernel_y, problem.partial_lipschitz_y(x_next), cfg.theta_safety)

    v_k = extrapolate(y_k, y_km1, y_km2, c.mu1, c.mu2)
    batch_y = state.sampler.draw()
    d_y = estimate_grad_y(est, problem, x_next, v_k, batch_y, x_k=x_k)
    b1, b2 = c.beta1, c.beta2
    if cfg.center_shift:
        b1, b2 = b1 * kernel_y.scale, b2 * kernel_y.scale
    y_next = solve_y_subproblem(problem, d_y, w, kernel_y, b1, b2)

    record = StepRecord(d_x, d_y, kernel_x, kernel_y, a1, a2, b1, b2, refreshed)
    return replace(state, window=w.push(BlockPoint(x_next, y_next)), kernel_x=kernel_x,
                   kernel_y=kernel_y, k=k + 1, last=record)


def iterations_per_epoch(n: int, b: int) -> int:
    return -(-n // b)


def solve(problem: ProblemSpec, config: SolverConfig, z0: Optional[BlockPoint] = None,
          callback=None) -> SolverState:
    """
    Iterate until the component-evaluation budget of `max_epochs` is spent.

    At least one step is taken, since building a SAGA gradient table already
    costs a full pass. `callback(state)` is called after every step.
    """
    state = initial_state(problem, config, z0)
    logger.debug("%s: starting at epoch budget %.3g", config.name, config.max_epochs)
    while state.k == 0 or state.epoch < config.max_epochs:
        state = step(problem, state)
        if callback is not None:
            callback(state)
    return state
