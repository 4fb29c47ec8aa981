"""
Diagnostics Module
Lyapunov values, subgradient residuals and the empirical checks of the
variance-reduction and descent properties.

Expectation statements are checked on seed averages with bootstrap slack;
single trajectories are never asserted to be monotone.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Dict, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from core import (
    BlockPoint,
    BregmanKernel,
    ConfigError,
    IterateWindow,
    RngStreams,
    kernel_gradient,
)
from estimators import (
    BatchSampler,
    EstimatorKind,
    RefreshDecision,
    SagaMode,
    VRConstants,
    current_upsilon,
    estimate_grad_x,
    estimate_grad_y,
    init_estimator,
    sarah_flip_restart,
)
from problems import ProblemSpec

logger = logging.getLogger(__name__)

MIN_SEEDS = 5
MIN_DECAY_STEPS = 20
BOOTSTRAP_SAMPLES = 500
SLACK_SE = 3.0


# ----- Lyapunov quantity -----

@dataclass(frozen=True)
class PsiConstants:
    lambda_: float
    Z: float
    epsilon: float
    kappa: float
    root: float

    def __post_init__(self):
        if self.epsilon < 0:
            raise ConfigError(f"epsilon must be nonnegative, got {self.epsilon}")

    @property
    def descent_ready(self) -> bool:
        return self.kappa > 0


def psi_constants(vr: VRConstants, L: float, gammas: Tuple[float, float], alphas: Tuple[float, float],
                  theta: float, epsilon: float) -> PsiConstants:
    """lambda, Z and kappa of the Lyapunov function; lambda is inf when L = 0 < root."""
    g1, g2 = gammas
    a1, a2 = alphas
    S = vr.V1 + vr.V_upsilon / vr.rho
    root = math.sqrt(10.0 * S + 4.0 * L ** 2 * (g1 ** 2 + g2 ** 2))
    if root == 0.0:
        lambda_ = 0.0
        Z = epsilon
    else:
        lambda_ = root / L if L > 0 else math.inf
        Z = S / root + epsilon
    kappa = -(L - theta) / 2.0 - a1 - a2 - root - 3.0 * epsilon
    return PsiConstants(lambda_, Z, epsilon, kappa, root)


def psi_coefficients(consts: PsiConstants, vr: VRConstants, L: float, alphas: Tuple[float, float],
                     gammas: Tuple[float, float]) -> Tuple[float, float, float, float]:
    """
    (Upsilon weight, c1, c2, c3) of the Lyapunov function.

    L*lambda equals the square root term, so every coefficient is written over
    that root; when it vanishes the numerators vanish too and the terms are 0.
    """
    a1, a2 = alphas
    g1, g2 = gammas
    S = vr.V1 + vr.V_upsilon / vr.rho
    root = consts.root
    if root == 0.0:
        if S != 0.0 or L * (g1 + g2) != 0.0:
            raise ConfigError("lambda is zero while the variance or inertia terms are not")
        shared, ups, t1, t2 = 0.0, 0.0, 0.0, 0.0
    else:
        shared = S / root
        ups = 1.0 / (root * vr.rho)
        t1 = 2.0 * L ** 2 * (g1 ** 2 + g2 ** 2) / root
        t2 = 2.0 * L ** 2 * g2 ** 2 / root
    Z = consts.Z
    c1 = shared + (a1 + a2) / 2.0 + t1 + 3.0 * Z
    c2 = shared + a2 / 2.0 + t2 + 2.0 * Z
    c3 = shared + Z
    return ups, c1, c2, c3


def compute_psi(phi_value: float, upsilon: float, window: IterateWindow, consts: PsiConstants,
                vr: VRConstants, L: float, alphas: Tuple[float, float], gammas: Tuple[float, float]) -> float:
    ups_weight, c1, c2, c3 = psi_coefficients(consts, vr, L, alphas, gammas)
    if consts.root == 0.0 and upsilon != 0.0:
        raise ConfigError("nonzero Upsilon with a degenerate lambda")
    d1, d2, d3 = window.sq_distances()
    return float(phi_value + ups_weight * upsilon + c1 * d1 + c2 * d2 + c3 * d3)


# ----- Subgradient residual -----

class StationarityRecord(NamedTuple):
    ax_norm: float
    ay_norm: float
    combined: float


def stationarity_residual(problem: ProblemSpec, window: IterateWindow,
                          prev_grad_estimates: Optional[Tuple[np.ndarray, np.ndarray]],
                          kernels: Tuple[BregmanKernel, BregmanKernel],
                          alphas: Tuple[float, float], betas: Tuple[float, float]) -> StationarityRecord:
    """
    Norms of the subgradient element (A_x, A_y) at the newest iterate z_k.

    `prev_grad_estimates` are the estimates the previous step used; `alphas` and
    `betas` are the linear-term weights that step applied.
    """
    if prev_grad_estimates is None or any(g is None for g in prev_grad_estimates):
        raise ConfigError("stationarity residual needs the previous step's gradient estimates")
    d_x, d_y = prev_grad_estimates
    kernel_x, kernel_y = kernels
    x_k, x_1, x_2, x_3 = window.xs()
    y_k, y_1, y_2, y_3 = window.ys()
    a_x = (problem.full_grad_x(x_k, y_k) - d_x
           + kernel_gradient(kernel_x, x_1) - kernel_gradient(kernel_x, x_k)
           + alphas[0] * (x_1 - x_2) + alphas[1] * (x_2 - x_3))
    a_y = (problem.full_grad_y(x_k, y_k) - d_y
           + kernel_gradient(kernel_y, y_1) - kernel_gradient(kernel_y, y_k)
           + betas[0] * (y_1 - y_2) + betas[1] * (y_2 - y_3))
    ax = float(np.linalg.norm(a_x))
    ay = float(np.linalg.norm(a_y))
    return StationarityRecord(ax, ay, math.hypot(ax, ay))


# ----- Bootstrap helpers -----

def _bootstrap_se(samples: np.ndarray, rng: np.random.Generator, n_boot: int = BOOTSTRAP_SAMPLES) -> np.ndarray:
    """Bootstrap standard error of the column means of a (seeds x steps) array."""
    seeds = samples.shape[0]
    picks = rng.integers(0, seeds, size=(n_boot, seeds))
    means = samples[picks].mean(axis=1)
    return means.std(axis=0, ddof=1)


# ----- Variance-reduction checks -----

@dataclass(frozen=True)
class MseTrace:
    """Per-step series of one seed: realized squared error, Upsilon_k and the four squared displacements summed."""

    sq_error: np.ndarray
    upsilon_bound: np.ndarray
    displacement: np.ndarray


@dataclass(frozen=True)
class MseReport:
    violation_rate: float
    max_excess: float
    conforming: bool
    steps: int

    def to_dict(self) -> dict:
        return {"violation_rate": self.violation_rate, "max_excess": self.max_excess,
                "conforming": self.conforming, "steps": self.steps}


def check_mse_bound(traces: Sequence[MseTrace], vr: Optional[VRConstants],
                    seed: int = 0, max_violation_rate: float = 0.05) -> MseReport:
    """
    Seed-averaged check of  E err_k <= Upsilon_k + V1 * (displacements).

    A step violates the bound when the mean excess is above 3 bootstrap standard
    errors. `vr=None` (SGD) checks against a zero bound and reports the
    estimator as non-conforming.
    """
    if len(traces) < MIN_SEEDS:
        raise ConfigError(f"need at least {MIN_SEEDS} seeds for an expectation check, got {len(traces)}")
    steps = min(len(t.sq_error) for t in traces)
    err = np.stack([np.asarray(t.sq_error[:steps], dtype=float) for t in traces])
    if vr is None:
        bound = np.zeros_like(err)
    else:
        ups = np.stack([np.asarray(t.upsilon_bound[:steps], dtype=float) for t in traces])
        disp = np.stack([np.asarray(t.displacement[:steps], dtype=float) for t in traces])
        bound = ups + vr.V1 * disp
    excess = err - bound
    mean_excess = excess.mean(axis=0)
    se = _bootstrap_se(excess, np.random.default_rng(seed))
    tol = 1e-12 * np.maximum(1.0, np.abs(bound).mean(axis=0))
    violations = mean_excess > SLACK_SE * se + tol
    rate = float(violations.mean()) if steps else 0.0
    conforming = vr is not None and rate <= max_violation_rate
    if not conforming:
        logger.warning("estimator does not conform to the MSE bound (violation rate %.3f)", rate)
    return MseReport(rate, float(mean_excess.max()) if steps else 0.0, conforming, steps)


def fit_decay_rate(upsilon_series: Sequence[Sequence[float]]) -> float:
    """
    rho_hat = 1 - exp(slope) of log(mean Upsilon_k) against k.

    Nonpositive means are left out of the fit; an all-zero series gives 1.
    """
    series = np.atleast_2d(np.asarray(upsilon_series, dtype=float))
    if series.shape[1] < MIN_DECAY_STEPS:
        raise ConfigError(f"need at least {MIN_DECAY_STEPS} steps to fit a decay rate, got {series.shape[1]}")
    mean = series.mean(axis=0)
    keep = mean > 0
    if keep.sum() < 2:
        return 1.0
    k = np.flatnonzero(keep).astype(float)
    slope, _ = np.polyfit(k, np.log(mean[keep]), 1)
    return float(1.0 - math.exp(slope))


@dataclass(frozen=True)
class FrozenTrace:
    upsilon: np.ndarray
    upsilon_bound: np.ndarray
    sq_error: np.ndarray
    gamma: np.ndarray
    refreshed: np.ndarray

    def as_mse_trace(self) -> MseTrace:
        return MseTrace(self.sq_error, self.upsilon_bound, np.zeros_like(self.sq_error))


def frozen_iterate_trace(problem: ProblemSpec, kind, z_start: BlockPoint, z_fixed: BlockPoint, b: int,
                         steps: int, seed: int, saga_mode=SagaMode.LITERAL,
                         refresh_prob: float = 0.05) -> FrozenTrace:
    """
    Drive an estimator with the iterates held fixed.

    Step 0 evaluates at `z_start` (where the estimator state is built); steps
    1..steps-1 evaluate at `z_fixed`, so every consecutive displacement after
    the first is zero.
    """
    kind = EstimatorKind(kind)
    streams = RngStreams(seed)
    state = init_estimator(kind, problem, z_start, b, saga_mode, refresh_prob, track=True)
    sampler = BatchSampler(problem.n, b, streams.batches)
    out = {name: np.zeros(steps) for name in ("upsilon", "upsilon_bound", "sq_error", "gamma")}
    refreshed = np.zeros(steps, dtype=bool)
    for k in range(steps):
        z = z_start if k == 0 else z_fixed
        if kind is EstimatorKind.SARAH:
            decision = sarah_flip_restart(state, streams.coins)
            refreshed[k] = k == 0 or decision is RefreshDecision.FULL_REFRESH
        estimate_grad_x(state, problem, z.x, z.y, sampler.draw())
        estimate_grad_y(state, problem, z.x, z.y, sampler.draw(), x_k=z.x)
        out["upsilon"][k] = current_upsilon(state)
        out["upsilon_bound"][k] = state.upsilon_bound
        out["sq_error"][k] = state.sq_error
        out["gamma"][k] = state.gamma_tracker
    return FrozenTrace(out["upsilon"], out["upsilon_bound"], out["sq_error"], out["gamma"], refreshed)


# ----- Descent and summability -----

@dataclass(frozen=True)
class DescentReport:
    fraction_nonincreasing: float
    worst_increase_se: float
    passed: bool


def check_psi_descent(psi_by_seed: Sequence[Sequence[float]], seed: int = 0,
                      min_fraction: float = 0.95) -> DescentReport:
    """Seed-averaged Psi must not increase in >= min_fraction of steps, and every increase stays within 3 SE."""
    psi = np.asarray(psi_by_seed, dtype=float)
    if psi.ndim != 2 or psi.shape[0] < MIN_SEEDS:
        raise ConfigError(f"need a (seeds x steps) array with at least {MIN_SEEDS} seeds")
    increments = np.diff(psi, axis=1)
    mean_inc = increments.mean(axis=0)
    se = _bootstrap_se(increments, np.random.default_rng(seed))
    tol = 1e-12 * np.maximum(1.0, np.abs(psi[:, :-1]).mean(axis=0))
    nonincreasing = mean_inc <= tol
    fraction = float(nonincreasing.mean()) if mean_inc.size else 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(mean_inc > tol, mean_inc / np.where(se > 0, se, np.nan), 0.0)
    ratio = np.nan_to_num(ratio, nan=np.inf)
    worst = float(ratio.max()) if ratio.size else 0.0
    return DescentReport(fraction, worst, fraction >= min_fraction and worst <= SLACK_SE)


@dataclass(frozen=True)
class SummabilityReport:
    total: float
    tail_fraction: float
    passed: bool


def summability_proxy(sq_steps_by_seed: Sequence[Sequence[float]], tail_share: float = 0.25,
                      max_tail_fraction: float = 0.10) -> SummabilityReport:
    """Seed-averaged sum of ||z_{k+1} - z_k||^2 and the share of it spent in the last quarter of the run."""
    steps = np.atleast_2d(np.asarray(sq_steps_by_seed, dtype=float))
    mean = steps.mean(axis=0)
    total = float(mean.sum())
    if not np.isfinite(total):
        return SummabilityReport(total, 1.0, False)
    start = int(math.floor(mean.size * (1.0 - tail_share)))
    tail = float(mean[start:].sum())
    fraction = tail / total if total > 0 else 0.0
    return SummabilityReport(total, fraction, fraction < max_tail_fraction)


def fit_linear_rate(distances: Sequence[float]) -> float:
    """tau = exp(slope) of log distance-to-limit against k, nonpositive entries left out."""
    d = np.asarray(distances, dtype=float)
    keep = d > 0
    if keep.sum() < 2:
        raise ConfigError("need at least two positive distances to fit a rate")
    k = np.flatnonzero(keep).astype(float)
    slope, _ = np.polyfit(k, np.log(d[keep]), 1)
    return float(math.exp(slope))


def summarize_checks(mse: Optional[MseReport], descent: Optional[DescentReport],
                     summability: Optional[SummabilityReport]) -> Dict[str, dict]:
    out: Dict[str, dict] = {}
    if mse is not None:
        out["mse_bound"] = mse.to_dict()
    if descent is not None:
        out["psi_descent"] = {"fraction_nonincreasing": descent.fraction_nonincreasing,
                              "worst_increase_se": descent.worst_increase_se, "passed": descent.passed}
    if summability is not None:
        out["summability"] = {"total": summability.total, "tail_fraction": summability.tail_fraction,
                              "passed": summability.passed}
    return out
