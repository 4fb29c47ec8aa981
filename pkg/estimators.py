"""
Gradient Estimators Module
Full-batch, SGD, SAGA and SARAH estimators of the partial gradients of the
finite-sum coupling term, with the tracked error sequences used by diagnostics.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Tuple

import numpy as np

from core import BlockPoint, ConfigError, NonFiniteError, sq_norm
from problems import ProblemSpec

logger = logging.getLogger(__name__)


class EstimatorKind(str, Enum):
    FULL = "full"
    SGD = "sgd"
    SAGA = "saga"
    SARAH = "sarah"

    @property
    def label(self) -> str:
        return self.name if self is not EstimatorKind.FULL else "Full"


class SagaMode(str, Enum):
    LITERAL = "literal"   # anchor points re-evaluated at the current partner block
    TABLE = "table"       # gradients stored at anchor time


class RefreshDecision(str, Enum):
    FULL_REFRESH = "full_refresh"
    RECURSIVE = "recursive"


# ----- Batch sampling -----

@dataclass
class BatchSampler:
    """Uniform b-subsets of {0..n-1} without replacement, reproducible from the generator state."""

    n: int
    b: int
    rng: np.random.Generator

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError(f"component count must be >= 1, got {self.n}")
        if not 1 <= self.b <= self.n:
            raise ConfigError(f"batch size must lie in [1, {self.n}], got {self.b}")

    @classmethod
    def from_seed(cls, n: int, b: int, rng_seed: int) -> "BatchSampler":
        return cls(n, b, np.random.Generator(np.random.PCG64(rng_seed)))

    def draw(self) -> np.ndarray:
        return sample_batch(self)


def sample_batch(sampler: BatchSampler) -> np.ndarray:
    """Floyd's algorithm: b integer draws, returned sorted."""
    n, b = sampler.n, sampler.b
    if b < 1 or b > n:
        raise ConfigError(f"batch size must lie in [1, {n}], got {b}")
    chosen = set()
    for j in range(n - b, n):
        t = int(sampler.rng.integers(0, j + 1))
        chosen.add(j if t in chosen else t)
    return np.fromiter(sorted(chosen), dtype=np.int64, count=b)


def batch_size_from_fraction(n: int, fraction: float) -> int:
    if not 0 < fraction <= 1:
        raise ConfigError(f"batch fraction must lie in (0, 1], got {fraction}")
    return max(1, int(math.floor(fraction * n)))


# ----- Variance-reduction constants -----

@dataclass(frozen=True)
class VRConstants:
    V1: float = 0.0
    V2: float = 0.0
    V_upsilon: float = 0.0
    rho: float = 1.0

    def __post_init__(self):
        if not 0 < self.rho <= 1:
            raise ConfigError(f"rho must lie in (0, 1], got {self.rho}")
        if min(self.V1, self.V2, self.V_upsilon) < 0:
            raise ConfigError("variance-reduction constants must be nonnegative")

    def to_dict(self) -> dict:
        return {"V1": self.V1, "V2": self.V2, "V_upsilon": self.V_upsilon, "rho": self.rho}


FULL_VR = VRConstants()


def vr_constants(kind: EstimatorKind, N: float, gamma1: float, gamma2: float,
                 b: int, n: int, p: float = 20.0) -> VRConstants:
    """
    Constants of the variance-reduction property.

    `p` is the SARAH parameter with refresh probability 1/p. The Full estimator
    has all constants zero and rho = 1.
    """
    kind = EstimatorKind(kind)
    if kind is EstimatorKind.FULL:
        return FULL_VR
    if kind is EstimatorKind.SGD:
        raise ConfigError("the SGD estimator is not variance-reduced")
    if b < 1 or n < 1:
        raise ConfigError(f"b and n must be positive, got b={b}, n={n}")
    if b > n:
        raise ConfigError(f"batch size {b} exceeds component count {n}")
    inertia = 1.0 + 2.0 * gamma1 ** 2 + gamma2 ** 2
    if kind is EstimatorKind.SAGA:
        gamma = max(gamma1, gamma2)
        return VRConstants(
            V1=16.0 * N ** 2 * gamma ** 2 / b,
            V2=4.0 * N * gamma / math.sqrt(b),
            V_upsilon=408.0 * n * N ** 2 * inertia / b ** 2,
            rho=b / (2.0 * n),
        )
    if p <= 1:
        raise ConfigError(f"SARAH parameter p must exceed 1, got {p}")
    keep = 1.0 - 1.0 / p
    V1 = 6.0 * keep * N ** 2 * inertia
    return VRConstants(V1=V1, V2=N * math.sqrt(6.0 * keep * inertia), V_upsilon=V1, rho=1.0 / p)


# ----- Estimator state -----

@dataclass
class EstimatorState:
    """
    Mutable per-run estimator state.

    SAGA keeps either anchor points (LITERAL) or anchor gradients (TABLE), one per
    component and block. SARAH keeps the running estimates and the points they
    were last evaluated at. With `track` on, every step also computes the exact
    gradients needed for the error sequences.
    """

    kind: EstimatorKind
    n: int
    b: int
    saga_mode: SagaMode = SagaMode.TABLE
    sarah_p: float = 20.0
    track: bool = False

    saga_x_table: Optional[np.ndarray] = None
    saga_y_table: Optional[np.ndarray] = None
    saga_x_mean: Optional[np.ndarray] = None
    saga_y_mean: Optional[np.ndarray] = None

    sarah_prev_estimate_x: Optional[np.ndarray] = None
    sarah_prev_estimate_y: Optional[np.ndarray] = None
    sarah_prev_point_x: Optional[Tuple[np.ndarray, np.ndarray]] = None
    sarah_prev_point_y: Optional[Tuple[np.ndarray, np.ndarray]] = None
    refresh: RefreshDecision = RefreshDecision.FULL_REFRESH

    upsilon: float = 0.0
    upsilon_bound: float = 0.0
    gamma_tracker: float = 0.0
    sq_error: Optional[float] = None
    component_evals: int = 0
    steps: int = 0
    _pending: dict = field(default_factory=dict, repr=False)

    @property
    def refresh_prob(self) -> float:
        return 1.0 / self.sarah_p

    @property
    def epochs(self) -> float:
        """Full passes spent; each block counts its component gradients separately."""
        return self.component_evals / (2.0 * self.n)


def init_estimator(kind, problem: ProblemSpec, z0: BlockPoint, b: int,
                   saga_mode=SagaMode.TABLE, refresh_prob: float = 0.05,
                   track: bool = False) -> EstimatorState:
    """Build the state for `kind`; SAGA anchors start at z0."""
    kind = EstimatorKind(kind)
    saga_mode = SagaMode(saga_mode)
    if not 1 <= b <= problem.n:
        raise ConfigError(f"batch size must lie in [1, {problem.n}], got {b}")
    sarah_p = 20.0
    if kind is EstimatorKind.SARAH:
        if not 0 < refresh_prob < 1:
            raise ConfigError(f"SARAH refresh probability must lie in (0, 1), got {refresh_prob}")
        sarah_p = 1.0 / refresh_prob
    state = EstimatorState(kind, problem.n, b, saga_mode, sarah_p, track)
    if kind is EstimatorKind.SAGA:
        if saga_mode is SagaMode.LITERAL:
            state.saga_x_table = np.repeat(z0.x[None], problem.n, axis=0)
            state.saga_y_table = np.repeat(z0.y[None], problem.n, axis=0)
        else:
            state.saga_x_table = _checked(problem.component_grads_x(problem.all_indices, z0.x, z0.y),
                                          problem.all_indices)
            state.saga_y_table = _checked(problem.component_grads_y(problem.all_indices, z0.x, z0.y),
                                          problem.all_indices)
            state.saga_x_mean = state.saga_x_table.mean(axis=0)
            state.saga_y_mean = state.saga_y_table.mean(axis=0)
            state.component_evals += 2 * problem.n
    logger.debug("initialised %s estimator (n=%d, b=%d, mode=%s)", kind.value, problem.n, b, saga_mode.value)
    return state


def _checked(stack: np.ndarray, batch) -> np.ndarray:
    finite = np.isfinite(stack.reshape(stack.shape[0], -1)).all(axis=1)
    if not finite.all():
        bad = int(np.asarray(batch)[np.flatnonzero(~finite)[0]])
        raise NonFiniteError(f"gradient component {bad} is not finite", bad)
    return stack


def _grads(problem: ProblemSpec, block: str, batch, x, y) -> np.ndarray:
    if block == "x":
        return _checked(problem.component_grads_x(batch, x, y), batch)
    return _checked(problem.component_grads_y(batch, x, y), batch)


def _literal_anchor_grads(problem: ProblemSpec, block: str, anchors: np.ndarray, partner: np.ndarray) -> np.ndarray:
    if block == "x":
        stack = np.stack([problem.component_grad_x(j, anchors[j], partner) for j in range(problem.n)])
    else:
        stack = np.stack([problem.component_grad_y(j, partner, anchors[j]) for j in range(problem.n)])
    return _checked(stack, problem.all_indices)


def sarah_flip_restart(state: EstimatorState, rng: np.random.Generator) -> RefreshDecision:
    """Draw this iteration's SARAH coin: FULL_REFRESH with probability 1/p."""
    if state.sarah_p <= 1:
        raise ConfigError(f"SARAH parameter p must exceed 1, got {state.sarah_p}")
    decision = RefreshDecision.FULL_REFRESH if rng.random() < 1.0 / state.sarah_p else RefreshDecision.RECURSIVE
    state.refresh = decision
    return decision


def force_refresh(state: EstimatorState) -> None:
    state.refresh = RefreshDecision.FULL_REFRESH


def _estimate(state: EstimatorState, problem: ProblemSpec, block: str, point: Tuple[np.ndarray, np.ndarray],
              batch: np.ndarray, ref_point: Tuple[np.ndarray, np.ndarray]) -> np.ndarray:
    """
    Shared body of the two partial estimators.

    `point` is the (x, y) evaluation point; `ref_point` is where the SAGA error
    sequence is measured for this block.
    """
    x, y = point
    batch = np.asarray(batch, dtype=np.int64)
    kind = state.kind
    exact = None
    stats = state._pending

    if kind is EstimatorKind.FULL:
        estimate = _grads(problem, block, problem.all_indices, x, y).mean(axis=0)
        state.component_evals += problem.n
        exact = estimate

    elif kind is EstimatorKind.SGD:
        estimate = _grads(problem, block, batch, x, y).mean(axis=0)
        state.component_evals += batch.size

    elif kind is EstimatorKind.SAGA:
        table = state.saga_x_table if block == "x" else state.saga_y_table
        current = _grads(problem, block, batch, x, y)
        if state.saga_mode is SagaMode.LITERAL:
            partner = y if block == "x" else x
            anchor_grads = _literal_anchor_grads(problem, block, table, partner)
            estimate = (current - anchor_grads[batch]).mean(axis=0) + anchor_grads.mean(axis=0)
        else:
            table_mean = state.saga_x_mean if block == "x" else state.saga_y_mean
            estimate = (current - table[batch]).mean(axis=0) + table_mean
        state.component_evals += batch.size
        if state.saga_mode is SagaMode.LITERAL:
            # the anchor pass re-evaluates every component at the current partner block
            state.component_evals += problem.n
        if state.track:
            rx, ry = ref_point
            at_ref = _grads(problem, block, problem.all_indices, rx, ry)
            if state.saga_mode is SagaMode.LITERAL:
                ref_partner = ry if block == "x" else rx
                at_anchor = _literal_anchor_grads(problem, block, table, ref_partner)
            else:
                at_anchor = table
            diffs = (at_ref - at_anchor).reshape(problem.n, -1)
            sq = np.einsum("ij,ij->i", diffs, diffs)
            stats[block] = (sq, batch.copy())
        # anchor update
        if state.saga_mode is SagaMode.LITERAL:
            table[batch] = x if block == "x" else y
        else:
            table[batch] = current
            if block == "x":
                state.saga_x_mean = table.mean(axis=0)
            else:
                state.saga_y_mean = table.mean(axis=0)

    else:  # SARAH
        prev_estimate = state.sarah_prev_estimate_x if block == "x" else state.sarah_prev_estimate_y
        prev_point = state.sarah_prev_point_x if block == "x" else state.sarah_prev_point_y
        if prev_estimate is None or state.refresh is RefreshDecision.FULL_REFRESH:
            estimate = _grads(problem, block, problem.all_indices, x, y).mean(axis=0)
            state.component_evals += problem.n
            exact = estimate
        else:
            px, py = prev_point
            step = _grads(problem, block, batch, x, y) - _grads(problem, block, batch, px, py)
            estimate = step.mean(axis=0) + prev_estimate
            state.component_evals += batch.size
        if block == "x":
            state.sarah_prev_estimate_x = estimate
            state.sarah_prev_point_x = (np.array(x), np.array(y))
        else:
            state.sarah_prev_estimate_y = estimate
            state.sarah_prev_point_y = (np.array(x), np.array(y))

    if state.track:
        if exact is None:
            exact = _grads(problem, block, problem.all_indices, x, y).mean(axis=0)
        stats[f"err_{block}"] = sq_norm(estimate - exact)
    return estimate


def estimate_grad_x(state: EstimatorState, problem: ProblemSpec, u_k: np.ndarray, y_k: np.ndarray,
                    batch) -> np.ndarray:
    """Estimate of grad_x H(u_k, y_k); SAGA anchors in `batch` move to u_k."""
    state._pending = {}
    return _estimate(state, problem, "x", (u_k, y_k), batch, (u_k, y_k))


def estimate_grad_y(state: EstimatorState, problem: ProblemSpec, x_kp1: np.ndarray, v_k: np.ndarray,
                    batch, x_k: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Estimate of grad_y H(x_{k+1}, v_k); SAGA anchors in `batch` move to v_k.

    `x_k` is only used by the tracked SAGA error sequence, which measures the
    y-anchors at (x_k, v_k). Completes the step's bookkeeping.
    """
    ref_x = x_kp1 if x_k is None else x_k
    estimate = _estimate(state, problem, "y", (x_kp1, v_k), batch, (ref_x, v_k))
    _close_step(state)
    return estimate


def _close_step(state: EstimatorState) -> None:
    stats = state._pending
    state.steps += 1
    if state.track:
        ex, ey = stats.get("err_x"), stats.get("err_y")
        state.sq_error = None if ex is None or ey is None else ex + ey
    if state.kind is EstimatorKind.SAGA and "x" in stats and "y" in stats:
        sq_x, batch_x = stats["x"]
        sq_y, batch_y = stats["y"]
        scale = state.b * state.n
        state.upsilon_bound = float(sq_x.sum() + 4.0 * sq_y.sum()) / scale
        sq_x = sq_x.copy()
        sq_y = sq_y.copy()
        sq_x[batch_x] = 0.0
        sq_y[batch_y] = 0.0
        state.upsilon = float(sq_x.sum() + 4.0 * sq_y.sum()) / scale
        state.gamma_tracker = float(np.sqrt(sq_x).sum() + 2.0 * np.sqrt(sq_y).sum()) / math.sqrt(scale)
    elif state.kind is EstimatorKind.SARAH and state.track:
        state.upsilon_bound = state.upsilon
        ex, ey = stats.get("err_x", 0.0), stats.get("err_y", 0.0)
        state.upsilon = ex + ey
        state.gamma_tracker = math.sqrt(ex) + math.sqrt(ey)
    state._pending = {}


def current_upsilon(state: EstimatorState) -> float:
    """
    Tracked error sequence after the latest step.

    SAGA: the anchor-disagreement sum with the anchors just updated (LITERAL is
    exact, TABLE is the stored-gradient surrogate). SARAH: the realized squared
    error of the latest estimate. Full and SGD: 0.
    """
    if state.kind in (EstimatorKind.FULL, EstimatorKind.SGD):
        return 0.0
    return float(state.upsilon)
