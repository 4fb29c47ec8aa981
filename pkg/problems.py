"""
Problems Module
Finite-sum benchmark problems Phi(x, y) = f(x) + H(x, y) + g(y) with H = (1/n) sum_i H_i.

Provides sparse NMF, blind image deconvolution and a block-coupled least-squares
problem. Each exposes per-component gradients, the proximal maps of f and g and
partial Lipschitz estimates for step-size selection.
"""

from __future__ import annotations

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import NamedTuple, Sequence, Tuple

import numpy as np
from scipy import ndimage

from core import (
    BlockPoint,
    ConfigError,
    ConvergenceError,
    DimensionError,
    ensure_finite,
    power_iteration,
)
from src.config import Config

logger = logging.getLogger(__name__)

FEASIBILITY_TOL = 1e-9


class ObjectiveValue(NamedTuple):
    """Smooth value plus a feasibility flag standing in for the +inf of the indicators."""

    value: float
    feasible: bool


@dataclass(frozen=True)
class LipschitzEstimates:
    """
    Lipschitz data for the step-size rules.

    L bounds the partial-gradient moduli, M the whole-gradient modulus on the
    iterate region, N = max(L, M).
    """

    L: float
    M: float

    def __post_init__(self):
        if self.L < 0 or self.M < 0:
            raise ConfigError(f"Lipschitz estimates must be nonnegative, got L={self.L}, M={self.M}")

    @property
    def N(self) -> float:
        return max(self.L, self.M)


def _as_batch(batch: Sequence[int], n: int) -> np.ndarray:
    idx = np.asarray(batch, dtype=np.int64).ravel()
    if idx.size == 0:
        raise ConfigError("empty batch")
    if idx.min() < 0 or idx.max() >= n:
        raise DimensionError(f"batch index out of range [0, {n})")
    return idx


class ProblemSpec(ABC):
    """
    Base class for finite-sum problems.

    Subclasses implement the per-component gradients; the batch and full
    gradients are the plain average of the stacked components, so a full pass
    and an all-anchors-synchronised SAGA pass produce bitwise-identical sums.
    """

    name: str = "problem"

    def __init__(self, n: int, x_shape: Tuple[int, ...], y_shape: Tuple[int, ...]):
        if n < 1:
            raise ConfigError(f"component count must be >= 1, got {n}")
        self.n = int(n)
        self.x_shape = tuple(x_shape)
        self.y_shape = tuple(y_shape)
        self.all_indices = np.arange(self.n)

    @property
    def dims(self) -> Tuple[int, int]:
        return int(np.prod(self.x_shape)), int(np.prod(self.y_shape))

    # ----- smooth part -----

    @abstractmethod
    def smooth_value(self, x: np.ndarray, y: np.ndarray) -> float:
        """H(x, y)."""

    @abstractmethod
    def component_grad_x(self, i: int, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """grad_x H_i(x, y)."""

    @abstractmethod
    def component_grad_y(self, i: int, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """grad_y H_i(x, y)."""

    def component_grads_x(self, batch: Sequence[int], x: np.ndarray, y: np.ndarray) -> np.ndarray:
        idx = _as_batch(batch, self.n)
        return np.stack([self.component_grad_x(int(i), x, y) for i in idx])

    def component_grads_y(self, batch: Sequence[int], x: np.ndarray, y: np.ndarray) -> np.ndarray:
        idx = _as_batch(batch, self.n)
        return np.stack([self.component_grad_y(int(i), x, y) for i in idx])

    def grad_x(self, batch: Sequence[int], x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self.component_grads_x(batch, x, y).mean(axis=0)

    def grad_y(self, batch: Sequence[int], x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self.component_grads_y(batch, x, y).mean(axis=0)

    def full_grad_x(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self.grad_x(self.all_indices, x, y)

    def full_grad_y(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self.grad_y(self.all_indices, x, y)

    # ----- nonsmooth part -----

    @abstractmethod
    def prox_f(self, v: np.ndarray, scale: float) -> np.ndarray:
        """prox of f/scale; a projection when f is an indicator."""

    @abstractmethod
    def prox_g(self, v: np.ndarray, scale: float) -> np.ndarray:
        """prox of g/scale."""

    def feasible_x(self, x: np.ndarray) -> bool:
        return True

    def feasible_y(self, y: np.ndarray) -> bool:
        return True

    def eval_objective(self, point: BlockPoint) -> ObjectiveValue:
        feasible = self.feasible_x(point.x) and self.feasible_y(point.y)
        return ObjectiveValue(float(self.smooth_value(point.x, point.y)), bool(feasible))

    # ----- Lipschitz data -----

    @abstractmethod
    def partial_lipschitz_x(self, y: np.ndarray) -> float:
        """Modulus of grad_x H(., y)."""

    @abstractmethod
    def partial_lipschitz_y(self, x: np.ndarray) -> float:
        """Modulus of grad_y H(x, .)."""

    def lipschitz_hint(self, point: BlockPoint) -> LipschitzEstimates:
        Lx = self.partial_lipschitz_x(point.y)
        Ly = self.partial_lipschitz_y(point.x)
        return LipschitzEstimates(L=max(Lx, Ly), M=Lx + Ly)

    @abstractmethod
    def initial_point(self, rng: np.random.Generator) -> BlockPoint:
        """A feasible starting point."""


# ===================== Sparse NMF =====================

@dataclass(frozen=True)
class SnmfConfig:
    """Data matrix A (l x m), inner rank r, per-column sparsity budget s and weight eta_fit."""

    A: np.ndarray
    r: int
    s: int
    eta_fit: float = Config.ETA_FIT

    def __post_init__(self):
        A = ensure_finite(self.A, "A")
        if A.ndim != 2:
            raise DimensionError(f"A must be a matrix, got shape {A.shape}")
        object.__setattr__(self, "A", A)
        l, m = A.shape
        if not 1 <= self.r <= min(l, m):
            raise ConfigError(f"rank r={self.r} must lie in [1, {min(l, m)}]")
        if not 1 <= self.s <= l:
            raise ConfigError(f"sparsity s={self.s} must lie in [1, {l}]")
        if self.eta_fit <= 0:
            raise ConfigError(f"eta_fit must be positive, got {self.eta_fit}")

    @staticmethod
    def sparsity_from(value: float, rows: int) -> int:
        """Integer budget from either an integer s or a fraction of nonzeros in (0, 1)."""
        if isinstance(value, float) and 0 < value < 1:
            return max(1, int(round(value * rows)))
        return int(value)


def _check_snmf_dims(cfg: SnmfConfig, X: np.ndarray, Y: np.ndarray) -> None:
    l, m = cfg.A.shape
    if X.shape != (l, cfg.r) or Y.shape != (cfg.r, m):
        raise DimensionError(
            f"expected X {(l, cfg.r)} and Y {(cfg.r, m)}, got {X.shape} and {Y.shape}")


def snmf_feasible_x(X: np.ndarray, s: int) -> bool:
    if (X < -FEASIBILITY_TOL).any():
        return False
    return bool((np.count_nonzero(X, axis=0) <= s).all())


def snmf_objective(cfg: SnmfConfig, X: np.ndarray, Y: np.ndarray) -> ObjectiveValue:
    """(eta/2)||A - XY||_F^2 with the constraint check folded into the flag."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    _check_snmf_dims(cfg, X, Y)
    residual = cfg.A - X @ Y
    value = 0.5 * cfg.eta_fit * float(np.vdot(residual, residual))
    feasible = snmf_feasible_x(X, cfg.s) and bool((Y >= -FEASIBILITY_TOL).all())
    return ObjectiveValue(value, feasible)


def _snmf_row_grad_x(cfg: SnmfConfig, i: int, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    n = cfg.A.shape[0]
    grad = np.zeros_like(X, dtype=np.float64)
    residual = X[i] @ Y - cfg.A[i]
    grad[i] = n * cfg.eta_fit * (residual @ Y.T)
    return grad


def _snmf_row_grad_y(cfg: SnmfConfig, i: int, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    n = cfg.A.shape[0]
    residual = X[i] @ Y - cfg.A[i]
    return n * cfg.eta_fit * np.outer(X[i], residual)


def snmf_grad_components(cfg: SnmfConfig, batch: Sequence[int], X: np.ndarray,
                         Y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Batch-averaged gradients of the row components.

    Component i is H_i = n * (eta/2)||A_i - X_i Y||^2 with n = l rows, so the
    average over all rows is the exact gradient of H.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    _check_snmf_dims(cfg, X, Y)
    idx = _as_batch(batch, cfg.A.shape[0])
    grad_x = np.stack([_snmf_row_grad_x(cfg, int(i), X, Y) for i in idx]).mean(axis=0)
    grad_y = np.stack([_snmf_row_grad_y(cfg, int(i), X, Y) for i in idx]).mean(axis=0)
    return grad_x, grad_y


def prox_snmf_x(V: np.ndarray, s: int) -> np.ndarray:
    """
    Euclidean projection onto {X >= 0, every column has at most s nonzeros}.

    Negatives are clipped first, then the s largest entries of each column are
    kept. Among equal magnitudes the lowest row index wins.
    """
    V = np.asarray(V, dtype=np.float64)
    if V.ndim == 1:
        return prox_snmf_x(V[:, None], s)[:, 0]
    rows = V.shape[0]
    if s < 1 or s > rows:
        raise ConfigError(f"sparsity s={s} must lie in [1, {rows}]")
    clipped = np.maximum(V, 0.0)
    if s == rows:
        return clipped
    order = np.argsort(-clipped, axis=0, kind="stable")
    keep = np.zeros_like(clipped, dtype=bool)
    np.put_along_axis(keep, order[:s], True, axis=0)
    return np.where(keep, clipped, 0.0)


def prox_snmf_y(V: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(V, dtype=np.float64), 0.0)


class SparseNMFProblem(ProblemSpec):
    """S-NMF with one component per row of A."""

    name = "snmf"

    def __init__(self, cfg: SnmfConfig):
        l, m = cfg.A.shape
        super().__init__(l, (l, cfg.r), (cfg.r, m))
        self.cfg = cfg

    def smooth_value(self, x, y):
        return snmf_objective(self.cfg, x, y).value

    def eval_objective(self, point: BlockPoint) -> ObjectiveValue:
        return snmf_objective(self.cfg, point.x, point.y)

    def component_grad_x(self, i, x, y):
        return _snmf_row_grad_x(self.cfg, i, x, y)

    def component_grad_y(self, i, x, y):
        return _snmf_row_grad_y(self.cfg, i, x, y)

    def prox_f(self, v, scale):
        return prox_snmf_x(v, self.cfg.s)

    def prox_g(self, v, scale):
        return prox_snmf_y(v)

    def feasible_x(self, x):
        return snmf_feasible_x(x, self.cfg.s)

    def feasible_y(self, y):
        return bool((y >= -FEASIBILITY_TOL).all())

    def partial_lipschitz_x(self, y):
        return self.cfg.eta_fit * power_iteration(lambda v: y @ (y.T @ v), (y.shape[0],),
                                                  tol=Config.POWER_TOL, max_iter=Config.POWER_MAX_ITER)

    def partial_lipschitz_y(self, x):
        return self.cfg.eta_fit * power_iteration(lambda v: x.T @ (x @ v), (x.shape[1],),
                                                  tol=Config.POWER_TOL, max_iter=Config.POWER_MAX_ITER)

    def lipschitz_hint(self, point: BlockPoint) -> LipschitzEstimates:
        Lx = self.partial_lipschitz_x(point.y)
        Ly = self.partial_lipschitz_y(point.x)
        residual = self.cfg.A - point.x @ point.y
        # mixed second derivative of (eta/2)||A - XY||^2 is bounded by eta(2|X||Y| + |A - XY|)
        cross = self.cfg.eta_fit * (2.0 * np.linalg.norm(point.x) * np.linalg.norm(point.y)
                                    + np.linalg.norm(residual))
        return LipschitzEstimates(L=max(Lx, Ly), M=Lx + Ly + float(cross))

    def initial_point(self, rng):
        l, m = self.cfg.A.shape
        X0 = rng.random((l, self.cfg.r))
        Y0 = rng.random((self.cfg.r, m))
        level = float(np.mean(X0 @ Y0))
        target = float(np.mean(np.abs(self.cfg.A)))
        if level > 0 and target > 0:
            factor = math.sqrt(target / level)
            X0 *= factor
            Y0 *= factor
        return BlockPoint(prox_snmf_x(X0, self.cfg.s), Y0)


# ===================== Blind deconvolution =====================

@dataclass(frozen=True)
class BidConfig:
    """
    Blurred image A in [0, 1], kernel size k (odd), regulariser weight and
    sharpness sigma, and the number of row strips forming the components.
    """

    A: np.ndarray
    kernel_size: int
    eta_reg: float = Config.ETA_REG
    sigma: float = Config.SIGMA
    n_strips: int = Config.N_STRIPS

    def __post_init__(self):
        A = ensure_finite(self.A, "A")
        if A.ndim != 2:
            raise DimensionError(f"A must be a 2-D image, got shape {A.shape}")
        object.__setattr__(self, "A", A)
        if A.min() < -FEASIBILITY_TOL or A.max() > 1 + FEASIBILITY_TOL:
            raise ConfigError("blurred image pixels must lie in [0, 1]")
        k = self.kernel_size
        if k < 1 or k % 2 == 0 or k > min(A.shape):
            raise ConfigError(f"kernel size must be odd and <= {min(A.shape)}, got {k}")
        if self.eta_reg <= 0 or self.sigma <= 0:
            raise ConfigError("eta_reg and sigma must be positive")
        if not 1 <= self.n_strips <= A.shape[0]:
            raise ConfigError(f"n_strips must lie in [1, {A.shape[0]}], got {self.n_strips}")


def conv2d_circular(X: np.ndarray, K: np.ndarray) -> np.ndarray:
    """Periodic 2-D convolution with a centred odd-sized kernel; output has the size of X."""
    K = np.asarray(K, dtype=np.float64)
    if K.ndim != 2 or K.shape[0] % 2 == 0 or K.shape[1] % 2 == 0:
        raise DimensionError(f"kernel must be 2-D with odd sides, got shape {K.shape}")
    return ndimage.convolve(np.asarray(X, dtype=np.float64), K, mode="wrap")


def correlate2d_circular(Z: np.ndarray, K: np.ndarray) -> np.ndarray:
    """Adjoint of conv2d_circular in the image argument."""
    K = np.asarray(K, dtype=np.float64)
    if K.ndim != 2 or K.shape[0] % 2 == 0 or K.shape[1] % 2 == 0:
        raise DimensionError(f"kernel must be 2-D with odd sides, got shape {K.shape}")
    return ndimage.correlate(np.asarray(Z, dtype=np.float64), K, mode="wrap")


def kernel_adjoint(E: np.ndarray, X: np.ndarray, k: int, rows: np.ndarray = None) -> np.ndarray:
    """
    Adjoint of K -> conv2d_circular(X, K) applied to E, restricted to `rows` of E.

    Entry (a, b) is sum_ij E[i, j] X[i - a + c, j - b + c] with c = k // 2.
    """
    c = k // 2
    d1 = X.shape[0]
    rows = np.arange(d1) if rows is None else rows
    E_rows = E[rows]
    out = np.empty((k, k))
    for a in range(k):
        shifted_rows = X[(rows - (a - c)) % d1]
        for b in range(k):
            out[a, b] = float(np.vdot(E_rows, np.roll(shifted_rows, b - c, axis=1)))
    return out


def forward_differences(X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Horizontal and vertical periodic forward differences."""
    return np.roll(X, -1, axis=1) - X, np.roll(X, -1, axis=0) - X


def _difference_adjoint(wh: np.ndarray, wv: np.ndarray) -> np.ndarray:
    return (np.roll(wh, 1, axis=1) - wh) + (np.roll(wv, 1, axis=0) - wv)


def bid_regularizer(cfg: BidConfig, X: np.ndarray) -> float:
    dh, dv = forward_differences(X)
    return cfg.eta_reg * float(np.log1p(cfg.sigma * dh ** 2).sum() + np.log1p(cfg.sigma * dv ** 2).sum())


def bid_regularizer_grad(cfg: BidConfig, X: np.ndarray) -> np.ndarray:
    dh, dv = forward_differences(X)
    wh = 2.0 * cfg.sigma * dh / (1.0 + cfg.sigma * dh ** 2)
    wv = 2.0 * cfg.sigma * dv / (1.0 + cfg.sigma * dv ** 2)
    return cfg.eta_reg * _difference_adjoint(wh, wv)


def _check_bid_dims(cfg: BidConfig, X: np.ndarray, Y: np.ndarray) -> None:
    k = cfg.kernel_size
    if X.shape != cfg.A.shape or Y.shape != (k, k):
        raise DimensionError(
            f"expected X {cfg.A.shape} and Y {(k, k)}, got {X.shape} and {Y.shape}")


def bid_feasible_y(Y: np.ndarray) -> bool:
    return bool((Y >= -FEASIBILITY_TOL).all() and (Y <= 1 + FEASIBILITY_TOL).all()
                and Y.sum() <= 1 + FEASIBILITY_TOL)


def bid_objective(cfg: BidConfig, X: np.ndarray, Y: np.ndarray) -> ObjectiveValue:
    """1/2 ||A - X*Y||^2 + eta sum_r log(1 + sigma [DX]_r^2)."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    _check_bid_dims(cfg, X, Y)
    residual = cfg.A - conv2d_circular(X, Y)
    value = 0.5 * float(np.vdot(residual, residual)) + bid_regularizer(cfg, X)
    feasible = bool((X >= -FEASIBILITY_TOL).all() and (X <= 1 + FEASIBILITY_TOL).all()) \
        and bid_feasible_y(Y)
    return ObjectiveValue(value, feasible)


def bid_strips(cfg: BidConfig) -> list:
    return np.array_split(np.arange(cfg.A.shape[0]), cfg.n_strips)


def _bid_strip_residual(cfg: BidConfig, rows: np.ndarray, blurred: np.ndarray) -> np.ndarray:
    E = np.zeros_like(cfg.A)
    E[rows] = blurred[rows] - cfg.A[rows]
    return E


def bid_grad_components(cfg: BidConfig, batch: Sequence[int], X: np.ndarray,
                        Y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Batch-averaged strip gradients.

    Component i is H_i = n * (1/2)||strip_i(A - X*Y)||^2 + regulariser, so the
    average over all strips is the exact gradient of the smooth part.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    _check_bid_dims(cfg, X, Y)
    idx = _as_batch(batch, cfg.n_strips)
    strips = bid_strips(cfg)
    blurred = conv2d_circular(X, Y)
    reg_grad = bid_regularizer_grad(cfg, X)
    grads_x, grads_y = [], []
    for i in idx:
        rows = strips[int(i)]
        E = _bid_strip_residual(cfg, rows, blurred)
        grads_x.append(cfg.n_strips * correlate2d_circular(E, Y) + reg_grad)
        grads_y.append(cfg.n_strips * kernel_adjoint(E, X, cfg.kernel_size, rows))
    return np.stack(grads_x).mean(axis=0), np.stack(grads_y).mean(axis=0)


def prox_bid_x(V: np.ndarray) -> np.ndarray:
    return np.clip(np.asarray(V, dtype=np.float64), 0.0, 1.0)


def prox_bid_y(V: np.ndarray, tol: float = 1e-12, max_iter: int = 200) -> np.ndarray:
    """
    Euclidean projection onto {0 <= Y <= 1, ||Y||_1 <= 1}.

    When the box projection already has sum <= 1 it is optimal; otherwise the
    answer is clip(V - tau, 0, 1) with tau > 0 found by bisection on the sum.
    """
    V = ensure_finite(V, "V")
    boxed = np.clip(V, 0.0, 1.0)
    if boxed.sum() <= 1.0:
        return boxed
    lo, hi = 0.0, float(V.max())
    for _ in range(max_iter):
        tau = 0.5 * (lo + hi)
        total = float(np.clip(V - tau, 0.0, 1.0).sum())
        if abs(total - 1.0) <= tol:
            return np.clip(V - tau, 0.0, 1.0)
        if total > 1.0:
            lo = tau
        else:
            hi = tau
        if hi - lo <= np.finfo(float).eps * max(1.0, hi):
            return np.clip(V - hi, 0.0, 1.0)
    raise ConvergenceError("l1-box projection bisection did not converge", 0.5 * (lo + hi))


class BlindDeconvolutionProblem(ProblemSpec):
    """BID with components given by contiguous row strips of the residual."""

    name = "bid"

    def __init__(self, cfg: BidConfig):
        k = cfg.kernel_size
        super().__init__(cfg.n_strips, cfg.A.shape, (k, k))
        self.cfg = cfg
        self.strips = bid_strips(cfg)

    def smooth_value(self, x, y):
        return bid_objective(self.cfg, x, y).value

    def eval_objective(self, point: BlockPoint) -> ObjectiveValue:
        return bid_objective(self.cfg, point.x, point.y)

    def component_grad_x(self, i, x, y):
        E = _bid_strip_residual(self.cfg, self.strips[i], conv2d_circular(x, y))
        return self.n * correlate2d_circular(E, y) + bid_regularizer_grad(self.cfg, x)

    def component_grad_y(self, i, x, y):
        rows = self.strips[i]
        E = _bid_strip_residual(self.cfg, rows, conv2d_circular(x, y))
        return self.n * kernel_adjoint(E, x, self.cfg.kernel_size, rows)

    def component_grads_x(self, batch, x, y):
        idx = _as_batch(batch, self.n)
        blurred = conv2d_circular(x, y)
        reg_grad = bid_regularizer_grad(self.cfg, x)
        return np.stack([
            self.n * correlate2d_circular(_bid_strip_residual(self.cfg, self.strips[int(i)], blurred), y)
            + reg_grad
            for i in idx])

    def component_grads_y(self, batch, x, y):
        idx = _as_batch(batch, self.n)
        blurred = conv2d_circular(x, y)
        k = self.cfg.kernel_size
        return np.stack([
            self.n * kernel_adjoint(_bid_strip_residual(self.cfg, self.strips[int(i)], blurred), x, k,
                                    self.strips[int(i)])
            for i in idx])

    def prox_f(self, v, scale):
        return prox_bid_x(v)

    def prox_g(self, v, scale):
        return prox_bid_y(v)

    def feasible_x(self, x):
        return bool((x >= -FEASIBILITY_TOL).all() and (x <= 1 + FEASIBILITY_TOL).all())

    def feasible_y(self, y):
        return bid_feasible_y(y)

    def partial_lipschitz_x(self, y):
        # spectral norm of a circular convolution is the peak of its transfer function;
        # |r''| <= 2 sigma and ||D||^2 <= 8 bound the regulariser
        padded = np.zeros(self.cfg.A.shape)
        k = self.cfg.kernel_size
        padded[:k, :k] = y
        data = float(np.max(np.abs(np.fft.fft2(padded)) ** 2))
        return data + 16.0 * self.cfg.eta_reg * self.cfg.sigma

    def partial_lipschitz_y(self, x):
        k = self.cfg.kernel_size
        return power_iteration(lambda v: kernel_adjoint(conv2d_circular(x, v), x, k), (k, k),
                               tol=Config.POWER_TOL, max_iter=Config.POWER_MAX_ITER)

    def initial_point(self, rng):
        k = self.cfg.kernel_size
        return BlockPoint(self.cfg.A.copy(), np.full((k, k), 1.0 / (k * k)))


# ===================== Block-coupled least squares =====================

class QuadraticProblem(ProblemSpec):
    """
    H_i(x, y) = 1/2 (p_i.x + q_i.y - c_i)^2 with f = g = 0.

    With [P Q] of full column rank H is strongly convex, so iterates converge
    linearly to the least-squares solution.
    """

    name = "quadratic"

    def __init__(self, P: np.ndarray, Q: np.ndarray, c: np.ndarray):
        P = ensure_finite(P, "P")
        Q = ensure_finite(Q, "Q")
        c = ensure_finite(c, "c").ravel()
        if P.shape[0] != Q.shape[0] or P.shape[0] != c.size:
            raise DimensionError("P, Q and c must have the same number of rows")
        super().__init__(P.shape[0], (P.shape[1],), (Q.shape[1],))
        self.P, self.Q, self.c = P, Q, c

    @classmethod
    def random(cls, n: int = 40, l: int = 3, m: int = 3, seed: int = 0) -> "QuadraticProblem":
        rng = np.random.default_rng(seed)
        return cls(rng.standard_normal((n, l)), rng.standard_normal((n, m)), rng.standard_normal(n))

    def _residual(self, x, y):
        return self.P @ x + self.Q @ y - self.c

    def smooth_value(self, x, y):
        r = self._residual(x, y)
        return 0.5 * float(np.vdot(r, r)) / self.n

    def component_grad_x(self, i, x, y):
        return self.P[i] * (self.P[i] @ x + self.Q[i] @ y - self.c[i])

    def component_grad_y(self, i, x, y):
        return self.Q[i] * (self.P[i] @ x + self.Q[i] @ y - self.c[i])

    def prox_f(self, v, scale):
        return np.array(v, dtype=np.float64)

    def prox_g(self, v, scale):
        return np.array(v, dtype=np.float64)

    def partial_lipschitz_x(self, y):
        return float(np.linalg.eigvalsh(self.P.T @ self.P / self.n)[-1])

    def partial_lipschitz_y(self, x):
        return float(np.linalg.eigvalsh(self.Q.T @ self.Q / self.n)[-1])

    def lipschitz_hint(self, point):
        PQ = np.hstack([self.P, self.Q])
        M = float(np.linalg.eigvalsh(PQ.T @ PQ / self.n)[-1])
        return LipschitzEstimates(L=max(self.partial_lipschitz_x(point.y), self.partial_lipschitz_y(point.x)), M=M)

    def solution(self) -> BlockPoint:
        z, *_ = np.linalg.lstsq(np.hstack([self.P, self.Q]), self.c, rcond=None)
        l = self.x_shape[0]
        return BlockPoint(z[:l], z[l:])

    def initial_point(self, rng):
        return BlockPoint(rng.standard_normal(self.x_shape), rng.standard_normal(self.y_shape))
