"""
Core Module
Block points, Bregman kernels, inertial extrapolation and the shared error types.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Tuple, Union

import numpy as np


class STiBPALMError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(STiBPALMError, ValueError):
    pass


class NonFiniteError(STiBPALMError, ValueError):
    """Raised when an array carries NaN or Inf; `index` is the first bad flat index."""

    def __init__(self, message: str, index: Optional[int] = None):
        super().__init__(message)
        self.index = index


class ConvergenceError(STiBPALMError):
    def __init__(self, message: str, last_estimate: float):
        super().__init__(f"{message} (last estimate {last_estimate:.6g})")
        self.last_estimate = last_estimate


class ConfigError(STiBPALMError, ValueError):
    pass


class SolverError(STiBPALMError):
    """Wraps a failure inside a solver step with the iteration it happened at."""

    def __init__(self, iteration: int, cause: Exception):
        super().__init__(f"iteration {iteration}: {cause}")
        self.iteration = iteration
        self.cause = cause


def ensure_finite(arr: np.ndarray, name: str = "array") -> np.ndarray:
    """Return `arr` as a float64 array, raising NonFiniteError on NaN/Inf."""
    arr = np.asarray(arr, dtype=np.float64)
    bad = ~np.isfinite(arr)
    if bad.any():
        index = int(np.flatnonzero(bad)[0])
        raise NonFiniteError(f"{name} has a non-finite entry at flat index {index}", index)
    return arr


def _check_same_shape(*arrays: np.ndarray) -> None:
    shape = arrays[0].shape
    for arr in arrays[1:]:
        if arr.shape != shape:
            raise DimensionError(f"shape mismatch: {shape} vs {arr.shape}")


def sq_norm(arr: np.ndarray) -> float:
    return float(np.vdot(arr, arr))


# ----- Block points -----

@dataclass(frozen=True)
class BlockPoint:
    """The paired iterate z = (x, y). Blocks keep their natural (matrix) shape."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = ensure_finite(self.x, "x").copy()
        y = ensure_finite(self.y, "y").copy()
        x.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def dims(self) -> Tuple[int, int]:
        return self.x.size, self.y.size

    def sq_distance(self, other: "BlockPoint") -> float:
        """Squared distance ||x - x'||^2 + ||y - y'||^2."""
        _check_same_shape(self.x, other.x)
        _check_same_shape(self.y, other.y)
        return sq_norm(self.x - other.x) + sq_norm(self.y - other.y)


@dataclass(frozen=True)
class IterateWindow:
    """
    Sliding history (z_k, z_{k-1}, z_{k-2}, z_{k-3}), newest first.

    A fresh window repeats z_0 in every slot, which is the usual
    convention for the points before the first iterate.
    """

    points: Tuple[BlockPoint, BlockPoint, BlockPoint, BlockPoint]

    @classmethod
    def start(cls, z0: BlockPoint) -> "IterateWindow":
        return cls((z0, z0, z0, z0))

    def push(self, z_new: BlockPoint) -> "IterateWindow":
        current = self.points[0]
        _check_same_shape(current.x, z_new.x)
        _check_same_shape(current.y, z_new.y)
        return IterateWindow((z_new,) + self.points[:3])

    def __getitem__(self, lag: int) -> BlockPoint:
        return self.points[lag]

    @property
    def current(self) -> BlockPoint:
        return self.points[0]

    def xs(self) -> Tuple[np.ndarray, ...]:
        return tuple(p.x for p in self.points)

    def ys(self) -> Tuple[np.ndarray, ...]:
        return tuple(p.y for p in self.points)

    def sq_distances(self) -> Tuple[float, float, float]:
        """||z_k - z_{k-1}||^2, ||z_{k-1} - z_{k-2}||^2, ||z_{k-2} - z_{k-3}||^2."""
        p = self.points
        return (p[0].sq_distance(p[1]), p[1].sq_distance(p[2]), p[2].sq_distance(p[3]))


# ----- Bregman kernels -----

class KernelKind(str, Enum):
    QUADRATIC = "quadratic"
    QUARTIC = "quartic"


@dataclass(frozen=True)
class BregmanKernel:
    """
    Kernel phi for the Bregman proximal terms.

    Quadratic: phi(x) = (scale/2)||x||^2.
    Quartic:   phi(x) = (scale^2/4)||x||^4.

    The quartic kernel is not strongly convex at the origin, so its modulus is
    only reported on the annulus radius <= ||x|| <= bound of the iterates.
    """

    kind: KernelKind = KernelKind.QUADRATIC
    scale: float = 1.0
    radius: float = 0.0
    bound: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", KernelKind(self.kind))
        if not np.isfinite(self.scale) or self.scale <= 0:
            raise ConfigError(f"kernel scale must be positive, got {self.scale}")
        if self.radius < 0:
            raise ConfigError(f"kernel radius must be nonnegative, got {self.radius}")

    @property
    def strong_convexity(self) -> float:
        if self.kind is KernelKind.QUADRATIC:
            return float(self.scale)
        return float(self.scale ** 2 * self.radius ** 2)

    @property
    def grad_lipschitz(self) -> float:
        if self.kind is KernelKind.QUADRATIC:
            return float(self.scale)
        if self.bound is None:
            return float("inf")
        return float(3.0 * self.scale ** 2 * self.bound ** 2)

    def with_scale(self, scale: float) -> "BregmanKernel":
        return BregmanKernel(self.kind, scale, self.radius, self.bound)

    def value(self, x: np.ndarray) -> float:
        x = ensure_finite(x, "x")
        if self.kind is KernelKind.QUADRATIC:
            return 0.5 * self.scale * sq_norm(x)
        return 0.25 * self.scale ** 2 * sq_norm(x) ** 2


def kernel_gradient(kernel: BregmanKernel, x: np.ndarray) -> np.ndarray:
    """Gradient of the kernel: theta*x (quadratic) or c^2 ||x||^2 x (quartic)."""
    x = ensure_finite(x, "x")
    if kernel.kind is KernelKind.QUADRATIC:
        return kernel.scale * x
    return kernel.scale ** 2 * sq_norm(x) * x


def bregman_distance(kernel: BregmanKernel, x: np.ndarray, y: np.ndarray) -> float:
    """
    Bregman distance D_phi(x, y) = phi(x) - phi(y) - <grad phi(y), x - y>.

    Args:
        kernel: the kernel phi
        x: first argument
        y: base point

    Returns:
        The (nonnegative) distance. Tiny negative round-off is clipped to 0.
    """
    x = ensure_finite(x, "x")
    y = ensure_finite(y, "y")
    _check_same_shape(x, y)
    if kernel.kind is KernelKind.QUADRATIC:
        return 0.5 * kernel.scale * sq_norm(x - y)
    value = kernel.value(x) - kernel.value(y) - float(np.vdot(kernel_gradient(kernel, y), x - y))
    return max(value, 0.0)


# ----- Inertia -----

def extrapolate(x_k: np.ndarray, x_km1: np.ndarray, x_km2: np.ndarray,
                c1: float, c2: float) -> np.ndarray:
    """Two-step inertial point x_k + c1 (x_k - x_{k-1}) + c2 (x_{k-1} - x_{k-2})."""
    _check_same_shape(x_k, x_km1, x_km2)
    if c1 == 0.0 and c2 == 0.0:
        return np.array(x_k, dtype=np.float64)
    return x_k + c1 * (x_k - x_km1) + c2 * (x_km1 - x_km2)


class ScheduleKind(str, Enum):
    CONSTANT = "constant"
    RAMP = "ramp"


@dataclass(frozen=True)
class InertialSchedule:
    """
    Inertial parameter sequence.

    CONSTANT returns `value`; RAMP returns value * max(0, (k-1)/(k+2)),
    so `value` doubles as the scale factor and as the sequence cap.
    """

    kind: ScheduleKind = ScheduleKind.CONSTANT
    value: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", ScheduleKind(self.kind))
        if not np.isfinite(self.value) or self.value < 0:
            raise ConfigError(f"inertial schedule value must be finite and >= 0, got {self.value}")

    @classmethod
    def constant(cls, c: float) -> "InertialSchedule":
        return cls(ScheduleKind.CONSTANT, c)

    @classmethod
    def ramp(cls, scale: float = 1.0) -> "InertialSchedule":
        return cls(ScheduleKind.RAMP, scale)

    @classmethod
    def parse(cls, spec: Union[str, float, int, dict, "InertialSchedule"]) -> "InertialSchedule":
        """Accepts 0.3, "ramp", "ramp:0.5", {"kind": ..., "value": ...}."""
        if isinstance(spec, InertialSchedule):
            return spec
        if isinstance(spec, (int, float)):
            return cls.constant(float(spec))
        if isinstance(spec, dict):
            return cls(ScheduleKind(spec.get("kind", "constant")), float(spec.get("value", 0.0)))
        if isinstance(spec, str):
            name, _, arg = spec.partition(":")
            if name == "ramp":
                return cls.ramp(float(arg) if arg else 1.0)
            if name == "constant":
                return cls.constant(float(arg or 0.0))
            try:
                return cls.constant(float(spec))
            except ValueError:
                pass
        raise ConfigError(f"cannot parse inertial schedule {spec!r}")

    @property
    def cap(self) -> float:
        return float(self.value)

    def __call__(self, k: int) -> float:
        return inertial_schedule(self, k)

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "value": self.value}


def inertial_schedule(schedule: InertialSchedule, k: int) -> float:
    if k < 0:
        raise ConfigError(f"iteration index must be >= 0, got {k}")
    if schedule.kind is ScheduleKind.CONSTANT:
        return float(schedule.value)
    return float(schedule.value * max(0.0, (k - 1) / (k + 2)))


ZERO_SCHEDULE = InertialSchedule.constant(0.0)


@dataclass
class RngStreams:
    """Independent generators for batch draws and SARAH restart coins, all from one seed."""

    seed: int
    batches: np.random.Generator = field(init=False)
    coins: np.random.Generator = field(init=False)

    def __post_init__(self):
        batch_seq, coin_seq = np.random.SeedSequence(self.seed).spawn(2)
        self.batches = np.random.Generator(np.random.PCG64(batch_seq))
        self.coins = np.random.Generator(np.random.PCG64(coin_seq))


def power_iteration(apply, shape, tol: float = 1e-6, max_iter: int = 500) -> float:
    """
    Largest eigenvalue of a symmetric positive semidefinite linear operator.

    Args:
        apply: callable mapping an array of `shape` to an array of `shape`
        shape: shape of the operator's domain
        tol: relative change of the Rayleigh quotient that counts as converged
        max_iter: iteration budget

    Returns:
        The eigenvalue estimate (0.0 for the zero operator).

    Raises:
        ConvergenceError: the budget ran out; carries the last estimate.
    """
    v = np.random.default_rng(0).random(shape) + 0.5
    v /= np.linalg.norm(v)
    previous = None
    estimate = 0.0
    for _ in range(max_iter):
        w = np.asarray(apply(v), dtype=np.float64)
        norm_w = float(np.linalg.norm(w))
        if norm_w == 0.0:
            return 0.0
        estimate = float(np.vdot(v, w))
        v = w / norm_w
        if previous is not None and abs(estimate - previous) <= tol * max(abs(estimate), 1e-300):
            return estimate
        previous = estimate
    raise ConvergenceError("power iteration did not converge", estimate)
