"""
Dataset Generator Module
Creates synthetic data for the benchmark problems: planted sparse factorizations
and blurred test images with their ground truth.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional

import numpy as np
import pandas as pd

from core import ConfigError
from matrix_io import save_matrix
from problems import conv2d_circular

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PlantedFactorization:
    A: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    noise: float


@dataclass(frozen=True)
class BlurredImage:
    blurred: np.ndarray
    sharp: np.ndarray
    kernel: np.ndarray
    noise: float


class DatasetGenerator:
    """
    Generates reproducible synthetic datasets.

    Every draw comes from one numpy generator seeded at construction, so equal
    seeds give byte-identical output files.
    """

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.rng = np.random.default_rng(seed)

    # ----- Sparse NMF -----

    def planted_snmf(self, rows: int, cols: int, rank: int, density: float = 0.25,
                     noise: float = 0.0) -> PlantedFactorization:
        """
        A = X Y + noise * N(0, 1) with X >= 0 having ceil(density * rows) nonzeros per column.

        Args:
            rows, cols: shape of A
            rank: inner dimension
            density: fraction of nonzeros in every column of X
            noise: standard deviation of the additive Gaussian noise

        Returns:
            The data matrix together with the planted factors
        """
        if rank < 1 or rank > min(rows, cols):
            raise ConfigError(f"rank must lie in [1, {min(rows, cols)}], got {rank}")
        if not 0 < density <= 1:
            raise ConfigError(f"density must lie in (0, 1], got {density}")
        if noise < 0:
            raise ConfigError(f"noise level must be >= 0, got {noise}")
        nnz = max(1, math.ceil(density * rows))
        X = np.zeros((rows, rank))
        for j in range(rank):
            support = self.rng.choice(rows, size=nnz, replace=False)
            X[support, j] = self.rng.random(nnz) + 0.1
        Y = self.rng.random((rank, cols))
        A = X @ Y
        if noise > 0:
            A = A + noise * self.rng.standard_normal(A.shape)
        return PlantedFactorization(A, X, Y, noise)

    # ----- Blur kernels and images -----

    @staticmethod
    def motion_kernel(size: int, length: Optional[float] = None, angle: float = 0.0) -> np.ndarray:
        """Linear motion blur of the given length (pixels) and angle (degrees), normalised to sum 1."""
        if size < 1 or size % 2 == 0:
            raise ConfigError(f"kernel size must be odd, got {size}")
        length = float(size) if length is None else float(length)
        c = size // 2
        theta = math.radians(angle)
        kernel = np.zeros((size, size))
        for t in np.linspace(-(length - 1) / 2.0, (length - 1) / 2.0, max(2, 4 * size)):
            row = int(round(c - t * math.sin(theta)))
            col = int(round(c + t * math.cos(theta)))
            if 0 <= row < size and 0 <= col < size:
                kernel[row, col] += 1.0
        return kernel / kernel.sum()

    @staticmethod
    def disk_kernel(size: int, radius: Optional[float] = None) -> np.ndarray:
        """Out-of-focus (uniform disk) blur, normalised to sum 1."""
        if size < 1 or size % 2 == 0:
            raise ConfigError(f"kernel size must be odd, got {size}")
        c = size // 2
        radius = c + 0.5 if radius is None else float(radius)
        rows, cols = np.mgrid[-c:c + 1, -c:c + 1]
        kernel = (rows ** 2 + cols ** 2 <= radius ** 2).astype(float)
        return kernel / kernel.sum()

    def test_image(self, size: int = 64) -> np.ndarray:
        """Piecewise-constant image in [0, 1]: a background, a few rectangles and a disk."""
        image = np.full((size, size), 0.2)
        for _ in range(4):
            top, left = self.rng.integers(0, size // 2, size=2)
            height, width = self.rng.integers(size // 8, size // 2, size=2)
            image[top:top + height, left:left + width] = self.rng.uniform(0.3, 1.0)
        rows, cols = np.mgrid[0:size, 0:size]
        centre = self.rng.integers(size // 4, 3 * size // 4, size=2)
        disk = (rows - centre[0]) ** 2 + (cols - centre[1]) ** 2 <= (size // 6) ** 2
        image[disk] = 0.9
        return image

    def blur(self, image: np.ndarray, kernel: np.ndarray, noise: float = 0.0) -> BlurredImage:
        blurred = conv2d_circular(image, kernel)
        if noise > 0:
            blurred = blurred + noise * self.rng.standard_normal(blurred.shape)
        return BlurredImage(np.clip(blurred, 0.0, 1.0), image, kernel, noise)

    # ----- Files -----

    def generate_snmf_dataset(self, out: str, rows: int, cols: int, rank: int,
                              density: float = 0.25, noise: float = 0.0) -> Dict[str, str]:
        """
        Write A to `out` and the planted factors next to it (<stem>_X, <stem>_Y).

        Returns:
            Mapping of role to written path
        """
        planted = self.planted_snmf(rows, cols, rank, density, noise)
        paths = self._sibling_paths(out, ("X", "Y"))
        save_matrix(out, planted.A)
        save_matrix(paths["X"], planted.X)
        save_matrix(paths["Y"], planted.Y)
        logger.info("S-NMF dataset generated: %s (%dx%d, rank %d)", out, rows, cols, rank)
        return {"A": str(out), **paths}

    def generate_blur_dataset(self, out: str, size: int = 64, kernel: str = "motion",
                              kernel_size: int = 9, noise: float = 0.0, angle: float = 45.0) -> Dict[str, str]:
        """Write the blurred image to `out` plus <stem>_sharp and <stem>_kernel."""
        if kernel == "motion":
            K = self.motion_kernel(kernel_size, angle=angle)
        elif kernel == "disk":
            K = self.disk_kernel(kernel_size)
        else:
            raise ConfigError(f"unknown blur kernel {kernel!r}; expected motion or disk")
        sample = self.blur(self.test_image(size), K, noise)
        paths = self._sibling_paths(out, ("sharp", "kernel"))
        save_matrix(out, sample.blurred)
        save_matrix(paths["sharp"], sample.sharp)
        save_matrix(paths["kernel"], sample.kernel)
        logger.info("blur dataset generated: %s (%dx%d, %s kernel %d)", out, size, size, kernel, kernel_size)
        return {"blurred": str(out), **paths}

    @staticmethod
    def _sibling_paths(out: str, roles) -> Dict[str, str]:
        path = Path(out)
        suffix = path.suffix or ".csv"
        paths = {}
        for role in roles:
            ext = ".bin" if role == "kernel" and suffix == ".pgm" else suffix
            paths[role] = str(path.with_name(f"{path.stem}_{role}{ext}"))
        return paths

    @staticmethod
    def get_dataset_stats(A: np.ndarray) -> Dict:
        """
        Summary statistics of a data matrix.

        Returns:
            Dictionary containing shape, value range and sparsity
        """
        values = pd.Series(np.asarray(A, dtype=float).ravel())
        return {
            "shape": list(np.shape(A)),
            "min": float(values.min()),
            "max": float(values.max()),
            "mean": float(values.mean()),
            "std": float(values.std(ddof=0)),
            "zero_fraction": float((values == 0).mean()),
        }
