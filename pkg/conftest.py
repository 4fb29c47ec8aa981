"""Shared pytest fixtures: small instances of every benchmark problem."""

import numpy as np
import pytest

from dataset_generator import DatasetGenerator
from problems import (
    BidConfig,
    BlindDeconvolutionProblem,
    QuadraticProblem,
    SnmfConfig,
    SparseNMFProblem,
)


@pytest.fixture
def planted():
    return DatasetGenerator(seed=3).planted_snmf(20, 15, 5, density=0.25, noise=0.01)


@pytest.fixture
def snmf_problem(planted):
    return SparseNMFProblem(SnmfConfig(planted.A, r=5, s=5, eta_fit=3.0))


@pytest.fixture
def bid_problem():
    gen = DatasetGenerator(seed=5)
    sample = gen.blur(gen.test_image(16), gen.motion_kernel(3, angle=30.0), noise=0.0)
    return BlindDeconvolutionProblem(BidConfig(sample.blurred, kernel_size=3, eta_reg=1e-3, sigma=10.0, n_strips=4))


@pytest.fixture
def quadratic_problem():
    return QuadraticProblem.random(n=30, l=3, m=2, seed=1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
