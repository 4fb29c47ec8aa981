"""
Configuration settings for the STiBPALM benchmark harness
"""

import os
from dotenv import load_dotenv

load_dotenv()


def _env_bool(name: str, default: bool = False) -> bool:
    value = os.getenv(name)
    if value is None:
        return default
    return value.strip().lower() in ("1", "true", "yes", "on")


class Config:
    # Harness
    OUTPUT_DIR = os.getenv('STIBPALM_OUTPUT_DIR', 'results')
    WORKERS = int(os.getenv('STIBPALM_WORKERS', '1'))
    LOG_LEVEL = os.getenv('STIBPALM_LOG_LEVEL', 'INFO')
    STRICT = _env_bool('STIBPALM_STRICT')
    LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"

    # Sampling
    BATCH_FRACTION = 0.05
    REFRESH_PROB = 1.0 / 20

    # Sparse NMF
    ETA_FIT = 3.0
    SPARSITY = 0.25

    # Blind deconvolution
    ETA_REG = 5e-5
    SIGMA = 1e3
    N_STRIPS = 64
    BID_REFRESH_PROB = 1.0 / 64

    # Step-size condition
    EPSILON = 1e-3

    # Power iteration
    POWER_TOL = 1e-6
    POWER_MAX_ITER = 500

    # Report
    CSV_COLUMNS = [
        "run_id", "seed", "algorithm", "epoch", "iter", "wall_time_s",
        "objective", "feasible", "psi", "stationarity", "upsilon",
    ]
