"""Configuration constants for the anisopt library and CLI."""

import os
from pathlib import Path

# Application settings
APP_NAME = "anisopt"
DEFAULT_OUTPUT_DIR = Path("results")
MANIFEST_NAME = "manifest.json"
THREADS_ENV_VAR = "ANISOPT_THREADS"

# Nonlinear state solver
STATE_TOLERANCE = 1e-10
CG_TOLERANCE = 1e-12
MAX_OUTER_ITERATIONS = 500
STALL_RATIO = 0.99  # relative residual reduction below 1% counts as a stall
KACANOV_MAX_STEPS = 25  # frozen-coefficient steps before Newton takes over
ARMIJO_C = 1e-4
MAX_LINE_SEARCH_HALVINGS = 60

# Hammerstein solver
HAMMERSTEIN_TOLERANCE = 1e-12
HAMMERSTEIN_MAX_ITERATIONS = 200

# Regularization
DEFAULT_DELTA = 0.5
# sup over the transition band of H(t) - t for the Hermite cubic, i.e. 4/27
TRANSITION_OVERSHOOT = 4.0 / 27.0
DEFAULT_SCHEDULE_STEPS = 6

# Control class and optimizer
TV_TOLERANCE = 1e-10
SPECTRAL_TOLERANCE = 1e-12
DEFAULT_TV_PENALTY = 1e3
FD_RELATIVE_STEP = 1e-4
DEFAULT_BUDGET = 200

# Kernel fixtures
DEFAULT_KERNEL_SIGMA = 0.25
KERNEL_CONDITION_TARGET = 1.0

# Property battery
DEFAULT_SAMPLES = 10_000
PROPERTY_TOLERANCE = 1e-12
DEFAULT_SEED = 20240601

# CSV output
FLOAT_FORMAT = ".17g"


def worker_count() -> int:
    """Return the worker cap for concurrent sweep steps.

    Returns:
        Value of ANISOPT_THREADS when set to a positive integer, else the
        CPU count.
    """
    raw = os.environ.get(THREADS_ENV_VAR)
    if raw:
        try:
            value = int(raw)
        except ValueError:
            value = 0
        if value > 0:
            return value
    return os.cpu_count() or 1
