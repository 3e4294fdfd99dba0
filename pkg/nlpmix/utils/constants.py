"""
Constants for nlpmix.
Numerical defaults shared across the services.
"""

import math

# Default prior dispersions, chosen so that P(|theta_i| / sqrt(phi) < 0.2) = 0.01
DEFAULT_TAUS = {
    "pmom": 0.358,
    "pimom": 0.133,
    "pemom": 0.119,
    "normal": 1.0,
}

# Vague inverse-gamma prior on the residual variance: IG(a/2, b/2)
DEFAULT_A_PHI = 0.01
DEFAULT_B_PHI = 0.01

# Calibration target
CALIBRATION_THRESHOLD = 0.2
CALIBRATION_PROBABILITY = 0.01

SQRT2 = math.sqrt(2.0)
SQRT_PI = math.sqrt(math.pi)

# Sentinel for half-infinite exclusion intervals
INFINITE_BOUND = 1e308

# Truncated Normal conditionals with less kept mass fall back to a boundary atom
MIN_KEPT_PROBABILITY = 1e-12

# Rejection samplers abort below this acceptance rate
MIN_ACCEPTANCE_RATE = 1e-3

# Penalty inverse
INVERSE_TOLERANCE = 1e-5
MAX_BRACKET_STEPS = 200
MAX_FALSI_ITERATIONS = 100

# Importance sampling diagnostics
MIN_EFFECTIVE_SAMPLE_SIZE = 50
MAX_WEIGHT_SHARE = 0.5
N_BATCHES = 20

# Sampling defaults
DEFAULT_ITERATIONS = 1000
DEFAULT_BURN_FRACTION = 0.1
MIN_BURN_IN = 10
SEARCH_MARGINAL_SAMPLES = 1_000
REPORT_MARGINAL_SAMPLES = 10_000
DEFAULT_DRAWS_PER_MODEL = 1000
DEFAULT_MAX_MODELS = 50
DEFAULT_SEARCH_SWEEPS = 200

# Simulation design: five nonzero coefficients placed last
SIM_NONZERO_COEFFICIENTS = (0.6, 1.2, 1.8, 2.4, 3.0)

# CLI exit codes
EXIT_OK = 0
EXIT_INPUT = 2
EXIT_CONFIG = 3
EXIT_NUMERIC = 4

MODEL_PRIORS = ["beta_binomial", "uniform"]
