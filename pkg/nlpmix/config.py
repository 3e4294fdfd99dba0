"""
Configuration management for nlpmix.
Central location for environment-driven settings and sampling defaults.
"""

import os
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv

from nlpmix.utils import constants

# Load environment variables
load_dotenv()

# Base paths
BASE_DIR = Path(__file__).parent.parent
DATA_DIR = Path(os.getenv("NLPMIX_DATA_DIR", str(BASE_DIR / "data")))

# Persistent marginal-likelihood store; unset disables persistence
DATABASE_URL: Optional[str] = os.getenv("NLPMIX_DATABASE_URL") or None

# Application
APP_NAME = "nlpmix"
DEBUG = os.getenv("NLPMIX_DEBUG", "false").lower() == "true"
LOG_LEVEL = os.getenv("NLPMIX_LOG_LEVEL", "DEBUG" if DEBUG else "WARNING").upper()
THREADS = max(1, int(os.getenv("NLPMIX_THREADS", "1")))

# Sampling defaults
ITERATIONS = int(os.getenv("NLPMIX_ITERATIONS", str(constants.DEFAULT_ITERATIONS)))
BURN_IN = int(os.getenv("NLPMIX_BURN_IN", str(int(ITERATIONS * constants.DEFAULT_BURN_FRACTION))))
SEARCH_SAMPLES = int(os.getenv("NLPMIX_SEARCH_SAMPLES", str(constants.SEARCH_MARGINAL_SAMPLES)))
REPORT_SAMPLES = int(os.getenv("NLPMIX_REPORT_SAMPLES", str(constants.REPORT_MARGINAL_SAMPLES)))
DRAWS_PER_MODEL = int(os.getenv("NLPMIX_DRAWS_PER_MODEL", str(constants.DEFAULT_DRAWS_PER_MODEL)))
MAX_MODELS = int(os.getenv("NLPMIX_MAX_MODELS", str(constants.DEFAULT_MAX_MODELS)))

# Numerical tolerances
INVERSE_TOLERANCE = float(os.getenv("NLPMIX_INVERSE_TOLERANCE", str(constants.INVERSE_TOLERANCE)))
QUADRATURE_ABSTOL = 1e-8

# Residual variance prior IG(a/2, b/2)
A_PHI = float(os.getenv("NLPMIX_A_PHI", str(constants.DEFAULT_A_PHI)))
B_PHI = float(os.getenv("NLPMIX_B_PHI", str(constants.DEFAULT_B_PHI)))
