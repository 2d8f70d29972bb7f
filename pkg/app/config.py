import os
from enum import Enum

VERSION = "1.0.0"

class DiffScheme(Enum):
    SPECTRAL = "spectral"
    FD4 = "fd4" # periodic fourth-order stencil, cheaper but only O(h^4) accurate

# Set the default differentiation scheme here (or through the environment)
ACTIVE_DIFF_SCHEME = DiffScheme(os.environ.get("ELASTIC_FLOW_DIFF_SCHEME", DiffScheme.SPECTRAL.value))

# Regularity floor for |γ'| and tolerance on tangential pollution after projection
EPS_REG = 1e-12
TOL_PERP = 1e-10

MIN_SAMPLES = 16

# Worker pool cap for sweeps
MAX_THREADS = int(os.environ.get("ELASTICA_THREADS", os.cpu_count() or 1))

LOGGER_NAME = "elastic_flow"
LOG_FILE = "elastic_flow.log"
