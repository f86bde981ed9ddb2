"""Runtime defaults, optionally overridden through environment / .env."""

import os

from dotenv import load_dotenv

load_dotenv()

DEFAULT_BACKEND = os.getenv("ONTOLAB_BACKEND", "float")
# Unset means backend-aware: exact zero on the exact backend, 1e-9 on float.
DEFAULT_TOLERANCE = float(os.environ["ONTOLAB_TOLERANCE"]) if os.getenv("ONTOLAB_TOLERANCE") else None
DEFAULT_SEED = int(os.getenv("ONTOLAB_SEED", "0"))
DEFAULT_BUDGET = int(os.getenv("ONTOLAB_BUDGET", "200000"))
DEFAULT_PENALTY_WEIGHT = float(os.getenv("ONTOLAB_PENALTY_WEIGHT", "1000"))
DEFAULT_WORKERS = int(os.getenv("ONTOLAB_WORKERS", "1"))
LOG_LEVEL = os.getenv("ONTOLAB_LOG_LEVEL", "WARNING")
