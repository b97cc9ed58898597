"""Central configuration for the forecasting pipeline.

Market-structure and estimator constants live here as typed module-level
values. Only a handful read environment variables: the output directory
(the one override that changes where results land), debug logging, and the
default worker cap (which never changes results).
"""

from __future__ import annotations

import os
from datetime import time
from pathlib import Path

# ===========================================================================
# Output Location
# ===========================================================================
# ADAPTCAST_OUT: Default directory for run artifacts when neither --out nor
#   the [output] section of the run file names one.
#   Defaults to "./adaptcast-out".
#   Example: export ADAPTCAST_OUT=/data/runs/today
DEFAULT_OUT_DIR: Path = Path(os.getenv("ADAPTCAST_OUT", "adaptcast-out"))


# ===========================================================================
# Debugging and Logging
# ===========================================================================
# ADAPTCAST_DEBUG: If "1", enables detailed debug logging across modules.
#   Defaults to "0" (disabled).
#   Example: export ADAPTCAST_DEBUG=1
DEBUG: bool = os.getenv("ADAPTCAST_DEBUG", "0") == "1"

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"


# ===========================================================================
# Worker Pool
# ===========================================================================
# ADAPTCAST_THREADS: Default cap on worker processes for the fixed grid.
#   Defaults to 1 (in-process). Output ordering never depends on it.
#   Example: export ADAPTCAST_THREADS=4
DEFAULT_THREADS: int = int(os.getenv("ADAPTCAST_THREADS", "1"))

# Forecast origins per pool task; each task refits one model over this many
# consecutive origins.
GRID_CHUNK = 16


# ===========================================================================
# Trading Calendar
# ===========================================================================
# Two sessions per day; each is cut into 5-minute brackets labelled by end time.
SESSIONS: tuple[tuple[str, time, time], ...] = (
    ("morning", time(9, 30), time(11, 30)),
    ("afternoon", time(13, 0), time(15, 0)),
)
BRACKET_SECONDS = 300
BRACKETS_PER_SESSION = 24
# First brackets of a session that are never used as forecast origins.
EXEMPT_BRACKETS = 6
ELIGIBLE_PER_SESSION = BRACKETS_PER_SESSION - EXEMPT_BRACKETS

TICK_COLUMNS = ("ts", "last", "vol", "bp", "bq", "ap", "aq")
TIMESTAMP_FORMAT = "%Y-%m-%d %H:%M:%S"


# ===========================================================================
# Stationarity Scan
# ===========================================================================
ADF_LAG = 2
ADF_ALPHA = 0.05
ADF_MIN_LENGTH = 10
ADF_WINDOWS = (12, 48, 96)


# ===========================================================================
# Fixed Model Grid
# ===========================================================================
UNIVARIATE_GROUPS = tuple(range(0, 7))
MULTIVARIATE_GROUPS = tuple(range(7, 13))
UNIVARIATE_WINDOWS = (12, 24, 48, 96)
MULTIVARIATE_WINDOWS = (48, 96)
UNIVARIATE_ORDERS = (0, 1, 2)
DIFF_ORDERS = (1, 2)
MULTIVARIATE_MA_ORDERS = (0, 1)

# Feature columns, in the order they appear in x_t.
FEATURE_NAMES = ("oib_mean", "ofi_mean", "oib_p", "ofi_p")

# Group -> indices into FEATURE_NAMES.
GROUP_FEATURES: dict[int, tuple[int, ...]] = {
    0: (),
    1: (0,),
    2: (1,),
    3: (0, 1),
    4: (2,),
    5: (3,),
    6: (2, 3),
    7: (0,),
    8: (1,),
    9: (0, 1),
    10: (2,),
    11: (3,),
    12: (2, 3),
}

# Quasi-Newton stopping rule and ridge on the exogenous block.
OPT_GTOL = 1e-6
OPT_MAXITER = 200
FEATURE_RIDGE = 1e-8


# ===========================================================================
# Adaptive Selection
# ===========================================================================
LOSS_WINDOW = 48
FILTER_BAND = 0.05
LAMBDA_GRID = (0.8, 0.85, 0.9, 0.95, 0.99, 1.0)
QUANTILE_GRID = (0.25, 0.5, 0.75)

# Default penalty scales as fractions of l*_t.
TYPE1_FRACS = {"c3": 1 / 10, "c4": 1 / 168}
TYPE23_FRACS = {"c3": 1 / 8, "c4": -1 / 72, "c5": -1 / 2}
REFERENCE_WINDOW = 48


# ===========================================================================
# Evaluation
# ===========================================================================
ANNUALIZATION = 252
TRADES_PER_SESSION = ELIGIBLE_PER_SESSION - 1
