"""
Runtime settings for the ipwqr project.

Every value can be overridden through the environment or a .env file.
"""

import os
from pathlib import Path
from dotenv import load_dotenv

load_dotenv()

BASE_DIR = Path(__file__).resolve().parent.parent

DEBUG = os.getenv('IPWQR_DEBUG', 'False').lower() == 'true'

# Worker count for simulation replications and tuning grids
THREADS = int(os.getenv('IPWQR_THREADS', '1'))

# Estimation defaults
WEIGHT_CAP = float(os.getenv('IPWQR_WEIGHT_CAP', '25'))
SCREEN_ALPHA = float(os.getenv('IPWQR_SCREEN_ALPHA', '0.05'))
BANDWIDTH_RULE = os.getenv('IPWQR_BANDWIDTH_RULE', 'pooled')
LLA_TOL = float(os.getenv('IPWQR_LLA_TOL', '1e-7'))
LLA_MAX_ITER = int(os.getenv('IPWQR_LLA_MAX_ITER', '50'))
N_LAMBDA = int(os.getenv('IPWQR_N_LAMBDA', '30'))
SPLINE_DEGREE = 3

# Tokens read as missing cells (the empty field always is)
MISSING_TOKENS = os.getenv('IPWQR_MISSING_TOKENS', 'NA').split(',')
MISSING_TOKENS = [t.strip() for t in MISSING_TOKENS if t.strip()]

LOG_LEVEL = os.getenv('IPWQR_LOG_LEVEL', 'INFO').upper()

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'standard': {
            'format': '%(asctime)s %(levelname)s %(name)s: %(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'stream': 'ext://sys.stderr',
            'formatter': 'standard',
        },
    },
    'loggers': {
        'estimator': {'handlers': ['console'], 'level': LOG_LEVEL, 'propagate': False},
        'ipwqr': {'handlers': ['console'], 'level': LOG_LEVEL, 'propagate': False},
    },
}
