"""
Django settings for the kanscope toolkit.

kanscope has no web surface; Django provides the command runner, the settings
layer and the test runner. Every numeric default lives in the ``KAN``
dictionary below and can be overridden from the environment or a ``.env`` file.
"""

from pathlib import Path
from decouple import config

BASE_DIR = Path(__file__).resolve().parent.parent


SECRET_KEY = config('SECRET_KEY', default='kanscope-local-only-key')

DEBUG = config('DEBUG', default=False, cast=bool)

ALLOWED_HOSTS = []


INSTALLED_APPS = [
    'rest_framework',
    'splines',
    'networks',
    'training',
    'attribution',
    'kanpiler',
    'modularity',
    'symbolic',
    'versions',
    'workspace',
]

# No models are persisted; checkpoints and datasets live on disk.
DATABASES = {}

USE_TZ = True

TIME_ZONE = 'UTC'

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

WORKSPACE_DIR = Path(config('KAN_WORKSPACE_DIR', default=str(BASE_DIR / 'workspace_data')))

LOG_DIR = Path(config('KAN_LOG_DIR', default=str(BASE_DIR / 'logs')))

KAN = {
    # splines
    'GRID_INTERVALS': config('KAN_GRID_INTERVALS', default=5, cast=int),
    'SPLINE_ORDER': config('KAN_SPLINE_ORDER', default=3, cast=int),
    'GRID_RANGE': (
        config('KAN_GRID_MIN', default=-1.0, cast=float),
        config('KAN_GRID_MAX', default=1.0, cast=float),
    ),
    'RIDGE_EPS': config('KAN_RIDGE_EPS', default=1e-8, cast=float),
    # networks
    'INIT_NOISE': config('KAN_INIT_NOISE', default=0.1, cast=float),
    'SYMBOLIC_GUARD': config('KAN_SYMBOLIC_GUARD', default=1e-8, cast=float),
    'USE_BASE': config('KAN_USE_BASE', default=True, cast=bool),
    # training
    'LEARNING_RATE': config('KAN_LEARNING_RATE', default=1e-2, cast=float),
    'GRID_UPDATE_STEPS': (20, 50, 100),
    'DIVERGENCE_LIMIT': config('KAN_DIVERGENCE_LIMIT', default=1e6, cast=float),
    # attribution
    'ATTRIBUTION_EPS': config('KAN_ATTRIBUTION_EPS', default=1e-9, cast=float),
    'NODE_THRESHOLD': config('KAN_NODE_THRESHOLD', default=1e-2, cast=float),
    'EDGE_THRESHOLD': config('KAN_EDGE_THRESHOLD', default=1e-2, cast=float),
    'INPUT_THRESHOLD': config('KAN_INPUT_THRESHOLD', default=3.8e-2, cast=float),
    # modularity
    'PROBE_POINTS': config('KAN_PROBE_POINTS', default=100, cast=int),
    'FD_STEP': config('KAN_FD_STEP', default=1e-3, cast=float),
    'MODULARITY_THRESHOLD': config('KAN_MODULARITY_THRESHOLD', default=1e-2, cast=float),
    # symbolic
    'R2_DIGITS': config('KAN_R2_DIGITS', default=3, cast=int),
    'R2_FLOOR': config('KAN_R2_FLOOR', default=0.9, cast=float),
    'FORMULA_DIGITS': config('KAN_FORMULA_DIGITS', default=4, cast=int),
    # versions
    'CHECKPOINT_DIR': config('KAN_CHECKPOINT_DIR', default=str(WORKSPACE_DIR / 'checkpoints')),
}

LOG_FILE = config('KAN_LOG_FILE', default='')

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'standard': {
            'format': '%(asctime)s - %(levelname)s - %(name)s - %(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'standard',
        },
    },
    'root': {
        'handlers': ['console'],
        'level': config('KAN_LOG_LEVEL', default='WARNING'),
    },
}

if LOG_FILE:
    LOG_DIR.mkdir(parents=True, exist_ok=True)
    LOGGING['handlers']['file'] = {
        'class': 'logging.FileHandler',
        'filename': str(LOG_DIR / LOG_FILE),
        'formatter': 'standard',
    }
    LOGGING['root']['handlers'].append('file')
