"""
Access to the ``KAN`` settings dictionary.

Library modules read their defaults through ``kan_settings`` so they keep
working when imported outside a configured Django project (notebooks,
scripts). Missing keys fall back to ``DEFAULTS``.
"""

from decouple import RepositoryEnv
from django.conf import settings
from django.core.exceptions import ImproperlyConfigured

from .exceptions import KanIOError

DEFAULTS = {
    'GRID_INTERVALS': 5,
    'SPLINE_ORDER': 3,
    'GRID_RANGE': (-1.0, 1.0),
    'RIDGE_EPS': 1e-8,
    'INIT_NOISE': 0.1,
    'SYMBOLIC_GUARD': 1e-8,
    'USE_BASE': True,
    'LEARNING_RATE': 1e-2,
    'GRID_UPDATE_STEPS': (20, 50, 100),
    'DIVERGENCE_LIMIT': 1e6,
    'ATTRIBUTION_EPS': 1e-9,
    'NODE_THRESHOLD': 1e-2,
    'EDGE_THRESHOLD': 1e-2,
    'INPUT_THRESHOLD': 3.8e-2,
    'PROBE_POINTS': 100,
    'FD_STEP': 1e-3,
    'MODULARITY_THRESHOLD': 1e-2,
    'R2_DIGITS': 3,
    'R2_FLOOR': 0.9,
    'FORMULA_DIGITS': 4,
    'CHECKPOINT_DIR': 'workspace_data/checkpoints',
}


class KanSettings:
    """Attribute-style view over ``settings.KAN`` with defaults."""

    def _user_settings(self):
        try:
            return getattr(settings, 'KAN', {})
        except ImproperlyConfigured:
            return {}

    def __getattr__(self, name):
        if name not in DEFAULTS:
            raise AttributeError(f"Invalid KAN setting: '{name}'")
        return self._user_settings().get(name, DEFAULTS[name])


kan_settings = KanSettings()


def read_config_file(path):
    """Raw ``key=value`` pairs of a per-run config file."""
    try:
        return dict(RepositoryEnv(str(path)).data)
    except OSError as exc:
        raise KanIOError(f'Cannot read config file {path}: {exc}') from exc
