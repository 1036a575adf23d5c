"""On-disk workspace: models, datasets and checkpoints under one root."""

import logging
from pathlib import Path

from django.conf import settings

from kanscope.exceptions import KanIOError
from versions.store import CheckpointStore

logger = logging.getLogger(__name__)


class Workspace:
    MODELS = 'models'
    DATASETS = 'datasets'
    CHECKPOINTS = 'checkpoints'

    def __init__(self, root=None):
        self.root = Path(root or settings.WORKSPACE_DIR)

    @property
    def models_dir(self):
        return self.root / self.MODELS

    @property
    def datasets_dir(self):
        return self.root / self.DATASETS

    @property
    def checkpoints_dir(self):
        return self.root / self.CHECKPOINTS

    def ensure(self):
        """Create the workspace directories if they are missing."""
        try:
            for directory in (self.models_dir, self.datasets_dir, self.checkpoints_dir):
                directory.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise KanIOError(f'Cannot create workspace at {self.root}: {exc}') from exc
        logger.info(f'Workspace ready at {self.root}')
        return self

    def model_path(self, name):
        return self.models_dir / f'{name}.model.json'

    def dataset_path(self, name):
        return self.datasets_dir / f'{name}.csv'

    def store(self):
        return CheckpointStore(self.checkpoints_dir)
