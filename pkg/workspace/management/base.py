"""
Shared plumbing for the toolkit's management commands.

Every command accepts the global options below. A command that changes the
network commits the result to the checkpoint store (``--versions``, by
default the workspace's checkpoint directory) and, when ``--model`` names a
file, writes the result there too. Without ``--model`` the active checkpoint
is the input network.
"""

import logging
from pathlib import Path

from django.core.management.base import BaseCommand, CommandError
from rest_framework import serializers

from kanscope.exceptions import KanError, WidthSpecError
from modularity.serializers import load_test_config
from networks.serializers import load_model, save_model
from training.serializers import load_train_config
from versions.store import CheckpointStore
from workspace.datasets import load_dataset
from workspace.layout import Workspace

logger = logging.getLogger(__name__)

USAGE_EXIT_CODE = 2


def parse_names(text):
    return [name.strip() for name in text.split(',') if name.strip()] if text else []


def parse_width(text):
    """``2,3:2,1`` means levels 2, (3 add, 2 mult) and 1."""
    width = []
    for entry in text.split(','):
        try:
            if ':' in entry:
                n_add, n_mult = entry.split(':')
                width.append((int(n_add), int(n_mult)))
            else:
                width.append(int(entry))
        except ValueError:
            raise WidthSpecError(f"Invalid width entry '{entry}'") from None
    return width


def parse_edge(text):
    try:
        l, i, j = (int(part) for part in text.split(','))
    except ValueError:
        raise CommandError(f"Edge must be written 'layer,from,to', got '{text}'",
                           returncode=USAGE_EXIT_CODE) from None
    return l, i, j


def parse_interval(text):
    try:
        lo, hi = (float(part) for part in text.split(','))
    except ValueError:
        raise CommandError(f"Interval must be written 'lo,hi', got '{text}'",
                           returncode=USAGE_EXIT_CODE) from None
    return lo, hi


class KanCommand(BaseCommand):
    """Base class for commands working on a network and its checkpoints."""

    def add_arguments(self, parser):
        parser.add_argument('--workspace', help='Workspace root (default: WORKSPACE_DIR setting)')
        parser.add_argument('--model', help='Network file to read and update')
        parser.add_argument('--data', help='Dataset CSV file')
        parser.add_argument('--outputs', type=int, default=1,
                            help='Number of output columns in the dataset (default: 1)')
        parser.add_argument('--seed', type=int, default=0, help='Random seed (default: 0)')
        parser.add_argument('--config', help='key=value file with run settings')
        parser.add_argument('--versions', help='Checkpoint directory (default: the workspace one)')
        self.add_command_arguments(parser)

    def add_command_arguments(self, parser):
        pass

    def handle(self, *args, **options):
        self.options = options
        self.workspace = Workspace(options['workspace'])
        try:
            return self.run(*args, **options)
        except KanError as exc:
            raise CommandError(str(exc), returncode=exc.exit_code) from exc
        except serializers.ValidationError as exc:
            raise CommandError(f'Invalid input: {exc.detail}', returncode=USAGE_EXIT_CODE) from exc
        except ValueError as exc:
            raise CommandError(str(exc), returncode=USAGE_EXIT_CODE) from exc

    def run(self, *args, **options):
        raise NotImplementedError('subclasses of KanCommand must provide a run() method')

    # inputs

    @property
    def store(self):
        directory = self.options['versions']
        return CheckpointStore(directory) if directory else self.workspace.store()

    def load_model(self):
        path = self.options['model']
        if path and Path(path).exists():
            return load_model(path)
        active = self.store.active
        if active is None:
            raise CommandError('No network: pass --model or commit one with init or compile',
                               returncode=USAGE_EXIT_CODE)
        return self.store.load(active)

    def load_dataset(self, required=True):
        path = self.options['data']
        if not path:
            if required:
                raise CommandError('This command needs --data', returncode=USAGE_EXIT_CODE)
            return None
        return load_dataset(path, self.options['outputs'], seed=self.options['seed'])

    def probe_inputs(self):
        """Training inputs of ``--data``, or ``None`` when no dataset was given."""
        dataset = self.load_dataset(required=False)
        return None if dataset is None else dataset.train_inputs

    def train_config(self, **overrides):
        return load_train_config(self.options['config'], seed=self.options['seed'], **overrides)

    def test_config(self, **overrides):
        return load_test_config(self.options['config'], seed=self.options['seed'], **overrides)

    # outputs

    def record(self, model, op_label, source=None):
        """
        Commit ``model`` and write it to ``--model`` if given.

        With an empty store, ``source`` is committed first as ``init``.
        """
        store = self.store
        if source is not None and store.active is None:
            store.commit(source, 'init')
        version = store.commit(model, op_label)
        if self.options['model']:
            save_model(model, self.options['model'])
        self.stdout.write(self.style.SUCCESS(f'✓ Committed version {version} ({op_label})'))
        return version
