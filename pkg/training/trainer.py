"""
Training loop.

``train`` runs a fixed number of optimizer steps on a ``Dataset``, adapts the
spline grids to the activation distribution at the configured steps and
records a ``TrainLog`` row after every step.
"""

import csv
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from kanscope.conf import kan_settings
from kanscope.exceptions import DimensionMismatchError, DivergenceError, KanIOError
from networks.editing import update_grid
from .gradients import ParameterSet, evaluate_objective
from .optimizers import OPTIMIZERS, LBFGS

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    steps: int = 100
    optimizer: str = 'adam'
    learning_rate: float = field(default_factory=lambda: kan_settings.LEARNING_RATE)
    lambda_l1: float = 0.0
    lambda_entropy: float = 0.0
    grid_update_steps: Sequence[int] = field(default_factory=lambda: tuple(kan_settings.GRID_UPDATE_STEPS))
    batch_size: Optional[int] = None
    seed: int = 0
    history_size: int = 10

    def __post_init__(self):
        for name in ('lambda_l1', 'lambda_entropy'):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ValueError(f'{name} must be finite and nonnegative, got {value}')
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"Unknown optimizer '{self.optimizer}'")
        if self.steps < 0:
            raise ValueError('Step count must be nonnegative')
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError('Batch size must be positive')
        self.grid_update_steps = tuple(sorted(int(s) for s in self.grid_update_steps))

    def build_optimizer(self):
        if self.optimizer == 'lbfgs':
            return LBFGS(history_size=self.history_size)
        return OPTIMIZERS[self.optimizer](lr=self.learning_rate)


@dataclass
class Dataset:
    train_inputs: np.ndarray
    train_labels: np.ndarray
    test_inputs: np.ndarray
    test_labels: np.ndarray
    input_names: List[str] = field(default_factory=list)
    output_names: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.train_inputs = np.atleast_2d(np.asarray(self.train_inputs, dtype=float))
        self.test_inputs = np.atleast_2d(np.asarray(self.test_inputs, dtype=float))
        self.train_labels = np.asarray(self.train_labels, dtype=float).reshape(len(self.train_inputs), -1)
        self.test_labels = np.asarray(self.test_labels, dtype=float).reshape(len(self.test_inputs), -1)
        n_in = self.train_inputs.shape[1]
        if not self.input_names:
            self.input_names = [f'x{i + 1}' for i in range(n_in)]
        if not self.output_names:
            self.output_names = [f'y{i + 1}' for i in range(self.train_labels.shape[1])]
        if self.test_inputs.shape[1] != n_in or len(self.input_names) != n_in:
            raise DimensionMismatchError('Train and test inputs disagree with the input names')
        if self.test_labels.shape[1] != self.train_labels.shape[1]:
            raise DimensionMismatchError('Train and test labels have different widths')

    @classmethod
    def split(cls, X, Y, test_fraction=0.2, seed=0, input_names=None, output_names=None):
        """Shuffle samples and split them into train and test parts."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = np.asarray(Y, dtype=float).reshape(len(X), -1)
        order = np.random.default_rng(seed).permutation(len(X))
        n_test = int(round(test_fraction * len(X)))
        test, train = order[:n_test], order[n_test:]
        return cls(X[train], Y[train], X[test], Y[test],
                   list(input_names or []), list(output_names or []))

    def check_model(self, model):
        if model.n_inputs != self.train_inputs.shape[1]:
            raise DimensionMismatchError(
                f'Model has {model.n_inputs} inputs, dataset has {self.train_inputs.shape[1]}'
            )
        if model.n_outputs != self.train_labels.shape[1]:
            raise DimensionMismatchError(
                f'Model has {model.n_outputs} outputs, dataset has {self.train_labels.shape[1]}'
            )

    def select_inputs(self, names):
        """Dataset restricted to the named input columns, in the given order."""
        index = [self.input_names.index(name) for name in names]
        return Dataset(self.train_inputs[:, index], self.train_labels,
                       self.test_inputs[:, index], self.test_labels,
                       list(names), list(self.output_names))


@dataclass
class TrainLog:
    COLUMNS = ('step', 'train_loss', 'test_loss', 'l1', 'entropy')

    rows: list = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def record(self, step, train_loss, test_loss, l1, entropy):
        self.rows.append((step, train_loss, test_loss, l1, entropy))

    def column(self, name):
        return [row[self.COLUMNS.index(name)] for row in self.rows]

    @property
    def final(self):
        return dict(zip(self.COLUMNS, self.rows[-1])) if self.rows else {}

    def to_csv(self, path):
        try:
            with open(path, 'w', newline='') as handle:
                writer = csv.writer(handle)
                writer.writerow(self.COLUMNS)
                for step, *values in self.rows:
                    writer.writerow([step] + [repr(float(v)) for v in values])
        except OSError as exc:
            raise KanIOError(f'Cannot write training log to {path}: {exc}') from exc


def has_symbolic_edges(model):
    return any(np.any((layer.symbolic > 0) & (layer.mask > 0)) for layer in model.layers)


def _rmse(model, X, Y):
    if len(X) == 0:
        return float('nan')
    return float(np.sqrt(np.mean((model.forward(X) - Y) ** 2)))


def train(model, dataset, config=None):
    """
    Optimize ``model`` in place on ``dataset`` and return the per-step log.

    Grids are re-fit to the training activations before the steps listed in
    ``config.grid_update_steps`` unless some edge is symbolic.
    """
    config = config or TrainConfig()
    dataset.check_model(model)
    log = TrainLog()
    if config.steps == 0:
        return log
    rng = np.random.default_rng(config.seed)
    optimizer = config.build_optimizer()
    params = ParameterSet(model)
    grid_steps = set() if has_symbolic_edges(model) else set(config.grid_update_steps)
    X, Y = dataset.train_inputs, dataset.train_labels
    limit = kan_settings.DIVERGENCE_LIMIT
    logger.info(f'Training {config.optimizer} for {config.steps} steps on {len(X)} samples '
                f'({params.size} parameters)')

    for step in range(1, config.steps + 1):
        if step - 1 in grid_steps and step > 1:
            updated = update_grid(model, X)
            model.layers = updated.layers
            params = ParameterSet(model)
            optimizer.reset()
            logger.info(f'Grid updated before step {step}')
        if config.batch_size and config.batch_size < len(X):
            batch = rng.choice(len(X), size=config.batch_size, replace=False)
            Xb, Yb = X[batch], Y[batch]
        else:
            Xb, Yb = X, Y

        def objective(vector):
            params.set(vector)
            result = evaluate_objective(model, Xb, Yb, config.lambda_l1, config.lambda_entropy)
            return result.loss, params.flatten(result.grads)

        vector, loss = optimizer.step(params.get(), objective)
        params.set(vector)
        after = evaluate_objective(model, X, Y, config.lambda_l1, config.lambda_entropy,
                                   with_grads=False)
        if not np.isfinite(after.loss) or after.loss > limit or loss > limit:
            logger.error(f'Training diverged at step {step} (loss {after.loss:.3e})')
            raise DivergenceError(f'Loss exceeded {limit:g} at step {step}')
        log.record(step, after.rmse, _rmse(model, dataset.test_inputs, dataset.test_labels),
                   after.l1, after.entropy)

    model.cache = None
    final = log.final
    logger.info(f"Training finished: train RMSE {final['train_loss']:.3e}, "
                f"test RMSE {final['test_loss']:.3e}")
    return log
