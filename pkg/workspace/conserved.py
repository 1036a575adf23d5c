"""
Conserved quantities of vector fields.

A scalar network ``H`` is conserved along the flow ``dz/dt = f(z)`` when
``f(z) . grad H(z) = 0``. The loss is the mean over states of
``(f . grad H / |grad H|)^2``; the gradient comes from the network's
forward-mode input tangents, and parameter gradients from pulling the
tangent adjoints back through the same pass.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from kanscope.conf import kan_settings
from kanscope.exceptions import (
    DimensionMismatchError,
    DivergenceError,
    InconclusiveTestError,
    UnknownIdentifierError,
)
from networks.editing import require_samples
from training.gradients import ParameterSet, backpropagate
from training.trainer import TrainConfig, TrainLog

logger = logging.getLogger(__name__)

# Gradient norms at or below this are treated as vanishing.
NORM_EPS = 1e-8


@dataclass(frozen=True)
class VectorField:
    """Phase-space flow with the gradients of its known invariants."""

    name: str
    names: Tuple[str, ...]
    flow: Callable
    invariant_gradients: Optional[Callable] = None

    @property
    def dim(self):
        return len(self.names)

    def __call__(self, Z):
        return self.flow(np.atleast_2d(np.asarray(Z, dtype=float)))


def _harmonic_1d(Z):
    x, p = Z.T
    return np.column_stack([p, -x])


def _harmonic_1d_invariants(Z):
    x, p = Z.T
    return np.column_stack([x, p])[:, None, :]


def _harmonic_2d(Z):
    x1, x2, p1, p2 = Z.T
    return np.column_stack([p1, p2, -x1, -x2])


def _harmonic_2d_invariants(Z):
    x1, x2, p1, p2 = Z.T
    zero = np.zeros_like(x1)
    energy_1 = np.column_stack([x1, zero, p1, zero])
    energy_2 = np.column_stack([zero, x2, zero, p2])
    angular = np.column_stack([p2, -p1, -x2, x1])
    return np.stack([energy_1, energy_2, angular], axis=1)


VECTOR_FIELDS = {
    'harmonic-1d': VectorField('harmonic-1d', ('x', 'p'), _harmonic_1d, _harmonic_1d_invariants),
    'harmonic-2d': VectorField('harmonic-2d', ('x1', 'x2', 'p1', 'p2'), _harmonic_2d, _harmonic_2d_invariants),
}


def get_vector_field(name):
    if isinstance(name, VectorField):
        return name
    try:
        return VECTOR_FIELDS[name]
    except KeyError:
        raise UnknownIdentifierError(
            f"Unknown vector field '{name}'; choose from {', '.join(sorted(VECTOR_FIELDS))}"
        ) from None


@dataclass
class ConservedLoss:
    loss: float
    used: int
    skipped: int
    grads: List[dict] = field(default_factory=list)


def _output_gradients(model, Z):
    tangents = np.broadcast_to(np.eye(model.n_inputs)[:, None, :], (model.n_inputs,) + Z.shape)
    _, dout, cache = model.propagate(Z, tangents, keep_cache=True)
    return dout, cache


def conserved_quantity_loss(model, vector_field, Z, with_grads=True):
    """
    Loss and parameter gradients for ``model`` as a conserved quantity.

    States where the network gradient vanishes are skipped and counted;
    if every state is skipped the test is inconclusive.
    """
    vector_field = get_vector_field(vector_field)
    Z = require_samples(Z)
    if model.n_outputs != 1:
        raise DimensionMismatchError('A conserved quantity has exactly one output')
    if model.n_inputs != Z.shape[1] or vector_field.dim != Z.shape[1]:
        raise DimensionMismatchError(
            f'States have {Z.shape[1]} columns; the model takes {model.n_inputs} '
            f'and the field {vector_field.dim}'
        )
    flow = vector_field(Z)
    dout, cache = _output_gradients(model, Z)
    gradient = dout[:, :, 0].T
    norm = np.linalg.norm(gradient, axis=1)
    used = norm > NORM_EPS
    if not used.any():
        raise InconclusiveTestError('The network gradient vanishes at every state')
    skipped = int((~used).sum())
    if skipped:
        logger.warning(f'Skipped {skipped} states with a vanishing gradient')
    safe = np.where(used, norm, 1.0)
    projection = np.where(used, np.sum(flow * gradient, axis=1) / safe, 0.0)
    count = int(used.sum())
    result = ConservedLoss(float(np.sum(projection ** 2) / count), count, skipped)
    if with_grads:
        unit = gradient / safe[:, None]
        gradient_bar = (2.0 / count) * (projection / safe)[:, None] * (flow - projection[:, None] * unit)
        gradient_bar[~used] = 0.0
        dout_bar = np.zeros_like(dout)
        dout_bar[:, :, 0] = gradient_bar.T
        out_bar = np.zeros((Z.shape[0], 1))
        result.grads, _, _ = backpropagate(model, cache, out_bar, dout_bar)
    return result


def train_conserved(model, vector_field, Z, config=None):
    """
    Optimize ``model`` in place so it is conserved along ``vector_field``.

    The log's ``train_loss`` column holds the conservation loss. Grids are
    not updated.
    """
    config = config or TrainConfig()
    vector_field = get_vector_field(vector_field)
    Z = require_samples(Z)
    log = TrainLog()
    optimizer = config.build_optimizer()
    params = ParameterSet(model)
    rng = np.random.default_rng(config.seed)
    limit = kan_settings.DIVERGENCE_LIMIT
    logger.info(f'Training a conserved quantity of {vector_field.name} for {config.steps} steps')

    for step in range(1, config.steps + 1):
        if config.batch_size and config.batch_size < len(Z):
            batch = Z[rng.choice(len(Z), size=config.batch_size, replace=False)]
        else:
            batch = Z

        def objective(vector):
            params.set(vector)
            result = conserved_quantity_loss(model, vector_field, batch)
            return result.loss, params.flatten(result.grads)

        vector, _ = optimizer.step(params.get(), objective)
        params.set(vector)
        after = conserved_quantity_loss(model, vector_field, Z, with_grads=False)
        if not np.isfinite(after.loss) or after.loss > limit:
            raise DivergenceError(f'Conservation loss exceeded {limit:g} at step {step}')
        log.record(step, after.loss, float('nan'), 0.0, 0.0)

    model.cache = None
    if log.rows:
        logger.info(f"Conservation loss after training: {log.final['train_loss']:.3e}")
    return log


def gradient_subspace_residual(model, vector_field, Z):
    """
    Largest distance from the unit network gradient to the span of the
    field's known invariant gradients, over states with a usable gradient.
    """
    vector_field = get_vector_field(vector_field)
    if vector_field.invariant_gradients is None:
        raise UnknownIdentifierError(f'{vector_field.name} lists no invariants')
    Z = require_samples(Z)
    gradient = model.input_gradient(Z)[:, 0, :]
    basis = vector_field.invariant_gradients(Z)
    norm = np.linalg.norm(gradient, axis=1)
    worst = 0.0
    for n in np.nonzero(norm > NORM_EPS)[0]:
        unit = gradient[n] / norm[n]
        coefficients, *_ = np.linalg.lstsq(basis[n].T, unit, rcond=None)
        worst = max(worst, float(np.linalg.norm(basis[n].T @ coefficients - unit)))
    return worst
