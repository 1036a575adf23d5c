"""
Reverse-mode differentiation of a network loss.

The forward pass caches every layer's activations (``LayerRecord``); the
reverse pass walks the layers backwards, pulling adjoints through each
multiplication layer (product rule over the cached subnode values) and then
through the KAN layer edges. When the forward pass carried input tangents,
tangent adjoints are pulled back too, which is what losses on input
gradients need.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from kanscope.exceptions import MissingCacheError, NonFiniteActivationError

logger = logging.getLogger(__name__)

PARAMETERS = ('coef', 'scale_base', 'scale_sp')


def backpropagate(model, cache, out_bar, dout_bar=None, edge_bar=None):
    """
    Pull output adjoints back through the cached forward pass.

    ``edge_bar`` optionally adds per-layer adjoints on the edge outputs
    ``(N, n_in, n_out)``, as produced by the regularization terms.
    Returns ``(grads, input_bar, input_tangent_bar)``.
    """
    grads = [None] * model.depth
    nbar, dnbar = out_bar, dout_bar
    for l in reversed(range(model.depth)):
        record = cache.records[l]
        layer = model.layers[l]
        zbar, dzbar = model.mult_layer(l).backward(record.z, record.dz, nbar, dnbar)
        ybar = np.broadcast_to(zbar[:, None, :], record.y.shape)
        if edge_bar is not None:
            ybar = ybar + edge_bar[l]
        dybar = None
        if dzbar is not None:
            dybar = np.broadcast_to(dzbar[:, :, None, :], record.dy.shape)
        nbar, dnbar, grads[l] = layer.backward(record, ybar, dybar, model.use_base)
    return grads, nbar, dnbar


def _edge_magnitudes(record):
    return np.abs(record.y).mean(axis=0)


def regularization(model, cache=None):
    """L1 of mean absolute edge activations and the per-layer entropy of that mass."""
    cache = cache or model.cache
    if cache is None:
        raise MissingCacheError('Regularization needs a cached forward pass')
    l1 = 0.0
    entropy = 0.0
    for record in cache.records:
        magnitude = _edge_magnitudes(record)
        total = magnitude.sum()
        l1 += total
        if total > 0:
            p = magnitude[magnitude > 0] / total
            entropy -= float((p * np.log(p)).sum())
    return float(l1), float(entropy)


def regularization_adjoints(cache, lambda_l1, lambda_entropy):
    """Adjoints of ``lambda_l1 * l1 + lambda_entropy * entropy`` on every edge output."""
    adjoints = []
    for record in cache.records:
        magnitude = _edge_magnitudes(record)
        total = magnitude.sum()
        weight = np.full(magnitude.shape, float(lambda_l1))
        if total > 0 and lambda_entropy:
            live = magnitude > 0
            p = np.where(live, magnitude / total, 1.0)
            layer_entropy = -float((p[live] * np.log(p[live])).sum())
            weight = weight + lambda_entropy * np.where(live, -(np.log(p) + layer_entropy) / total, 0.0)
        n = record.y.shape[0]
        adjoints.append(weight[None] * np.sign(record.y) / n)
    return adjoints


@dataclass
class Objective:
    """Loss terms and gradients of one evaluation."""

    loss: float
    mse: float
    l1: float
    entropy: float
    grads: list = field(default_factory=list)

    @property
    def rmse(self):
        return float(np.sqrt(self.mse))


def evaluate_objective(model, X, Y, lambda_l1=0.0, lambda_entropy=0.0, with_grads=True):
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    outputs, _, cache = model.propagate(X, keep_cache=True)
    if Y.shape != outputs.shape:
        Y = Y.reshape(outputs.shape)
    residual = outputs - Y
    mse = float(np.mean(residual ** 2))
    l1, entropy = regularization(model, cache)
    loss = mse + lambda_l1 * l1 + lambda_entropy * entropy
    if not np.isfinite(loss):
        raise NonFiniteActivationError(model.depth - 1, 'Loss is not finite')
    objective = Objective(loss, mse, l1, entropy)
    if with_grads:
        edge_bar = None
        if lambda_l1 or lambda_entropy:
            edge_bar = regularization_adjoints(cache, lambda_l1, lambda_entropy)
        objective.grads, _, _ = backpropagate(model, cache, 2.0 * residual / residual.size, None, edge_bar)
    return objective


def loss_and_grad(model, X, Y, config=None):
    """
    Training loss and its gradient with respect to every layer parameter.

    The loss is mean squared error plus ``lambda_l1 * l1 +
    lambda_entropy * entropy``; ``grads`` holds one dict per layer with
    arrays shaped like ``coef``, ``scale_base`` and ``scale_sp``.
    """
    lambda_l1 = getattr(config, 'lambda_l1', 0.0)
    lambda_entropy = getattr(config, 'lambda_entropy', 0.0)
    objective = evaluate_objective(model, X, Y, lambda_l1, lambda_entropy)
    return objective.loss, objective.grads


class ParameterSet:
    """
    Flat view of the trainable parameters of a network.

    Only unmasked, unfrozen edges are trainable; their coefficients and
    scales are packed layer by layer into one vector.
    """

    def __init__(self, model):
        self.model = model
        self.selections = [(layer.mask > 0) & ~layer.frozen for layer in model.layers]

    @property
    def size(self):
        return sum(int(sel.sum()) * (layer.num_basis + 2)
                   for sel, layer in zip(self.selections, self.model.layers))

    def _pack(self, arrays):
        parts = []
        for sel, values in zip(self.selections, arrays):
            parts.append(values['coef'][sel].ravel())
            parts.append(values['scale_base'][sel])
            parts.append(values['scale_sp'][sel])
        return np.concatenate(parts) if parts else np.zeros(0)

    def get(self):
        return self._pack([{name: getattr(layer, name) for name in PARAMETERS}
                           for layer in self.model.layers]).copy()

    def flatten(self, grads):
        return self._pack(grads)

    def set(self, vector):
        vector = np.asarray(vector, dtype=float)
        offset = 0
        for sel, layer in zip(self.selections, self.model.layers):
            count = int(sel.sum())
            size = count * layer.num_basis
            layer.coef[sel] = vector[offset:offset + size].reshape(count, layer.num_basis)
            offset += size
            layer.scale_base[sel] = vector[offset:offset + count]
            offset += count
            layer.scale_sp[sel] = vector[offset:offset + count]
            offset += count
        self.model.cache = None
