"""Score-driven pruning of edges, hidden nodes and input variables."""

import logging

import numpy as np

from kanscope.conf import kan_settings
from kanscope.exceptions import PruneError
from networks.editing import remove_nodes

logger = logging.getLogger(__name__)


def _reachable_outputs(model):
    """Outputs connected to some input through unmasked edges."""
    alive = np.ones(model.n_inputs, dtype=bool)
    for l, layer in enumerate(model.layers):
        fed = ((layer.mask > 0) & alive[:, None]).any(axis=0)
        mult = model.mult_layer(l)
        alive = np.array([fed[mult.subnodes_of(node)].any() for node in range(mult.n_nodes)], dtype=bool)
    return alive


def _consumed(model, level, alive_next):
    """Nodes of ``level`` with an unmasked edge into a surviving node above."""
    layer = model.layers[level]
    mult = model.mult_layer(level)
    alive_subnodes = np.zeros(mult.n_subnodes, dtype=bool)
    for node in np.flatnonzero(alive_next):
        alive_subnodes[mult.subnodes_of(node)] = True
    return ((layer.mask > 0) & alive_subnodes[None, :]).any(axis=1)


def prune(model, scores, node_threshold=None, edge_threshold=None):
    """
    Mask edges scoring below ``edge_threshold`` and drop hidden nodes
    scoring below ``node_threshold``. Input and output levels keep their size.

    Hidden nodes left without a consumer, because their outgoing edges were
    masked or lead only to dropped nodes, are dropped in the same call.
    """
    node_threshold = kan_settings.NODE_THRESHOLD if node_threshold is None else node_threshold
    edge_threshold = kan_settings.EDGE_THRESHOLD if edge_threshold is None else edge_threshold
    pruned = model.copy()
    masked = 0
    for layer, edge_scores in zip(pruned.layers, scores.edge_scores):
        weak = (edge_scores < edge_threshold) & (layer.mask > 0)
        layer.mask[weak] = 0.0
        masked += int(weak.sum())

    alive = [np.ones(model.node_count(level), dtype=bool) for level in range(model.depth + 1)]
    for level in range(1, model.depth):
        alive[level] = scores.node_scores[level] >= node_threshold
    # dropping a node can leave the nodes below it without a consumer
    for level in range(model.depth - 1, 0, -1):
        alive[level] &= _consumed(pruned, level, alive[level + 1])
    for level in range(1, model.depth):
        if not alive[level].any():
            raise PruneError(f'Thresholds remove every node of level {level}')

    for level in range(1, model.depth):
        if not alive[level].all():
            pruned = remove_nodes(pruned, level, np.flatnonzero(alive[level]))
    if not _reachable_outputs(pruned).any():
        raise PruneError('Thresholds disconnect every output from the inputs')
    removed = sum(int((~keep).sum()) for keep in alive)
    logger.info(f'Pruned {masked} edges and {removed} hidden nodes; width is now {pruned.width}')
    return pruned


def prune_inputs(model, scores, keep=None, threshold=None):
    """
    Keep the named inputs, or those scoring at least ``threshold``.

    Returns ``(model, retained_names)`` with names in their original order.
    """
    if keep is not None:
        unknown = [name for name in keep if name not in model.input_names]
        if unknown:
            raise PruneError(f"Unknown inputs: {', '.join(unknown)}")
        indices = [k for k, name in enumerate(model.input_names) if name in keep]
    else:
        threshold = kan_settings.INPUT_THRESHOLD if threshold is None else threshold
        indices = list(np.flatnonzero(scores.input_scores >= threshold))
    if not indices:
        raise PruneError('Every input scores below the threshold')
    if len(indices) == model.n_inputs:
        return model.copy(), list(model.input_names)
    retained = remove_nodes(model, 0, indices)
    logger.info(f'Retained inputs: {", ".join(retained.input_names)}')
    return retained, list(retained.input_names)
