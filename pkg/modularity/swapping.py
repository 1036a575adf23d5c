"""Anatomical modularity: neuron positions, connection cost and swapping."""

import logging

import numpy as np

from attribution.scores import compute_attribution
from kanscope.exceptions import WidthSpecError

logger = logging.getLogger(__name__)

# Swaps must lower the cost by more than this.
SWAP_TOLERANCE = 1e-12


def _subnode_targets(model, l):
    """Node at level ``l + 1`` fed by each subnode of layer ``l``."""
    mult = model.mult_layer(l)
    targets = np.empty(mult.n_subnodes, dtype=int)
    for node in range(mult.n_nodes):
        targets[mult.subnodes_of(node)] = node
    return targets


def _coordinates(order):
    """Coordinate in [0, 1] of every node, given the node at each position."""
    order = np.asarray(order)
    coordinates = np.empty(len(order))
    coordinates[order] = (np.arange(len(order)) + 0.5) / len(order)
    return coordinates


def identity_orders(model):
    return [np.arange(model.node_count(level)) for level in range(model.depth + 1)]


def connection_cost(model, scores, orders=None):
    """Sum over edges of score times the distance between its end nodes."""
    orders = orders or identity_orders(model)
    total = 0.0
    for l, edge_scores in enumerate(scores.edge_scores):
        source = _coordinates(orders[l])
        target = _coordinates(orders[l + 1])[_subnode_targets(model, l)]
        total += float(np.sum(edge_scores * np.abs(source[:, None] - target[None, :])))
    return total


def block_crossing_share(model, scores, n_blocks=None):
    """
    Share of edge score mass joining different position blocks.

    Every level is cut into ``n_blocks`` contiguous blocks (default: one per
    output); a modular, well-sorted network keeps most mass inside blocks.
    """
    n_blocks = n_blocks or model.n_outputs
    crossing = total = 0.0
    for l, edge_scores in enumerate(scores.edge_scores):
        source = np.floor(_coordinates(np.arange(model.node_count(l))) * n_blocks)
        target = np.floor(_coordinates(np.arange(model.node_count(l + 1))) * n_blocks)
        target = target[_subnode_targets(model, l)]
        different = source[:, None] != target[None, :]
        crossing += float(edge_scores[different].sum())
        total += float(edge_scores.sum())
    return crossing / total if total > 0 else 0.0


def _swappable(model, level):
    """Pairs of nodes at ``level`` that may trade places."""
    n_add, _ = model.width[level]
    arities = model.arities[level]
    kinds = ['add'] * n_add + [f'mult{a}' for a in arities]
    return [(a, b) for a in range(len(kinds)) for b in range(a + 1, len(kinds)) if kinds[a] == kinds[b]]


def apply_orders(model, orders):
    """Copy of ``model`` with every hidden level rearranged by ``orders``."""
    swapped = model.copy()
    for level in range(1, model.depth):
        order = np.asarray(orders[level])
        if np.array_equal(order, np.arange(len(order))):
            continue
        mult = model.mult_layer(level - 1)
        columns = np.concatenate([mult.subnodes_of(node) for node in order])
        swapped.layers[level - 1] = swapped.layers[level - 1].select(cols=columns)
        swapped.layers[level] = swapped.layers[level].select(rows=order)
    swapped.validate()
    return swapped


def auto_swap(model, X=None, scores=None, max_sweeps=100):
    """
    Shorten connections by swapping hidden neurons within their layer.

    Greedy pairwise swaps are applied while one lowers the connection cost.
    Returns ``(model, orders, cost_trace)``; ``orders[level][k]`` is the old
    index of the node now at position ``k``.
    """
    if model.depth < 2:
        raise WidthSpecError('Swapping needs at least one hidden layer')
    if scores is None:
        scores = compute_attribution(model, X)
    orders = identity_orders(model)
    cost = connection_cost(model, scores, orders)
    trace = [cost]
    for _ in range(max_sweeps):
        improved = False
        for level in range(1, model.depth):
            for a, b in _swappable(model, level):
                trial = [order.copy() for order in orders]
                trial[level][[a, b]] = trial[level][[b, a]]
                trial_cost = connection_cost(model, scores, trial)
                if trial_cost < cost - SWAP_TOLERANCE:
                    orders, cost = trial, trial_cost
                    trace.append(cost)
                    improved = True
        if not improved:
            break
    logger.info(f'Swapping lowered connection cost from {trace[0]:.4g} to {cost:.4g}')
    return apply_orders(model, orders), orders, trace
