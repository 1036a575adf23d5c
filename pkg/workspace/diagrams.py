"""Network diagrams as graphviz DOT."""

import logging

import graphviz
import numpy as np

from attribution.scores import compute_attribution
from kanscope.exceptions import KanIOError

logger = logging.getLogger(__name__)

MODE_COLORS = {'spline': 'black', 'symbolic': 'red', 'both': 'purple'}
MIN_PEN, MAX_PEN = 0.3, 4.0
MIN_NODE, MAX_NODE = 0.15, 0.6


def _scaled(values, low, high):
    values = np.asarray(values, dtype=float)
    peak = float(values.max()) if values.size else 0.0
    if peak <= 0:
        return np.full(values.shape, low)
    return low + (high - low) * values / peak


def _node_label(model, level, k):
    if level == 0:
        return model.input_names[k]
    n_add = model.width[level][0]
    return '+' if k < n_add else '×'


def model_to_dot(model, X=None, scores=None, name='kan'):
    """
    ``graphviz.Digraph`` of ``model`` with inputs at the bottom.

    With attribution scores (given, or computed from ``X``) edge pen widths
    follow the edge scores and node sizes the node scores; without them every
    live edge is drawn alike. Masked edges are left out.
    """
    if scores is None and X is not None:
        scores = compute_attribution(model, X)
    dot = graphviz.Digraph(name, graph_attr={'rankdir': 'BT', 'splines': 'line'},
                           node_attr={'shape': 'circle', 'fixedsize': 'true', 'fontsize': '10'})
    for level in range(model.depth + 1):
        count = model.node_count(level)
        sizes = (_scaled(scores.node_scores[level], MIN_NODE, MAX_NODE) if scores is not None
                 else np.full(count, MIN_NODE))
        with dot.subgraph(name=f'level{level}', graph_attr={'rank': 'same'}) as rank:
            for k in range(count):
                rank.node(f'n{level}_{k}', _node_label(model, level, k), width=f'{sizes[k]:.3f}')
    for l, layer in enumerate(model.layers):
        mult = model.mult_layer(l)
        target = np.empty(mult.n_subnodes, dtype=int)
        for node in range(mult.n_nodes):
            target[mult.subnodes_of(node)] = node
        pens = (_scaled(scores.edge_scores[l], MIN_PEN, MAX_PEN) if scores is not None
                else np.full(layer.mask.shape, 1.0))
        modes = layer.modes()
        for i in range(layer.n_in):
            for j in range(layer.n_out):
                if layer.mask[i, j] == 0:
                    continue
                attrs = {'penwidth': f'{pens[i, j]:.3f}', 'color': MODE_COLORS[str(modes[i, j])]}
                if layer.symbolic[i, j] > 0:
                    attrs['label'] = str(layer.fn_names[i, j])
                dot.edge(f'n{l}_{i}', f'n{l + 1}_{target[j]}', **attrs)
    return dot


def save_dot(dot, path):
    try:
        with open(path, 'w') as handle:
            handle.write(dot.source)
    except OSError as exc:
        raise KanIOError(f'Cannot write diagram to {path}: {exc}') from exc
    logger.info(f'Saved diagram to {path}')
