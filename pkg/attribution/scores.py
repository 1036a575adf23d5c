"""
Output-to-input attribution.

Every output node scores 1. Walking down the network, an edge into subnode
``s`` scores ``A[s] * E / N[s]`` where ``E`` is the standard deviation of the
edge's activation over the batch and ``N[s]`` that of the subnode sum; a
subnode of a multiplication node inherits the node's score. A node scores
the sum of its outgoing edge scores.
"""

import csv
import logging
from dataclasses import dataclass
from typing import List

import numpy as np

from kanscope.conf import kan_settings
from kanscope.exceptions import KanIOError, MissingCacheError
from networks.editing import require_samples

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class AttributionScores:
    node_scores: List[np.ndarray]
    edge_scores: List[np.ndarray]
    edge_std: List[np.ndarray]
    node_std: List[np.ndarray]
    subnode_std: List[np.ndarray]
    input_names: List[str]

    @property
    def input_scores(self):
        return self.node_scores[0]

    def ranked_inputs(self):
        """``(name, score)`` pairs, most relevant first."""
        order = np.argsort(-self.input_scores, kind='stable')
        return [(self.input_names[k], float(self.input_scores[k])) for k in order]


def compute_attribution(model, X=None, eps=None):
    """Scores from a forward pass over ``X`` (or the cached batch)."""
    if X is not None:
        _, _, cache = model.propagate(require_samples(X))
    elif model.cache is not None:
        cache = model.cache
    else:
        raise MissingCacheError('Attribution needs a cached forward pass or samples')
    require_samples(cache.inputs)
    eps = kan_settings.ATTRIBUTION_EPS if eps is None else eps

    depth = model.depth
    node_std = [cache.node_values(level).std(axis=0) for level in range(depth + 1)]
    edge_std = [record.y.std(axis=0) for record in cache.records]
    subnode_std = [record.z.std(axis=0) for record in cache.records]

    node_scores = [None] * (depth + 1)
    edge_scores = [None] * depth
    node_scores[depth] = np.ones(model.n_outputs)
    for l in reversed(range(depth)):
        mult = model.mult_layer(l)
        inherited = np.zeros(mult.n_subnodes)
        for node in range(mult.n_nodes):
            inherited[mult.subnodes_of(node)] = node_scores[l + 1][node]
        N = subnode_std[l]
        ratio = np.where(N >= eps, inherited / np.where(N >= eps, N, 1.0), 0.0)
        scores = edge_std[l] * ratio[None, :]
        scores[model.layers[l].mask == 0] = 0.0
        edge_scores[l] = scores
        node_scores[l] = scores.sum(axis=1)
    logger.info(f'Attribution over {cache.batch_size} samples; input scores {np.round(node_scores[0], 4)}')
    return AttributionScores(node_scores, edge_scores, edge_std, node_std, subnode_std,
                             list(model.input_names))


def scores_to_csv(scores, path):
    """Write node and edge scores as ``kind,layer,index,target,value`` rows."""
    try:
        with open(path, 'w', newline='') as handle:
            writer = csv.writer(handle)
            writer.writerow(['kind', 'layer', 'index', 'target', 'value'])
            for level, values in enumerate(scores.node_scores):
                for i, value in enumerate(values):
                    writer.writerow(['node', level, i, '', repr(float(value))])
            for l, values in enumerate(scores.edge_scores):
                for (i, j), value in np.ndenumerate(values):
                    writer.writerow(['edge', l, i, j, repr(float(value))])
    except OSError as exc:
        raise KanIOError(f'Cannot write attribution scores to {path}: {exc}') from exc
