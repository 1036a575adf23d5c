"""
Tree conversion: nest variable groups by repeated symmetry detection.

Starting from single variables, every round tries unions of ``s`` current
groups for ``s = 2, 3, ...`` and stops at the first size where some union is
symmetric. Accepted unions are taken greedily by score without overlap and
become the groups of the next round. The remaining groups hang off the root.

Unions are tested on ``f`` itself. No quotient function is built by pinning
accepted groups along a reference ray: once a group is symmetric, ``f`` sees
it only through one combination, so a union of groups is symmetric in ``f``
exactly when it is symmetric in the quotient.
"""

import itertools
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import graphviz

from kanscope.exceptions import InconclusiveTestError
from .detection import (
    ADDITIVE,
    MULTIPLICATIVE,
    separability_score,
    test_general_separability,
    test_symmetry,
)
from .functions import TestConfig

logger = logging.getLogger(__name__)

LEAF = 'leaf'
SYMMETRY = 'symmetry'
GENERALIZED = 'generalized-separable'
SEPARABLE = 'separable'

# Subset search over unions of current groups stays exhaustive up to this many groups.
EXHAUSTIVE_LIMIT = 8


@dataclass
class ModularityTree:
    variables: Tuple[int, ...]
    kind: str = LEAF
    mode: Optional[str] = None
    children: List['ModularityTree'] = field(default_factory=list)
    score: float = 0.0

    @property
    def is_leaf(self):
        return not self.children

    @property
    def annotation(self):
        if self.mode:
            return f"{self.kind}({'add' if self.mode == ADDITIVE else 'mul'})"
        return self.kind

    def walk(self):
        yield self
        for child in self.children:
            yield from child.walk()

    def groups(self):
        """Variable sets of every internal node."""
        return {frozenset(node.variables) for node in self.walk() if not node.is_leaf}

    def relabel(self, mapping):
        """Same tree with variable ``k`` renamed to ``mapping[k]``."""
        return ModularityTree(
            tuple(sorted(mapping[k] for k in self.variables)), self.kind, self.mode,
            [child.relabel(mapping) for child in self.children], self.score,
        )

    def _label(self, names):
        if self.is_leaf:
            return names[self.variables[0]]
        return f"{' '.join(names[k] for k in self.variables)}: {self.annotation}"

    def to_box(self, names=None, indent=0):
        """Indented text, one group per line."""
        names = names or [f'x{k + 1}' for k in range(max(self.variables) + 1)]
        lines = ['  ' * indent + f'[{self._label(names)}]']
        for child in self.children:
            lines.append(child.to_box(names, indent + 1))
        return '\n'.join(lines)

    def to_dot(self, names=None):
        """``graphviz.Digraph`` with the root on top and variables as leaves."""
        names = names or [f'x{k + 1}' for k in range(max(self.variables) + 1)]
        dot = graphviz.Digraph('modularity', graph_attr={'rankdir': 'TB'})
        counter = itertools.count()

        def add(node):
            node_id = f'n{next(counter)}'
            shape = 'ellipse' if node.is_leaf else 'box'
            dot.node(node_id, node._label(names), shape=shape)
            for child in node.children:
                dot.edge(node_id, add(child))
            return node_id

        add(self)
        return dot


def _try(test, *args):
    try:
        return test(*args)
    except InconclusiveTestError:
        return False, float('inf')


def annotate(f, node, config):
    """Most specific modularity label for ``node`` across its children."""
    groups = [list(child.variables) for child in node.children]
    for mode in (ADDITIVE, MULTIPLICATIVE):
        try:
            score = separability_score(f, groups, mode, config)
        except InconclusiveTestError:
            continue
        if score < config.threshold:
            node.kind, node.mode, node.score = SEPARABLE, mode, score
            return node
    worst = 0.0
    for k, group in enumerate(groups):
        rest = [v for g, other in enumerate(groups) if g != k for v in other]
        passed, score = _try(test_general_separability, f, (group, rest), ADDITIVE, config)
        worst = max(worst, score)
        if not passed:
            break
    else:
        node.kind, node.mode, node.score = GENERALIZED, ADDITIVE, worst
        return node
    node.kind, node.mode = SYMMETRY, None
    return node


def _merge_round(f, nodes, config):
    sizes = range(2, len(nodes)) if len(nodes) <= EXHAUSTIVE_LIMIT else [2]
    for size in sizes:
        accepted = []
        for combo in itertools.combinations(range(len(nodes)), size):
            variables = sorted(v for k in combo for v in nodes[k].variables)
            passed, score = _try(test_symmetry, f, variables, config)
            if passed:
                accepted.append((score, combo))
        if not accepted:
            continue
        used = set()
        merged = []
        for score, combo in sorted(accepted):
            if used.intersection(combo):
                continue
            used.update(combo)
            variables = tuple(sorted(v for k in combo for v in nodes[k].variables))
            group = ModularityTree(variables, children=[nodes[k] for k in combo], score=score)
            merged.append(annotate(f, group, config))
        merged += [node for k, node in enumerate(nodes) if k not in used]
        return sorted(merged, key=lambda node: node.variables[0])
    return None


def tree_convert(f, config=None):
    """Nested modularity tree of ``f``'s variables."""
    config = config or TestConfig()
    nodes = [ModularityTree((k,)) for k in range(f.arity)]
    if len(nodes) == 1:
        return nodes[0]
    while len(nodes) > 2:
        merged = _merge_round(f, nodes, config)
        if merged is None:
            break
        nodes = merged
    root = annotate(f, ModularityTree(tuple(range(f.arity)), children=nodes), config)
    logger.info(f'Modularity tree: {len(root.groups())} groups, root {root.annotation}')
    return root
