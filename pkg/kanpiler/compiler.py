"""
Formula to network compiler.

A canonical expression tree is laid out level by level:

* a variable is an input node;
* a unary function or a library power of ``alpha * X + beta`` is one
  symbolic edge leaving the node of ``X``;
* a sum is an addition node whose incoming edges are its terms, with the
  constant term folded into an edge offset;
* a product is a multiplication node; each factor is one subnode, and a sum
  factor feeds its terms straight into that subnode.

Edges may only connect adjacent levels, so sources living further down are
carried up by chains of identity edges. Two different edges from the same
source into one subnode are separated by routing the second through its own
identity node. An output that is not an addition node gets one more identity
layer.
"""

import logging
from collections import defaultdict
from dataclasses import dataclass, field, replace

from kanscope.conf import kan_settings
from kanscope.exceptions import (
    UnboundVariableError,
    UnsupportedFeatureError,
    WidthSpecError,
)
from networks.layers import KanLayer
from networks.models import MultKanModel
from .expressions import (
    CALL,
    CONST,
    POWER,
    PRODUCT,
    SUM,
    VAR,
    ExprTree,
    affine_parts,
    call,
    canonicalize,
    const,
    power,
    product_of,
    variables,
)
from .parser import parse_formulas

logger = logging.getLogger(__name__)

POWER_PRIMITIVES = {
    1.0: 'x',
    2.0: 'x^2',
    3.0: 'x^3',
    4.0: 'x^4',
    0.5: 'sqrt',
    -1.0: '1/x',
    -2.0: '1/x^2',
    -0.5: 'x^-0.5',
}


@dataclass(eq=False)
class PlanNode:
    level: int
    kind: str
    subnodes: list = field(default_factory=list)
    label: str = ''

    @property
    def arity(self):
        return len(self.subnodes)


@dataclass(frozen=True, eq=False)
class EdgeTerm:
    """``c * f(a * source + b) + d`` on one edge."""

    source: PlanNode
    fn: str
    a: float = 1.0
    b: float = 0.0
    c: float = 1.0
    d: float = 0.0

    def scaled(self, factor):
        return replace(self, c=self.c * factor, d=self.d * factor)

    def normalized(self):
        if self.fn != 'x':
            return self
        return EdgeTerm(self.source, 'x', 1.0, 0.0, self.c * self.a, self.c * self.b + self.d)


def _group_by_source(terms):
    groups = {}
    for term in terms:
        groups.setdefault(id(term.source), []).append(term)
    merged = []
    for group in groups.values():
        identities = [t.normalized() for t in group if t.fn == 'x']
        others = [t for t in group if t.fn != 'x']
        if identities:
            total = EdgeTerm(identities[0].source, 'x', 1.0, 0.0,
                             sum(t.c for t in identities), sum(t.d for t in identities))
            others = [total] + others
        merged.append(others)
    return merged


def _power_exponent(tree):
    exponent = tree.children[1]
    if exponent.kind != CONST:
        raise UnsupportedFeatureError('Variable exponents cannot be compiled into a network')
    return exponent.value


class CompilePlan:
    """Layered layout of one or more expression trees over shared inputs."""

    def __init__(self, input_names):
        if not input_names:
            raise WidthSpecError('A compiled network needs at least one input')
        self.input_names = list(input_names)
        self.inputs = [PlanNode(0, 'input', label=name) for name in self.input_names]
        self.levels = defaultdict(list)
        self.realized = {}
        self.routes = {}
        self.outputs = []

    # node creation

    def _emit(self, level, kind, subnodes):
        node = PlanNode(level, kind, subnodes)
        self.levels[level].append(node)
        return node

    def route(self, node, level):
        """The node carrying ``node``'s value at ``level``."""
        if node.level == level:
            return node
        key = (id(node), level)
        if key not in self.routes:
            below = self.route(node, level - 1)
            self.routes[key] = self._emit(level, 'add', [[EdgeTerm(below, 'x')]])
        return self.routes[key]

    def build(self, kind, subnodes):
        """Create a node from ``(terms, offset)`` subnodes at the lowest level it fits."""
        prepared = [(_group_by_source(terms), offset) for terms, offset in subnodes]
        level = max(
            group[0].source.level + (1 if len(group) == 1 else 2)
            for groups, _ in prepared for group in groups
        )
        wired = []
        for groups, offset in prepared:
            edges = []
            for group in groups:
                source = group[0].source
                edges.append(replace(group[0], source=self.route(source, level - 1)))
                for extra in group[1:]:
                    copy = self._emit(level - 1, 'add', [[EdgeTerm(self.route(source, level - 2), 'x')]])
                    edges.append(replace(extra, source=copy))
            if offset:
                edges[0] = replace(edges[0], d=edges[0].d + offset)
            wired.append(edges)
        return self._emit(level, kind, wired)

    # tree traversal

    def term(self, tree):
        """Single edge computing ``tree`` from some realized node."""
        if tree.kind == PRODUCT:
            coefficient, factors = _split_product(tree)
            if len(factors) == 1:
                return self.term(factors[0]).scaled(coefficient)
        if tree.kind == CALL:
            alpha, inner, beta = affine_parts(tree.children[0])
            return EdgeTerm(self.realize(inner), tree.name, alpha, beta)
        if tree.kind == POWER:
            exponent = _power_exponent(tree)
            if exponent in POWER_PRIMITIVES:
                alpha, inner, beta = affine_parts(tree.children[0])
                return EdgeTerm(self.realize(inner), POWER_PRIMITIVES[exponent], alpha, beta)
        return EdgeTerm(self.realize(tree), 'x')

    def subnode_terms(self, tree):
        if tree.kind == SUM:
            terms = [self.term(child) for child in tree.children if child.kind != CONST]
            offset = sum(child.value for child in tree.children if child.kind == CONST)
            return terms, offset
        return [self.term(tree)], 0.0

    def realize(self, tree):
        """Network node holding the value of ``tree``."""
        if tree.kind == VAR:
            return self.inputs[self.input_names.index(tree.name)]
        if tree.kind == CONST:
            raise UnsupportedFeatureError('Constants are folded into edges, not nodes')
        if tree in self.realized:
            return self.realized[tree]
        if tree.kind == PRODUCT:
            coefficient, factors = _split_product(tree)
            parts = [self.subnode_terms(factor) for factor in factors]
            terms, offset = parts[0]
            parts[0] = ([t.scaled(coefficient) for t in terms], offset * coefficient)
            node = self.build('mult' if len(parts) > 1 else 'add', parts)
        elif tree.kind == POWER and _power_exponent(tree) not in POWER_PRIMITIVES:
            node = self.realize(_rewrite_power(tree))
        else:
            node = self.build('add', [self.subnode_terms(tree)])
        self.realized[tree] = node
        return node

    def add_output(self, tree):
        if tree.kind == CONST:
            node = self.build('add', [([EdgeTerm(self.inputs[0], '0', d=tree.value)], 0.0)])
        else:
            node = self.realize(tree)
            if node.kind != 'add':
                node = self.build('add', [([EdgeTerm(node, 'x')], 0.0)])
        self.outputs.append(node)
        return node

    # layout

    @property
    def depth(self):
        return max(node.level for node in self.outputs)

    def finalize(self):
        """Route every output to the last level, in output order."""
        depth = self.depth
        finals = []
        for node in self.outputs:
            node = self.route(node, depth)
            if any(node is other for other in finals):
                node = PlanNode(depth, 'add', [list(edges) for edges in node.subnodes])
            finals.append(node)
        self.levels[depth] = finals
        return finals

    def ordered(self, level):
        if level == 0:
            return self.inputs
        nodes = self.levels[level]
        return [n for n in nodes if n.kind == 'add'] + [n for n in nodes if n.kind == 'mult']

    def layout(self):
        """Per-level ``(n_add, n_mult)`` and multiplication arities."""
        width, arities = [], []
        for level in range(self.depth + 1):
            nodes = self.ordered(level)
            mults = [n for n in nodes if n.kind == 'mult']
            width.append((len(nodes) - len(mults), len(mults)))
            arities.append([n.arity for n in mults])
        return width, arities


def _split_product(tree):
    coefficient = 1.0
    factors = []
    for child in tree.children:
        if child.kind == CONST:
            coefficient *= child.value
        else:
            factors.append(child)
    return coefficient, factors


def _rewrite_power(tree):
    base = tree.children[0]
    exponent = _power_exponent(tree)
    if exponent == round(exponent) and exponent >= 5:
        return ExprTree(PRODUCT, children=(base,) * int(exponent))
    if exponent == round(exponent) and exponent <= -3:
        return power(power(base, -1.0), -exponent)
    return call('exp', product_of(const(exponent), call('log', base)))


def plan_formula(trees, input_names):
    """Lay out canonical trees as a network plan."""
    plan = CompilePlan(input_names)
    for tree in trees:
        missing = [name for name in variables(tree) if name not in plan.input_names]
        if missing:
            raise UnboundVariableError(f"Formula uses undeclared inputs: {', '.join(missing)}")
        plan.add_output(tree)
    plan.finalize()
    return plan


def _emit_model(plan, grid_G, order_k):
    width, arities = plan.layout()
    layers = []
    for level in range(1, len(width)):
        sources = {id(node): i for i, node in enumerate(plan.ordered(level - 1))}
        targets = plan.ordered(level)
        n_subnodes = sum(node.arity for node in targets)
        layer = KanLayer.blank(len(sources), n_subnodes, grid_G, order_k)
        layer.mask[...] = 0.0
        layer.numeric[...] = 0.0
        j = 0
        for node in targets:
            for edges in node.subnodes:
                for edge in edges:
                    i = sources[id(edge.source)]
                    layer.mask[i, j] = 1.0
                    layer.symbolic[i, j] = 1.0
                    layer.fn_names[i, j] = edge.fn
                    layer.affine[i, j] = (edge.a, edge.b, edge.c, edge.d)
                j += 1
        layers.append(layer)
    return MultKanModel(width, arities, layers, list(plan.input_names), order_k)


def compile_to_kan(tree, input_names, grid_G=None, order_k=None):
    """
    Build a symbolic network computing ``tree``.

    ``tree`` may be an ``ExprTree``, a list of trees (one per output) or
    formula text with ``;`` between outputs. Spline branches start at zero,
    so the network function is exactly the formula until it is perturbed.
    """
    if isinstance(tree, str):
        trees = parse_formulas(tree, input_names)
    elif isinstance(tree, ExprTree):
        trees = [tree]
    else:
        trees = list(tree)
    trees = [canonicalize(t) for t in trees]
    grid_G = grid_G or kan_settings.GRID_INTERVALS
    order_k = kan_settings.SPLINE_ORDER if order_k is None else order_k
    plan = plan_formula(trees, input_names)
    model = _emit_model(plan, grid_G, order_k)
    logger.info(f'Compiled {len(trees)} formula(s) into width {model.width}')
    return model
