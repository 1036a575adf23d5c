"""
Multiplicative Kolmogorov-Arnold networks.

A network alternates KAN layers with multiplication layers. Node level ``l``
holds ``n_a[l]`` addition nodes followed by ``n_m[l]`` multiplication nodes;
KAN layer ``l`` maps the nodes of level ``l`` onto the subnodes of level
``l + 1``, which the multiplication layer turns into nodes.
"""

import copy
import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from kanscope.conf import kan_settings
from kanscope.exceptions import (
    DimensionMismatchError,
    NonFiniteActivationError,
    WidthSpecError,
)
from splines.bspline import Grid, SplineCurve, curve_eval
from symbolic.library import get_primitive
from .layers import KanLayer, MultLayer, silu

logger = logging.getLogger(__name__)


def parse_width(width, mult_arity=2):
    """
    Normalize a width spec into ``[(n_a, n_m), ...]`` plus per-level arities.

    Entries may be plain integers (addition nodes only) or ``(n_a, n_m)``
    pairs. ``mult_arity`` is either one integer for every multiplication node
    or a per-level list of per-node arities.
    """
    if not isinstance(width, (list, tuple)) or len(width) < 2:
        raise WidthSpecError('A width spec needs at least an input and an output level')
    levels = []
    for entry in width:
        if isinstance(entry, (int, np.integer)):
            entry = (int(entry), 0)
        try:
            n_add, n_mult = (int(v) for v in entry)
        except (TypeError, ValueError):
            raise WidthSpecError(f'Invalid width entry {entry!r}') from None
        if n_add < 0 or n_mult < 0 or n_add + n_mult == 0:
            raise WidthSpecError(f'Width entry {entry!r} must hold at least one node')
        levels.append((n_add, n_mult))
    # inputs are plain nodes
    levels[0] = (sum(levels[0]), 0)

    arities = [[]]
    for level, (_, n_mult) in enumerate(levels[1:], start=1):
        if isinstance(mult_arity, (int, np.integer)):
            row = [int(mult_arity)] * n_mult
        else:
            try:
                row = [int(a) for a in mult_arity[level]]
            except (IndexError, TypeError):
                raise WidthSpecError(f'Missing arities for level {level}') from None
        if len(row) != n_mult:
            raise WidthSpecError(
                f'Level {level} has {n_mult} multiplication nodes but {len(row)} arities'
            )
        if any(a < 2 for a in row):
            raise WidthSpecError('Multiplication arity must be at least 2')
        arities.append(row)
    return levels, arities


@dataclass(eq=False)
class EdgeFunction:
    """Read-only view of one edge of a network."""

    spline: SplineCurve
    base_scale: float
    spline_scale: float
    mask: int
    symbolic: Optional[tuple]
    mode: str
    frozen: bool
    use_base: bool = True

    def __call__(self, x, strict=False):
        x = np.asarray(x, dtype=float)
        if not self.mask:
            return np.zeros(x.shape)
        out = np.zeros(x.shape)
        if self.mode in ('spline', 'both'):
            lo, hi = self.spline.grid.span
            out = out + self.spline_scale * curve_eval(self.spline, np.clip(x, lo, hi), strict=strict)
            if self.use_base:
                out = out + self.base_scale * silu(x)
        if self.mode in ('symbolic', 'both'):
            name, a, b, c, d = self.symbolic
            out = out + c * get_primitive(name).evaluate(a * x + b, strict=strict) + d
        return out


@dataclass(eq=False)
class ActivationCache:
    """Per-layer activations of the most recent cached forward pass."""

    inputs: np.ndarray
    records: list
    tangents: Optional[np.ndarray] = None

    @property
    def batch_size(self):
        return self.inputs.shape[0]

    def node_values(self, level):
        return self.inputs if level == 0 else self.records[level - 1].nodes

    def edge_outputs(self, layer):
        return self.records[layer].y

    def subnode_sums(self, layer):
        return self.records[layer].z

    @property
    def outputs(self):
        return self.records[-1].nodes


@dataclass(eq=False)
class MultKanModel:
    width: List[tuple]
    arities: List[list]
    layers: List[KanLayer]
    input_names: List[str] = field(default_factory=list)
    order: int = 3
    use_base: bool = True
    cache: Optional[ActivationCache] = None

    def __post_init__(self):
        if not self.input_names:
            self.input_names = [f'x{i + 1}' for i in range(self.n_inputs)]
        self.validate()

    @classmethod
    def create(cls, width, grid=None, order=None, seed=0, sparse=False, mult_arity=2,
               input_names=None, use_base=None, grid_range=None, noise=None):
        grid = grid or kan_settings.GRID_INTERVALS
        order = kan_settings.SPLINE_ORDER if order is None else order
        if grid < 1 or order < 1:
            raise WidthSpecError('Grid intervals and spline order must be positive')
        levels, arities = parse_width(width, mult_arity)
        rng = np.random.default_rng(seed)
        grid_range = grid_range or kan_settings.GRID_RANGE
        noise = kan_settings.INIT_NOISE if noise is None else noise
        layers = []
        for level in range(len(levels) - 1):
            n_in = sum(levels[level])
            n_out = levels[level + 1][0] + sum(arities[level + 1])
            layers.append(KanLayer.initialize(n_in, n_out, grid, order, rng, noise,
                                              grid_range, sparse))
        use_base = kan_settings.USE_BASE if use_base is None else use_base
        return cls(levels, arities, layers, list(input_names or []), order, use_base)

    def validate(self):
        if len(self.layers) != len(self.width) - 1:
            raise WidthSpecError('Layer count does not match the width spec')
        for l, layer in enumerate(self.layers):
            n_in = self.node_count(l)
            n_out = self.mult_layer(l).n_subnodes
            if (layer.n_in, layer.n_out) != (n_in, n_out):
                raise WidthSpecError(
                    f'Layer {l} is {layer.n_in}x{layer.n_out}, width spec needs {n_in}x{n_out}'
                )
        if len(self.input_names) != self.n_inputs:
            raise DimensionMismatchError('One input name per input node is required')

    # shape helpers

    @property
    def depth(self):
        return len(self.layers)

    @property
    def n_inputs(self):
        return self.node_count(0)

    @property
    def n_outputs(self):
        return self.node_count(self.depth)

    def node_count(self, level):
        return sum(self.width[level])

    def mult_layer(self, layer):
        """Multiplication layer applied after KAN layer ``layer``."""
        return MultLayer(self.width[layer + 1][0], self.arities[layer + 1])

    @property
    def is_plain_kan(self):
        return all(n_mult == 0 for _, n_mult in self.width)

    def edges(self):
        for l, layer in enumerate(self.layers):
            for i in range(layer.n_in):
                for j in range(layer.n_out):
                    yield l, i, j

    def edge(self, l, i, j):
        layer = self.layers[l]
        mode = layer.modes()[i, j]
        symbolic = None
        if layer.symbolic[i, j] > 0:
            symbolic = (layer.fn_names[i, j],) + tuple(float(v) for v in layer.affine[i, j])
        return EdgeFunction(
            spline=SplineCurve(Grid(layer.knots[i, j], layer.order), layer.coef[i, j]),
            base_scale=float(layer.scale_base[i, j]),
            spline_scale=float(layer.scale_sp[i, j]),
            mask=int(layer.mask[i, j]),
            symbolic=symbolic,
            mode=mode,
            frozen=bool(layer.frozen[i, j]),
            use_base=self.use_base,
        )

    def copy(self):
        clone = copy.deepcopy(self)
        clone.cache = None
        return clone

    # evaluation

    def propagate(self, X, tangents=None, keep_cache=True, strict=False):
        """
        Run the network on ``X`` (N, n_inputs).

        ``tangents`` (D, N, n_inputs) are pushed forward alongside the values.
        Returns ``(outputs, output_tangents, cache)``.
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_inputs:
            raise DimensionMismatchError(
                f'Model expects {self.n_inputs} inputs, got {X.shape[1]}'
            )
        if tangents is not None:
            tangents = np.asarray(tangents, dtype=float)
        nodes, dnodes = X, tangents
        records = []
        for l, layer in enumerate(self.layers):
            record = layer.forward(nodes, dnodes, strict, self.use_base)
            nodes, dnodes = self.mult_layer(l).forward(record.z, record.dz)
            if not np.all(np.isfinite(nodes)) or (dnodes is not None and not np.all(np.isfinite(dnodes))):
                raise NonFiniteActivationError(l)
            record.nodes, record.dnodes = nodes, dnodes
            records.append(record)
        cache = ActivationCache(X, records, tangents)
        if keep_cache:
            self.cache = cache
        return nodes, dnodes, cache

    def forward(self, X, keep_cache=False, strict=False):
        outputs, _, _ = self.propagate(X, keep_cache=keep_cache, strict=strict)
        return outputs

    __call__ = forward

    def input_gradient(self, X):
        """Jacobian of the outputs, shaped (N, n_outputs, n_inputs)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        seed = np.broadcast_to(np.eye(self.n_inputs)[:, None, :], (self.n_inputs,) + X.shape)
        _, dout, _ = self.propagate(X, seed, keep_cache=False)
        return np.transpose(dout, (1, 2, 0))


def init_model(width_spec, grid_G=None, order_k=None, seed=0, sparse=False, **kwargs):
    """Build a randomly initialized network."""
    model = MultKanModel.create(width_spec, grid_G, order_k, seed, sparse, **kwargs)
    logger.info(f'Initialized network with width {model.width} (sparse={sparse})')
    return model


def forward(model, X, keep_cache=False, strict=False):
    return model.forward(X, keep_cache=keep_cache, strict=strict)


def input_gradient(model, X):
    return model.input_gradient(X)
