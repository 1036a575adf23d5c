"""
Structural edits of a network: expansion, perturbation, module constraints,
node removal and grid adaptation.

Every public function works on a copy and returns the edited network, so the
caller's model is left as it was.
"""

import logging
import re

import numpy as np

from kanscope.exceptions import (
    DegenerateInputError,
    ModuleSpecError,
    WidthSpecError,
)
from splines.bspline import basis_matrix, quantile_knots, solve_coefficients, uniform_knots
from .layers import IDENTITY_AFFINE, KanLayer

logger = logging.getLogger(__name__)

SCOPES = ('all', 'new-only')


def require_samples(X):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] == 0:
        raise DegenerateInputError('No samples given')
    return X


def _grow_layer(layer, axis, position, count):
    """Insert ``count`` zero edges along rows (axis 0) or columns (axis 1)."""
    if count == 0:
        return layer
    blank_shape = [layer.n_in, layer.n_out]
    blank_shape[axis] = count
    lo, hi = layer.knots[..., layer.order].min(), layer.knots[..., -layer.order - 1].max()
    blank = KanLayer.blank(blank_shape[0], blank_shape[1], layer.num_intervals, layer.order, (lo, hi))
    blank.fresh[...] = True
    grown = {}
    for name, value in layer.__dict__.items():
        if isinstance(value, np.ndarray):
            value = np.concatenate(
                [np.take(value, np.arange(position), axis=axis),
                 getattr(blank, name),
                 np.take(value, np.arange(position, value.shape[axis]), axis=axis)],
                axis=axis,
            )
        grown[name] = value
    return KanLayer(**grown)


def expand(model, mode='width', layer_id=None, extra_adds=0, extra_mults=0, arity=2):
    """
    Add zero-function neurons (``width``) or an identity layer (``depth``).

    In width mode ``layer_id`` names a hidden node level; new addition nodes
    follow the existing ones and new multiplication nodes go last. In depth
    mode an identity layer is inserted after node level ``layer_id``
    (default: the output level).
    """
    model = model.copy()
    for layer in model.layers:
        layer.fresh[...] = False
    if mode == 'width':
        if layer_id is None or not 1 <= layer_id < model.depth:
            raise WidthSpecError(f'Invalid hidden level {layer_id!r} for width expansion')
        if arity < 2 or extra_adds < 0 or extra_mults < 0:
            raise WidthSpecError('Expansion counts must be nonnegative and arity at least 2')
        n_add, n_mult = model.width[layer_id]
        n_sub = n_add + sum(model.arities[layer_id])
        incoming = _grow_layer(model.layers[layer_id - 1], 1, n_add, extra_adds)
        incoming = _grow_layer(incoming, 1, n_sub + extra_adds, extra_mults * arity)
        outgoing = _grow_layer(model.layers[layer_id], 0, n_add, extra_adds)
        outgoing = _grow_layer(outgoing, 0, n_add + n_mult + extra_adds, extra_mults)
        model.layers[layer_id - 1] = incoming
        model.layers[layer_id] = outgoing
        model.width[layer_id] = (n_add + extra_adds, n_mult + extra_mults)
        model.arities[layer_id] = list(model.arities[layer_id]) + [arity] * extra_mults
    elif mode == 'depth':
        level = model.depth if layer_id is None else layer_id
        if not 0 <= level <= model.depth:
            raise WidthSpecError(f'Invalid level {layer_id!r} for depth expansion')
        n = model.node_count(level)
        reference = model.layers[min(level, model.depth - 1)]
        layer = KanLayer.blank(n, n, reference.num_intervals, reference.order)
        diagonal = np.eye(n, dtype=bool)
        layer.numeric[diagonal] = 0.0
        layer.symbolic[diagonal] = 1.0
        layer.fn_names[diagonal] = 'x'
        layer.affine[diagonal] = IDENTITY_AFFINE
        layer.fresh[...] = True
        model.layers.insert(level, layer)
        model.width.insert(level + 1, (n, 0))
        model.arities.insert(level + 1, [])
    else:
        raise WidthSpecError(f"Unknown expansion mode '{mode}'")
    model.validate()
    logger.info(f'Expanded network ({mode}); width is now {model.width}')
    return model


def _scope_mask(layer, scope):
    if scope not in SCOPES:
        raise ValueError(f"Scope must be one of {SCOPES}")
    selected = np.ones(layer.mask.shape, dtype=bool) if scope == 'all' else layer.fresh.copy()
    return selected & ~layer.frozen


def perturb(model, magnitude, scope='all', seed=0):
    """
    Add Gaussian noise of scale ``magnitude`` to spline coefficients in scope.

    Affected edges are unmasked. Masked and symbolic-only edges restart from a
    zero spline branch, so ``magnitude == 0`` leaves the network function unchanged.
    """
    if magnitude < 0:
        raise ValueError('Perturbation magnitude must be nonnegative')
    model = model.copy()
    rng = np.random.default_rng(seed)
    for layer in model.layers:
        selected = _scope_mask(layer, scope)
        # masked and symbolic-only edges restart from the zero spline
        restarting = selected & ((layer.numeric == 0) | (layer.mask == 0))
        layer.coef[restarting] = 0.0
        layer.scale_base[restarting] = 0.0
        layer.numeric[selected] = 1.0
        noise = rng.normal(0.0, 1.0, size=layer.coef.shape)
        layer.coef[selected] += magnitude * noise[selected]
        layer.mask[selected] = 1.0
    return model


def zero_edges(model, scope='new-only'):
    """Reset the spline branch of edges in scope to the zero function."""
    model = model.copy()
    for layer in model.layers:
        selected = _scope_mask(layer, scope)
        layer.coef[selected] = 0.0
        layer.scale_base[selected] = 0.0
    return model


MODULE_GROUP = re.compile(r'^\s*\[\s*(\d+(?:\s*,\s*\d+)*)?\s*\]\s*$')


def parse_module_spec(spec):
    """Split ``'[0,1]->[0]->...'`` into a list of index sets."""
    groups = []
    for part in spec.split('->'):
        match = MODULE_GROUP.match(part)
        if not match:
            raise ModuleSpecError(f"Cannot parse module group '{part.strip()}'")
        body = match.group(1)
        groups.append({int(v) for v in body.split(',')} if body else set())
    if len(groups) < 2:
        raise ModuleSpecError('A module spec needs at least a node group and a subnode group')
    return groups


def apply_module_constraint(model, start_layer, spec):
    """
    Disconnect a module from the rest of the network.

    Groups alternate between node sets and subnode sets, starting at node
    level ``start_layer``. Edges between a module node and a non-module
    subnode, or the reverse, are masked and frozen.
    """
    groups = parse_module_spec(spec)
    model = model.copy()
    n_layers = len(groups) // 2
    if not 0 <= start_layer or start_layer + n_layers > model.depth:
        raise ModuleSpecError(f'Module spanning {n_layers} layers does not fit from layer {start_layer}')
    for t, group in enumerate(groups):
        l = start_layer + t // 2
        bound = (model.node_count(l) if t % 2 == 0 else model.layers[l].n_out) if l < model.depth else model.node_count(l)
        if any(idx >= bound for idx in group):
            raise ModuleSpecError(f'Index out of range in module group {t}: {sorted(group)}')
    severed = 0
    for t in range(n_layers):
        layer = model.layers[start_layer + t]
        nodes = np.isin(np.arange(layer.n_in), list(groups[2 * t]))
        subnodes = np.isin(np.arange(layer.n_out), list(groups[2 * t + 1]))
        crossing = nodes[:, None] ^ subnodes[None, :]
        layer.mask[crossing] = 0.0
        layer.frozen[crossing] = True
        severed += int(crossing.sum())
    logger.info(f'Module constraint {spec!r} from layer {start_layer} severed {severed} edges')
    return model


def remove_nodes(model, level, keep):
    """Keep only the listed nodes of ``level`` (inputs or a hidden level)."""
    if not 0 <= level < model.depth:
        raise WidthSpecError(f'Cannot remove nodes from level {level}')
    keep = sorted(set(int(k) for k in keep))
    if not keep:
        raise WidthSpecError('At least one node must survive')
    if keep[-1] >= model.node_count(level):
        raise WidthSpecError(f'Node {keep[-1]} does not exist at level {level}')
    model = model.copy()
    model.layers[level] = model.layers[level].select(rows=keep)
    if level == 0:
        model.input_names = [model.input_names[k] for k in keep]
        model.width[0] = (len(keep), 0)
    else:
        mult = model.mult_layer(level - 1)
        columns = np.concatenate([mult.subnodes_of(k) for k in keep])
        model.layers[level - 1] = model.layers[level - 1].select(cols=columns)
        n_add = mult.n_add
        kept_mults = [k - n_add for k in keep if k >= n_add]
        model.width[level] = (sum(1 for k in keep if k < n_add), len(kept_mults))
        model.arities[level] = [model.arities[level][q] for q in kept_mults]
    model.validate()
    return model


def _layer_inputs(model, X):
    _, _, cache = model.propagate(require_samples(X), keep_cache=False)
    return cache


def update_grid(model, X, adaptive=True):
    """
    Re-place spline knots on the distribution of each edge's inputs.

    Each live, unfrozen spline edge keeps its function on the samples; frozen
    and masked edges are left untouched.
    """
    model = model.copy()
    cache = _layer_inputs(model, X)
    for l, layer in enumerate(model.layers):
        record = cache.records[l]
        editable = (layer.mask > 0) & (layer.numeric > 0) & ~layer.frozen
        for i in range(layer.n_in):
            targets = np.nonzero(editable[i])[0]
            if targets.size == 0:
                continue
            samples = record.x[:, i]
            if np.ptp(samples) <= 0:
                logger.warning(f'Skipping grid update for layer {l} node {i}: constant input')
                continue
            knots = (quantile_knots(samples, layer.num_intervals, layer.order) if adaptive
                     else uniform_knots(layer.num_intervals, layer.order, samples.min(), samples.max()))
            design = basis_matrix(samples, knots, layer.order)
            layer.coef[i, targets] = solve_coefficients(design, record.spline[:, i, targets]).T
            layer.knots[i, targets] = knots
    logger.info('Updated spline grids from current activations')
    return model


def refine(model, new_G, X, adaptive=False):
    """Re-fit every edge on a grid with ``new_G`` intervals over its sample range."""
    if new_G < 1:
        raise ValueError('Number of grid intervals must be positive')
    model = model.copy()
    cache = _layer_inputs(model, X)
    for l, layer in enumerate(model.layers):
        record = cache.records[l]
        n_basis = new_G + layer.order
        m = n_basis + layer.order + 1
        knots = np.empty((layer.n_in, layer.n_out, m))
        coef = np.empty((layer.n_in, layer.n_out, n_basis))
        for i in range(layer.n_in):
            samples = record.x[:, i]
            if np.ptp(samples) > 0:
                row = (quantile_knots(samples, new_G, layer.order) if adaptive
                       else uniform_knots(new_G, layer.order, samples.min(), samples.max()))
                design = basis_matrix(samples, row, layer.order)
                knots[i] = row
                coef[i] = solve_coefficients(design, record.spline[:, i, :]).T
                continue
            logger.warning(f'Layer {l} node {i} has constant input; refining over its old domain')
            for j in range(layer.n_out):
                lo = layer.knots[i, j, layer.order]
                hi = layer.knots[i, j, -layer.order - 1]
                xs = np.linspace(lo, hi, 4 * n_basis)
                old = basis_matrix(xs, layer.knots[i, j], layer.order) @ layer.coef[i, j]
                knots[i, j] = uniform_knots(new_G, layer.order, lo, hi)
                coef[i, j] = solve_coefficients(basis_matrix(xs, knots[i, j], layer.order), old)
        layer.knots, layer.coef = knots, coef
    logger.info(f'Refined network grids to {new_G} intervals')
    return model

