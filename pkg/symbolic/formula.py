"""Reading a closed-form formula off a fully symbolic network."""

import logging

import numpy as np

from kanpiler.expressions import canonicalize, const, eval_expr, primitive_expr, product_of, sum_of, var
from kanscope.conf import kan_settings
from kanscope.exceptions import NotFullySymbolicError
from .fixing import spline_edges

logger = logging.getLogger(__name__)

MAX_DIGITS = 15
ROUNDING_FLOOR = 1e-15


def round_significant(value, digits):
    if digits is None or value == 0.0:
        return float(value)
    return float(f'{value:.{digits}g}')


def _compose(model, names, digits):
    nodes = [var(name) for name in names]
    for l, layer in enumerate(model.layers):
        mult = model.mult_layer(l)
        subnodes = []
        for j in range(layer.n_out):
            terms = []
            for i in range(layer.n_in):
                if layer.mask[i, j] == 0 or layer.symbolic[i, j] == 0:
                    continue
                a, b, c, d = (round_significant(v, digits) for v in layer.affine[i, j])
                terms.append(primitive_expr(layer.fn_names[i, j], nodes[i], a, b, c, d))
            subnodes.append(sum_of(*terms) if terms else const(0.0))
        nodes = [
            subnodes[int(group[0])] if node < mult.n_add
            else product_of(*(subnodes[int(s)] for s in group))
            for node, group in ((node, mult.subnodes_of(node)) for node in range(mult.n_nodes))
        ]
    return [canonicalize(node) for node in nodes]


def probe_inputs(model, X=None):
    if X is not None:
        return np.atleast_2d(np.asarray(X, dtype=float))
    if model.cache is not None:
        return model.cache.inputs
    rng = np.random.default_rng(0)
    lo, hi = kan_settings.GRID_RANGE
    return rng.uniform(lo, hi, size=(kan_settings.PROBE_POINTS, model.n_inputs))


def formula_error(trees, model, names, X):
    """Largest absolute gap between ``trees`` and the network on ``X``."""
    reference = model.forward(X)
    binding = {name: X[:, k] for k, name in enumerate(names)}
    worst = 0.0
    for q, tree in enumerate(trees):
        values = np.broadcast_to(eval_expr(tree, binding, strict=False), reference[:, q].shape)
        finite = np.isfinite(values) & np.isfinite(reference[:, q])
        if finite.any():
            worst = max(worst, float(np.max(np.abs(values[finite] - reference[finite, q]))))
    return worst


def extract_formula(model, input_names=None, digits=None, X=None):
    """
    One expression tree per network output.

    Every unmasked edge must be symbolic. Coefficients are rounded to
    ``digits`` significant digits only while the rounded formula's probe
    error stays within twice the unrounded formula's error, floored at
    float resolution. Otherwise more digits are tried, and past
    ``MAX_DIGITS`` the coefficients are kept unrounded.
    """
    offenders = list(spline_edges(model))
    if offenders:
        raise NotFullySymbolicError(offenders)
    names = list(input_names or model.input_names)
    digits = kan_settings.FORMULA_DIGITS if digits is None else digits
    exact = _compose(model, names, None)
    X = probe_inputs(model, X)
    baseline = formula_error(exact, model, names, X)
    scale = 1.0 + float(np.max(np.abs(model.forward(X)), initial=0.0))
    tolerance = max(2 * baseline, ROUNDING_FLOOR * scale)
    while digits < MAX_DIGITS:
        rounded = _compose(model, names, digits)
        error = formula_error(rounded, model, names, X)
        if error <= tolerance:
            logger.info(f'Extracted formula rounded to {digits} significant digits')
            return rounded
        digits += 2
    logger.info('Extracted formula keeps unrounded coefficients')
    return exact


def formula_text(trees):
    return '; '.join(str(tree) for tree in trees)
