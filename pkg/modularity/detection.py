"""
Functional modularity tests on black-box functions.

Additive separability shows as vanishing cross-group Hessian entries,
multiplicative separability as the same on ``log|f|``. Generalized
separability ``F(g(y) + h(z))`` makes the ratio of one ``y`` partial to one
``z`` partial multiplicatively separable, and generalized symmetry
``g(h(y), z)`` makes the direction of the ``y`` gradient independent of
``z``. Scores are normalized so one relative threshold serves every test.
"""

import logging

import numpy as np

from kanscope.exceptions import InconclusiveTestError, ModuleSpecError
from .functions import FunctionHandle, TestConfig, gradients, hessians, probe_points

logger = logging.getLogger(__name__)

ADDITIVE = 'additive'
MULTIPLICATIVE = 'multiplicative'
MODES = {'additive': ADDITIVE, 'add': ADDITIVE, 'multiplicative': MULTIPLICATIVE, 'mul': MULTIPLICATIVE}

# Hessian magnitudes below this count as zero when normalizing.
HESSIAN_FLOOR = 1e-3
# |f| below this is treated as a zero of f.
VALUE_EPS = 1e-8


def _mode(mode):
    try:
        return MODES[mode]
    except KeyError:
        raise ModuleSpecError(f"Unknown separability mode '{mode}'") from None


def _log_abs(values):
    with np.errstate(divide='ignore'):
        return np.where(np.abs(values) >= VALUE_EPS, np.log(np.abs(values)), np.nan)


def _groups(groups, n, complete=True):
    groups = [sorted(set(int(k) for k in group)) for group in groups]
    flat = [k for group in groups for k in group]
    if len(flat) != len(set(flat)) or any(not 0 <= k < n for k in flat) or any(not g for g in groups):
        raise ModuleSpecError('Variable groups must be disjoint, non-empty and in range')
    if complete and sorted(flat) != list(range(n)):
        raise ModuleSpecError('Variable groups must partition every variable')
    return groups


def _cross_mask(groups, n):
    label = np.full(n, -1)
    for g, group in enumerate(groups):
        label[group] = g
    listed = label >= 0
    return listed[:, None] & listed[None, :] & (label[:, None] != label[None, :])


def separability_score(f, groups, mode=ADDITIVE, config=None):
    """
    Largest cross-group Hessian entry over the probes, relative to the
    median Hessian magnitude. Groups need not cover every variable.
    """
    config = config or TestConfig()
    groups = _groups(groups, f.arity, complete=False)
    transform = _log_abs if _mode(mode) == MULTIPLICATIVE else None
    H, valid = hessians(f, probe_points(f, config), config.fd_step, transform)
    if not valid.any():
        raise InconclusiveTestError('Every probe point was skipped')
    if valid.sum() < len(valid):
        logger.warning(f'Skipped {int(len(valid) - valid.sum())} probe points with non-finite values')
    H = H[valid]
    cross = _cross_mask(groups, f.arity)
    if not cross.any():
        return 0.0
    magnitude = np.abs(H).reshape(len(H), -1).max(axis=1)
    scale = max(float(np.median(magnitude)), HESSIAN_FLOOR)
    return float(np.abs(H[:, cross]).max() / scale)


def test_separability(f, groups, mode=ADDITIVE, config=None):
    """``(separable, score)`` for the partition ``groups`` of ``f``'s variables."""
    config = config or TestConfig()
    groups = _groups(groups, f.arity)
    score = separability_score(f, groups, mode, config)
    return score < config.threshold, score


def _split(split, n):
    if isinstance(split, (int, np.integer)):
        if not 1 <= split < n:
            raise ModuleSpecError(f'Split must lie in [1, {n - 1}]')
        return [list(range(split)), list(range(split, n))]
    first, second = split
    return _groups([first, second], n, complete=False)


def gradient_ratio(f, i, j, fd_step):
    """Handle on ``(df/dx_i) / (df/dx_j)``, NaN where the denominator vanishes."""

    def evaluator(X):
        grad = gradients(f, X, fd_step)
        denominator = grad[:, j]
        safe = np.abs(denominator) >= VALUE_EPS
        return np.where(safe, grad[:, i] / np.where(safe, denominator, 1.0), np.nan)

    return FunctionHandle(f.arity, evaluator, list(f.domain), list(f.names))


def test_general_separability(f, split, mode=ADDITIVE, config=None):
    """
    ``(separable, score)`` for ``f = F(g(y) + h(z))`` (or ``F(g(y) h(z))``,
    which the same ratio test covers) across ``split``.

    ``split`` is either ``k`` (first ``k`` variables against the rest) or a
    pair of index lists. The representative partials are the ones with the
    largest median magnitude on each side. Sides with several variables
    must also pass the symmetry test.
    """
    _mode(mode)
    config = config or TestConfig()
    first, second = _split(split, f.arity)
    probes = probe_points(f, config)
    magnitude = np.median(np.abs(gradients(f, probes, config.fd_step)), axis=0)
    i = first[int(np.argmax(magnitude[first]))]
    j = second[int(np.argmax(magnitude[second]))]
    if magnitude[j] < VALUE_EPS:
        raise InconclusiveTestError(f'Partial derivative in variable {j} vanishes on the probes')
    ratio = gradient_ratio(f, i, j, config.fd_step)
    score = separability_score(ratio, [first, second], MULTIPLICATIVE, config)
    for side in (first, second):
        if score >= config.threshold:
            break
        if len(side) > 1:
            score = max(score, test_symmetry(f, side, config)[1])
    return score < config.threshold, score


def _unit_rows(vectors):
    norm = np.linalg.norm(vectors, axis=1)
    scale = float(np.median(norm)) if norm.size else 0.0
    usable = norm > VALUE_EPS * max(scale, 1.0)
    return vectors / np.where(usable, norm, 1.0)[:, None], usable


def test_symmetry(f, subset, config=None):
    """
    ``(symmetric, score)`` for ``f = g(h(x_S), z)``.

    The score is the largest rate of change of the unit ``x_S`` gradient
    along any outside variable, scaled by that variable's domain width.
    Probes with a vanishing ``x_S`` gradient are skipped.
    """
    config = config or TestConfig()
    subset = _groups([subset], f.arity, complete=False)[0]
    if len(subset) < 2:
        raise ModuleSpecError('A symmetry group needs at least two variables')
    others = [k for k in range(f.arity) if k not in subset]
    if not others:
        return True, 0.0
    probes = probe_points(f, config)
    steps = f.steps(config.fd_step)
    base, usable = _unit_rows(gradients(f, probes, config.fd_step)[:, subset])
    worst = 0.0
    counted = False
    for m in others:
        shifted = []
        for sign in (1.0, -1.0):
            X = probes.copy()
            X[:, m] += sign * steps[m]
            unit, ok = _unit_rows(gradients(f, X, config.fd_step)[:, subset])
            unit *= np.where(np.sum(unit * base, axis=1) < 0, -1.0, 1.0)[:, None]
            shifted.append(unit)
            usable = usable & ok
        if not usable.any():
            continue
        counted = True
        rate = np.linalg.norm(shifted[0] - shifted[1], axis=1) / (2 * steps[m]) * f.widths[m]
        worst = max(worst, float(rate[usable].max()))
    if not counted:
        raise InconclusiveTestError('The gradient over the group vanished at every probe point')
    return worst < config.threshold, worst
