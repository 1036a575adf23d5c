"""
B-spline bases, curves, least-squares fits and grid refinement.

Knot vectors may be one-dimensional (a single curve) or carry leading axes
(one knot row per network input node); every routine broadcasts the sample
array against the knot array along the last axis.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from kanscope.conf import kan_settings
from kanscope.exceptions import (
    DegenerateInputError,
    OutOfDomainError,
    UnderdeterminedFitError,
)

logger = logging.getLogger(__name__)

# Mixing weight between uniform and quantile interior knots; keeps adaptive
# knots strictly increasing when samples cluster.
ADAPTIVE_BLEND = 0.02


def _safe_ratio(num, den):
    out = np.zeros(np.broadcast_shapes(np.shape(num), np.shape(den)))
    return np.divide(num, den, out=out, where=(den != 0))


def extend_knots(interior, order):
    """Pad an increasing knot row with ``order`` equally spaced knots per side."""
    interior = np.asarray(interior, dtype=float)
    h_lo = interior[..., 1:2] - interior[..., 0:1]
    h_hi = interior[..., -1:] - interior[..., -2:-1]
    steps = np.arange(order, 0, -1, dtype=float)
    left = interior[..., 0:1] - steps * h_lo
    right = interior[..., -1:] + steps[::-1] * h_hi
    return np.concatenate([left, interior, right], axis=-1)


def uniform_knots(num_intervals, order, low, high):
    """Extended uniform knots over ``[low, high]`` (``G + 2k + 1`` values)."""
    low = np.asarray(low, dtype=float)
    high = np.asarray(high, dtype=float)
    t = np.linspace(0.0, 1.0, num_intervals + 1)
    interior = low[..., None] + (high - low)[..., None] * t
    return extend_knots(interior, order)


def quantile_knots(samples, num_intervals, order):
    """
    Extended knots whose interior follows the sample distribution.

    ``samples`` has shape (N,) or (N, n); the result has shape (m,) or (n, m).
    """
    samples = np.asarray(samples, dtype=float)
    lo = samples.min(axis=0)
    hi = samples.max(axis=0)
    if np.any(hi - lo <= 0):
        raise DegenerateInputError('Cannot place knots on a constant sample set')
    q = np.quantile(samples, np.linspace(0.0, 1.0, num_intervals + 1), axis=0)
    q = np.moveaxis(q, 0, -1)
    t = np.linspace(0.0, 1.0, num_intervals + 1)
    uniform = lo[..., None] + (hi - lo)[..., None] * t
    interior = ADAPTIVE_BLEND * uniform + (1 - ADAPTIVE_BLEND) * q
    return extend_knots(interior, order)


def check_domain(x, knots, strict=True):
    """
    Validate ``x`` against the extended knot span.

    In strict mode an out-of-span value raises ``OutOfDomainError``; otherwise
    values are clamped onto the span.
    """
    x = np.asarray(x, dtype=float)
    lo = knots[..., 0]
    hi = knots[..., -1]
    outside = (x < lo) | (x > hi)
    if np.any(outside):
        if strict:
            bad = x[outside].ravel()[0]
            raise OutOfDomainError(f'Input {bad!r} outside knot span')
        x = np.clip(x, lo, hi)
    return x


def basis_matrix(x, knots, order, deriv=0):
    """
    Evaluate every basis function (or its ``deriv``-th derivative) at ``x``.

    Returns an array of shape ``x.shape + (m - order - 1,)`` where ``m`` is the
    number of knots. Inputs are assumed to lie in the knot span.
    """
    knots = np.asarray(knots, dtype=float)
    x = np.asarray(x, dtype=float)
    # the half-open intervals never contain the final knot
    x = np.where(x >= knots[..., -1], np.nextafter(knots[..., -1], -np.inf), x)
    return _basis(x[..., None], knots, order, deriv)


def _basis(x, knots, order, deriv):
    if deriv > 0:
        if order == 0:
            return np.zeros(x.shape[:-1] + (knots.shape[-1] - 1,))
        lower = _basis(x, knots, order - 1, deriv - 1)
        left_den = knots[..., order:-1] - knots[..., :-(order + 1)]
        right_den = knots[..., order + 1:] - knots[..., 1:-order]
        return order * (_safe_ratio(lower[..., :-1], left_den)
                        - _safe_ratio(lower[..., 1:], right_den))

    values = ((x >= knots[..., :-1]) & (x < knots[..., 1:])).astype(float)
    for p in range(1, order + 1):
        left = _safe_ratio(x - knots[..., :-(p + 1)],
                           knots[..., p:-1] - knots[..., :-(p + 1)])
        right = _safe_ratio(knots[..., p + 1:] - x,
                            knots[..., p + 1:] - knots[..., 1:-p])
        values = left * values[..., :-1] + right * values[..., 1:]
    return values


@dataclass(frozen=True, eq=False)
class Grid:
    """Extended knot vector of a spline of the given order."""

    knots: np.ndarray
    order: int = 3

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        if knots.ndim != 1 or knots.size < self.order + 2:
            raise ValueError('A grid needs at least order + 2 knots')
        if np.any(np.diff(knots[self.order:knots.size - self.order]) <= 0):
            raise ValueError('Interior knots must be strictly increasing')
        object.__setattr__(self, 'knots', knots)

    @classmethod
    def uniform(cls, num_intervals=None, order=None, low=None, high=None):
        num_intervals = num_intervals or kan_settings.GRID_INTERVALS
        order = kan_settings.SPLINE_ORDER if order is None else order
        default_low, default_high = kan_settings.GRID_RANGE
        low = default_low if low is None else low
        high = default_high if high is None else high
        if num_intervals < 1:
            raise ValueError('Number of grid intervals must be positive')
        if high <= low:
            raise ValueError('Grid range must be nondegenerate')
        return cls(uniform_knots(num_intervals, order, low, high), order)

    @classmethod
    def adaptive(cls, samples, num_intervals, order=3):
        return cls(quantile_knots(np.ravel(samples), num_intervals, order), order)

    @property
    def num_basis(self):
        return self.knots.size - self.order - 1

    @property
    def num_intervals(self):
        return self.num_basis - self.order

    @property
    def span(self):
        return float(self.knots[0]), float(self.knots[-1])

    @property
    def domain(self):
        """Interval on which the basis forms a partition of unity."""
        return float(self.knots[self.order]), float(self.knots[-self.order - 1])


@dataclass(frozen=True, eq=False)
class SplineCurve:
    """A grid plus one coefficient per basis function."""

    grid: Grid
    coef: np.ndarray = field(default=None)

    def __post_init__(self):
        coef = np.zeros(self.grid.num_basis) if self.coef is None else np.asarray(self.coef, dtype=float)
        if coef.shape != (self.grid.num_basis,):
            raise ValueError(
                f'Expected {self.grid.num_basis} coefficients, got {coef.shape}'
            )
        object.__setattr__(self, 'coef', coef)

    def __call__(self, x, deriv_order=0, strict=True):
        return curve_eval(self, x, deriv_order, strict)


def basis_eval(x, grid, strict=True, deriv=0):
    """All basis values at ``x`` (scalar or array)."""
    x = check_domain(x, grid.knots, strict)
    return basis_matrix(x, grid.knots, grid.order, deriv)


def curve_eval(curve, x, deriv_order=0, strict=True):
    """Value or analytic derivative of ``curve`` at ``x``."""
    if deriv_order not in (0, 1, 2):
        raise ValueError('deriv_order must be 0, 1 or 2')
    x = check_domain(x, curve.grid.knots, strict)
    values = basis_matrix(x, curve.grid.knots, curve.grid.order, deriv_order) @ curve.coef
    # clamped points see a constant extension
    if not strict and deriv_order:
        lo, hi = curve.grid.span
        values = np.where((x <= lo) | (x >= hi), 0.0, values)
    return values[()] if np.ndim(values) == 0 else values


def solve_coefficients(design, targets, ridge=None):
    """
    Least-squares coefficients for ``design @ coef ≈ targets``.

    ``targets`` may carry several right-hand sides as columns. A ridge term is
    added only when the design matrix is rank deficient.
    """
    ridge = kan_settings.RIDGE_EPS if ridge is None else ridge
    n_samples, n_basis = design.shape
    if n_samples < n_basis:
        raise UnderdeterminedFitError(
            f'{n_samples} samples cannot determine {n_basis} coefficients'
        )
    coef, _, rank, _ = linalg.lstsq(design, targets)
    if rank < n_basis:
        logger.warning(f'Rank-deficient spline fit ({rank}/{n_basis}); adding ridge {ridge}')
        gram = design.T @ design + ridge * np.eye(n_basis)
        coef = linalg.solve(gram, design.T @ targets, assume_a='pos')
    return coef


def fit_least_squares(xs, ys, grid):
    """Fit a curve on ``grid`` minimizing squared error to ``(xs, ys)``."""
    xs = np.ravel(np.asarray(xs, dtype=float))
    ys = np.ravel(np.asarray(ys, dtype=float))
    if xs.size != ys.size:
        raise ValueError('xs and ys must have the same length')
    design = basis_eval(xs, grid)
    return SplineCurve(grid, solve_coefficients(design, ys))


def refine_grid(curve, new_G, sample_xs, adaptive=False):
    """
    Re-fit ``curve`` on a grid with ``new_G`` intervals.

    The new domain is the range of ``sample_xs``; with ``adaptive`` the interior
    knots follow the sample quantiles.
    """
    xs = np.ravel(np.asarray(sample_xs, dtype=float))
    if xs.size == 0:
        raise UnderdeterminedFitError('Cannot refine a grid from an empty sample set')
    if new_G < 1:
        raise ValueError('Number of grid intervals must be positive')
    order = curve.grid.order
    if adaptive:
        grid = Grid.adaptive(xs, new_G, order)
    else:
        lo, hi = xs.min(), xs.max()
        if hi <= lo:
            raise DegenerateInputError('Sample set has zero width')
        grid = Grid.uniform(new_G, order, lo, hi)
    ys = curve_eval(curve, xs, strict=False)
    return fit_least_squares(xs, ys, grid)
