"""
Fitting edge activations against library primitives.

For a primitive ``f`` the fitted form is ``c * f(a * x + b) + d``. The inner
affine pair ``(a, b)`` is searched on a grid scaled to the input range and
polished with Nelder-Mead; for every ``(a, b)`` the outer pair ``(c, d)`` is
the closed-form least-squares line through ``(f(a x + b), y)``.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from kanscope.conf import kan_settings
from kanscope.exceptions import DegenerateInputError, MissingCacheError
from .library import get_primitive, resolve_library

logger = logging.getLogger(__name__)

GRID_POINTS = 41
SEARCH_BOX = 10.0
POLE_BAND = 1e-2
MIN_COVERAGE = 0.9


@dataclass(frozen=True)
class SymbolicFitResult:
    name: str
    a: float
    b: float
    c: float
    d: float
    r2: float
    complexity: int

    @property
    def affine(self):
        return (self.a, self.b, self.c, self.d)

    def rank_key(self, digits=None):
        digits = kan_settings.R2_DIGITS if digits is None else digits
        return (-round(self.r2, digits), self.complexity, self.name)

    def __call__(self, x):
        u = self.a * np.asarray(x, dtype=float) + self.b
        return self.c * get_primitive(self.name).evaluate(u, strict=False) + self.d


def _line_fit(f, y, weights):
    """Weighted least-squares ``y ~ c f + d`` along the last axis; returns (c, d, r2)."""
    n = weights.sum(axis=-1)
    n = np.where(n > 0, n, 1)
    f_mean = (f * weights).sum(axis=-1) / n
    y_mean = (y * weights).sum(axis=-1) / n
    fc = (f - f_mean[..., None]) * weights
    yc = (y - y_mean[..., None]) * weights
    var = (fc * fc).sum(axis=-1)
    cov = (fc * yc).sum(axis=-1)
    sst = (yc * yc).sum(axis=-1)
    scale = np.maximum(var, np.finfo(float).tiny)
    c = np.where(var > 1e-300, cov / scale, 0.0)
    d = y_mean - c * f_mean
    with np.errstate(divide='ignore', invalid='ignore'):
        explained = np.where(var > 1e-300, cov * cov / scale, 0.0)
        r2 = np.where(sst > 0, explained / np.where(sst > 0, sst, 1.0), 1.0)
    return c, d, r2


def score_samples(x, y, name, a, b, c, d):
    """Coefficient of determination of ``c f(a x + b) + d`` against ``y``."""
    y = np.asarray(y, dtype=float)
    prediction = c * get_primitive(name).evaluate(a * np.asarray(x, dtype=float) + b, strict=False) + d
    sst = float(np.sum((y - y.mean()) ** 2))
    sse = float(np.sum((y - prediction) ** 2))
    if sst == 0.0:
        return 1.0 if sse == 0.0 else 0.0
    return 1.0 - sse / sst


def _usable(primitive, z):
    """Per-sample weights and per-candidate validity for inner arguments ``z``."""
    in_domain = primitive.in_domain(z)
    weights = in_domain & (primitive.pole_distance(z) >= POLE_BAND)
    valid = in_domain.all(axis=-1) & (weights.mean(axis=-1) >= MIN_COVERAGE)
    return weights.astype(float), valid


def _inner_fit(primitive, x, y, a, b):
    z = np.asarray(a)[..., None] * x + np.asarray(b)[..., None]
    weights, valid = _usable(primitive, z)
    f = np.where(weights > 0, primitive.evaluate(np.where(weights > 0, z, 1.0), strict=False), 0.0)
    c, d, r2 = _line_fit(f, y, weights)
    return c, d, np.where(valid & np.isfinite(r2), r2, -np.inf)


def fit_primitive(x, y, primitive, grid_points=GRID_POINTS, box=SEARCH_BOX):
    """Best ``SymbolicFitResult`` of ``primitive`` on samples ``(x, y)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if primitive.name == '0':
        a, b, c, d = 1.0, 0.0, 1.0, float(y.mean())
    elif primitive.name == 'x':
        c, d, _ = _line_fit(x, y, np.ones_like(x))
        a, b, c, d = 1.0, 0.0, float(c), float(d)
    else:
        scale = float(np.max(np.abs(x))) or 1.0
        a_grid = np.linspace(-box, box, grid_points) / scale
        b_grid = np.linspace(-box, box, grid_points)
        A, B = np.meshgrid(a_grid, b_grid, indexing='ij')
        _, _, r2 = _inner_fit(primitive, x, y, A, B)
        best = np.unravel_index(np.argmax(r2), r2.shape)
        start = np.array([A[best], B[best]])
        if np.isfinite(r2[best]):
            def loss(p):
                value = float(_inner_fit(primitive, x, y, p[0], p[1])[2])
                return -value if np.isfinite(value) else 1e3

            result = minimize(loss, start, method='Nelder-Mead',
                              options={'xatol': 1e-10, 'fatol': 1e-14, 'maxiter': 2000})
            if result.fun <= -r2[best]:
                start = result.x
        a, b = (float(v) for v in start)
        c, d, _ = _inner_fit(primitive, x, y, a, b)
        c, d = float(c), float(d)
    r2 = score_samples(x, y, primitive.name, a, b, c, d)
    return SymbolicFitResult(primitive.name, a, b, c, d, r2, primitive.complexity)


def default_library():
    """Every primitive except the zero function."""
    return [p for p in resolve_library() if p.name != '0']


def rank_fits(results, digits=None):
    return sorted(results, key=lambda result: result.rank_key(digits))


def suggest_for_samples(x, y, library=None, top_k=5, digits=None):
    """Rank library primitives by rounded r2, then simplicity, then name."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size == 0 or np.ptp(x) == 0:
        raise DegenerateInputError('Edge inputs are all equal; nothing to fit')
    primitives = default_library() if library is None else resolve_library(library)
    results = [fit_primitive(x, y, primitive) for primitive in primitives]
    ranked = rank_fits(results, digits)
    return ranked[:top_k] if top_k else ranked


def edge_samples(model, edge, X=None):
    """Cached ``(inputs, outputs)`` of edge ``(l, i, j)``."""
    l, i, j = edge
    if X is not None:
        _, _, cache = model.propagate(X, keep_cache=False)
    elif model.cache is not None:
        cache = model.cache
    else:
        raise MissingCacheError('Run a cached forward pass (or pass samples) before fitting edges')
    record = cache.records[l]
    return record.x[:, i].copy(), record.y[:, i, j].copy()


def suggest_symbolic(model, edge, library=None, top_k=5, X=None, digits=None):
    """Ranked symbolic candidates for one edge of ``model``."""
    x, y = edge_samples(model, edge, X)
    ranked = suggest_for_samples(x, y, library, top_k, digits)
    logger.info(f'Edge {tuple(edge)}: best match {ranked[0].name} (r2={ranked[0].r2:.4f})')
    return ranked
