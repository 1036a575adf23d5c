"""
Black-box functions and finite-difference derivatives.

A ``FunctionHandle`` wraps anything that maps a batch of points (M, n) to
values (M,) together with the box it is defined on. Steps are scaled to the
box: variable ``k`` is differentiated with ``fd_step * (hi_k - lo_k)``.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from kanpiler.expressions import eval_expr
from kanpiler.parser import parse_formula
from kanscope.conf import kan_settings
from kanscope.exceptions import DimensionMismatchError, EvaluationDomainError, OutOfDomainError

logger = logging.getLogger(__name__)

# Probes keep this many steps away from the box faces so nested stencils fit.
PROBE_MARGIN = 5


@dataclass
class TestConfig:
    num_probe_points: int = field(default_factory=lambda: kan_settings.PROBE_POINTS)
    fd_step: float = field(default_factory=lambda: kan_settings.FD_STEP)
    threshold: float = field(default_factory=lambda: kan_settings.MODULARITY_THRESHOLD)
    seed: int = 0

    def __post_init__(self):
        if self.num_probe_points < 1:
            raise ValueError('At least one probe point is required')
        if not self.fd_step > 0:
            raise ValueError('Finite-difference step must be positive')
        if not 0 < self.threshold < 1:
            raise ValueError('Threshold must lie in (0, 1)')


@dataclass(eq=False)
class FunctionHandle:
    arity: int
    evaluator: Callable
    domain: List[Tuple[float, float]] = field(default_factory=list)
    names: List[str] = field(default_factory=list)
    gradient_fn: Optional[Callable] = None

    def __post_init__(self):
        if not self.domain:
            self.domain = [(-1.0, 1.0)] * self.arity
        self.domain = [(float(lo), float(hi)) for lo, hi in self.domain]
        if not self.names:
            self.names = [f'x{k + 1}' for k in range(self.arity)]
        if len(self.domain) != self.arity or len(self.names) != self.arity:
            raise DimensionMismatchError('One domain interval and one name per variable are required')
        if any(hi <= lo for lo, hi in self.domain):
            raise OutOfDomainError('Domain intervals must have positive width')

    @classmethod
    def from_callable(cls, fn, arity, domain=None, names=None):
        return cls(arity, fn, _domain_list(domain, names, arity), list(names or []))

    @classmethod
    def from_formula(cls, text, input_names, domain=None):
        """Handle evaluating formula ``text``; points off a primitive's domain come out NaN."""
        tree = parse_formula(text, input_names)
        names = list(input_names)

        def evaluate(X):
            return eval_expr(tree, {name: X[:, k] for k, name in enumerate(names)})

        def evaluator(X):
            try:
                return evaluate(X)
            except EvaluationDomainError:
                pass
            values = np.full(X.shape[0], np.nan)
            for row in range(X.shape[0]):
                try:
                    values[row] = np.ravel(evaluate(X[row:row + 1]))[0]
                except EvaluationDomainError:
                    continue
            return values

        return cls(len(names), evaluator, _domain_list(domain, names, len(names)), names)

    @classmethod
    def from_model(cls, model, output=0, domain=None):
        """Handle on one network output, with exact input gradients."""

        def evaluator(X):
            return model.forward(X)[:, output]

        def gradient(X):
            return model.input_gradient(X)[:, output, :]

        grid_domain = domain or [tuple(kan_settings.GRID_RANGE)] * model.n_inputs
        return cls(model.n_inputs, evaluator, _domain_list(grid_domain, model.input_names, model.n_inputs),
                   list(model.input_names), gradient)

    @property
    def lows(self):
        return np.array([lo for lo, _ in self.domain])

    @property
    def highs(self):
        return np.array([hi for _, hi in self.domain])

    @property
    def widths(self):
        return self.highs - self.lows

    def steps(self, fd_step):
        return fd_step * self.widths

    def __call__(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        values = np.asarray(self.evaluator(X), dtype=float)
        return np.broadcast_to(values, (X.shape[0],)).astype(float)


def _domain_list(domain, names, arity):
    if domain is None:
        return []
    if isinstance(domain, dict):
        return [domain[name] for name in names]
    if len(domain) == 2 and np.isscalar(domain[0]):
        return [tuple(domain)] * arity
    return list(domain)


def probe_points(f, config):
    """Seeded uniform probes kept ``PROBE_MARGIN`` steps inside the box."""
    margin = PROBE_MARGIN * f.steps(config.fd_step)
    rng = np.random.default_rng(config.seed)
    return rng.uniform(f.lows + margin, f.highs - margin, size=(config.num_probe_points, f.arity))


def gradients(f, X, fd_step):
    """Five-point central-difference gradients at every row of ``X``; exact when the handle has them."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if f.gradient_fn is not None:
        return np.asarray(f.gradient_fn(X), dtype=float)
    M, n = X.shape
    h = f.steps(fd_step)
    shift = np.diag(h)
    stencil = np.stack([X[:, None, :] + k * shift for k in (2, 1, -1, -2)])
    v2, v1, m1, m2 = f(stencil.reshape(-1, n)).reshape(4, M, n)
    return (-v2 + 8 * v1 - 8 * m1 + m2) / (12 * h)


def hessians(f, X, fd_step, transform=None):
    """
    Central-difference Hessians at every row of ``X``, symmetrized.

    ``transform`` is applied to the function values before differencing.
    Returns ``(H, valid)`` where ``valid`` flags rows whose whole stencil
    stayed finite.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    M, n = X.shape
    h = f.steps(fd_step)
    E = np.diag(h)
    points = [
        X[:, None, :],
        X[:, None, :] + E,
        X[:, None, :] - E,
        X[:, None, None, :] + E[:, None, :] + E[None, :, :],
        X[:, None, None, :] + E[:, None, :] - E[None, :, :],
        X[:, None, None, :] - E[:, None, :] + E[None, :, :],
        X[:, None, None, :] - E[:, None, :] - E[None, :, :],
    ]
    sizes = [1, n, n, n * n, n * n, n * n, n * n]
    flat = np.concatenate([p.reshape(M, -1, n) for p in points], axis=1)
    values = f(flat.reshape(-1, n)).reshape(M, -1)
    if transform is not None:
        values = transform(values)
    valid = np.all(np.isfinite(values), axis=1)
    values = np.where(np.isfinite(values), values, 0.0)
    parts = np.split(values, np.cumsum(sizes)[:-1], axis=1)
    center, plus, minus = parts[0], parts[1], parts[2]
    pp, pm, mp, mm = (part.reshape(M, n, n) for part in parts[3:])
    H = (pp - pm - mp + mm) / (4 * np.outer(h, h))
    diagonal = (plus - 2 * center + minus) / h ** 2
    H[:, np.arange(n), np.arange(n)] = diagonal
    return (H + np.transpose(H, (0, 2, 1))) / 2, valid


def estimate_hessian(f, x, fd_step=None):
    """Hessian of ``f`` at the single point ``x``, which must sit two steps inside the box."""
    fd_step = kan_settings.FD_STEP if fd_step is None else fd_step
    x = np.asarray(x, dtype=float).ravel()
    if x.size != f.arity:
        raise DimensionMismatchError(f'Expected a point with {f.arity} coordinates')
    margin = 2 * f.steps(fd_step)
    if np.any(x - margin < f.lows) or np.any(x + margin > f.highs):
        raise OutOfDomainError('Point is too close to the domain boundary for the stencil')
    H, valid = hessians(f, x[None, :], fd_step)
    if not valid[0]:
        raise EvaluationDomainError('Function is not finite on the stencil')
    return H[0]
