"""
Primitive library for symbolic edges.

Each primitive carries its value and first two derivatives so that symbolic
edges take part in forward tangents and backpropagation like spline edges.
Library order is the complexity rank: earlier entries are simpler.
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from kanscope.conf import kan_settings
from kanscope.exceptions import EvaluationDomainError, UnknownPrimitiveError

# Domain kinds
ALL = 'all'
POSITIVE = 'positive'
NONNEGATIVE = 'nonnegative'
NONZERO = 'nonzero'
UNIT = 'unit'
COSINE_NONZERO = 'cos-nonzero'


@dataclass(frozen=True)
class Primitive:
    name: str
    fn: Callable
    d1: Callable
    d2: Callable
    domain: str = ALL
    complexity: int = 0

    def in_domain(self, u):
        u = np.asarray(u, dtype=float)
        if self.domain == POSITIVE:
            return u > 0
        if self.domain == NONNEGATIVE:
            return u >= 0
        if self.domain == NONZERO:
            return u != 0
        if self.domain == UNIT:
            return np.abs(u) <= 1
        if self.domain == COSINE_NONZERO:
            return np.cos(u) != 0
        return np.isfinite(u)

    def guard(self, u, eps=None):
        """Move arguments off poles and out-of-domain regions."""
        eps = kan_settings.SYMBOLIC_GUARD if eps is None else eps
        u = np.asarray(u, dtype=float)
        if self.domain == POSITIVE:
            return np.maximum(u, eps)
        if self.domain == NONNEGATIVE:
            # derivatives of sqrt are singular at zero
            return np.maximum(u, eps)
        if self.domain == NONZERO:
            return np.where(np.abs(u) < eps, np.where(u < 0, -eps, eps), u)
        if self.domain == UNIT:
            return np.clip(u, -1 + eps, 1 - eps)
        return u

    def pole_distance(self, u):
        """Distance to the nearest singularity; infinite for entire functions."""
        u = np.asarray(u, dtype=float)
        if self.domain in (POSITIVE, NONNEGATIVE, NONZERO):
            return np.abs(u)
        if self.domain == UNIT:
            return 1 - np.abs(u)
        if self.domain == COSINE_NONZERO:
            return np.abs(np.cos(u))
        return np.full(u.shape, np.inf)

    def evaluate(self, u, deriv=0, strict=True):
        """``f``, ``f'`` or ``f''`` at ``u``; strict mode rejects out-of-domain values."""
        u = np.asarray(u, dtype=float)
        if strict:
            bad = ~self.in_domain(u)
            if np.any(bad):
                raise EvaluationDomainError(
                    f"{self.name} is undefined at {u[bad].ravel()[0]!r}"
                )
        else:
            u = self.guard(u)
        with np.errstate(divide='ignore', invalid='ignore', over='ignore'):
            return (self.fn, self.d1, self.d2)[deriv](u)


def _zeros(u):
    return np.zeros_like(u)


def _ones(u):
    return np.ones_like(u)


def _sec2(u):
    return 1.0 / np.cos(u) ** 2


def _gauss(u):
    return np.exp(-u ** 2)


_ENTRIES = [
    ('0', _zeros, _zeros, _zeros, ALL),
    ('x', lambda u: u, _ones, _zeros, ALL),
    ('x^2', lambda u: u ** 2, lambda u: 2 * u, lambda u: 2 * np.ones_like(u), ALL),
    ('x^3', lambda u: u ** 3, lambda u: 3 * u ** 2, lambda u: 6 * u, ALL),
    ('x^4', lambda u: u ** 4, lambda u: 4 * u ** 3, lambda u: 12 * u ** 2, ALL),
    ('sqrt', np.sqrt, lambda u: 0.5 / np.sqrt(u), lambda u: -0.25 * u ** -1.5, NONNEGATIVE),
    ('1/x', lambda u: 1.0 / u, lambda u: -1.0 / u ** 2, lambda u: 2.0 / u ** 3, NONZERO),
    ('1/x^2', lambda u: 1.0 / u ** 2, lambda u: -2.0 / u ** 3, lambda u: 6.0 / u ** 4, NONZERO),
    ('x^-0.5', lambda u: u ** -0.5, lambda u: -0.5 * u ** -1.5, lambda u: 0.75 * u ** -2.5, POSITIVE),
    ('exp', np.exp, np.exp, np.exp, ALL),
    ('log', np.log, lambda u: 1.0 / u, lambda u: -1.0 / u ** 2, POSITIVE),
    ('sin', np.sin, np.cos, lambda u: -np.sin(u), ALL),
    ('cos', np.cos, lambda u: -np.sin(u), lambda u: -np.cos(u), ALL),
    ('tan', np.tan, _sec2, lambda u: 2 * _sec2(u) * np.tan(u), COSINE_NONZERO),
    ('tanh', np.tanh, lambda u: 1 - np.tanh(u) ** 2,
     lambda u: -2 * np.tanh(u) * (1 - np.tanh(u) ** 2), ALL),
    ('abs', np.abs, np.sign, _zeros, ALL),
    ('asin', np.arcsin, lambda u: 1.0 / np.sqrt(1 - u ** 2),
     lambda u: u / (1 - u ** 2) ** 1.5, UNIT),
    ('atan', np.arctan, lambda u: 1.0 / (1 + u ** 2),
     lambda u: -2 * u / (1 + u ** 2) ** 2, ALL),
    ('gaussian', _gauss, lambda u: -2 * u * _gauss(u),
     lambda u: (4 * u ** 2 - 2) * _gauss(u), ALL),
]

LIBRARY = {
    name: Primitive(name, fn, d1, d2, domain, rank)
    for rank, (name, fn, d1, d2, domain) in enumerate(_ENTRIES)
}

ALIASES = {
    'zero': '0',
    'identity': 'x',
    'square': 'x^2',
    'cube': 'x^3',
    'quartic': 'x^4',
    'inverse': '1/x',
    'inverse_square': '1/x^2',
    'inverse_sqrt': 'x^-0.5',
}

# Functions a formula may call by name.
CALLABLE = ('sin', 'cos', 'tan', 'exp', 'log', 'sqrt', 'tanh', 'abs', 'asin', 'atan', 'gaussian')


def get_primitive(name):
    """Look up a primitive by canonical name or alias."""
    try:
        return LIBRARY[ALIASES.get(name, name)]
    except KeyError:
        raise UnknownPrimitiveError(f"Unknown primitive '{name}'") from None


def resolve_library(names=None):
    """Library subset in complexity order; ``None`` selects every primitive."""
    if names is None:
        return list(LIBRARY.values())
    entries = {get_primitive(name).name: get_primitive(name) for name in names}
    return sorted(entries.values(), key=lambda p: p.complexity)
