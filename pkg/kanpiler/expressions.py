"""
Expression trees for formulas.

Trees are immutable and hashable so identical subexpressions can be shared
when a formula is laid out as a network. Sums and products are kept flat:
a sum never has a sum child and a product never has a product child.
Subtraction and division have no node of their own; ``a - b`` is
``sum(a, product(-1, b))`` and ``a / b`` is ``product(a, power(b, -1))``.
"""

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from kanscope.exceptions import EvaluationDomainError, UnboundVariableError
from symbolic.library import get_primitive

VAR = 'var'
CONST = 'const'
CALL = 'call'
SUM = 'sum'
PRODUCT = 'product'
POWER = 'power'


@dataclass(frozen=True)
class ExprTree:
    kind: str
    name: str = ''
    value: float = 0.0
    children: Tuple['ExprTree', ...] = ()

    @property
    def is_constant(self):
        return self.kind == CONST

    def __str__(self):
        return to_formula(self)


def var(name):
    return ExprTree(VAR, name=name)


def const(value):
    return ExprTree(CONST, value=float(value))


def call(name, argument):
    return ExprTree(CALL, name=name, children=(argument,))


def power(base, exponent):
    if not isinstance(exponent, ExprTree):
        exponent = const(exponent)
    return ExprTree(POWER, children=(base, exponent))


def _flat(kind, items):
    children = []
    for item in items:
        children.extend(item.children if item.kind == kind else (item,))
    return tuple(children)


def sum_of(*terms):
    return ExprTree(SUM, children=_flat(SUM, terms))


def product_of(*factors):
    return ExprTree(PRODUCT, children=_flat(PRODUCT, factors))


def negate(tree):
    if tree.kind == CONST:
        return const(-tree.value)
    if tree.kind == PRODUCT and tree.children[0].kind == CONST:
        return product_of(const(-tree.children[0].value), *tree.children[1:])
    return product_of(const(-1.0), tree)


def variables(tree):
    """Names of the variables a tree reads, in first-use order."""
    seen = []
    stack = [tree]
    while stack:
        node = stack.pop()
        if node.kind == VAR and node.name not in seen:
            seen.append(node.name)
        stack.extend(reversed(node.children))
    return seen


def primitive_expr(name, argument, a=1.0, b=0.0, c=1.0, d=0.0):
    """Tree of ``c * f(a * argument + b) + d`` for library primitive ``name``."""
    inner = argument
    if a != 1.0:
        inner = product_of(const(a), inner)
    if b != 0.0:
        inner = sum_of(inner, const(b))
    primitive = get_primitive(name).name
    powers = {'x': 1.0, 'x^2': 2.0, 'x^3': 3.0, 'x^4': 4.0,
              '1/x': -1.0, '1/x^2': -2.0, 'x^-0.5': -0.5}
    if primitive == '0':
        return const(d)
    if primitive in powers:
        body = inner if powers[primitive] == 1.0 else power(inner, powers[primitive])
    else:
        body = call(primitive, inner)
    if c != 1.0:
        body = product_of(const(c), body)
    if d != 0.0:
        body = sum_of(body, const(d))
    return body


# evaluation

def _raise_power(base, exponent, strict=True):
    base = np.asarray(base, dtype=float)
    exponent = np.asarray(exponent, dtype=float)
    fractional = exponent != np.round(exponent)
    bad = ((base < 0) & fractional) | ((base == 0) & (exponent < 0))
    if strict and np.any((base < 0) & fractional):
        raise EvaluationDomainError('Fractional power of a negative number')
    if strict and np.any((base == 0) & (exponent < 0)):
        raise EvaluationDomainError('Negative power of zero')
    with np.errstate(divide='ignore', invalid='ignore', over='ignore'):
        return np.where(bad, np.nan, np.power(base, exponent))


def eval_expr(tree, binding, strict=True):
    """
    Evaluate ``tree`` with variables taken from ``binding``.

    Values may be scalars or equally shaped arrays. Library functions are
    evaluated on their strict domains unless ``strict`` is false, in which
    case undefined powers come out as NaN.
    """
    kind = tree.kind
    if kind == CONST:
        return tree.value
    if kind == VAR:
        try:
            value = binding[tree.name]
        except KeyError:
            raise UnboundVariableError(f"Variable '{tree.name}' is not bound") from None
        return np.asarray(value, dtype=float) if np.ndim(value) else float(value)
    values = [eval_expr(child, binding, strict) for child in tree.children]
    if kind == SUM:
        result = values[0]
        for value in values[1:]:
            result = result + value
    elif kind == PRODUCT:
        result = values[0]
        for value in values[1:]:
            result = result * value
    elif kind == POWER:
        result = _raise_power(*values, strict=strict)
    else:
        result = get_primitive(tree.name).evaluate(values[0], strict=strict)
    if np.ndim(result) == 0:
        return float(result)
    return result


# canonical form

def _fold(tree):
    return const(eval_expr(tree, {}))


def canonicalize(tree):
    """
    Fold constant subtrees and normalize sums and products.

    Sums keep one trailing constant, products one leading coefficient; unit
    coefficients, zero offsets and trivial powers are dropped. A constant
    positive base raised to a variable power becomes ``exp(log(base) * p)``.
    """
    if tree.kind in (VAR, CONST):
        return tree
    children = [canonicalize(child) for child in tree.children]
    if all(child.is_constant for child in children):
        return _fold(ExprTree(tree.kind, tree.name, tree.value, tuple(children)))

    if tree.kind == CALL:
        return call(tree.name, children[0])

    if tree.kind == POWER:
        base, exponent = children
        if exponent.is_constant:
            if exponent.value == 1.0:
                return base
            if exponent.value == 0.0:
                return const(1.0)
            return power(base, exponent)
        if base.is_constant and base.value > 0:
            return canonicalize(call('exp', product_of(const(math.log(base.value)), exponent)))
        return power(base, exponent)

    flat = _flat(tree.kind, children)
    constants = [child.value for child in flat if child.is_constant]
    rest = [child for child in flat if not child.is_constant]
    if tree.kind == SUM:
        offset = math.fsum(constants)
        terms = rest + ([const(offset)] if offset != 0.0 else [])
        return terms[0] if len(terms) == 1 else ExprTree(SUM, children=tuple(terms))
    coefficient = math.prod(constants)
    if coefficient == 0.0:
        return const(0.0)
    factors = ([const(coefficient)] if coefficient != 1.0 else []) + rest
    return factors[0] if len(factors) == 1 else ExprTree(PRODUCT, children=tuple(factors))


def affine_parts(tree):
    """Split ``alpha * X + beta`` into ``(alpha, X, beta)`` for a canonical tree."""
    alpha, beta = 1.0, 0.0
    if tree.kind == SUM:
        rest = [child for child in tree.children if not child.is_constant]
        if len(rest) == 1:
            beta = math.fsum(child.value for child in tree.children if child.is_constant)
            tree = rest[0]
    if tree.kind == PRODUCT:
        rest = [child for child in tree.children if not child.is_constant]
        if len(rest) == 1:
            alpha = math.prod(child.value for child in tree.children if child.is_constant)
            tree = rest[0]
    return alpha, tree, beta


# printing

def _number(value):
    return repr(float(value))


def _operand(tree, wrap_kinds):
    text = to_formula(tree)
    if tree.kind in wrap_kinds:
        return f'({text})'
    return text


def to_formula(tree):
    """Formula text that parses back to an identical tree."""
    kind = tree.kind
    if kind == CONST:
        return _number(tree.value)
    if kind == VAR:
        return tree.name
    if kind == CALL:
        return f'{tree.name}({to_formula(tree.children[0])})'
    if kind == SUM:
        return '+'.join(to_formula(child) for child in tree.children)
    if kind == PRODUCT:
        return '*'.join(_operand(child, (SUM,)) for child in tree.children)
    base, exponent = tree.children
    base_text = _operand(base, (SUM, PRODUCT, POWER))
    if base.kind == CONST and base.value < 0:
        base_text = f'({base_text})'
    if exponent.kind == CONST:
        return f'{base_text}^{_number(exponent.value)}'
    return f'{base_text}^({to_formula(exponent)})'
