"""
Formula parser.

Precedence climbing over a small token stream. Binding strength, loosest
first: ``+ -``, ``* /``, unary minus, ``^`` (right associative, ``**`` is
accepted as a synonym). See ``docs/grammar.md`` for the grammar.
"""

import math
import re
from dataclasses import dataclass

from kanscope.exceptions import FormulaSyntaxError, UnknownIdentifierError
from symbolic.library import CALLABLE
from .expressions import call, const, negate, power, product_of, sum_of, var

TOKEN = re.compile(r"""
    (?P<space>\s+)
  | (?P<number>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>\*\*|[-+*/^(),])
""", re.VERBOSE)

CONSTANTS = {'pi': math.pi}

BINARY = {
    '+': (1, 'left'),
    '-': (1, 'left'),
    '*': (2, 'left'),
    '/': (2, 'left'),
    '^': (4, 'right'),
}
UNARY_PRECEDENCE = 3


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    position: int


def tokenize(text):
    tokens = []
    position = 0
    while position < len(text):
        match = TOKEN.match(text, position)
        if match is None:
            raise FormulaSyntaxError(f"Unexpected character '{text[position]}'", position)
        kind = match.lastgroup
        if kind != 'space':
            token_text = '^' if match.group() == '**' else match.group()
            tokens.append(Token(kind, token_text, position))
        position = match.end()
    tokens.append(Token('end', '', len(text)))
    return tokens


class Parser:
    def __init__(self, text, input_names):
        self.text = text
        self.input_names = list(input_names)
        self.tokens = tokenize(text)
        self.index = 0

    def peek(self):
        return self.tokens[self.index]

    def advance(self):
        token = self.tokens[self.index]
        self.index += 1
        return token

    def expect(self, text, opening):
        token = self.peek()
        if token.text != text:
            raise FormulaSyntaxError('Unbalanced parentheses: missing ")"', opening.position)
        return self.advance()

    def parse(self):
        if self.peek().kind == 'end':
            raise FormulaSyntaxError('Empty formula', 0)
        tree = self.expression(0)
        token = self.peek()
        if token.kind != 'end':
            if token.text == ')':
                raise FormulaSyntaxError('Unbalanced parentheses: unexpected ")"', token.position)
            raise FormulaSyntaxError(f"Unexpected '{token.text}'", token.position)
        return tree

    def expression(self, min_precedence):
        lhs = self.prefix()
        while True:
            token = self.peek()
            if token.kind != 'op' or token.text not in BINARY:
                return lhs
            precedence, associativity = BINARY[token.text]
            if precedence < min_precedence:
                return lhs
            self.advance()
            rhs = self.expression(precedence + 1 if associativity == 'left' else precedence)
            lhs = self.combine(token.text, lhs, rhs)

    @staticmethod
    def combine(op, lhs, rhs):
        if op == '+':
            return sum_of(lhs, rhs)
        if op == '-':
            return sum_of(lhs, negate(rhs))
        if op == '*':
            return product_of(lhs, rhs)
        if op == '/':
            return product_of(lhs, power(rhs, -1.0))
        return power(lhs, rhs)

    def prefix(self):
        token = self.peek()
        if token.text == '-':
            self.advance()
            return negate(self.expression(UNARY_PRECEDENCE))
        if token.text == '+':
            self.advance()
            return self.expression(UNARY_PRECEDENCE)
        return self.atom()

    def atom(self):
        token = self.advance()
        if token.kind == 'number':
            return const(float(token.text))
        if token.kind == 'name':
            return self.identifier(token)
        if token.text == '(':
            if self.peek().text == ')':
                raise FormulaSyntaxError('Empty parentheses', self.peek().position)
            inner = self.expression(0)
            self.expect(')', token)
            return inner
        if token.kind == 'end':
            raise FormulaSyntaxError('Unexpected end of formula', token.position)
        raise FormulaSyntaxError(f"Unexpected '{token.text}'", token.position)

    def identifier(self, token):
        name = token.text
        called = self.peek().text == '('
        if name in self.input_names:
            if called:
                raise FormulaSyntaxError(f"Variable '{name}' is not a function", token.position)
            return var(name)
        if name in CALLABLE:
            if not called:
                raise FormulaSyntaxError(f"Function '{name}' needs an argument", token.position)
            opening = self.advance()
            if self.peek().text == ')':
                raise FormulaSyntaxError(f"Empty argument to '{name}'", self.peek().position)
            argument = self.expression(0)
            if self.peek().text == ',':
                raise FormulaSyntaxError(f"'{name}' takes one argument", self.peek().position)
            self.expect(')', opening)
            return call(name, argument)
        if name in CONSTANTS and not called:
            return const(CONSTANTS[name])
        raise UnknownIdentifierError(f"Unknown identifier '{name}'", token.position)


def parse_formula(text, input_names):
    """Parse ``text`` over the declared ``input_names`` into an ``ExprTree``."""
    return Parser(text, input_names).parse()


def parse_formulas(text, input_names):
    """Parse ``;``-separated formulas, one tree per output."""
    parts = text.split(';')
    trees = []
    offset = 0
    for part in parts:
        try:
            trees.append(parse_formula(part, input_names))
        except FormulaSyntaxError as exc:
            position = None if exc.position is None else exc.position + offset
            raise type(exc)(exc.detail, position) from None
        offset += len(part) + 1
    return trees
