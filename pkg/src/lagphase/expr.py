"""Arithmetic expressions over grid coordinates.

Grammar (standard precedence, ``^`` right-associative and binding tighter
than unary minus, so ``-x1^2`` is ``-(x1^2)``)::

    expr    := term (("+" | "-") term)*
    term    := unary (("*" | "/") unary)*
    unary   := "-" unary | "+" unary | power
    power   := atom ("^" unary)?
    atom    := NUMBER | "pi" | VAR | FUNC "(" expr ")" | "(" expr ")"

Variables are ``x1`` .. ``x4``; functions are sin, cos, tan, atan, exp, abs.
Expressions compile to a small AST that evaluates on numpy arrays.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

FUNCTIONS = {
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "atan": np.arctan,
    "exp": np.exp,
    "abs": np.abs,
}

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^()]))"
)


class ExpressionSyntaxError(ValidationError):
    """Malformed expression; ``line`` and ``column`` are 1-based."""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    col: int


def _tokenize(text: str, line: int, col0: int) -> list[_Tok]:
    toks = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            bad = len(text[pos:]) - len(text[pos:].lstrip())
            raise ExpressionSyntaxError(f"unexpected character {text[pos + bad]!r}", line, col0 + pos + bad)
        kind = m.lastgroup
        toks.append(_Tok(kind, m.group(kind), col0 + m.start(kind)))
        pos = m.end()
    toks.append(_Tok("end", "", col0 + len(text)))
    return toks


class Expression:
    """Compiled expression; call with the coordinate arrays ``x1, x2, ...``."""

    def __init__(self, source: str, node, variables: frozenset):
        self.source = source
        self._node = node
        self.variables = variables

    def __call__(self, *coords):
        need = max((int(v[1:]) for v in self.variables), default=0)
        if need > len(coords):
            raise ValidationError(f"expression uses x{need} but only {len(coords)} coordinates exist")
        out = _eval(self._node, coords)
        if coords:
            out = np.broadcast_to(np.asarray(out, dtype=float), np.shape(coords[0])).copy()
        return out

    def __repr__(self):
        return f"Expression({self.source!r})"


def _eval(node, coords):
    op = node[0]
    if op == "num":
        return node[1]
    if op == "var":
        return coords[node[1] - 1]
    if op == "neg":
        return -_eval(node[1], coords)
    if op == "call":
        return FUNCTIONS[node[1]](_eval(node[2], coords))
    a, b = _eval(node[1], coords), _eval(node[2], coords)
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        return np.divide(a, b)
    return np.power(a, b)


class _Parser:
    def __init__(self, toks, line):
        self.toks = toks
        self.i = 0
        self.line = line
        self.variables = set()

    @property
    def cur(self) -> _Tok:
        return self.toks[self.i]

    def fail(self, msg, tok=None):
        tok = tok or self.cur
        raise ExpressionSyntaxError(msg, self.line, tok.col)

    def take(self, text):
        if self.cur.kind == "op" and self.cur.text == text:
            self.i += 1
            return True
        return False

    def expect(self, text):
        if not self.take(text):
            found = self.cur.text or "end of input"
            self.fail(f"expected {text!r}, found {found!r}")

    def parse(self):
        node = self.expr()
        if self.cur.kind != "end":
            self.fail(f"unexpected {self.cur.text!r}")
        return node

    def expr(self):
        node = self.term()
        while self.cur.kind == "op" and self.cur.text in "+-":
            op = self.cur.text
            self.i += 1
            node = (op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.cur.kind == "op" and self.cur.text in "*/":
            op = self.cur.text
            self.i += 1
            node = (op, node, self.unary())
        return node

    def unary(self):
        if self.take("-"):
            return ("neg", self.unary())
        if self.take("+"):
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.take("^"):
            return ("^", base, self.unary())
        return base

    def atom(self):
        tok = self.cur
        if tok.kind == "num":
            self.i += 1
            return ("num", float(tok.text))
        if tok.kind == "name":
            self.i += 1
            if tok.text == "pi":
                return ("num", math.pi)
            m = re.fullmatch(r"x([1-4])", tok.text)
            if m:
                self.variables.add(tok.text)
                return ("var", int(m.group(1)))
            if tok.text in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return ("call", tok.text, arg)
            self.fail(f"unknown name {tok.text!r}", tok)
        if self.take("("):
            node = self.expr()
            self.expect(")")
            return node
        self.fail(f"unexpected {tok.text or 'end of input'!r}")


def parse_expression(text: str, line: int = 1, column: int = 1) -> Expression:
    """Compile ``text``; error positions are offset by ``line`` and ``column``."""
    parser = _Parser(_tokenize(text, line, column), line)
    node = parser.parse()
    return Expression(text, node, frozenset(parser.variables))


def evaluate_constant(text: str, line: int = 1, column: int = 1) -> float:
    """Evaluate a coordinate-free expression such as ``pi/2``."""
    e = parse_expression(text, line, column)
    if e.variables:
        raise ExpressionSyntaxError("constant expected, found a coordinate variable", line, column)
    return float(e())
