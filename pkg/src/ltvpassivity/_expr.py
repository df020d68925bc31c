"""Scalar expression grammar for matrix-function entries.

Grammar (whitespace ignored)::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := ('+' | '-') unary | power
    power   := atom (('^' | '**') exponent)?
    exponent:= ['-'] INT | '(' ['-'] INT ')'
    atom    := NUMBER | IMAG | 't' | NAME | '(' expr ')'

``NUMBER`` is a decimal literal, ``IMAG`` is a literal with an ``i`` or ``j``
suffix, or a bare ``i``/``j``.  ``NAME`` must be a declared parameter; it is
replaced by its constant value at parse time.  Anything else is rejected.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np

from .errors import ParseError

__all__ = [
    "Expr", "Const", "Var", "Add", "Sub", "Mul", "Div", "Neg", "Pow",
    "parse_expr", "to_source", "differentiate", "denominators",
]


@dataclass(frozen=True)
class Const:
    value: complex


@dataclass(frozen=True)
class Var:
    pass


@dataclass(frozen=True)
class Add:
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Sub:
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Mul:
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Div:
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Neg:
    arg: "Expr"


@dataclass(frozen=True)
class Pow:
    base: "Expr"
    exponent: int


Expr = Union[Const, Var, Add, Sub, Mul, Div, Neg, Pow]

_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?[ij]?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>\*\*|[-+*/^()])
""", re.VERBOSE)


def _tokenize(src: str):
    pos = 0
    out = []
    while pos < len(src):
        m = _TOKEN.match(src, pos)
        if m is None:
            raise ParseError(f"unknown token {src[pos]!r} at column {pos + 1} in {src!r}")
        kind = m.lastgroup
        if kind != "ws":
            out.append((kind, m.group(kind), pos))
        pos = m.end()
    return out


class _Parser:
    def __init__(self, src: str, params: Mapping[str, complex]):
        self.src = src
        self.toks = _tokenize(src)
        self.i = 0
        self.params = params

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else (None, None, len(self.src))

    def take(self):
        tok = self.peek()
        self.i += 1
        return tok

    def fail(self, msg, pos=None):
        if pos is None:
            pos = self.peek()[2]
        raise ParseError(f"{msg} at column {pos + 1} in {self.src!r}")

    def expect(self, text):
        kind, val, pos = self.take()
        if val != text:
            self.fail(f"expected {text!r}", pos)

    def parse(self) -> Expr:
        if not self.toks:
            self.fail("empty expression")
        node = self.expr()
        if self.i != len(self.toks):
            self.fail("unexpected trailing input")
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            rhs = self.term()
            node = _fold(Add(node, rhs) if op == "+" else Sub(node, rhs))
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            rhs = self.unary()
            node = _fold(Mul(node, rhs) if op == "*" else Div(node, rhs))
        return node

    def unary(self):
        if self.peek()[1] == "-":
            self.take()
            return _fold(Neg(self.unary()))
        if self.peek()[1] == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[1] in ("^", "**"):
            self.take()
            return _fold(Pow(base, self.exponent()))
        return base

    def exponent(self) -> int:
        paren = False
        if self.peek()[1] == "(":
            self.take()
            paren = True
        sign = 1
        if self.peek()[1] == "-":
            self.take()
            sign = -1
        kind, val, pos = self.take()
        if kind != "num" or not val.isdigit():
            self.fail("exponent must be an integer literal", pos)
        if paren:
            self.expect(")")
        return sign * int(val)

    def atom(self):
        kind, val, pos = self.take()
        if kind == "num":
            if val[-1] in "ij":
                return Const(complex(0.0, float(val[:-1])))
            return Const(complex(float(val)))
        if kind == "name":
            if val == "t":
                return Var()
            if val in ("i", "j"):
                return Const(1j)
            if val in self.params:
                return Const(complex(self.params[val]))
            self.fail(f"unknown identifier {val!r}", pos)
        if val == "(":
            node = self.expr()
            self.expect(")")
            return node
        self.fail("unexpected token" if val is not None else "unexpected end of expression", pos)


def _fold(node):
    # all-constant subtrees collapse so printing and reparsing is the identity
    if isinstance(node, Neg) and isinstance(node.arg, Const):
        return Const(-node.arg.value)
    if isinstance(node, Pow) and isinstance(node.base, Const):
        if node.base.value == 0 and node.exponent < 0:
            raise ParseError("zero raised to a negative power")
        return Const(node.base.value ** node.exponent)
    if isinstance(node, (Add, Sub, Mul, Div)) and isinstance(node.left, Const) \
            and isinstance(node.right, Const):
        a, b = node.left.value, node.right.value
        if isinstance(node, Div):
            if b == 0:
                raise ParseError("division by zero constant")
            return Const(a / b)
        return Const({Add: a + b, Sub: a - b, Mul: a * b}[type(node)])
    return node


def parse_expr(src, params: Mapping[str, complex] | None = None) -> Expr:
    """Parse an entry expression; numbers are accepted as constants."""
    if isinstance(src, (int, float, complex, np.number)) and not isinstance(src, bool):
        return Const(complex(src))
    if not isinstance(src, str):
        raise ParseError(f"entry must be a string or number, got {type(src).__name__}")
    return _Parser(src, params or {}).parse()


def evaluate(node: Expr, t):
    """Evaluate ``node`` at ``t`` (scalar or ndarray); returns complex."""
    if isinstance(node, Const):
        return np.full(np.shape(t), node.value, dtype=complex)
    if isinstance(node, Var):
        return np.asarray(t, dtype=complex)
    if isinstance(node, Neg):
        return -evaluate(node.arg, t)
    if isinstance(node, Pow):
        return evaluate(node.base, t) ** node.exponent
    a = evaluate(node.left, t)
    b = evaluate(node.right, t)
    if isinstance(node, Add):
        return a + b
    if isinstance(node, Sub):
        return a - b
    if isinstance(node, Mul):
        return a * b
    return a / b


def _is_zero(node):
    return isinstance(node, Const) and node.value == 0


def _is_one(node):
    return isinstance(node, Const) and node.value == 1


def _add(a, b):
    if _is_zero(a):
        return b
    if _is_zero(b):
        return a
    return Add(a, b)


def _sub(a, b):
    if _is_zero(b):
        return a
    if _is_zero(a):
        return Neg(b)
    return Sub(a, b)


def _mul(a, b):
    if _is_zero(a) or _is_zero(b):
        return Const(0j)
    if _is_one(a):
        return b
    if _is_one(b):
        return a
    return Mul(a, b)


def differentiate(node: Expr) -> Expr:
    """Symbolic d/dt with only trivial zero/one folding."""
    if isinstance(node, Const):
        return Const(0j)
    if isinstance(node, Var):
        return Const(1 + 0j)
    if isinstance(node, Neg):
        d = differentiate(node.arg)
        return Const(0j) if _is_zero(d) else Neg(d)
    if isinstance(node, Add):
        return _add(differentiate(node.left), differentiate(node.right))
    if isinstance(node, Sub):
        return _sub(differentiate(node.left), differentiate(node.right))
    if isinstance(node, Mul):
        return _add(_mul(differentiate(node.left), node.right),
                    _mul(node.left, differentiate(node.right)))
    if isinstance(node, Div):
        num = _sub(_mul(differentiate(node.left), node.right),
                   _mul(node.left, differentiate(node.right)))
        if _is_zero(num):
            return Const(0j)
        return Div(num, Pow(node.right, 2))
    # Pow
    n = node.exponent
    if n == 0:
        return Const(0j)
    inner = differentiate(node.base)
    outer = _mul(Const(complex(n)), node.base if n == 2 else Pow(node.base, n - 1))
    return _mul(outer, inner)


def denominators(node: Expr) -> list:
    """All subexpressions that appear as a divisor or a negative-power base."""
    out = []
    if isinstance(node, Div):
        out.append(node.right)
    if isinstance(node, Pow) and node.exponent < 0:
        out.append(node.base)
    for child in _children(node):
        out.extend(denominators(child))
    return out


def _children(node):
    if isinstance(node, (Add, Sub, Mul, Div)):
        return (node.left, node.right)
    if isinstance(node, Neg):
        return (node.arg,)
    if isinstance(node, Pow):
        return (node.base,)
    return ()


def _fmt_number(x: float) -> str:
    return repr(float(x))


def _fmt_const(c: complex) -> str:
    re_, im = c.real, c.imag
    if im == 0:
        return _fmt_number(re_) if re_ >= 0 else f"({_fmt_number(re_)})"
    if re_ == 0:
        return f"{_fmt_number(im)}i" if im >= 0 else f"(-{_fmt_number(-im)}i)"
    sign = "+" if im >= 0 else "-"
    return f"({_fmt_number(re_)}{sign}{_fmt_number(abs(im))}i)"


_PREC = {Add: 1, Sub: 1, Mul: 2, Div: 2, Neg: 3, Pow: 4, Const: 5, Var: 5}


def to_source(node: Expr) -> str:
    """Print ``node`` so that ``parse_expr(to_source(node)) == node``."""
    if isinstance(node, Const):
        return _fmt_const(node.value)
    if isinstance(node, Var):
        return "t"
    if isinstance(node, Neg):
        return f"-({to_source(node.arg)})"
    if isinstance(node, Pow):
        base = to_source(node.base)
        if not isinstance(node.base, (Var, Const)) or base.startswith("-"):
            base = f"({base})"
        return f"{base}^({node.exponent})"
    op = {Add: "+", Sub: "-", Mul: "*", Div: "/"}[type(node)]
    left = to_source(node.left)
    if _PREC[type(node.left)] < _PREC[type(node)]:
        left = f"({left})"
    right = to_source(node.right)
    # left-associative: same-precedence right operands need brackets
    if _PREC[type(node.right)] <= _PREC[type(node)]:
        right = f"({right})"
    return f"{left} {op} {right}"
