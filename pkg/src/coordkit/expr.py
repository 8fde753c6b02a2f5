"""Smooth time-expression mini-language.

Schedules such as reference speeds or time-varying distance bounds are given
as strings over a single variable ``t``::

    >>> e = parse_expr("2*sin(5*t/4)")
    >>> e(0.0), e.deriv(0.0)
    (0.0, 2.5)

Grammar (lowest to highest precedence)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' ['-'] INTEGER)?
    atom   := NUMBER | 't' | 'pi' | FUNC '(' expr ')' | '(' expr ')'
    FUNC   := sin | cos | tan | exp | sqrt

``**`` is accepted as a synonym for ``^``. Non-smooth primitives (abs, min,
max, floor) are deliberately absent.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable

from .errors import ExpressionError, ParseError

FUNCTIONS = ("sin", "cos", "tan", "exp", "sqrt")
TAN_GUARD = 1e-9


# --------------------------------------------------------------------------
# tree nodes

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    pass


@dataclass(frozen=True)
class Neg:
    arg: object


@dataclass(frozen=True)
class Bin:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class Pow:
    base: object
    exponent: int


@dataclass(frozen=True)
class Call:
    name: str
    arg: object


T = Var()
ZERO = Num(0.0)
ONE = Num(1.0)


# --------------------------------------------------------------------------
# tokenizer / parser

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>\*\*|[-+*/^()])
    """,
    re.VERBOSE,
)

_PRIMARY_EXPECTED = {"number", "t", "pi", "function", "(", "-"}


class _Parser:
    def __init__(self, src: str):
        self.src = src
        self.tokens = []  # (kind, text, byte offset)
        pos = 0
        while pos < len(src):
            m = _TOKEN_RE.match(src, pos)
            if m is None:
                # reported by the parser, which knows what it expected here
                self.tokens.append(("bad", src[pos], self._bytes(pos)))
                break
            kind = m.lastgroup
            if kind != "ws":
                text = m.group()
                if kind == "op" and text == "**":
                    text = "^"
                self.tokens.append((kind, text, self._bytes(pos)))
            pos = m.end()
        self.end = self._bytes(len(src))
        self.i = 0
        self.pow_end = -1  # token index just past the last exponent

    def _bytes(self, char_index):
        return len(self.src[:char_index].encode("utf-8"))

    def peek(self):
        if self.i < len(self.tokens):
            return self.tokens[self.i]
        return ("end", "", self.end)

    def take(self):
        tok = self.peek()
        self.i += 1
        return tok

    @staticmethod
    def _what(kind, text):
        if kind == "end":
            return "end of input"
        return f"character {text!r}" if kind == "bad" else repr(text)

    def follow(self, *extra):
        """Tokens that may follow a complete operand here."""
        ops = {"+", "-", "*", "/"} if self.i == self.pow_end else {"+", "-", "*", "/", "^"}
        return ops | set(extra)

    def expect(self, text, expected=None):
        kind, got, off = self.peek()
        if got != text or kind == "end":
            raise ParseError(f"unexpected {self._what(kind, got)}", off, expected or {text})
        self.i += 1

    def parse(self):
        node = self.expr()
        kind, text, off = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected {self._what(kind, text)}", off, self.follow("end of input"))
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = Bin(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = Bin(op, node, self.unary())
        return node

    def unary(self):
        if self.peek()[:2] == ("op", "-"):
            self.take()
            return Neg(self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[:2] == ("op", "^"):
            self.take()
            sign = 1
            if self.peek()[:2] == ("op", "-"):
                self.take()
                sign = -1
            kind, text, off = self.peek()
            if kind != "num" or not text.isdigit():
                raise ParseError("exponent must be an integer literal", off, {"integer"})
            self.take()
            self.pow_end = self.i
            return Pow(base, sign * int(text))
        return base

    def atom(self):
        kind, text, off = self.peek()
        if kind == "num":
            self.take()
            return Num(float(text))
        if kind == "name":
            self.take()
            if text == "t":
                return T
            if text == "pi":
                return Num(math.pi)
            if text in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")", self.follow(")"))
                return Call(text, arg)
            raise ParseError(f"unknown name {text!r}", off, _PRIMARY_EXPECTED)
        if (kind, text) == ("op", "("):
            self.take()
            node = self.expr()
            self.expect(")", self.follow(")"))
            return node
        raise ParseError(f"unexpected {self._what(kind, text)}", off, _PRIMARY_EXPECTED)


def parse_tree(src: str):
    return _Parser(src).parse()


# --------------------------------------------------------------------------
# printing

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def _prec(node):
    if isinstance(node, Bin):
        return _PREC[node.op]
    if isinstance(node, Neg):
        return 3
    if isinstance(node, Pow):
        return 4
    if isinstance(node, Num) and node.value < 0:
        return 3
    return 5


def to_string(node) -> str:
    """Render a tree so that parsing the result yields the same tree."""
    if isinstance(node, Num):
        return repr(float(node.value))
    if isinstance(node, Var):
        return "t"
    if isinstance(node, Call):
        return f"{node.name}({to_string(node.arg)})"
    if isinstance(node, Neg):
        inner = to_string(node.arg)
        return "-" + (f"({inner})" if _prec(node.arg) < 3 else inner)
    if isinstance(node, Pow):
        inner = to_string(node.base)
        if _prec(node.base) < 5:
            inner = f"({inner})"
        return f"{inner}^{node.exponent}"
    p = _PREC[node.op]
    left = to_string(node.left)
    right = to_string(node.right)
    if _prec(node.left) < p:
        left = f"({left})"
    if _prec(node.right) <= p:
        right = f"({right})"
    return f"{left} {node.op} {right}"


# --------------------------------------------------------------------------
# symbolic derivative with light algebraic folding

def _is(node, v):
    return isinstance(node, Num) and node.value == v


def _add(a, b):
    if _is(a, 0.0):
        return b
    if _is(b, 0.0):
        return a
    return Bin("+", a, b)


def _sub(a, b):
    if _is(b, 0.0):
        return a
    if _is(a, 0.0):
        return _neg(b)
    return Bin("-", a, b)


def _mul(a, b):
    if _is(a, 0.0) or _is(b, 0.0):
        return ZERO
    if _is(a, 1.0):
        return b
    if _is(b, 1.0):
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value * b.value)
    return Bin("*", a, b)


def _div(a, b):
    if _is(a, 0.0):
        return ZERO
    if _is(b, 1.0):
        return a
    return Bin("/", a, b)


def _neg(a):
    if _is(a, 0.0):
        return ZERO
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def _pow(a, n):
    if n == 0:
        return ONE
    if n == 1:
        return a
    return Pow(a, n)


def differentiate(node):
    """Exact derivative tree of ``node`` with respect to t."""
    if isinstance(node, Num):
        return ZERO
    if isinstance(node, Var):
        return ONE
    if isinstance(node, Neg):
        return _neg(differentiate(node.arg))
    if isinstance(node, Bin):
        u, v = node.left, node.right
        du, dv = differentiate(u), differentiate(v)
        if node.op == "+":
            return _add(du, dv)
        if node.op == "-":
            return _sub(du, dv)
        if node.op == "*":
            return _add(_mul(du, v), _mul(u, dv))
        # quotient rule
        return _div(_sub(_mul(du, v), _mul(u, dv)), _pow(v, 2))
    if isinstance(node, Pow):
        n = node.exponent
        if n == 0:
            return ZERO
        return _mul(_mul(Num(float(n)), _pow(node.base, n - 1)), differentiate(node.base))
    if isinstance(node, Call):
        u = node.arg
        du = differentiate(u)
        if node.name == "sin":
            outer = Call("cos", u)
        elif node.name == "cos":
            outer = _neg(Call("sin", u))
        elif node.name == "tan":
            return _div(du, _pow(Call("cos", u), 2))
        elif node.name == "exp":
            outer = Call("exp", u)
        else:  # sqrt
            return _div(du, _mul(Num(2.0), Call("sqrt", u)))
        return _mul(outer, du)
    raise TypeError(f"not an expression node: {node!r}")


# --------------------------------------------------------------------------
# evaluation

def _tan(a):
    c = math.cos(a)
    if abs(c) <= TAN_GUARD:
        raise ExpressionError(f"tan pole at argument {a!r}")
    return math.sin(a) / c


def _sqrt(a):
    if a < 0.0:
        raise ExpressionError(f"sqrt of negative value {a!r}")
    return math.sqrt(a)


def _exp(a):
    try:
        return math.exp(a)
    except OverflowError as exc:
        raise ExpressionError(f"exp overflow at {a!r}") from exc


_CALLS = {"sin": math.sin, "cos": math.cos, "tan": _tan, "exp": _exp, "sqrt": _sqrt}


def compile_tree(node) -> Callable[[float], float]:
    """Turn a tree into a closure ``f(t) -> float``."""
    if isinstance(node, Num):
        v = float(node.value)
        return lambda t: v
    if isinstance(node, Var):
        return lambda t: t
    if isinstance(node, Neg):
        f = compile_tree(node.arg)
        return lambda t: -f(t)
    if isinstance(node, Pow):
        f = compile_tree(node.base)
        n = node.exponent
        if n >= 0:
            return lambda t: f(t) ** n

        def negpow(t):
            b = f(t)
            if b == 0.0:
                raise ExpressionError("zero raised to a negative power")
            return b ** n
        return negpow
    if isinstance(node, Call):
        f = compile_tree(node.arg)
        g = _CALLS[node.name]
        return lambda t: g(f(t))
    f = compile_tree(node.left)
    g = compile_tree(node.right)
    if node.op == "+":
        return lambda t: f(t) + g(t)
    if node.op == "-":
        return lambda t: f(t) - g(t)
    if node.op == "*":
        return lambda t: f(t) * g(t)

    def div(t):
        d = g(t)
        if d == 0.0:
            raise ExpressionError("division by zero")
        return f(t) / d
    return div


class TimeExpr:
    """A parsed smooth function of time together with its exact derivative."""

    __slots__ = ("tree", "dtree", "_f", "_df")

    def __init__(self, tree):
        self.tree = tree
        self.dtree = differentiate(tree)
        self._f = compile_tree(tree)
        self._df = compile_tree(self.dtree)

    @classmethod
    def constant(cls, value: float) -> "TimeExpr":
        return cls(Num(float(value)))

    @classmethod
    def coerce(cls, value) -> "TimeExpr":
        """Accept a TimeExpr, a number, or expression source text."""
        if isinstance(value, TimeExpr):
            return value
        if isinstance(value, str):
            return parse_expr(value)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise TypeError(f"cannot interpret {value!r} as a time expression")
        return cls.constant(value)

    @property
    def is_constant(self) -> bool:
        return isinstance(self.tree, Num)

    def __call__(self, t: float) -> float:
        return self._f(t)

    def deriv(self, t: float) -> float:
        return self._df(t)

    def pretty(self) -> str:
        return to_string(self.tree)

    def to_json(self):
        if isinstance(self.tree, Num):
            return float(self.tree.value)
        return self.pretty()

    def __eq__(self, other):
        return isinstance(other, TimeExpr) and self.tree == other.tree

    def __hash__(self):
        return hash(self.tree)

    def __repr__(self):
        return f"TimeExpr({self.pretty()!r})"


def parse_expr(src: str) -> TimeExpr:
    return TimeExpr(parse_tree(src))
