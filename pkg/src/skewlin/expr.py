"""Arithmetic expressions for user-defined fiber families.

Grammar (precedence low to high)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := ('+' | '-') unary | power
    power  := atom (('^' | '**') unary)?        right associative
    atom   := NUMBER | NAME | NAME '(' expr ')' | '(' expr ')'

Names are variables (``x``, ``b1`` ... ``bd``), the constants ``pi`` and
``e``, or one of the functions in ``FUNCTIONS``.  Expressions evaluate
on numpy arrays and can be differentiated symbolically, which gives the
fiber derivatives of custom families without finite differences.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np


class ExprError(ValueError):
    pass


FUNCTIONS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
}
CONSTANTS = {"pi": np.pi, "e": np.e}


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: object


@dataclass(frozen=True)
class Bin:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class Call:
    fn: str
    arg: object


_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>\*\*|[-+*/^()]))"
)


def tokenize(text):
    pos, out = 0, []
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise ExprError(f"unexpected character {text[pos:].lstrip()[:1]!r} at {pos}")
        kind = m.lastgroup
        tok = m.group(kind)
        out.append((kind, "^" if tok == "**" else tok, m.start(kind)))
        pos = m.end()
    out.append(("end", "", len(text)))
    return out


class Parser:
    def __init__(self, text, variables):
        self.text = text
        self.tokens = tokenize(text)
        self.i = 0
        self.variables = set(variables)

    def peek(self):
        return self.tokens[self.i]

    def take(self, value=None):
        tok = self.tokens[self.i]
        if value is not None and tok[1] != value:
            raise ExprError(f"expected {value!r} at {tok[2]} in {self.text!r}, got {tok[1]!r}")
        self.i += 1
        return tok

    def parse(self):
        node = self.expr()
        if self.peek()[0] != "end":
            tok = self.peek()
            raise ExprError(f"trailing input {tok[1]!r} at {tok[2]} in {self.text!r}")
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
        if self.peek()[1] == "-":
            self.take()
            return Neg(self.unary())
        if self.peek()[1] == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[1] == "^":
            self.take()
            return Bin("^", base, self.unary())
        return base

    def atom(self):
        kind, tok, pos = self.take()
        if kind == "num":
            return Num(float(tok))
        if kind == "name":
            if tok in FUNCTIONS:
                self.take("(")
                arg = self.expr()
                self.take(")")
                return Call(tok, arg)
            if tok in CONSTANTS:
                return Num(CONSTANTS[tok])
            if tok in self.variables:
                return Var(tok)
            raise ExprError(f"unknown name {tok!r} at {pos} in {self.text!r}")
        if tok == "(":
            node = self.expr()
            self.take(")")
            return node
        raise ExprError(f"unexpected {tok or 'end of input'!r} at {pos} in {self.text!r}")


def parse(text, variables=("x",)):
    return Parser(text, variables).parse()


def evaluate(node, env):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return env[node.name]
    if isinstance(node, Neg):
        return -evaluate(node.arg, env)
    if isinstance(node, Call):
        return FUNCTIONS[node.fn](evaluate(node.arg, env))
    a = evaluate(node.left, env)
    b = evaluate(node.right, env)
    if node.op == "+":
        return a + b
    if node.op == "-":
        return a - b
    if node.op == "*":
        return a * b
    if node.op == "/":
        return a / b
    if isinstance(node.right, Num) and float(node.right.value).is_integer():
        return a ** int(node.right.value)
    return a ** b


# -- symbolic differentiation -------------------------------------------------

ZERO, ONE = Num(0.0), Num(1.0)


def _add(a, b):
    if a == ZERO:
        return b
    if b == ZERO:
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value + b.value)
    return Bin("+", a, b)


def _sub(a, b):
    if b == ZERO:
        return a
    if a == ZERO:
        return _neg(b)
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value - b.value)
    return Bin("-", a, b)


def _neg(a):
    if isinstance(a, Num):
        return Num(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def _mul(a, b):
    if a == ZERO or b == ZERO:
        return ZERO
    if a == ONE:
        return b
    if b == ONE:
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value * b.value)
    return Bin("*", a, b)


def _div(a, b):
    if a == ZERO:
        return ZERO
    if b == ONE:
        return a
    return Bin("/", a, b)


def _depends(node, var):
    if isinstance(node, Var):
        return node.name == var
    if isinstance(node, Num):
        return False
    if isinstance(node, (Neg, Call)):
        return _depends(node.arg, var)
    return _depends(node.left, var) or _depends(node.right, var)


def diff(node, var):
    """Symbolic derivative of ``node`` with respect to variable ``var``."""
    if not _depends(node, var):
        return ZERO
    if isinstance(node, Var):
        return ONE
    if isinstance(node, Neg):
        return _neg(diff(node.arg, var))
    if isinstance(node, Call):
        u, du = node.arg, diff(node.arg, var)
        outer = {
            "sin": lambda: Call("cos", u),
            "cos": lambda: Neg(Call("sin", u)),
            "exp": lambda: Call("exp", u),
            "log": lambda: Bin("/", ONE, u),
            "sqrt": lambda: Bin("/", Num(0.5), Call("sqrt", u)),
        }[node.fn]()
        return _mul(outer, du)
    a, b = node.left, node.right
    da, db = diff(a, var), diff(b, var)
    if node.op == "+":
        return _add(da, db)
    if node.op == "-":
        return _sub(da, db)
    if node.op == "*":
        return _add(_mul(da, b), _mul(a, db))
    if node.op == "/":
        return _div(_sub(_mul(da, b), _mul(a, db)), Bin("^", b, Num(2.0)))
    # power
    if not _depends(b, var):
        if isinstance(b, Num):
            expo = Num(b.value - 1.0)
        else:
            expo = Bin("-", b, ONE)
        return _mul(_mul(b, Bin("^", a, expo)), da)
    # a^b = exp(b log a)
    inner = _add(_mul(db, Call("log", a)), _div(_mul(b, da), a))
    return _mul(node, inner)


class Expression:
    """Parsed expression bound to a variable list, callable on arrays."""

    def __init__(self, text, variables=("x",)):
        self.text = text
        self.variables = tuple(variables)
        self.tree = parse(text, variables)

    @classmethod
    def _from_tree(cls, tree, text, variables):
        obj = cls.__new__(cls)
        obj.text, obj.tree, obj.variables = text, tree, tuple(variables)
        return obj

    def __call__(self, **env):
        missing = [v for v in self.variables if v not in env and _depends(self.tree, v)]
        if missing:
            raise ExprError(f"missing variables {missing} for {self.text!r}")
        return evaluate(self.tree, env)

    def derivative(self, var, order=1):
        tree = self.tree
        for _ in range(order):
            tree = diff(tree, var)
        return Expression._from_tree(tree, f"d^{order}/d{var}^{order}[{self.text}]", self.variables)

    def depends_on(self, var):
        return _depends(self.tree, var)

    def __repr__(self):
        return f"Expression({self.text!r})"
