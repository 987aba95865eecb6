"""Tiny arithmetic expression language for analytic fields.

Grammar (``^`` binds tighter than unary minus and is right associative)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | '+' unary | power
    power  := atom ('^' unary)?
    atom   := number | 'pi' | 'x' | 'y' | func '(' expr ')' | '(' expr ')'
    func   := 'sin' | 'cos' | 'exp'

Compiled expressions are vectorised over numpy arrays.
"""

import re

import numpy as np


class ExpressionError(ValueError):
    pass


_TOKEN = re.compile(r"\s*(?:(\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)|([A-Za-z_]\w*)|(\S))")
_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}
_CONSTS = {"pi": np.pi}
_VARS = ("x", "y")


def _tokenize(text):
    pos = 0
    out = []
    text = text.rstrip()
    while pos < len(text):
        mt = _TOKEN.match(text, pos)
        if not mt:
            raise ExpressionError(f"unexpected input at position {pos} in {text!r}")
        num, name, op = mt.groups()
        if num is not None:
            out.append(("num", float(num)))
        elif name is not None:
            out.append(("name", name))
        else:
            if op not in "+-*/^()":
                raise ExpressionError(f"unexpected character {op!r} in {text!r}")
            out.append(("op", op))
        pos = mt.end()
    out.append(("end", None))
    return out


class _Parser:
    def __init__(self, text):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def take(self):
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, op):
        t = self.take()
        if t != ("op", op):
            raise ExpressionError(f"expected {op!r} in {self.text!r}")

    def parse(self):
        if self.peek()[0] == "end":
            raise ExpressionError("empty expression")
        node = self.expr()
        if self.peek()[0] != "end":
            raise ExpressionError(f"trailing input in {self.text!r}")
        return node

    def expr(self):
        node = self.term()
        while self.peek() in (("op", "+"), ("op", "-")):
            op = self.take()[1]
            rhs = self.term()
            node = (lambda a, b: lambda x, y: a(x, y) + b(x, y))(node, rhs) if op == "+" else \
                (lambda a, b: lambda x, y: a(x, y) - b(x, y))(node, rhs)
        return node

    def term(self):
        node = self.unary()
        while self.peek() in (("op", "*"), ("op", "/")):
            op = self.take()[1]
            rhs = self.unary()
            node = (lambda a, b: lambda x, y: a(x, y) * b(x, y))(node, rhs) if op == "*" else \
                (lambda a, b: lambda x, y: a(x, y) / b(x, y))(node, rhs)
        return node

    def unary(self):
        if self.peek() == ("op", "-"):
            self.take()
            a = self.unary()
            return lambda x, y: -a(x, y)
        if self.peek() == ("op", "+"):
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek() == ("op", "^"):
            self.take()
            ex = self.unary()
            return lambda x, y: np.power(base(x, y), ex(x, y))
        return base

    def atom(self):
        kind, val = self.take()
        if kind == "num":
            return lambda x, y: val
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect(")")
            return node
        if kind == "name":
            if val in _FUNCS:
                fn = _FUNCS[val]
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return lambda x, y: fn(arg(x, y))
            if val in _CONSTS:
                c = _CONSTS[val]
                return lambda x, y: c
            if val == "x":
                return lambda x, y: x
            if val == "y":
                return lambda x, y: y
            raise ExpressionError(f"unknown name {val!r}")
        raise ExpressionError(f"unexpected token in {self.text!r}")


def compile_expression(text: str):
    """Return ``f(x, y)`` evaluating ``text``; results broadcast to the input shape."""
    if not isinstance(text, str):
        raise ExpressionError("expression must be a string")
    node = _Parser(text).parse()

    def f(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        with np.errstate(all="ignore"):
            out = np.asarray(node(x, y), dtype=float)
        return np.broadcast_to(out, np.broadcast(x, y).shape).copy()

    f.source = text
    return f


def evaluate(text: str, x, y):
    return compile_expression(text)(x, y)
