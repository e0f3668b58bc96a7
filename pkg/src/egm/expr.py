"""Tiny expression language for closed-form initial data.

Grammar::

    expr  := term (('+' | '-') term)*
    term  := unary (('*' | '/') unary)*
    unary := ('+' | '-') unary | atom
    atom  := NUMBER | NAME | FUNC '(' expr ')' | '(' expr ')'

Names: ``tau x y z`` (coordinates), ``i`` (imaginary unit), ``pi``.
Functions: ``sin cos exp``.  Expressions compile to numpy callables.
"""

from __future__ import annotations

import re

import numpy as np

from .biquat import Biquaternion
from .errors import NonFiniteValue, ParseError

VARIABLES = ("tau", "x", "y", "z")
CONSTANTS = {"i": 1j, "pi": np.pi}
FUNCTIONS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}

_TOKEN = re.compile(r"(\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)|([A-Za-z_]\w*)|(\S)")


def _tokenize(text):
    out = []
    pos = 0
    n = len(text)
    while pos < n:
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN.match(text, pos)
        num, name, op = m.groups()
        start = pos
        if num is not None:
            out.append(("num", float(num), start))
        elif name is not None:
            out.append(("name", name, start))
        elif op is not None:
            if op not in "+-*/()":
                raise ParseError(f"unexpected character {op!r}", start)
            out.append(("op", op, start))
        pos = m.end()
    out.append(("end", None, len(text)))
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
        kind, val, pos = self.take()
        if kind != "op" or val != op:
            raise ParseError(f"expected {op!r}", pos)

    def parse(self):
        if self.peek()[0] == "end":
            raise ParseError("empty expression", 0)
        node = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected {val!r}", pos)
        return node

    def expr(self):
        node = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.take()[1]
            rhs = self.term()
            node = (np.add if op == "+" else np.subtract, node, rhs)
        return node

    def term(self):
        node = self.unary()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            op = self.take()[1]
            rhs = self.unary()
            node = (np.multiply if op == "*" else np.divide, node, rhs)
        return node

    def unary(self):
        kind, val, _ = self.peek()
        if kind == "op" and val in "+-":
            self.take()
            inner = self.unary()
            return inner if val == "+" else (np.negative, inner)
        return self.atom()

    def atom(self):
        kind, val, pos = self.take()
        if kind == "num":
            return ("const", val)
        if kind == "name":
            if val in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return (FUNCTIONS[val], arg)
            if val in VARIABLES:
                return ("var", VARIABLES.index(val))
            if val in CONSTANTS:
                return ("const", CONSTANTS[val])
            raise ParseError(f"unknown name {val!r}", pos)
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect(")")
            return node
        if kind == "end":
            raise ParseError(f"unexpected end of expression", pos)
        raise ParseError(f"unexpected {val!r}", pos)


def _eval(node, env):
    head = node[0]
    if head == "const":
        return node[1]
    if head == "var":
        return env[node[1]]
    if len(node) == 2:
        return head(_eval(node[1], env))
    return head(_eval(node[1], env), _eval(node[2], env))


def compile_expression(text):
    """Parse ``text`` into a callable ``(tau, x, y, z) -> complex ndarray``."""
    if not isinstance(text, str):
        raise ParseError(f"expression must be a string, got {type(text).__name__}", 0)
    tree = _Parser(text).parse()

    def fn(tau, x, y, z):
        shape = np.broadcast_shapes(np.shape(tau), np.shape(x), np.shape(y), np.shape(z))
        with np.errstate(all="ignore"):
            val = _eval(tree, (tau, x, y, z))
        return np.broadcast_to(np.asarray(val, dtype=complex), shape)

    fn.source = text
    return fn


def biquat_expression(spec):
    """Callable ``(tau, x, y, z) -> Biquaternion`` from ``{"s": str, "v": [str, str, str]}``."""
    s_fn = compile_expression(spec.get("s", "0"))
    v_src = spec.get("v", ["0", "0", "0"])
    if len(v_src) != 3:
        raise ParseError("vector part needs exactly three expressions", 0)
    v_fns = [compile_expression(t) for t in v_src]

    def fn(tau, x, y, z):
        s = s_fn(tau, x, y, z)
        v = np.stack(np.broadcast_arrays(*(f(tau, x, y, z) for f in v_fns), s)[:3])
        return Biquaternion._wrap(np.broadcast_to(s, v.shape[1:]), v)

    return fn


def check_finite(values, grid, what="expression"):
    """Raise :class:`NonFiniteValue` naming the first offending node."""
    bad = ~np.isfinite(values)
    if bad.any():
        idx = np.unravel_index(int(np.flatnonzero(bad)[0]), values.shape)
        idx = idx[-4:]
        node = grid.coord_of(idx)
        raise NonFiniteValue(f"{what} is not finite", tuple(float(c) for c in node))


def emit_expression_field(expr, grid):
    """Scalar-part field from one expression, or a full ``{"s", "v"}`` spec."""
    from .grid import BiquatField

    spec = {"s": expr} if isinstance(expr, str) else expr
    fn = biquat_expression(spec)
    val = fn(*grid.coords())
    s = np.broadcast_to(val.s, grid.shape)
    v = np.broadcast_to(val.v, (3,) + grid.shape)
    check_finite(s, grid, f"expression {spec.get('s', '0')!r}")
    for k in range(3):
        check_finite(v[k], grid, f"expression {spec.get('v', ['0'] * 3)[k]!r}")
    return BiquatField(grid, Biquaternion._wrap(np.array(s), np.array(v)))
