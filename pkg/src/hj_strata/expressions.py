"""Scalar expression language for scenario fields.

Expressions are written over the slow variables ``x1, x2`` and the fast
variables ``y1, y2`` with the usual arithmetic operators ``+ - * / ^``
(``^`` is right-associative power), unary minus, and the function set
``sin cos exp abs sqrt min max wrap smoothstep``.

``wrap(v, T)`` reduces ``v`` modulo the period ``T`` into ``[0, T)``;
``smoothstep(a, b, v)`` is the cubic ramp that is 0 at ``v = a``, 1 at
``v = b`` and exactly saturated outside (reversed edges ``a > b`` give the
descending ramp).  Both are the tools scenarios use to build periodic and
compactly supported field patterns, so they are exact at their edges rather
than merely close.

Parsing produces a small immutable AST; :meth:`ScalarExpr.text` prints the
canonical form, and parsing that text again yields a structurally identical
tree.  Evaluation is vectorized over numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np

__all__ = ["ExpressionError", "ScalarExpr", "parse_expression"]

VARIABLES = ("x1", "x2", "y1", "y2")

# name -> arity
FUNCTIONS = {
    "sin": 1,
    "cos": 1,
    "exp": 1,
    "abs": 1,
    "sqrt": 1,
    "min": 2,
    "max": 2,
    "wrap": 2,
    "smoothstep": 3,
}


class ExpressionError(ValueError):
    """Syntax or validity error in an expression source string.

    ``offset`` is the byte offset of the offending token in the source.
    """

    def __init__(self, message: str, source: str, offset: int):
        self.offset = offset
        self.source = source
        super().__init__(f"{message} (at offset {offset} in {source!r})")


@dataclass(frozen=True, slots=True)
class Num:
    value: float


@dataclass(frozen=True, slots=True)
class Var:
    name: str


@dataclass(frozen=True, slots=True)
class Neg:
    operand: "Node"


@dataclass(frozen=True, slots=True)
class Bin:
    op: str  # one of + - * / ^
    left: "Node"
    right: "Node"


@dataclass(frozen=True, slots=True)
class Call:
    func: str
    args: tuple["Node", ...]


Node = Union[Num, Var, Neg, Bin, Call]

# Binding powers for the Pratt parser / canonical printer.
_ADD, _MUL, _UNARY, _POW, _ATOM = 10, 20, 30, 40, 50
_BIN_POWER = {"+": _ADD, "-": _ADD, "*": _MUL, "/": _MUL, "^": _POW}


def _tokenize(src: str) -> list[tuple[str, str, int]]:
    tokens: list[tuple[str, str, int]] = []
    i, n = 0, len(src)
    while i < n:
        ch = src[i]
        if ch.isspace():
            i += 1
            continue
        if ch in "+-*/^(),":
            tokens.append(("op", ch, i))
            i += 1
            continue
        if ch.isdigit() or (ch == "." and i + 1 < n and src[i + 1].isdigit()):
            j = i
            while j < n and (src[j].isdigit() or src[j] == "."):
                j += 1
            if j < n and src[j] in "eE":
                k = j + 1
                if k < n and src[k] in "+-":
                    k += 1
                if k < n and src[k].isdigit():
                    j = k
                    while j < n and src[j].isdigit():
                        j += 1
            text = src[i:j]
            try:
                float(text)
            except ValueError:
                raise ExpressionError(f"malformed number {text!r}", src, i) from None
            tokens.append(("num", text, i))
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (src[j].isalnum() or src[j] == "_"):
                j += 1
            tokens.append(("name", src[i:j], i))
            i = j
            continue
        raise ExpressionError(f"unexpected character {ch!r}", src, i)
    tokens.append(("end", "", n))
    return tokens


class _Parser:
    def __init__(self, src: str):
        self.src = src
        self.tokens = _tokenize(src)
        self.pos = 0

    def peek(self) -> tuple[str, str, int]:
        return self.tokens[self.pos]

    def advance(self) -> tuple[str, str, int]:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, text: str) -> None:
        kind, t, off = self.peek()
        if kind != "op" or t != text:
            raise ExpressionError(f"expected {text!r}", self.src, off)
        self.advance()

    def parse(self) -> Node:
        node = self.expression(0)
        kind, text, off = self.peek()
        if kind != "end":
            raise ExpressionError(f"unexpected trailing input {text!r}", self.src, off)
        return node

    def expression(self, min_power: int) -> Node:
        node = self.prefix()
        while True:
            kind, text, _ = self.peek()
            if kind != "op" or text not in _BIN_POWER:
                return node
            power = _BIN_POWER[text]
            if power < min_power:
                return node
            self.advance()
            # '^' is right-associative, the rest left-associative.
            right = self.expression(power if text == "^" else power + 1)
            node = Bin(text, node, right)

    def prefix(self) -> Node:
        kind, text, off = self.advance()
        if kind == "num":
            return Num(float(text))
        if kind == "name":
            if text in VARIABLES:
                return Var(text)
            if text in FUNCTIONS:
                self.expect("(")
                args = [self.expression(0)]
                while True:
                    k, t, o = self.peek()
                    if k == "op" and t == ",":
                        self.advance()
                        args.append(self.expression(0))
                    else:
                        break
                self.expect(")")
                arity = FUNCTIONS[text]
                if len(args) != arity:
                    raise ExpressionError(
                        f"{text} takes {arity} argument(s), got {len(args)}", self.src, off
                    )
                return Call(text, tuple(args))
            raise ExpressionError(f"unknown name {text!r}", self.src, off)
        if kind == "op" and text == "-":
            return Neg(self.expression(_UNARY))
        if kind == "op" and text == "+":
            return self.expression(_UNARY)
        if kind == "op" and text == "(":
            node = self.expression(0)
            self.expect(")")
            return node
        raise ExpressionError(f"unexpected token {text!r}" if text else "unexpected end of input", self.src, off)


def _power(node: Node) -> int:
    if isinstance(node, (Num, Var, Call)):
        return _ATOM
    if isinstance(node, Neg):
        return _UNARY
    return _BIN_POWER[node.op]


def _format_number(v: float) -> str:
    if math.isfinite(v) and v == int(v) and abs(v) < 1e16:
        return str(int(v))
    return repr(v)


def _print(node: Node) -> str:
    if isinstance(node, Num):
        return _format_number(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        inner = _print(node.operand)
        if _power(node.operand) < _UNARY:
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(node, Call):
        return f"{node.func}({', '.join(_print(a) for a in node.args)})"
    power = _BIN_POWER[node.op]
    left = _print(node.left)
    right = _print(node.right)
    # Left child needs parens below the operator power (or at it, for the
    # right-associative '^'); right child needs them at-or-below for the
    # left-associative operators.
    lp = _power(node.left)
    rp = _power(node.right)
    if node.op == "^":
        if lp <= power:
            left = f"({left})"
        if rp < power:
            right = f"({right})"
    else:
        if lp < power:
            left = f"({left})"
        if rp <= power:
            # Parenthesize equal-precedence right children even for + and *:
            # "a + (b + c)" keeps the tree distinct from "(a + b) + c".
            right = f"({right})"
    return f"{left} {node.op} {right}" if node.op in "+-" else f"{left}{node.op}{right}"


def _evaluate(node: Node, env: Mapping[str, np.ndarray | float]):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return env[node.name]
    if isinstance(node, Neg):
        return -_evaluate(node.operand, env)
    if isinstance(node, Bin):
        a = _evaluate(node.left, env)
        b = _evaluate(node.right, env)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if node.op == "/":
            return a / b
        return np.power(a, b)
    a = [_evaluate(arg, env) for arg in node.args]
    f = node.func
    if f == "sin":
        return np.sin(a[0])
    if f == "cos":
        return np.cos(a[0])
    if f == "exp":
        return np.exp(a[0])
    if f == "abs":
        return np.abs(a[0])
    if f == "sqrt":
        return np.sqrt(a[0])
    if f == "min":
        return np.minimum(a[0], a[1])
    if f == "max":
        return np.maximum(a[0], a[1])
    if f == "wrap":
        v, period = a
        return v - period * np.floor(v / period)
    # smoothstep(a, b, v): cubic ramp, exactly saturated outside the edges.
    lo, hi, v = a
    t = np.clip((v - lo) / (hi - lo), 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def _free_vars(node: Node, acc: set[str]) -> None:
    if isinstance(node, Var):
        acc.add(node.name)
    elif isinstance(node, Neg):
        _free_vars(node.operand, acc)
    elif isinstance(node, Bin):
        _free_vars(node.left, acc)
        _free_vars(node.right, acc)
    elif isinstance(node, Call):
        for a in node.args:
            _free_vars(a, acc)


@dataclass(frozen=True, slots=True)
class ScalarExpr:
    """A parsed scalar expression over ``x1, x2, y1, y2``."""

    root: Node

    def text(self) -> str:
        """Canonical source form; parsing it reproduces ``root`` exactly."""
        return _print(self.root)

    def __call__(self, **env: np.ndarray | float):
        """Evaluate with numpy broadcasting; missing variables must be unused."""
        missing = self.free_vars() - set(env)
        if missing:
            raise KeyError(f"expression uses unbound variable(s) {sorted(missing)}")
        return _evaluate(self.root, env)

    def free_vars(self) -> set[str]:
        acc: set[str] = set()
        _free_vars(self.root, acc)
        return acc


def parse_expression(source: str) -> ScalarExpr:
    """Parse ``source`` into a :class:`ScalarExpr`.

    Raises :class:`ExpressionError` carrying the byte offset of the first
    offending token on malformed input.
    """
    return ScalarExpr(_Parser(source).parse())
