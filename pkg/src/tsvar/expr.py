"""Scalar expressions in named variables, with first partials via dual numbers.

Grammar (whitespace insensitive)::

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := unary ('^' factor)?          # right associative
    unary  := '-' unary | atom
    atom   := number | ident | ident '(' expr ')' | '(' expr ')'

Note that ``-2^2`` parses as ``(-2)^2``: unary minus binds tighter than the
power operator.

Evaluation is polymorphic over floats and numpy arrays, so an integrand can
be evaluated on every grid node in one pass.
"""

from __future__ import annotations

import math
import re
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Union

import numpy as np

Number = Union[float, np.ndarray]

FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt", "abs")
MAX_INT_POWER = 16


class ExprSyntaxError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class ExprEvalError(ValueError):
    """Unbound variable or argument outside a function's domain."""

    def __init__(self, message: str, offset: int | None = None):
        where = "" if offset is None else f" (at offset {offset})"
        super().__init__(message + where)
        self.offset = offset


class NonSmoothWarning(RuntimeWarning):
    pass


# -- AST ----------------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: float
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Var:
    name: str
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Neg:
    operand: "Node"
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Node"
    pos: int = field(default=0, compare=False)


Node = Union[Num, Var, Neg, BinOp, Call]


# -- parsing --------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<ident>[A-Za-z_]\w*)|(?P<op>[-+*/^()]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            bad = len(text[pos:]) - len(text[pos:].lstrip()) + pos
            raise ExprSyntaxError(f"unexpected character {text[bad]!r}", bad)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self) -> tuple[str, str, int]:
        return self.tokens[self.i]

    def take(self) -> tuple[str, str, int]:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str) -> None:
        kind, val, pos = self.take()
        if val != value or kind != "op":
            found = "end of input" if kind == "end" else repr(val)
            raise ExprSyntaxError(f"expected {value!r}, found {found}", pos)

    def parse(self) -> Node:
        node = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected {val!r}", pos)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            _, op, pos = self.take()
            node = BinOp(op, node, self.term(), pos)
        return node

    def term(self) -> Node:
        node = self.factor()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            _, op, pos = self.take()
            node = BinOp(op, node, self.factor(), pos)
        return node

    def factor(self) -> Node:
        base = self.unary()
        if self.peek()[:2] == ("op", "^"):
            _, _, pos = self.take()
            return BinOp("^", base, self.factor(), pos)
        return base

    def unary(self) -> Node:
        if self.peek()[:2] == ("op", "-"):
            _, _, pos = self.take()
            return Neg(self.unary(), pos)
        return self.atom()

    def atom(self) -> Node:
        kind, val, pos = self.take()
        if kind == "num":
            value = float(val)
            if not math.isfinite(value):
                raise ExprSyntaxError(f"number {val!r} overflows", pos)
            return Num(value, pos)
        if kind == "ident":
            if self.peek()[:2] == ("op", "("):
                if val not in FUNCTIONS:
                    raise ExprSyntaxError(f"unknown function {val!r}", pos)
                self.take()
                arg = self.expr()
                self.expect(")")
                return Call(val, arg, pos)
            return Var(val, pos)
        if (kind, val) == ("op", "("):
            node = self.expr()
            self.expect(")")
            return node
        found = "end of input" if kind == "end" else repr(val)
        raise ExprSyntaxError(f"unexpected {found}", pos)


def _free_vars(node: Node) -> frozenset[str]:
    if isinstance(node, Var):
        return frozenset([node.name])
    if isinstance(node, Num):
        return frozenset()
    if isinstance(node, Neg):
        return _free_vars(node.operand)
    if isinstance(node, Call):
        return _free_vars(node.arg)
    return _free_vars(node.left) | _free_vars(node.right)


def to_text(node: Node) -> str:
    """Fully parenthesized canonical form."""
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return f"(-{to_text(node.operand)})"
    if isinstance(node, Call):
        return f"{node.func}({to_text(node.arg)})"
    return f"({to_text(node.left)} {node.op} {to_text(node.right)})"


# -- dual numbers ---------------------------------------------------------------


@dataclass
class DualValue:
    """A value with first partial derivatives by variable name.

    ``nonsmooth`` is set when ``abs`` was differentiated at zero, where the
    subgradient 0 was used.
    """

    value: Number
    partials: dict[str, Number] = field(default_factory=dict)
    nonsmooth: bool = False

    def d(self, name: str) -> Number:
        return self.partials.get(name, 0.0 * self.value)


def _combine(a: DualValue, b: DualValue, da: Number | None, db: Number | None, value: Number) -> DualValue:
    """Chain rule: partials = da * a.partials + db * b.partials."""
    out: dict[str, Number] = {}
    if da is not None:
        for k, v in a.partials.items():
            out[k] = da * v
    if db is not None:
        for k, v in b.partials.items():
            out[k] = out[k] + db * v if k in out else db * v
    return DualValue(value, out, a.nonsmooth or b.nonsmooth)


def _unary(a: DualValue, value: Number, deriv: Number) -> DualValue:
    return DualValue(value, {k: deriv * v for k, v in a.partials.items()}, a.nonsmooth)


def _any(mask) -> bool:
    return bool(np.any(mask))


class _Evaluator:
    def __init__(self, bindings: Mapping[str, Number], wrt: frozenset[str], min_denominator: float = 0.0):
        self.bindings = bindings
        self.min_denominator = min_denominator
        self.wrt = wrt
        self.with_partials = bool(wrt)

    def run(self, node: Node) -> DualValue:
        if isinstance(node, Num):
            return DualValue(node.value)
        if isinstance(node, Var):
            if node.name not in self.bindings:
                raise ExprEvalError(f"unbound variable {node.name!r}", node.pos)
            val = self.bindings[node.name]
            if isinstance(val, np.ndarray):
                val = val.astype(float)
                partial: Number = np.ones_like(val)
            else:
                val = float(val)
                partial = 1.0
            return DualValue(val, {node.name: partial} if node.name in self.wrt else {})
        if isinstance(node, Neg):
            a = self.run(node.operand)
            return _unary(a, -a.value, -1.0)
        if isinstance(node, Call):
            return self.call(node)
        return self.binop(node)

    def binop(self, node: BinOp) -> DualValue:
        a = self.run(node.left)
        b = self.run(node.right)
        op = node.op
        if op == "+":
            return _combine(a, b, 1.0, 1.0, a.value + b.value)
        if op == "-":
            return _combine(a, b, 1.0, -1.0, a.value - b.value)
        if op == "*":
            return _combine(a, b, b.value, a.value, a.value * b.value)
        if op == "/":
            if _any(np.abs(b.value) <= self.min_denominator):
                raise ExprEvalError("division by zero", node.pos)
            q = a.value / b.value
            return _combine(a, b, 1.0 / b.value, -q / b.value, q)
        return self.power(a, b, node.pos)

    def power(self, a: DualValue, b: DualValue, pos: int) -> DualValue:
        exp_const = not any(_any(v != 0) for v in b.partials.values())
        bv = b.value
        if exp_const and np.ndim(bv) == 0 and float(bv).is_integer() and abs(bv) <= MAX_INT_POWER:
            n = int(bv)
            if n < 0 and _any(a.value == 0):
                raise ExprEvalError("zero raised to a negative power", pos)
            value = _int_pow(a.value, n)
            deriv = n * _int_pow(a.value, n - 1) if n != 0 else 0.0 * a.value
            return _unary(a, value, deriv)
        if _any(np.asarray(a.value) <= 0):
            raise ExprEvalError("non-integer power of a non-positive base", pos)
        loga = np.log(a.value)
        value = np.exp(bv * loga)
        return _combine(a, b, bv * value / a.value, value * loga, value)

    def call(self, node: Call) -> DualValue:
        a = self.run(node.arg)
        x = a.value
        f = node.func
        if f == "sin":
            return _unary(a, np.sin(x), np.cos(x))
        if f == "cos":
            return _unary(a, np.cos(x), -np.sin(x))
        if f == "exp":
            e = np.exp(x)
            return _unary(a, e, e)
        if f == "log":
            if _any(np.asarray(x) <= 0):
                raise ExprEvalError("log of a non-positive number", node.pos)
            return _unary(a, np.log(x), 1.0 / x)
        if f == "sqrt":
            if _any(np.asarray(x) < 0):
                raise ExprEvalError("sqrt of a negative number", node.pos)
            r = np.sqrt(x)
            if self.with_partials and a.partials and _any(r == 0):
                raise ExprEvalError("sqrt is not differentiable at 0", node.pos)
            return _unary(a, r, 0.5 / r if self.with_partials and a.partials else 0.0)
        # abs
        out = _unary(a, np.abs(x), np.sign(x))
        if self.with_partials and a.partials and _any(np.asarray(x) == 0):
            out.nonsmooth = True
        return out


def _int_pow(x: Number, n: int) -> Number:
    if n < 0:
        # np.divide so a scalar underflow gives inf like the array path, not ZeroDivisionError
        return np.divide(1.0, _int_pow(x, -n))
    result: Number = 1.0 + 0.0 * x
    for _ in range(n):
        result = result * x
    return result


def _scalarize(v: Number) -> Number:
    if isinstance(v, np.ndarray):
        return v
    return float(v)


@dataclass(frozen=True)
class Expression:
    ast: Node
    free_vars: frozenset[str]
    source: str = field(default="", compare=False)

    def __str__(self) -> str:
        return to_text(self.ast)

    def eval(self, bindings: Mapping[str, Number], min_denominator: float = 0.0) -> Number:
        """Evaluate; divisions by anything with magnitude <= ``min_denominator`` fail."""
        with np.errstate(all="ignore"):
            return _scalarize(_Evaluator(bindings, frozenset(), min_denominator).run(self.ast).value)

    def eval_with_partials(
        self,
        bindings: Mapping[str, Number],
        wrt: Iterable[str] | None = None,
        min_denominator: float = 0.0,
    ) -> DualValue:
        """Value and partials with respect to ``wrt`` (default: every bound name)."""
        names = frozenset(bindings if wrt is None else wrt)
        with np.errstate(all="ignore"):
            out = _Evaluator(bindings, names, min_denominator).run(self.ast)
        value = _scalarize(out.value)
        partials = {name: _scalarize(out.partials.get(name, 0.0 * out.value)) for name in names}
        if out.nonsmooth:
            warnings.warn("abs differentiated at 0; using subgradient 0", NonSmoothWarning, stacklevel=2)
        return DualValue(value, partials, out.nonsmooth)


def parse(text: str) -> Expression:
    if not text.strip():
        raise ExprSyntaxError("empty expression", 0)
    ast = _Parser(text).parse()
    return Expression(ast, _free_vars(ast), text)
