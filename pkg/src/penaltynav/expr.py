"""Smooth scalar expressions in the plane coordinates ``x`` and ``y``.

Obstacles are described by inequalities ``h(x, y) > 0`` where ``h`` is an
expression tree built from constants, ``x``, ``y``, ``+``, ``-``, ``*``,
integer powers, ``sin`` and ``cos``.  Division is accepted by the parser only
when the denominator is constant, so every tree is smooth everywhere.

The grammar accepted by :func:`parse_constraint`::

    expr   := term (("+" | "-") term)*
    term   := factor (("*" | "/") factor)*
    factor := "-" factor | atom ("^" INT)?
    atom   := NUMBER | "x" | "y" | "pi" | "(" expr ")" | ("sin" | "cos") "(" expr ")"

Unary minus binds looser than ``^`` so that ``-x^2`` means ``-(x^2)``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Expr",
    "Const",
    "Var",
    "Add",
    "Sub",
    "Mul",
    "Neg",
    "Pow",
    "Sin",
    "Cos",
    "ConstraintExpr",
    "ExpressionSyntaxError",
    "EvaluationError",
    "parse_constraint",
    "parse_expr",
    "Tape",
    "OP_CONST",
    "OP_X",
    "OP_Y",
    "OP_ADD",
    "OP_SUB",
    "OP_MUL",
    "OP_NEG",
    "OP_POW",
    "OP_SIN",
    "OP_COS",
]


class ExpressionSyntaxError(ValueError):
    """Raised for malformed constraint text; ``position`` is a 0-based offset."""

    def __init__(self, message: str, position: int, text: str = ""):
        self.position = position
        self.text = text
        super().__init__(f"{message} at position {position}")


class EvaluationError(ArithmeticError):
    """Raised when an expression evaluates to a non-finite number."""


# Precedence levels used by the printer.
_PREC_ADD, _PREC_MUL, _PREC_NEG, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4, 5


class Expr:
    __slots__ = ()

    prec = _PREC_ATOM

    def evaluate(self, x, y):
        raise NotImplementedError

    def diff(self, var: str) -> "Expr":
        raise NotImplementedError

    def children(self) -> tuple["Expr", ...]:
        return ()

    @property
    def is_constant(self) -> bool:
        return all(c.is_constant for c in self.children())

    def __str__(self) -> str:
        return to_text(self)


@dataclass(frozen=True, slots=True)
class Const(Expr):
    value: float

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError(f"non-finite constant {self.value!r}")

    @property
    def prec(self):
        return _PREC_ATOM if self.value >= 0 else _PREC_NEG

    @property
    def is_constant(self):
        return True

    def evaluate(self, x, y):
        if isinstance(x, np.ndarray):
            return np.full(np.shape(x), self.value)
        return self.value

    def diff(self, var):
        return ZERO


@dataclass(frozen=True, slots=True)
class Var(Expr):
    name: str

    @property
    def is_constant(self):
        return False

    def evaluate(self, x, y):
        return x if self.name == "x" else y

    def diff(self, var):
        return ONE if var == self.name else ZERO


@dataclass(frozen=True, slots=True)
class Add(Expr):
    left: Expr
    right: Expr
    prec = _PREC_ADD

    def children(self):
        return (self.left, self.right)

    def evaluate(self, x, y):
        return self.left.evaluate(x, y) + self.right.evaluate(x, y)

    def diff(self, var):
        return add(self.left.diff(var), self.right.diff(var))


@dataclass(frozen=True, slots=True)
class Sub(Expr):
    left: Expr
    right: Expr
    prec = _PREC_ADD

    def children(self):
        return (self.left, self.right)

    def evaluate(self, x, y):
        return self.left.evaluate(x, y) - self.right.evaluate(x, y)

    def diff(self, var):
        return sub(self.left.diff(var), self.right.diff(var))


@dataclass(frozen=True, slots=True)
class Mul(Expr):
    left: Expr
    right: Expr
    prec = _PREC_MUL

    def children(self):
        return (self.left, self.right)

    def evaluate(self, x, y):
        return self.left.evaluate(x, y) * self.right.evaluate(x, y)

    def diff(self, var):
        return add(
            mul(self.left.diff(var), self.right),
            mul(self.left, self.right.diff(var)),
        )


@dataclass(frozen=True, slots=True)
class Neg(Expr):
    operand: Expr
    prec = _PREC_NEG

    def children(self):
        return (self.operand,)

    def evaluate(self, x, y):
        return -self.operand.evaluate(x, y)

    def diff(self, var):
        return neg(self.operand.diff(var))


@dataclass(frozen=True, slots=True)
class Pow(Expr):
    base: Expr
    exponent: int
    prec = _PREC_POW

    def children(self):
        return (self.base,)

    def evaluate(self, x, y):
        b = self.base.evaluate(x, y)
        if isinstance(b, np.ndarray):
            return b**self.exponent
        try:
            return b**self.exponent
        except OverflowError as exc:
            raise EvaluationError(str(exc)) from None

    def diff(self, var):
        n = self.exponent
        return mul(mul(Const(float(n)), power(self.base, n - 1)), self.base.diff(var))


@dataclass(frozen=True, slots=True)
class Sin(Expr):
    operand: Expr

    def children(self):
        return (self.operand,)

    def evaluate(self, x, y):
        v = self.operand.evaluate(x, y)
        return np.sin(v) if isinstance(v, np.ndarray) else math.sin(v)

    def diff(self, var):
        return mul(Cos(self.operand), self.operand.diff(var))


@dataclass(frozen=True, slots=True)
class Cos(Expr):
    operand: Expr

    def children(self):
        return (self.operand,)

    def evaluate(self, x, y):
        v = self.operand.evaluate(x, y)
        return np.cos(v) if isinstance(v, np.ndarray) else math.cos(v)

    def diff(self, var):
        return neg(mul(Sin(self.operand), self.operand.diff(var)))


ZERO = Const(0.0)
ONE = Const(1.0)
X = Var("x")
Y = Var("y")


# Simplifying constructors.  They fold constant subtrees and drop neutral
# elements so symbolic partials stay small.


def _fold(e: Expr) -> Expr:
    if isinstance(e, Const) or not e.is_constant:
        return e
    v = float(e.evaluate(0.0, 0.0))
    if not math.isfinite(v):
        raise EvaluationError(f"constant subexpression overflows: {to_text(e)}")
    return Const(v)


def add(a: Expr, b: Expr) -> Expr:
    if a == ZERO:
        return b
    if b == ZERO:
        return a
    return _fold(Add(a, b))


def sub(a: Expr, b: Expr) -> Expr:
    if b == ZERO:
        return a
    if a == ZERO:
        return neg(b)
    return _fold(Sub(a, b))


def mul(a: Expr, b: Expr) -> Expr:
    if a == ZERO or b == ZERO:
        return ZERO
    if a == ONE:
        return b
    if b == ONE:
        return a
    return _fold(Mul(a, b))


def neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.operand
    return Neg(a)


def power(a: Expr, n: int) -> Expr:
    if n == 0:
        return ONE
    if n == 1:
        return a
    return _fold(Pow(a, n))


# --------------------------------------------------------------------------
# printing


def _fmt_number(v: float) -> str:
    text = repr(float(v))
    if text.endswith(".0"):
        text = text[:-2]
    return text


def to_text(e: Expr) -> str:
    """Print ``e`` so that parsing the result gives back the same tree."""
    if isinstance(e, Const):
        s = _fmt_number(abs(e.value))
        return f"-{s}" if e.value < 0 or math.copysign(1.0, e.value) < 0 else s
    if isinstance(e, Var):
        return e.name
    if isinstance(e, (Sin, Cos)):
        name = "sin" if isinstance(e, Sin) else "cos"
        return f"{name}({to_text(e.operand)})"
    if isinstance(e, Pow):
        return f"{_wrap(e.base, _PREC_ATOM)}^{e.exponent}"
    if isinstance(e, Neg):
        return f"-{_wrap(e.operand, _PREC_NEG)}"
    if isinstance(e, Mul):
        return f"{_wrap(e.left, _PREC_MUL)}*{_wrap(e.right, _PREC_MUL + 1)}"
    if isinstance(e, (Add, Sub)):
        op = " + " if isinstance(e, Add) else " - "
        return f"{_wrap(e.left, _PREC_ADD)}{op}{_wrap(e.right, _PREC_ADD + 1)}"
    raise TypeError(f"unknown node {e!r}")


def _wrap(e: Expr, min_prec: int) -> str:
    text = to_text(e)
    # A negative constant prints with a leading minus and must be wrapped
    # wherever a unary minus would be.
    if e.prec < min_prec:
        return f"({text})"
    return text


# --------------------------------------------------------------------------
# parsing

_TOKEN_RE = re.compile(
    r"\s*(?:"
    r"(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()])"
    r")"
)


@dataclass
class _Token:
    kind: str
    text: str
    pos: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    pos = 0
    n = len(text)
    while pos < n:
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            raise ExpressionSyntaxError(f"unexpected character {text[pos]!r}", pos, text)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append(_Token(kind, m.group(kind), start))
        pos = m.end()
    tokens.append(_Token("end", "", n))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def take(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def error(self, message: str, tok: _Token | None = None):
        tok = tok or self.peek()
        raise ExpressionSyntaxError(message, tok.pos, self.text)

    def expect(self, op: str):
        tok = self.peek()
        if tok.kind != "op" or tok.text != op:
            found = tok.text or "end of input"
            self.error(f"expected {op!r}, found {found!r}")
        return self.take()

    def parse(self) -> Expr:
        e = self.expr()
        if self.peek().kind != "end":
            self.error(f"unexpected {self.peek().text!r}")
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek().kind == "op" and self.peek().text in "+-":
            op = self.take().text
            rhs = self.term()
            e = add(e, rhs) if op == "+" else sub(e, rhs)
        return e

    def term(self) -> Expr:
        e = self.factor()
        while self.peek().kind == "op" and self.peek().text in "*/":
            tok = self.take()
            rhs = self.factor()
            if tok.text == "*":
                e = mul(e, rhs)
                continue
            if not rhs.is_constant:
                self.error("division by a non-constant expression", tok)
            denom = float(rhs.evaluate(0.0, 0.0))
            if denom == 0.0:
                self.error("division by zero", tok)
            e = mul(e, Const(1.0 / denom))
        return e

    def factor(self) -> Expr:
        tok = self.peek()
        if tok.kind == "op" and tok.text == "-":
            self.take()
            return neg(self.factor())
        base = self.atom()
        if self.peek().kind == "op" and self.peek().text == "^":
            self.take()
            exp_tok = self.peek()
            if exp_tok.kind != "num":
                self.error("exponent must be a non-negative integer", exp_tok)
            self.take()
            if not re.fullmatch(r"\d+", exp_tok.text):
                self.error("non-integer exponent", exp_tok)
            return power(base, int(exp_tok.text))
        return base

    def atom(self) -> Expr:
        tok = self.take()
        if tok.kind == "num":
            return Const(float(tok.text))
        if tok.kind == "name":
            if tok.text in ("x", "y"):
                return Var(tok.text)
            if tok.text == "pi":
                return Const(math.pi)
            if tok.text in ("sin", "cos"):
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                node = Sin(arg) if tok.text == "sin" else Cos(arg)
                return _fold(node)
            self.error(f"unknown identifier {tok.text!r}", tok)
        if tok.kind == "op" and tok.text == "(":
            e = self.expr()
            self.expect(")")
            return e
        found = tok.text or "end of input"
        self.error(f"unexpected {found!r}", tok)


def parse_expr(text: str) -> Expr:
    """Parse ``text`` into a bare expression tree."""
    return _Parser(text).parse()


# --------------------------------------------------------------------------
# tapes (postfix programs consumed by the numeric kernels)

OP_CONST, OP_X, OP_Y, OP_ADD, OP_SUB, OP_MUL, OP_NEG, OP_POW, OP_SIN, OP_COS = range(10)


@dataclass(frozen=True)
class Tape:
    ops: tuple[int, ...]
    args: tuple[int, ...]
    consts: tuple[float, ...]
    depth: int


def compile_tape(e: Expr) -> Tape:
    ops: list[int] = []
    args: list[int] = []
    consts: list[float] = []
    depth = 0
    max_depth = 0

    def push(op, arg=0, delta=1):
        nonlocal depth, max_depth
        ops.append(op)
        args.append(arg)
        depth += delta
        max_depth = max(max_depth, depth)

    def emit(node):
        if isinstance(node, Const):
            consts.append(node.value)
            push(OP_CONST, len(consts) - 1)
        elif isinstance(node, Var):
            push(OP_X if node.name == "x" else OP_Y)
        elif isinstance(node, (Add, Sub, Mul)):
            emit(node.left)
            emit(node.right)
            op = {Add: OP_ADD, Sub: OP_SUB, Mul: OP_MUL}[type(node)]
            push(op, delta=-1)
        elif isinstance(node, Neg):
            emit(node.operand)
            push(OP_NEG, delta=0)
        elif isinstance(node, Pow):
            emit(node.base)
            push(OP_POW, node.exponent, delta=0)
        elif isinstance(node, Sin):
            emit(node.operand)
            push(OP_SIN, delta=0)
        elif isinstance(node, Cos):
            emit(node.operand)
            push(OP_COS, delta=0)
        else:
            raise TypeError(f"unknown node {node!r}")

    emit(e)
    return Tape(tuple(ops), tuple(args), tuple(consts), max_depth)


# --------------------------------------------------------------------------
# polynomial view, used to classify affine and quadratic constraints


def as_polynomial(e: Expr) -> dict[tuple[int, int], float] | None:
    """Expand ``e`` into ``{(i, j): coeff}`` for ``x**i * y**j``.

    Returns ``None`` when ``e`` contains ``sin`` or ``cos`` of a non-constant.
    """
    if isinstance(e, Const):
        return {(0, 0): e.value} if e.value != 0.0 else {}
    if isinstance(e, Var):
        return {(1, 0): 1.0} if e.name == "x" else {(0, 1): 1.0}
    if isinstance(e, (Sin, Cos)):
        return None
    if isinstance(e, Neg):
        p = as_polynomial(e.operand)
        return None if p is None else {k: -v for k, v in p.items()}
    if isinstance(e, (Add, Sub)):
        a, b = as_polynomial(e.left), as_polynomial(e.right)
        if a is None or b is None:
            return None
        sign = 1.0 if isinstance(e, Add) else -1.0
        out = dict(a)
        for k, v in b.items():
            out[k] = out.get(k, 0.0) + sign * v
        return {k: v for k, v in out.items() if v != 0.0}
    if isinstance(e, Mul):
        a, b = as_polynomial(e.left), as_polynomial(e.right)
        if a is None or b is None:
            return None
        return _poly_mul(a, b)
    if isinstance(e, Pow):
        base = as_polynomial(e.base)
        if base is None:
            return None
        out = {(0, 0): 1.0}
        for _ in range(e.exponent):
            out = _poly_mul(out, base)
        return out
    raise TypeError(f"unknown node {e!r}")


def _poly_mul(a, b):
    out: dict[tuple[int, int], float] = {}
    for (i1, j1), v1 in a.items():
        for (i2, j2), v2 in b.items():
            k = (i1 + i2, j1 + j2)
            out[k] = out.get(k, 0.0) + v1 * v2
    return {k: v for k, v in out.items() if v != 0.0}


def poly_degree(p: dict[tuple[int, int], float]) -> int:
    return max((i + j for i, j in p), default=0)


# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ConstraintExpr:
    """One smooth inequality ``h(x, y) > 0`` with cached symbolic partials."""

    tree: Expr
    text: str = ""
    dx: Expr = field(init=False, repr=False)
    dy: Expr = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "dx", self.tree.diff("x"))
        object.__setattr__(self, "dy", self.tree.diff("y"))
        if not self.text:
            object.__setattr__(self, "text", to_text(self.tree))

    @classmethod
    def from_tree(cls, tree: Expr) -> "ConstraintExpr":
        return cls(tree, to_text(tree))

    def value(self, x, y):
        """Evaluate ``h``; scalars give a float, arrays broadcast."""
        v = _checked(self.tree, x, y)
        return v

    def gradient(self, x, y):
        return _checked(self.dx, x, y), _checked(self.dy, x, y)

    def tapes(self) -> tuple[Tape, Tape, Tape]:
        return compile_tape(self.tree), compile_tape(self.dx), compile_tape(self.dy)

    def polynomial(self):
        return as_polynomial(self.tree)

    def __str__(self):
        return to_text(self.tree)

    def __eq__(self, other):
        if not isinstance(other, ConstraintExpr):
            return NotImplemented
        return self.tree == other.tree

    def __hash__(self):
        return hash(self.tree)


def _checked(e: Expr, x, y):
    with np.errstate(over="ignore", invalid="ignore"):
        try:
            v = e.evaluate(x, y)
        except OverflowError as exc:
            raise EvaluationError(str(exc)) from None
    if isinstance(v, np.ndarray):
        if not np.all(np.isfinite(v)):
            raise EvaluationError(f"non-finite value of {to_text(e)}")
    elif not math.isfinite(v):
        raise EvaluationError(f"non-finite value of {to_text(e)} at ({x}, {y})")
    return v


def parse_constraint(text: str) -> ConstraintExpr:
    """Parse one obstacle inequality, e.g. ``"1 - x^2 - y^2"``."""
    return ConstraintExpr(parse_expr(text), text.strip())
