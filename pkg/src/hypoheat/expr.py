"""Expression trees in the two chart variables x1, x2.

Provides parsing, exact symbolic differentiation (iterated up to the third
derivatives needed by the coefficient formulas), pointwise and vectorized
evaluation, and light simplification (constant folding and identity
elimination only).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Expr",
    "Const",
    "Var",
    "Add",
    "Sub",
    "Mul",
    "Div",
    "IntPow",
    "Func",
    "ExprSyntaxError",
    "UnknownIdentifierError",
    "DomainError",
    "parse",
    "differentiate",
    "evaluate",
    "evaluate_array",
    "simplify",
    "to_string",
]

_FUNCTIONS = ("sin", "cos", "exp", "log")


class ExprSyntaxError(ValueError):
    """Raised on malformed input; carries the byte offset and what was expected."""

    def __init__(self, offset, expected):
        self.offset = offset
        self.expected = expected
        super().__init__(f"syntax error at offset {offset}: expected {expected}")


class UnknownIdentifierError(ValueError):
    def __init__(self, offset, name):
        self.offset = offset
        self.name = name
        super().__init__(f"unknown identifier {name!r} at offset {offset}")


class DomainError(ArithmeticError):
    """Evaluation hit a singular node (log of non-positive, division by zero)."""

    def __init__(self, node, message):
        self.node = node
        super().__init__(f"{message} in subexpression {to_string(node)!r}")


@dataclass(frozen=True)
class Expr:
    pass


@dataclass(frozen=True)
class Const(Expr):
    value: float


@dataclass(frozen=True)
class Var(Expr):
    index: int  # 1 or 2

    def __post_init__(self):
        if self.index not in (1, 2):
            raise ValueError(f"variable index must be 1 or 2, got {self.index}")


@dataclass(frozen=True)
class Add(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Sub(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Mul(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Div(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class IntPow(Expr):
    base: Expr
    exponent: int

    def __post_init__(self):
        if not isinstance(self.exponent, int):
            raise ValueError("IntPow exponent must be an integer")


@dataclass(frozen=True)
class Func(Expr):
    kind: str  # sin, cos, exp, log
    child: Expr

    def __post_init__(self):
        if self.kind not in _FUNCTIONS:
            raise ValueError(f"unknown function {self.kind!r}")


ZERO = Const(0.0)
ONE = Const(1.0)


# Tokenizer ------------------------------------------------------------------

def _tokenize(text):
    """Yield (kind, value, offset) tuples; kind in num/name/op."""
    tokens = []
    i = 0
    n = len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
            continue
        if c.isdigit() or c == ".":
            j = i
            seen_dot = False
            while j < n and (text[j].isdigit() or (text[j] == "." and not seen_dot)):
                seen_dot = seen_dot or text[j] == "."
                j += 1
            if j < n and text[j] in "eE":
                k = j + 1
                if k < n and text[k] in "+-":
                    k += 1
                if k < n and text[k].isdigit():
                    while k < n and text[k].isdigit():
                        k += 1
                    j = k
            try:
                value = float(text[i:j])
            except ValueError:
                raise ExprSyntaxError(i, "a numeric literal") from None
            tokens.append(("num", value, i))
            i = j
        elif c.isalpha() or c == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(("name", text[i:j], i))
            i = j
        elif c in "+-*/^(),":
            tokens.append(("op", c, i))
            i += 1
        else:
            raise ExprSyntaxError(i, f"a valid token (got {c!r})")
    tokens.append(("end", None, n))
    return tokens


class _Parser:
    """Recursive descent with standard precedence: ^ > unary minus > * / > + -."""

    def __init__(self, text):
        self.text = text
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect_op(self, op):
        kind, value, offset = self.peek()
        if kind != "op" or value != op:
            raise ExprSyntaxError(offset, f"{op!r}")
        return self.advance()

    def parse(self):
        e = self.expr()
        kind, _, offset = self.peek()
        if kind != "end":
            raise ExprSyntaxError(offset, "end of input or a binary operator")
        return e

    def expr(self):
        # + and -, left associative
        e = self.term()
        while True:
            kind, value, _ = self.peek()
            if kind == "op" and value in "+-":
                self.advance()
                rhs = self.term()
                e = Add(e, rhs) if value == "+" else Sub(e, rhs)
            else:
                return e

    def term(self):
        # * and /, left associative
        e = self.unary()
        while True:
            kind, value, _ = self.peek()
            if kind == "op" and value in "*/":
                self.advance()
                rhs = self.unary()
                e = Mul(e, rhs) if value == "*" else Div(e, rhs)
            else:
                return e

    def unary(self):
        kind, value, _ = self.peek()
        if kind == "op" and value == "-":
            self.advance()
            child = self.unary()
            if isinstance(child, Const):
                return Const(-child.value)
            return Sub(ZERO, child)
        return self.power()

    def power(self):
        base = self.atom()
        kind, value, offset = self.peek()
        if kind == "op" and value == "^":
            self.advance()
            exponent = self.int_exponent()
            return IntPow(base, exponent)
        return base

    def int_exponent(self):
        sign = 1
        kind, value, offset = self.peek()
        if kind == "op" and value == "-":
            self.advance()
            sign = -1
            kind, value, offset = self.peek()
        if kind != "num" or value != int(value):
            raise ExprSyntaxError(offset, "an integer exponent")
        self.advance()
        return sign * int(value)

    def atom(self):
        kind, value, offset = self.advance()
        if kind == "num":
            return Const(value)
        if kind == "name":
            if value == "x1":
                return Var(1)
            if value == "x2":
                return Var(2)
            if value in _FUNCTIONS:
                self.expect_op("(")
                child = self.expr()
                self.expect_op(")")
                return Func(value, child)
            raise UnknownIdentifierError(offset, value)
        if kind == "op" and value == "(":
            e = self.expr()
            self.expect_op(")")
            return e
        raise ExprSyntaxError(offset, "a literal, variable, function call, or '('")


def parse(text):
    """Parse an infix expression in x1, x2 into an Expr tree."""
    return _Parser(text).parse()


# Printing -------------------------------------------------------------------

_PREC = {Add: 1, Sub: 1, Mul: 2, Div: 2, IntPow: 4}


def _prec(e):
    # negative literals print with a leading minus, so they bind like a unary
    # minus and need parentheses inside any binary context
    if isinstance(e, Const) and math.copysign(1.0, e.value) < 0:
        return 1
    return _PREC.get(type(e), 5)


def to_string(e):
    """Render in the same grammar the parser accepts (round-trips through parse)."""
    if isinstance(e, Const):
        return _fmt(e.value)
    if isinstance(e, Var):
        return f"x{e.index}"
    if isinstance(e, (Add, Sub)):
        op = "+" if isinstance(e, Add) else "-"
        lhs = _paren(e.left, 1, strict=False)
        rhs = _paren(e.right, 1, strict=True)
        return f"{lhs} {op} {rhs}"
    if isinstance(e, (Mul, Div)):
        op = "*" if isinstance(e, Mul) else "/"
        lhs = _paren(e.left, 2, strict=False)
        rhs = _paren(e.right, 2, strict=True)
        return f"{lhs}{op}{rhs}"
    if isinstance(e, IntPow):
        base = _paren(e.base, 4, strict=True)
        return f"{base}^{e.exponent}"
    if isinstance(e, Func):
        return f"{e.kind}({to_string(e.child)})"
    raise TypeError(f"not an Expr: {e!r}")


def _fmt(v):
    return repr(float(v))


def _paren(e, parent_prec, strict):
    s = to_string(e)
    p = _prec(e)
    if p < parent_prec or (strict and p == parent_prec):
        return f"({s})"
    return s


# Differentiation ------------------------------------------------------------

def differentiate(e, var):
    """Exact symbolic partial derivative with respect to x_var (var in {1,2})."""
    if var not in (1, 2):
        raise ValueError("var must be 1 or 2")
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.index == var else ZERO
    if isinstance(e, Add):
        return Add(differentiate(e.left, var), differentiate(e.right, var))
    if isinstance(e, Sub):
        return Sub(differentiate(e.left, var), differentiate(e.right, var))
    if isinstance(e, Mul):
        return Add(
            Mul(differentiate(e.left, var), e.right),
            Mul(e.left, differentiate(e.right, var)),
        )
    if isinstance(e, Div):
        num = Sub(
            Mul(differentiate(e.left, var), e.right),
            Mul(e.left, differentiate(e.right, var)),
        )
        return Div(num, IntPow(e.right, 2))
    if isinstance(e, IntPow):
        if e.exponent == 0:
            return ZERO
        return Mul(
            Mul(Const(float(e.exponent)), IntPow(e.base, e.exponent - 1)),
            differentiate(e.base, var),
        )
    if isinstance(e, Func):
        inner = differentiate(e.child, var)
        if e.kind == "sin":
            outer = Func("cos", e.child)
        elif e.kind == "cos":
            outer = Sub(ZERO, Func("sin", e.child))
        elif e.kind == "exp":
            outer = Func("exp", e.child)
        else:  # log
            outer = Div(ONE, e.child)
        return Mul(outer, inner)
    raise TypeError(f"not an Expr: {e!r}")


# Evaluation -----------------------------------------------------------------

def evaluate(e, point):
    """IEEE double evaluation at point = (x1, x2)."""
    x1, x2 = float(point[0]), float(point[1])
    return _eval(e, x1, x2)


def _eval(e, x1, x2):
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        return x1 if e.index == 1 else x2
    if isinstance(e, Add):
        return _eval(e.left, x1, x2) + _eval(e.right, x1, x2)
    if isinstance(e, Sub):
        return _eval(e.left, x1, x2) - _eval(e.right, x1, x2)
    if isinstance(e, Mul):
        return _eval(e.left, x1, x2) * _eval(e.right, x1, x2)
    if isinstance(e, Div):
        den = _eval(e.right, x1, x2)
        if den == 0.0:
            raise DomainError(e, "division by zero")
        return _eval(e.left, x1, x2) / den
    if isinstance(e, IntPow):
        base = _eval(e.base, x1, x2)
        if e.exponent < 0 and base == 0.0:
            raise DomainError(e, "zero raised to a negative power")
        return base ** e.exponent
    if isinstance(e, Func):
        v = _eval(e.child, x1, x2)
        if e.kind == "sin":
            return math.sin(v)
        if e.kind == "cos":
            return math.cos(v)
        if e.kind == "exp":
            return math.exp(v)
        if v <= 0.0:
            raise DomainError(e, "log of a non-positive value")
        return math.log(v)
    raise TypeError(f"not an Expr: {e!r}")


def evaluate_array(e, x1, x2):
    """Vectorized evaluation over NumPy arrays (no domain checking)."""
    if isinstance(e, Const):
        return np.full(np.broadcast(x1, x2).shape, e.value)
    if isinstance(e, Var):
        return np.asarray(x1 if e.index == 1 else x2, dtype=float)
    if isinstance(e, Add):
        return evaluate_array(e.left, x1, x2) + evaluate_array(e.right, x1, x2)
    if isinstance(e, Sub):
        return evaluate_array(e.left, x1, x2) - evaluate_array(e.right, x1, x2)
    if isinstance(e, Mul):
        return evaluate_array(e.left, x1, x2) * evaluate_array(e.right, x1, x2)
    if isinstance(e, Div):
        return evaluate_array(e.left, x1, x2) / evaluate_array(e.right, x1, x2)
    if isinstance(e, IntPow):
        return evaluate_array(e.base, x1, x2) ** e.exponent
    if isinstance(e, Func):
        fn = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "log": np.log}[e.kind]
        return fn(evaluate_array(e.child, x1, x2))
    raise TypeError(f"not an Expr: {e!r}")


# Simplification -------------------------------------------------------------

def simplify(e):
    """Constant folding plus additive/multiplicative identity and annihilator
    elimination. Semantics preserved; no deeper rewriting."""
    if isinstance(e, (Const, Var)):
        return e
    if isinstance(e, Add):
        left, right = simplify(e.left), simplify(e.right)
        if isinstance(left, Const) and isinstance(right, Const):
            return Const(left.value + right.value)
        if left == ZERO or (isinstance(left, Const) and left.value == 0.0):
            return right
        if isinstance(right, Const) and right.value == 0.0:
            return left
        return Add(left, right)
    if isinstance(e, Sub):
        left, right = simplify(e.left), simplify(e.right)
        if isinstance(left, Const) and isinstance(right, Const):
            return Const(left.value - right.value)
        if isinstance(right, Const) and right.value == 0.0:
            return left
        return Sub(left, right)
    if isinstance(e, Mul):
        left, right = simplify(e.left), simplify(e.right)
        if isinstance(left, Const) and isinstance(right, Const):
            return Const(left.value * right.value)
        if isinstance(left, Const):
            if left.value == 0.0:
                return ZERO
            if left.value == 1.0:
                return right
        if isinstance(right, Const):
            if right.value == 0.0:
                return ZERO
            if right.value == 1.0:
                return left
        return Mul(left, right)
    if isinstance(e, Div):
        left, right = simplify(e.left), simplify(e.right)
        if isinstance(right, Const) and right.value == 1.0:
            return left
        if isinstance(left, Const) and left.value == 0.0 and not (
            isinstance(right, Const) and right.value == 0.0
        ):
            return ZERO
        if isinstance(left, Const) and isinstance(right, Const) and right.value != 0.0:
            return Const(left.value / right.value)
        return Div(left, right)
    if isinstance(e, IntPow):
        base = simplify(e.base)
        if e.exponent == 1:
            return base
        if e.exponent == 0:
            return ONE
        if isinstance(base, Const) and not (base.value == 0.0 and e.exponent < 0):
            return Const(base.value ** e.exponent)
        return IntPow(base, e.exponent)
    if isinstance(e, Func):
        child = simplify(e.child)
        if isinstance(child, Const):
            try:
                return Const(_eval(Func(e.kind, child), 0.0, 0.0))
            except DomainError:
                pass
        return Func(e.kind, child)
    raise TypeError(f"not an Expr: {e!r}")
