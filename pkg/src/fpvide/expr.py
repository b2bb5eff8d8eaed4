"""Scalar expression language used by problem files.

Grammar (loosest to tightest binding)::

    expr   := expr ('+' | '-') expr
            | expr ('*' | '/') expr
            | '-' expr
            | expr '^' expr          (right associative)
            | NUMBER | NAME | FUNC '(' expr ')' | '(' expr ')'

Evaluation accepts floats or numpy arrays as variable bindings, so one
parsed expression can be sampled over a whole grid at once.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np

VARIABLES = frozenset({"x", "t", "r", "p", "s"})
FUNCTIONS = ("sin", "cos", "exp", "ln", "sqrt", "abs")

# binding powers
_BP = {"+": 10, "-": 10, "*": 20, "/": 20, "^": 40}
_UNARY_BP = 30


class ExprError(Exception):
    pass


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, text: str = "", position: int = 0):
        self.text = text
        self.position = position
        if text:
            message = f"{message} at position {position}: {text!r}"
        super().__init__(message)


class ExprDomainError(ExprError):
    """Raised for ln/sqrt/division outside the real domain."""

    def __init__(self, message: str, node: "Node"):
        self.node = node
        super().__init__(f"{message} in '{to_string(node)}'")


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Node"


Node = Union[Num, Var, Neg, BinOp, Call]
Value = Union[float, np.ndarray]


_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            start = pos + len(text[pos:]) - len(text[pos:].lstrip())
            raise ExprSyntaxError(f"unexpected character {text[start]!r}", text, start)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, allowed_vars):
        self.text = text
        self.allowed = frozenset(allowed_vars)
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, val, pos = self.advance()
        if val != value:
            found = "end of input" if kind == "end" else repr(val)
            raise ExprSyntaxError(f"expected {value!r}, found {found}", self.text, pos)

    def parse(self) -> Node:
        node = self.expression(0)
        kind, val, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected token {val!r}", self.text, pos)
        return node

    def expression(self, rbp: int) -> Node:
        left = self.prefix()
        while True:
            kind, val, _ = self.peek()
            if kind != "op" or val not in _BP or _BP[val] <= rbp:
                return left
            self.advance()
            # '^' is right associative: parse its right side one notch looser
            bp = _BP[val] - 1 if val == "^" else _BP[val]
            left = BinOp(val, left, self.expression(bp))

    def prefix(self) -> Node:
        kind, val, pos = self.advance()
        if kind == "num":
            return Num(float(val))
        if kind == "name":
            if self.peek()[1] == "(":
                if val not in FUNCTIONS:
                    raise ExprSyntaxError(f"unknown function {val!r}", self.text, pos)
                self.advance()
                arg = self.expression(0)
                if self.peek()[1] == ",":
                    raise ExprSyntaxError("functions take one argument", self.text, self.peek()[2])
                self.expect(")")
                return Call(val, arg)
            if val in FUNCTIONS:
                raise ExprSyntaxError(f"function {val!r} needs an argument", self.text, pos)
            if val not in self.allowed:
                raise ExprSyntaxError(f"unknown identifier {val!r}", self.text, pos)
            return Var(val)
        if val == "-":
            return Neg(self.expression(_UNARY_BP))
        if val == "(":
            node = self.expression(0)
            self.expect(")")
            return node
        found = "end of input" if kind == "end" else repr(val)
        raise ExprSyntaxError(f"unexpected {found}", self.text, pos)


def parse(text: str, allowed_vars=VARIABLES) -> Node:
    """Parse ``text`` into an AST, rejecting names outside ``allowed_vars``."""
    if not text or not text.strip():
        raise ExprSyntaxError("empty expression")
    unknown = set(allowed_vars) - VARIABLES
    if unknown:
        raise ValueError(f"variables {sorted(unknown)} are outside {sorted(VARIABLES)}")
    return _Parser(text, allowed_vars).parse()


def free_vars(node: Node) -> frozenset[str]:
    if isinstance(node, Var):
        return frozenset({node.name})
    if isinstance(node, Num):
        return frozenset()
    if isinstance(node, Neg):
        return free_vars(node.operand)
    if isinstance(node, Call):
        return free_vars(node.arg)
    return free_vars(node.left) | free_vars(node.right)


def _fail_where(mask, node, message):
    if np.any(mask):
        raise ExprDomainError(message, node)


def evaluate(node: Node, bindings: Mapping[str, Value] | None = None) -> Value:
    """Evaluate ``node`` with real semantics.

    Bindings may be numpy arrays; the result then broadcasts over them.
    """
    bindings = bindings or {}
    with np.errstate(all="ignore"):
        return _eval(node, bindings)


def _eval(node: Node, env) -> Value:
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        try:
            return env[node.name]
        except KeyError:
            raise ExprError(f"variable {node.name!r} is not bound") from None
    if isinstance(node, Neg):
        return -_eval(node.operand, env)
    if isinstance(node, Call):
        a = _eval(node.arg, env)
        f = node.func
        if f == "ln":
            _fail_where(np.asarray(a) <= 0, node, "ln of non-positive value")
            return np.log(a)
        if f == "sqrt":
            _fail_where(np.asarray(a) < 0, node, "sqrt of negative value")
            return np.sqrt(a)
        return {"sin": np.sin, "cos": np.cos, "exp": np.exp, "abs": np.abs}[f](a)
    a = _eval(node.left, env)
    b = _eval(node.right, env)
    op = node.op
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        _fail_where(np.asarray(b) == 0, node, "division by zero")
        return a / b
    # '^'
    base = np.asarray(a, dtype=float)
    expo = np.asarray(b, dtype=float)
    _fail_where((base == 0) & (expo < 0), node, "division by zero")
    _fail_where((base < 0) & (expo != np.round(expo)), node, "non-integer power of negative value")
    out = np.power(base, expo)
    return float(out) if out.ndim == 0 else out


def to_string(node: Node) -> str:
    """Render with the minimum parentheses needed to re-parse identically."""
    if isinstance(node, Num):
        v = node.value
        if v < 0 or not math.isfinite(v):
            raise ExprError(f"literal {v!r} cannot be printed")
        if float(v).is_integer() and abs(v) < 1e15:
            return str(int(v))
        return repr(float(v))
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Call):
        return f"{node.func}({to_string(node.arg)})"
    if isinstance(node, Neg):
        inner = to_string(node.operand)
        if _prec(node.operand) < _UNARY_BP:
            inner = f"({inner})"
        return f"-{inner}"
    prec = _BP[node.op]
    left = to_string(node.left)
    right = to_string(node.right)
    lp, rp = _prec(node.left), _prec(node.right)
    if node.op == "^":
        if lp <= prec:
            left = f"({left})"
        # a negation on the right of '^' re-parses as is
        if rp < prec and not isinstance(node.right, Neg):
            right = f"({right})"
    else:
        if lp < prec:
            left = f"({left})"
        if rp <= prec:
            right = f"({right})"
    return f"{left}{node.op}{right}"


def _prec(node: Node) -> int:
    if isinstance(node, BinOp):
        return _BP[node.op]
    if isinstance(node, Neg):
        return _UNARY_BP
    return 100


def mul(a: Node, b: Node) -> Node:
    """Product node, dropping literal unit factors."""
    if a == Num(1.0):
        return b
    if b == Num(1.0):
        return a
    return BinOp("*", a, b)


def is_constant(node: Node) -> bool:
    return not free_vars(node)
