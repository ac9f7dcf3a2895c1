"""Arithmetic expressions for periodic coefficient fields.

Variables are ``t`` and ``x1..xn``; named constants are ``pi``, ``T``,
``L1..Ln`` and any user parameters. Expressions are parsed into a small AST
and compiled to a postfix tape so they can be evaluated many times (on
scalars or on whole numpy grids) inside time-stepping loops.

Grammar (lowest to highest precedence)::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | power
    power   := atom ('^' unary)?          # right associative
    atom    := NUMBER | NAME | NAME '(' expr (',' expr)* ')' | '(' expr ')'
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping, Sequence, Union

import numpy as np

FUNCTIONS = {
    "sin": (1, np.sin),
    "cos": (1, np.cos),
    "exp": (1, np.exp),
    "abs": (1, np.abs),
    "min": (2, np.minimum),
    "max": (2, np.maximum),
}


class ExprError(ValueError):
    """Base class for expression errors."""


class ExprSyntaxError(ExprError):
    """Malformed expression text.

    ``pos`` is the 0-based character offset; messages quote the 1-based column.
    """

    def __init__(self, message: str, pos: int):
        super().__init__(f"{message} at column {pos + 1}")
        self.pos = pos
        self.column = pos + 1


class UnknownIdentifier(ExprSyntaxError):
    def __init__(self, name: str, pos: int):
        super().__init__(f"unknown identifier {name!r}", pos)
        self.name = name


class ArityError(ExprSyntaxError):
    pass


class EvalError(ExprError):
    """Raised when evaluation hits a division by zero or a non-finite value."""


# --- AST -------------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str  # "t" or "x1".."xn"


@dataclass(frozen=True)
class Const:
    name: str  # "pi", "T", "L1".., or a user parameter


@dataclass(frozen=True)
class Neg:
    arg: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple


Node = Union[Num, Var, Const, Neg, BinOp, Call]


# --- tokenizer -------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*/^(),]))"
)


@dataclass(frozen=True)
class _Tok:
    kind: str  # "num" | "name" | "op" | "end"
    text: str
    pos: int


def _tokenize(text: str) -> list[_Tok]:
    toks = []
    i = 0
    while i < len(text):
        if text[i].isspace():
            i += 1
            continue
        m = _TOKEN_RE.match(text, i)
        if m is None or m.end() == i:
            raise ExprSyntaxError(f"unexpected character {text[i]!r}", i)
        kind = m.lastgroup
        start = m.start(kind)
        toks.append(_Tok(kind, m.group(kind), start))
        i = m.end()
    toks.append(_Tok("end", "", len(text)))
    return toks


# --- parser ----------------------------------------------------------------


class _Parser:
    def __init__(self, text: str, n: int, params: Mapping[str, float]):
        self.toks = _tokenize(text)
        self.i = 0
        self.variables = {"t"} | {f"x{a + 1}" for a in range(n)}
        self.constants = {"pi", "T"} | {f"L{a + 1}" for a in range(n)} | set(params)

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def advance(self) -> _Tok:
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect(self, text: str) -> _Tok:
        if self.tok.text != text or self.tok.kind != "op":
            self._unexpected(f"expected {text!r}")
        return self.advance()

    def _unexpected(self, what: str):
        if self.tok.kind == "end":
            raise ExprSyntaxError(f"unexpected end of input ({what})", self.tok.pos)
        raise ExprSyntaxError(f"unexpected {self.tok.text!r} ({what})", self.tok.pos)

    def parse(self) -> Node:
        node = self.expr()
        if self.tok.kind != "end":
            self._unexpected("expected end of input")
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self.advance().text
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = self.advance().text
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.tok.kind == "op" and self.tok.text == "-":
            self.advance()
            return Neg(self.unary())
        if self.tok.kind == "op" and self.tok.text == "+":
            self.advance()
            return self.unary()
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.tok.kind == "op" and self.tok.text == "^":
            self.advance()
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> Node:
        tok = self.tok
        if tok.kind == "num":
            self.advance()
            return Num(float(tok.text))
        if tok.kind == "name":
            self.advance()
            if tok.text in FUNCTIONS:
                return self.call(tok)
            if tok.text in self.variables:
                return Var(tok.text)
            if tok.text in self.constants:
                return Const(tok.text)
            raise UnknownIdentifier(tok.text, tok.pos)
        if tok.kind == "op" and tok.text == "(":
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        self._unexpected("expected a number, name or '('")

    def call(self, name_tok: _Tok) -> Node:
        arity, _ = FUNCTIONS[name_tok.text]
        self.expect("(")
        args = [self.expr()]
        while self.tok.kind == "op" and self.tok.text == ",":
            self.advance()
            args.append(self.expr())
        self.expect(")")
        if len(args) != arity:
            raise ArityError(
                f"{name_tok.text} takes {arity} argument(s), got {len(args)}", name_tok.pos
            )
        return Call(name_tok.text, tuple(args))


# --- printing --------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def to_text(node: Node) -> str:
    """Render an AST back to parseable text with minimal parentheses."""
    return _show(node, 0)


def _show(node: Node, ctx: int) -> str:
    if isinstance(node, Num):
        s = repr(node.value)
        if s in ("inf", "nan"):
            raise ExprError(f"cannot print non-finite literal {s}")
        return s
    if isinstance(node, (Var, Const)):
        return node.name
    if isinstance(node, Call):
        return f"{node.func}({', '.join(_show(a, 0) for a in node.args)})"
    if isinstance(node, Neg):
        s = "-" + _show(node.arg, _PREC["neg"])
        return f"({s})" if ctx > _PREC["neg"] else s
    p = _PREC[node.op]
    if node.op == "^":
        # base binds tighter than '^'; exponent is a unary expression
        s = f"{_show(node.left, p + 1)}^{_show(node.right, _PREC['neg'])}"
    else:
        # left associative: right operand needs parens at equal precedence
        s = f"{_show(node.left, p)} {node.op} {_show(node.right, p + 1)}"
    return f"({s})" if ctx > p else s


# --- compiled expressions --------------------------------------------------


@dataclass(frozen=True)
class Expr:
    """A parsed, compiled expression.

    ``tape`` is a postfix program; each instruction is ``(opcode, argument)``.
    """

    text: str
    n: int
    ast: Node
    tape: tuple
    variables: frozenset

    @property
    def depends_on_t(self) -> bool:
        return "t" in self.variables

    @property
    def depends_on_x(self) -> bool:
        return any(v != "t" for v in self.variables)

    @property
    def is_constant(self) -> bool:
        return not self.variables

    def __call__(self, t, x: Sequence, env: Mapping[str, float]):
        return evaluate(self, t, x, env)

    def __str__(self) -> str:
        return to_text(self.ast)


def _compile(node: Node, out: list, used: set) -> None:
    if isinstance(node, Num):
        out.append(("num", node.value))
    elif isinstance(node, Var):
        used.add(node.name)
        out.append(("var", node.name))
    elif isinstance(node, Const):
        out.append(("const", node.name))
    elif isinstance(node, Neg):
        _compile(node.arg, out, used)
        out.append(("neg", None))
    elif isinstance(node, BinOp):
        _compile(node.left, out, used)
        _compile(node.right, out, used)
        out.append(("bin", node.op))
    elif isinstance(node, Call):
        for a in node.args:
            _compile(a, out, used)
        out.append(("call", node.func))
    else:  # pragma: no cover
        raise TypeError(node)


def parse(text: str, n: int, params: Mapping[str, float] | None = None) -> Expr:
    """Parse ``text`` as an expression over ``t, x1..xn``."""
    if n < 1:
        raise ValueError("spatial dimension must be positive")
    ast = _Parser(str(text), n, params or {}).parse()
    tape: list = []
    used: set = set()
    _compile(ast, tape, used)
    return Expr(str(text), n, ast, tuple(tape), frozenset(used))


def _bad(x) -> bool:
    return bool(np.any(x == 0))


def evaluate(e: Expr, t, x: Sequence, env: Mapping[str, float]):
    """Evaluate ``e`` at time ``t`` and position ``x`` (scalars or broadcastable arrays).

    ``env`` binds ``T``, ``L1..Ln`` and user parameters; ``pi`` is built in.
    """
    stack: list = []
    push = stack.append
    pop = stack.pop
    for op, arg in e.tape:
        if op == "num":
            push(arg)
        elif op == "var":
            push(t if arg == "t" else x[int(arg[1:]) - 1])
        elif op == "const":
            if arg == "pi":
                push(math.pi)
            else:
                try:
                    push(env[arg])
                except KeyError:
                    raise EvalError(f"no binding for constant {arg!r} in {e.text!r}") from None
        elif op == "neg":
            push(-pop())
        elif op == "bin":
            b = pop()
            a = pop()
            if arg == "+":
                push(a + b)
            elif arg == "-":
                push(a - b)
            elif arg == "*":
                push(a * b)
            elif arg == "/":
                if _bad(b):
                    raise EvalError(f"division by zero in {e.text!r}")
                push(np.true_divide(a, b))
            else:
                with np.errstate(all="ignore"):
                    r = np.power(np.asarray(a, dtype=float), b)
                if not np.all(np.isfinite(r)):
                    raise EvalError(f"non-finite power in {e.text!r}")
                push(r)
        else:
            _, fn = FUNCTIONS[arg]
            if arg in ("min", "max"):
                b = pop()
                push(fn(pop(), b))
            else:
                push(fn(pop()))
    (result,) = stack
    if np.ndim(result) == 0:
        return float(result)
    return result


def check_periodicity(
    e: Expr,
    T: float,
    L: Sequence[float],
    samples: int = 16,
    env: Mapping[str, float] | None = None,
    seed: int = 0,
) -> bool:
    """True iff ``e`` is T-periodic in t and L_a-periodic in each x_a.

    Checked on ``samples`` random points per direction (fixed seed) with
    tolerance ``1e-10 * (1 + |e|)``.
    """
    if samples < 2:
        raise ValueError("samples must be >= 2")
    L = np.asarray(L, dtype=float).reshape(-1)
    bindings = {"T": T, **{f"L{a + 1}": L[a] for a in range(len(L))}}
    bindings.update(env or {})
    rng = np.random.default_rng(seed)
    t = rng.uniform(0.0, T, samples)
    x = [rng.uniform(0.0, La, samples) for La in L]

    def val(tt, xx):
        return np.broadcast_to(np.asarray(evaluate(e, tt, xx, bindings), dtype=float), t.shape)

    base = val(t, x)
    tol = 1e-10 * (1.0 + np.abs(base))
    if np.any(np.abs(val(t + T, x) - base) > tol):
        return False
    for a in range(len(L)):
        shifted = list(x)
        shifted[a] = x[a] + L[a]
        if np.any(np.abs(val(t, shifted) - base) > tol):
            return False
    return True
