from __future__ import annotations

"""
Scalar expressions over θ ∈ ℝⁿ: parsing, evaluation and gradients.

The objective J and barrier h are supplied as text, e.g.::

    (x1+3)^2 + x2^2
    exp(-(x1-1)^2 - x2^2) + exp(-(x1+1)^2 - x2^2) - 0.5

Grammar
-------
- variables ``x1..xn`` (1-based, bounded by the declared dimension n)
- decimal literals with optional exponent (``2``, ``0.5``, ``1e-3``)
- binary ``+ - * / ^``; ``^`` takes a constant exponent
- unary ``-`` (and a no-op unary ``+``)
- functions ``exp sin cos sqrt ln abs``
- precedence ``^`` > unary ``-`` > ``* /`` > ``+ -``; same-precedence
  operators associate to the left (``2^3^2 == 64``)

Parsing is done with a LALR grammar (lark). ASTs are immutable; evaluation is
reentrant and accepts θ of shape ``(n,)`` or a batch of shape ``(B, n)``.
Gradients come from forward-mode dual numbers (`safees.core.dual`), with a
central-difference oracle (`fd_grad`) for cross-validation.
"""

import logging
import re
from dataclasses import dataclass, field
from typing import Callable, Dict, Sequence, Tuple, Union

import numpy as np
from lark import Lark, Transformer, v_args
from lark.exceptions import UnexpectedEOF, UnexpectedInput, UnexpectedToken, VisitError

from .dual import DualVector, seed_variables

logger = logging.getLogger(__name__)

__all__ = [
    "FUNCTIONS",
    "ExprSyntaxError",
    "DomainError",
    "ExprAst",
    "Const",
    "Var",
    "Neg",
    "BinOp",
    "Pow",
    "Call",
    "parse",
    "evaluate",
    "grad",
    "value_and_grad",
    "fd_grad",
    "to_text",
    "MapSample",
    "MapPair",
]

FUNCTIONS: Tuple[str, ...] = ("exp", "sin", "cos", "sqrt", "ln", "abs")

GRAMMAR = r"""
?start: sum

?sum: product
    | sum "+" product      -> add
    | sum "-" product      -> sub

?product: unary
    | product "*" unary    -> mul
    | product "/" unary    -> div

?unary: power
    | "-" unary            -> neg
    | "+" unary            -> pos

?power: atom
    | power "^" exponent   -> pow

?exponent: atom
    | "-" exponent         -> neg
    | "+" exponent         -> pos

?atom: NUMBER              -> number
    | NAME "(" sum ")"     -> call
    | NAME                 -> name
    | "(" sum ")"

NUMBER: /(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?/
NAME: /[A-Za-z_][A-Za-z0-9_]*/

%import common.WS
%ignore WS
"""

_PARSER = Lark(GRAMMAR, parser="lalr", propagate_positions=True)

_VARIABLE = re.compile(r"x([1-9][0-9]*)")

Value = Union[float, np.ndarray, DualVector]


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------


class ExprSyntaxError(ValueError):
    """
    Raised for malformed expressions.

    Covers syntax errors, unknown identifiers, variable indices beyond the
    declared dimension and non-constant exponents. ``position`` is the
    0-based character offset into the source text.
    """

    def __init__(self, message: str, position: int) -> None:
        self.position = int(position)
        self.column = self.position + 1
        super().__init__(f"{message} (column {self.column})")


class DomainError(ArithmeticError):
    """
    Raised when evaluation leaves the real domain of an operation.

    ``operation`` is one of ``"div"``, ``"ln"``, ``"sqrt"``, ``"pow"``;
    ``position`` is the source offset of the offending AST node.
    """

    def __init__(self, operation: str, position: int, detail: str) -> None:
        self.operation = operation
        self.position = int(position)
        super().__init__(f"{operation}: {detail} (node at column {self.position + 1})")


def _raw(x: Value) -> np.ndarray:
    return x.value if isinstance(x, DualVector) else np.asarray(x)


_NUMPY_FUNCS: Dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "exp": np.exp,
    "sin": np.sin,
    "cos": np.cos,
    "sqrt": np.sqrt,
    "ln": np.log,
    "abs": np.abs,
}


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------


class ExprAst:
    """
    Base class for immutable expression nodes.

    ``evaluate(env, differentiate)`` takes one entry per variable (arrays for
    plain evaluation, `DualVector` seeds for gradients). ``differentiate``
    tightens domain checks at points where the value exists but the
    derivative does not (``sqrt`` at 0).
    """

    pos: int

    def evaluate(self, env: Sequence[Value], differentiate: bool = False) -> Value:
        raise NotImplementedError

    def is_constant(self) -> bool:
        raise NotImplementedError

    def max_index(self) -> int:
        raise NotImplementedError

    def to_text(self) -> str:
        raise NotImplementedError


@dataclass(frozen=True)
class Const(ExprAst):
    value: float
    pos: int = field(default=0, compare=False)

    def evaluate(self, env: Sequence[Value], differentiate: bool = False) -> Value:
        return self.value

    def is_constant(self) -> bool:
        return True

    def max_index(self) -> int:
        return 0

    def to_text(self) -> str:
        text = repr(float(self.value))
        return f"({text})" if self.value < 0 else text


@dataclass(frozen=True)
class Var(ExprAst):
    index: int  # 1-based
    pos: int = field(default=0, compare=False)

    def evaluate(self, env: Sequence[Value], differentiate: bool = False) -> Value:
        return env[self.index - 1]

    def is_constant(self) -> bool:
        return False

    def max_index(self) -> int:
        return self.index

    def to_text(self) -> str:
        return f"x{self.index}"


@dataclass(frozen=True)
class Neg(ExprAst):
    operand: ExprAst
    pos: int = field(default=0, compare=False)

    def evaluate(self, env: Sequence[Value], differentiate: bool = False) -> Value:
        return -self.operand.evaluate(env, differentiate)

    def is_constant(self) -> bool:
        return self.operand.is_constant()

    def max_index(self) -> int:
        return self.operand.max_index()

    def to_text(self) -> str:
        return f"(-{self.operand.to_text()})"


@dataclass(frozen=True)
class BinOp(ExprAst):
    op: str  # one of + - * /
    left: ExprAst
    right: ExprAst
    pos: int = field(default=0, compare=False)

    def evaluate(self, env: Sequence[Value], differentiate: bool = False) -> Value:
        lhs = self.left.evaluate(env, differentiate)
        rhs = self.right.evaluate(env, differentiate)
        if self.op == "+":
            return lhs + rhs
        if self.op == "-":
            return lhs - rhs
        if self.op == "*":
            return lhs * rhs
        if np.any(_raw(rhs) == 0.0):
            raise DomainError("div", self.pos, "division by zero")
        if isinstance(lhs, DualVector) or isinstance(rhs, DualVector):
            return lhs / rhs
        return np.true_divide(lhs, rhs)

    def is_constant(self) -> bool:
        return self.left.is_constant() and self.right.is_constant()

    def max_index(self) -> int:
        return max(self.left.max_index(), self.right.max_index())

    def to_text(self) -> str:
        return f"({self.left.to_text()} {self.op} {self.right.to_text()})"


@dataclass(frozen=True)
class Pow(ExprAst):
    base: ExprAst
    exponent: float
    pos: int = field(default=0, compare=False)

    def evaluate(self, env: Sequence[Value], differentiate: bool = False) -> Value:
        b = self.base.evaluate(env, differentiate)
        raw = _raw(b)
        if float(self.exponent).is_integer():
            k = int(self.exponent)
            if k < 0 and np.any(raw == 0.0):
                raise DomainError("pow", self.pos, f"zero base with negative exponent {k}")
            if isinstance(b, DualVector):
                return b**k
            return np.power(np.asarray(b, dtype=float), k)
        if np.any(raw <= 0.0):
            raise DomainError(
                "pow", self.pos, f"non-integer exponent {self.exponent!r} needs a positive base"
            )
        if isinstance(b, DualVector):
            return b**self.exponent
        return np.power(np.asarray(b, dtype=float), self.exponent)

    def is_constant(self) -> bool:
        return self.base.is_constant()

    def max_index(self) -> int:
        return self.base.max_index()

    def to_text(self) -> str:
        return f"({self.base.to_text()}^({float(self.exponent)!r}))"


@dataclass(frozen=True)
class Call(ExprAst):
    func: str
    arg: ExprAst
    pos: int = field(default=0, compare=False)

    def evaluate(self, env: Sequence[Value], differentiate: bool = False) -> Value:
        x = self.arg.evaluate(env, differentiate)
        raw = _raw(x)
        if self.func == "ln" and np.any(raw <= 0.0):
            raise DomainError("ln", self.pos, "logarithm of a non-positive value")
        if self.func == "sqrt":
            if np.any(raw < 0.0):
                raise DomainError("sqrt", self.pos, "square root of a negative value")
            if differentiate and np.any(raw == 0.0):
                raise DomainError("sqrt", self.pos, "square root is not differentiable at 0")
        if isinstance(x, DualVector):
            return getattr(x, self.func)()
        return _NUMPY_FUNCS[self.func](np.asarray(x, dtype=float))

    def is_constant(self) -> bool:
        return self.arg.is_constant()

    def max_index(self) -> int:
        return self.arg.max_index()

    def to_text(self) -> str:
        return f"{self.func}({self.arg.to_text()})"


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


def _start(meta: object) -> int:
    return int(getattr(meta, "start_pos", 0) or 0)


@v_args(inline=True, meta=True)
class _AstBuilder(Transformer):
    """Turn the lark parse tree into `ExprAst` nodes, validating identifiers."""

    def __init__(self, dim: int) -> None:
        super().__init__()
        self.dim = dim

    def number(self, meta, token):  # type: ignore[no-untyped-def]
        return Const(float(token), pos=token.start_pos)

    def name(self, meta, token):  # type: ignore[no-untyped-def]
        ident = str(token)
        match = _VARIABLE.fullmatch(ident)
        if match is None:
            if ident in FUNCTIONS:
                raise ExprSyntaxError(f"function {ident!r} needs an argument", token.start_pos)
            raise ExprSyntaxError(f"unknown identifier {ident!r}", token.start_pos)
        index = int(match.group(1))
        if index > self.dim:
            raise ExprSyntaxError(
                f"variable {ident!r} index exceeds dimension n={self.dim}", token.start_pos
            )
        return Var(index, pos=token.start_pos)

    def call(self, meta, token, arg):  # type: ignore[no-untyped-def]
        func = str(token)
        if func not in FUNCTIONS:
            raise ExprSyntaxError(
                f"unknown function {func!r} (expected one of {', '.join(FUNCTIONS)})",
                token.start_pos,
            )
        return Call(func, arg, pos=token.start_pos)

    def neg(self, meta, operand):  # type: ignore[no-untyped-def]
        return Neg(operand, pos=_start(meta))

    def pos(self, meta, operand):  # type: ignore[no-untyped-def]
        return operand

    def add(self, meta, left, right):  # type: ignore[no-untyped-def]
        return BinOp("+", left, right, pos=_start(meta))

    def sub(self, meta, left, right):  # type: ignore[no-untyped-def]
        return BinOp("-", left, right, pos=_start(meta))

    def mul(self, meta, left, right):  # type: ignore[no-untyped-def]
        return BinOp("*", left, right, pos=_start(meta))

    def div(self, meta, left, right):  # type: ignore[no-untyped-def]
        return BinOp("/", left, right, pos=_start(meta))

    def pow(self, meta, base, exponent):  # type: ignore[no-untyped-def]
        if not exponent.is_constant():
            raise ExprSyntaxError("exponent must be a constant", exponent.pos)
        value = float(np.asarray(exponent.evaluate(())))
        return Pow(base, value, pos=_start(meta))


def parse(text: str, dim: int) -> ExprAst:
    """
    Parse ``text`` into an AST over variables ``x1..x{dim}``.

    Raises
    ------
    ExprSyntaxError
        On empty input, syntax errors, unknown identifiers or functions,
        variable indices above ``dim`` and non-constant exponents.
    ValueError
        If ``dim`` is not a positive integer.
    """
    if int(dim) < 1:
        raise ValueError(f"dimension must be a positive integer, got {dim!r}")
    if text is None or not str(text).strip():
        raise ExprSyntaxError("expression is empty", 0)

    try:
        tree = _PARSER.parse(text)
    except UnexpectedInput as exc:
        position = getattr(exc, "pos_in_stream", None)
        if isinstance(exc, UnexpectedEOF) or position is None or position < 0:
            position = len(text)
        if isinstance(exc, UnexpectedToken) and exc.token.type == "$END":
            message = "unexpected end of expression"
            position = len(text)
        elif isinstance(exc, UnexpectedToken):
            message = f"unexpected token {str(exc.token)!r}"
        elif isinstance(exc, UnexpectedEOF):
            message = "unexpected end of expression"
        else:
            message = f"unexpected character {text[position]!r}"
        raise ExprSyntaxError(message, position) from None

    try:
        ast = _AstBuilder(int(dim)).transform(tree)
    except VisitError as exc:
        if isinstance(exc.orig_exc, (ExprSyntaxError, DomainError)):
            raise exc.orig_exc from None
        raise

    logger.debug("parsed %r as %s", text, ast.to_text())
    return ast


def to_text(ast: ExprAst) -> str:
    """Fully parenthesized source text that re-parses to an equivalent AST."""
    return ast.to_text()


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def _as_theta(ast: ExprAst, theta: Union[Sequence[float], np.ndarray]) -> np.ndarray:
    arr = np.asarray(theta, dtype=float)
    if arr.ndim not in (1, 2):
        raise ValueError(f"theta must have shape (n,) or (B, n); got {arr.shape}")
    if arr.shape[-1] < ast.max_index():
        raise ValueError(
            f"theta has {arr.shape[-1]} components but the expression references "
            f"x{ast.max_index()}"
        )
    return arr


def evaluate(ast: ExprAst, theta: Union[Sequence[float], np.ndarray]) -> Union[float, np.ndarray]:
    """
    Value of ``ast`` at θ.

    Returns a ``float`` for θ of shape ``(n,)`` and an array of shape ``(B,)``
    for a batch of shape ``(B, n)``.
    """
    arr = _as_theta(ast, theta)
    env = [arr[..., i] for i in range(arr.shape[-1])]
    out = np.asarray(ast.evaluate(env), dtype=float)
    if arr.ndim == 1:
        return float(out)
    return np.broadcast_to(out, arr.shape[:-1]).copy()


def value_and_grad(
    ast: ExprAst, theta: Union[Sequence[float], np.ndarray]
) -> Tuple[Union[float, np.ndarray], np.ndarray]:
    """Value and forward-mode gradient from a single dual pass."""
    arr = _as_theta(ast, theta)
    out = ast.evaluate(seed_variables(arr), differentiate=True)
    if isinstance(out, DualVector):
        value = np.broadcast_to(out.value, arr.shape[:-1])
        partials = np.broadcast_to(out.partials, arr.shape).copy()
    else:
        value = np.broadcast_to(np.asarray(out, dtype=float), arr.shape[:-1])
        partials = np.zeros(arr.shape, dtype=float)
    if arr.ndim == 1:
        return float(value), partials
    return value.copy(), partials


def grad(ast: ExprAst, theta: Union[Sequence[float], np.ndarray]) -> np.ndarray:
    """Exact gradient (forward-mode dual propagation), shaped like θ."""
    return value_and_grad(ast, theta)[1]


def fd_grad(
    ast: ExprAst, theta: Union[Sequence[float], np.ndarray], step: float = 1e-5
) -> np.ndarray:
    """
    Central-difference gradient.

    Component i is ``(f(θ + step·e_i) - f(θ - step·e_i)) / (2·step)``.
    """
    if not step > 0:
        raise ValueError(f"step must be positive, got {step!r}")
    arr = _as_theta(ast, theta)
    out = np.empty(arr.shape, dtype=float)
    for i in range(arr.shape[-1]):
        offset = np.zeros(arr.shape[-1])
        offset[i] = step
        upper = np.asarray(evaluate(ast, arr + offset))
        lower = np.asarray(evaluate(ast, arr - offset))
        out[..., i] = (upper - lower) / (2.0 * step)
    return out


# ---------------------------------------------------------------------------
# The (J, h) pair
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MapSample:
    """J, ∇J, h, ∇h evaluated at the same θ (scalar or batched)."""

    j: Union[float, np.ndarray]
    grad_j: np.ndarray
    h: Union[float, np.ndarray]
    grad_h: np.ndarray


@dataclass(frozen=True)
class MapPair:
    """
    Objective J and barrier h as parsed expressions over ℝⁿ.

    The safe set is C = {θ : h(θ) ≥ 0}.
    """

    j_ast: ExprAst
    h_ast: ExprAst
    dim: int
    j_text: str = ""
    h_text: str = ""

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ValueError(f"dim must be positive, got {self.dim!r}")
        for label, ast in (("J", self.j_ast), ("h", self.h_ast)):
            if ast.max_index() > self.dim:
                raise ValueError(
                    f"{label} references x{ast.max_index()} but dim={self.dim}"
                )

    @classmethod
    def from_text(cls, j_text: str, h_text: str, dim: int) -> "MapPair":
        return cls(
            j_ast=parse(j_text, dim),
            h_ast=parse(h_text, dim),
            dim=int(dim),
            j_text=j_text,
            h_text=h_text,
        )

    def objective(self, theta: Union[Sequence[float], np.ndarray]) -> Union[float, np.ndarray]:
        return evaluate(self.j_ast, theta)

    def barrier(self, theta: Union[Sequence[float], np.ndarray]) -> Union[float, np.ndarray]:
        return evaluate(self.h_ast, theta)

    def objective_grad(self, theta: Union[Sequence[float], np.ndarray]) -> np.ndarray:
        return grad(self.j_ast, theta)

    def barrier_grad(self, theta: Union[Sequence[float], np.ndarray]) -> np.ndarray:
        return grad(self.h_ast, theta)

    def sample(self, theta: Union[Sequence[float], np.ndarray]) -> MapSample:
        """Values and gradients of both maps at θ."""
        j, gj = value_and_grad(self.j_ast, theta)
        h, gh = value_and_grad(self.h_ast, theta)
        return MapSample(j=j, grad_j=gj, h=h, grad_h=gh)
