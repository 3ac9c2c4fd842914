"""Expression trees shared by the IR, the assertion language and constraint files.

Every node is an immutable dataclass.  Bit-vector expressions have sort ``BV``
and propositions have sort ``BOOL``.  Semantics are fixed-width unsigned
machine arithmetic; the width is chosen at evaluation/emission time so the
same tree can be checked at 64 bits or at a scaled-down width.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Mapping

BV = "bv"
BOOL = "bool"

ARITH_OPS = ("+", "-", "*", "<<", ">>", "&", "|", "^")
CMP_OPS = ("<", "<=", ">", ">=", "=", "<s")
COMMUTATIVE = frozenset({"=", "and", "or", "+"})


class SortError(TypeError):
    """An expression mixes Boolean and bit-vector positions."""


class EvaluationError(KeyError):
    """A variable has no value in the valuation."""


@dataclass(frozen=True)
class Const:
    value: int


@dataclass(frozen=True)
class BoolConst:
    value: bool


@dataclass(frozen=True)
class Var:
    base: str
    version: int | None = None
    sort: str = BV

    @property
    def name(self) -> str:
        return self.base if self.version is None else f"{self.base}.{self.version}"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Cmp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Not:
    arg: "Expr"


@dataclass(frozen=True)
class BoolOp:
    op: str  # "and" | "or"
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Ite:
    cond: "Expr"
    then: "Expr"
    other: "Expr"


@dataclass(frozen=True)
class App:
    """Policy predicate or function-symbol application (FnPtr, JT, JTS, ...)."""

    name: str
    args: tuple["Expr", ...]
    sort: str = BOOL


@dataclass(frozen=True)
class StackRef:
    """Unresolved stack slot as written in an assertion, e.g. ``q[rsp+8]``."""

    size: str
    reg: Var
    offset: int
    version: int | None = None


@dataclass(frozen=True)
class Load:
    """Memory read inside a lifted instruction; resolved during SSA."""

    size: str
    addr: "Expr"


Expr = Const | BoolConst | Var | BinOp | Cmp | Not | BoolOp | Ite | App | StackRef | Load

TRUE = BoolConst(True)
FALSE = BoolConst(False)


# -- construction helpers ---------------------------------------------------

def eq(a: Expr, b: Expr) -> Cmp:
    return Cmp("=", a, b)


def conj(items: Iterable[Expr]) -> Expr:
    items = [i for i in items if i != TRUE]
    if not items:
        return TRUE
    out = items[-1]
    for item in reversed(items[:-1]):
        out = BoolOp("and", item, out)
    return out


def disj(items: Iterable[Expr]) -> Expr:
    items = [i for i in items if i != FALSE]
    if not items:
        return FALSE
    out = items[-1]
    for item in reversed(items[:-1]):
        out = BoolOp("or", item, out)
    return out


def implies(a: Expr, b: Expr) -> Expr:
    if a == TRUE:
        return b
    return BoolOp("or", Not(a), b)


def flatten_and(e: Expr) -> list[Expr]:
    if isinstance(e, BoolOp) and e.op == "and":
        return flatten_and(e.left) + flatten_and(e.right)
    if e == TRUE:
        return []
    return [e]


# -- traversal --------------------------------------------------------------

def children(e: Expr) -> tuple[Expr, ...]:
    if isinstance(e, (BinOp, Cmp, BoolOp)):
        return (e.left, e.right)
    if isinstance(e, Not):
        return (e.arg,)
    if isinstance(e, Ite):
        return (e.cond, e.then, e.other)
    if isinstance(e, App):
        return e.args
    if isinstance(e, StackRef):
        return (e.reg,)
    if isinstance(e, Load):
        return (e.addr,)
    return ()


def rebuild(e: Expr, kids: tuple[Expr, ...]) -> Expr:
    if isinstance(e, BinOp):
        return BinOp(e.op, kids[0], kids[1])
    if isinstance(e, Cmp):
        return Cmp(e.op, kids[0], kids[1])
    if isinstance(e, BoolOp):
        return BoolOp(e.op, kids[0], kids[1])
    if isinstance(e, Not):
        return Not(kids[0])
    if isinstance(e, Ite):
        return Ite(kids[0], kids[1], kids[2])
    if isinstance(e, App):
        return App(e.name, tuple(kids), e.sort)
    if isinstance(e, StackRef):
        return StackRef(e.size, kids[0], e.offset, e.version)  # type: ignore[arg-type]
    if isinstance(e, Load):
        return Load(e.size, kids[0])
    return e


def walk(e: Expr) -> Iterator[Expr]:
    stack = [e]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(children(node))


def transform(e: Expr, fn: Callable[[Expr], Expr | None]) -> Expr:
    """Bottom-up rewrite; ``fn`` returns a replacement or None to keep the node."""
    kids = children(e)
    if kids:
        new_kids = tuple(transform(k, fn) for k in kids)
        if new_kids != kids:
            e = rebuild(e, new_kids)
    out = fn(e)
    return e if out is None else out


def free_vars(e: Expr) -> set[Var]:
    return {n for n in walk(e) if isinstance(n, Var)}


def substitute(e: Expr, mapping: Mapping[Var, Expr]) -> Expr:
    if not mapping:
        return e
    return transform(e, lambda n: mapping.get(n) if isinstance(n, Var) else None)


def contains_app(e: Expr) -> bool:
    return any(isinstance(n, App) for n in walk(e))


# -- sorts ------------------------------------------------------------------

def sort_of(e: Expr) -> str:
    """Return the sort of ``e`` after checking that it is well-sorted."""
    if isinstance(e, (Const, Load, StackRef)):
        if isinstance(e, Load):
            _expect(e.addr, BV, "memory address")
        return BV
    if isinstance(e, BoolConst):
        return BOOL
    if isinstance(e, Var):
        return e.sort
    if isinstance(e, BinOp):
        _expect(e.left, BV, e.op)
        _expect(e.right, BV, e.op)
        return BV
    if isinstance(e, Cmp):
        if e.op == "=":
            ls, rs = sort_of(e.left), sort_of(e.right)
            if ls != rs:
                raise SortError(f"'=' between {ls} and {rs}: {to_text(e)}")
        else:
            _expect(e.left, BV, e.op)
            _expect(e.right, BV, e.op)
        return BOOL
    if isinstance(e, Not):
        _expect(e.arg, BOOL, "not")
        return BOOL
    if isinstance(e, BoolOp):
        _expect(e.left, BOOL, e.op)
        _expect(e.right, BOOL, e.op)
        return BOOL
    if isinstance(e, Ite):
        _expect(e.cond, BOOL, "ite condition")
        ts, os_ = sort_of(e.then), sort_of(e.other)
        if ts != os_:
            raise SortError(f"ite branches differ in sort: {to_text(e)}")
        return ts
    if isinstance(e, App):
        for a in e.args:
            _expect(a, BV, e.name)
        return e.sort
    raise TypeError(f"not an expression: {e!r}")


def _expect(e: Expr, sort: str, where: str) -> None:
    got = sort_of(e)
    if got != sort:
        raise SortError(f"{where} expects {sort}, got {got}: {to_text(e)}")


# -- printing (assertion-language surface syntax) ---------------------------

_BOOL_TXT = {"and": "&&", "or": "||"}


def to_text(e: Expr) -> str:
    if isinstance(e, Const):
        return hex(e.value) if e.value > 9 else str(e.value)
    if isinstance(e, BoolConst):
        return "true" if e.value else "false"
    if isinstance(e, Var):
        return e.name
    if isinstance(e, StackRef):
        ptr = e.reg.name
        if e.offset:
            ptr += f"{e.offset:+d}"
        text = f"{e.size}[{ptr}]"
        return text if e.version is None else f"{text}.{e.version}"
    if isinstance(e, Load):
        return f"load.{e.size}[{to_text(e.addr)}]"
    if isinstance(e, (BinOp, Cmp)):
        return f"({to_text(e.left)} {e.op} {to_text(e.right)})"
    if isinstance(e, BoolOp):
        return f"({to_text(e.left)} {_BOOL_TXT[e.op]} {to_text(e.right)})"
    if isinstance(e, Not):
        return f"(not {to_text(e.arg)})"
    if isinstance(e, Ite):
        return f"(ite {to_text(e.cond)} {to_text(e.then)} {to_text(e.other)})"
    if isinstance(e, App):
        return "(" + " ".join([e.name, *(to_text(a) for a in e.args)]) + ")"
    raise TypeError(f"not an expression: {e!r}")


# -- evaluation -------------------------------------------------------------

def _signed(v: int, width: int) -> int:
    return v - (1 << width) if v >> (width - 1) else v


def evaluate(e: Expr, valuation: Mapping[str, int | bool], width: int = 64) -> int | bool:
    """Evaluate ``e`` under ``valuation`` (keyed by variable name).

    Bit-vectors are unsigned ``width``-bit values with wrap-around; shifts by
    ``width`` or more yield zero, as in SMT-LIB.
    """
    mask = (1 << width) - 1
    cache: dict[int, int | bool] = {}

    def ev(n: Expr) -> int | bool:
        key = id(n)
        if key in cache:
            return cache[key]
        if isinstance(n, Const):
            r: int | bool = n.value & mask
        elif isinstance(n, BoolConst):
            r = n.value
        elif isinstance(n, Var):
            if n.name not in valuation:
                raise EvaluationError(n.name)
            v = valuation[n.name]
            r = bool(v) if n.sort == BOOL else int(v) & mask
        elif isinstance(n, BinOp):
            a, b = ev(n.left), ev(n.right)
            if n.op == "+":
                r = (a + b) & mask
            elif n.op == "-":
                r = (a - b) & mask
            elif n.op == "*":
                r = (a * b) & mask
            elif n.op == "<<":
                r = (a << b) & mask if b < width else 0
            elif n.op == ">>":
                r = a >> b if b < width else 0
            elif n.op == "&":
                r = a & b
            elif n.op == "|":
                r = a | b
            elif n.op == "^":
                r = a ^ b
            else:
                raise ValueError(f"unknown operator {n.op}")
        elif isinstance(n, Cmp):
            a, b = ev(n.left), ev(n.right)
            if n.op == "=":
                r = a == b
            elif n.op == "<":
                r = a < b
            elif n.op == "<=":
                r = a <= b
            elif n.op == ">":
                r = a > b
            elif n.op == ">=":
                r = a >= b
            elif n.op == "<s":
                r = _signed(a, width) < _signed(b, width)
            else:
                raise ValueError(f"unknown comparison {n.op}")
        elif isinstance(n, Not):
            r = not ev(n.arg)
        elif isinstance(n, BoolOp):
            if n.op == "and":
                r = bool(ev(n.left)) and bool(ev(n.right))
            else:
                r = bool(ev(n.left)) or bool(ev(n.right))
        elif isinstance(n, Ite):
            r = ev(n.then) if ev(n.cond) else ev(n.other)
        else:
            raise EvaluationError(f"cannot evaluate {to_text(n)}; expand predicates first")
        cache[key] = r
        return r

    return ev(e)


# -- normalisation ----------------------------------------------------------

def fold(e: Expr, width: int = 64) -> Expr:
    """Constant-fold literal arithmetic and trivial Boolean structure."""
    mask = (1 << width) - 1

    def step(n: Expr) -> Expr | None:
        if isinstance(n, Const) and n.value != n.value & mask:
            return Const(n.value & mask)
        if isinstance(n, (BinOp, Cmp)) and isinstance(n.left, Const) and isinstance(n.right, Const):
            return _lit(evaluate(n, {}, width))
        if isinstance(n, BinOp) and n.op in ("+", "*"):
            unit = Const(0 if n.op == "+" else 1)
            if n.right == unit:
                return n.left
            if n.left == unit:
                return n.right
        if isinstance(n, Cmp) and n.op == "=":
            if n.left == n.right:
                return TRUE
            if isinstance(n.left, BoolConst):
                return n.right if n.left.value else Not(n.right)
            if isinstance(n.right, BoolConst):
                return n.left if n.right.value else Not(n.left)
        if isinstance(n, Not):
            if isinstance(n.arg, BoolConst):
                return BoolConst(not n.arg.value)
            if isinstance(n.arg, Not):
                return n.arg.arg
        if isinstance(n, BoolOp):
            a, b = n.left, n.right
            if n.op == "and":
                if a == FALSE or b == FALSE:
                    return FALSE
                if a == TRUE:
                    return b
                if b == TRUE:
                    return a
            else:
                if a == TRUE or b == TRUE:
                    return TRUE
                if a == FALSE:
                    return b
                if b == FALSE:
                    return a
            if a == b:
                return a
            if a == Not(b) or b == Not(a):
                return FALSE if n.op == "and" else TRUE
        if isinstance(n, Ite) and isinstance(n.cond, BoolConst):
            return n.then if n.cond.value else n.other
        return None

    return transform(e, step)


def _lit(v: int | bool) -> Expr:
    return BoolConst(v) if isinstance(v, bool) else Const(v)


def normalize(e: Expr) -> Expr:
    """Canonical form used by the syntactic matcher: folding plus ordered
    operands of commutative operators."""

    def step(n: Expr) -> Expr | None:
        if isinstance(n, BinOp) and n.op == "+" or isinstance(n, Cmp) and n.op == "=":
            if to_text(n.right) < to_text(n.left):
                return rebuild(n, (n.right, n.left))
        if isinstance(n, BoolOp) and to_text(n.right) < to_text(n.left):
            return BoolOp(n.op, n.right, n.left)
        return None

    return transform(fold(e), step)
