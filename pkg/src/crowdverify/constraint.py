"""Constraint files: one per function, a shared background of facts and one
frame ``hypotheses ∧ ¬goal`` per check or obligation. A frame is UNSAT exactly
when its implication holds."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .asm import SsaFunction
from .expr import (
    BOOL,
    FALSE,
    TRUE,
    App,
    BinOp,
    BoolConst,
    BoolOp,
    Cmp,
    Const,
    EvaluationError,
    Expr,
    Ite,
    Not,
    SortError,
    StackRef,
    Var,
    evaluate,
    fold,
    free_vars,
    sort_of,
    substitute,
    to_text,
    walk,
)
from .policy import BinaryMeta, Obligation, expand
from .validation import OBLIGATION, Check, FactSet

__all__ = [
    "Frame", "ConstraintFile", "Unsat", "Sat", "Inconclusive", "QuantifierError",
    "build_constraint_file", "emit_smt2", "emit_manifest", "evaluate", "evaluate_frame",
    "frame_formula", "brute_force_solve", "solve_formula",
]


class QuantifierError(ValueError):
    pass


@dataclass(frozen=True)
class Frame:
    address: int
    rule: str
    kind: str
    n_background: int  # background facts in scope, a prefix of the file's list
    hypotheses: tuple[Expr, ...]
    goal: Expr

    @property
    def negated_goal(self) -> Expr:
        return Not(self.goal)


@dataclass(frozen=True)
class ConstraintFile:
    function_id: str
    declarations: tuple[tuple[str, str], ...]
    background: tuple[Expr, ...]
    frames: tuple[Frame, ...]
    width: int = 64

    def declared(self) -> dict[str, str]:
        return dict(self.declarations)


def _declare(exprs: Sequence[Expr]) -> tuple[tuple[str, str], ...]:
    sorts: dict[str, str] = {}
    for e in exprs:
        for n in walk(e):
            if isinstance(n, App):
                raise SortError(f"unexpanded predicate {n.name} in {to_text(e)}")
            if isinstance(n, StackRef):
                raise SortError(f"unresolved stack reference {to_text(n)}")
            if isinstance(n, Var):
                if n.version is None and n.base in ("rax", "rbx", "rcx", "rdx", "rsi", "rdi", "rsp", "rbp"):
                    raise SortError(f"unversioned register {n.base} in {to_text(e)}")
                prev = sorts.setdefault(n.name, n.sort)
                if prev != n.sort:
                    raise SortError(f"{n.name} used as both {prev} and {n.sort}")
        if sort_of(e) != BOOL:
            raise SortError(f"constraint is not Boolean: {to_text(e)}")
    return tuple(sorted(sorts.items()))


def build_constraint_file(
    facts: FactSet,
    checks: Sequence[Check],
    obligations: Sequence[Obligation],
    fn: SsaFunction | None,
    meta: BinaryMeta | None = None,
    width: int = 64,
) -> ConstraintFile:
    """Frames for deferred checks (against their F snapshot plus IR[i] and
    PC[i]) followed by frames for obligations (against the final F and PC[i]).
    Predicates are expanded so the result is plain quantifier-free logic."""
    meta = meta or BinaryMeta()
    for c in checks:
        if c.quantified:
            raise QuantifierError(f"{c.address:#x}: quantified assertions cannot be emitted: {c.source}")

    def x(e: Expr) -> Expr:
        return fold(expand(e, fn, meta))

    background = tuple(x(f) for f in facts.facts)
    frames: list[Frame] = []
    for c in sorted(checks, key=lambda c: len(c.hypothesis)):
        n = len(c.hypothesis)
        if c.hypothesis != facts.facts[:n]:
            raise ValueError(f"{c.address:#x}: check snapshot is not a prefix of the fact set")
        hyps = tuple(x(e) for e in c.ir) + ((x(c.pc),) if c.pc != TRUE else ())
        frames.append(Frame(c.address, c.rule, c.kind, n, hyps, x(c.goal)))
    for o in obligations:
        pc = fn.path_conditions[o.address] if fn is not None else TRUE
        hyps = (x(pc),) if pc != TRUE else ()
        frames.append(Frame(o.address, o.rule, OBLIGATION, len(background), hyps, x(o.formula)))
    exprs = list(background) + [e for f in frames for e in (*f.hypotheses, f.goal)]
    name = fn.name if fn is not None else "anonymous"
    return ConstraintFile(name, _declare(exprs), background, tuple(frames), width)


def frame_formula(cf: ConstraintFile, k: int) -> list[Expr]:
    f = cf.frames[k]
    return [*cf.background[: f.n_background], *f.hypotheses, f.negated_goal]


def evaluate_frame(cf: ConstraintFile, k: int, valuation: Mapping[str, int | bool]) -> bool:
    """True iff ``valuation`` satisfies frame ``k`` (i.e. it is a bug model)."""
    return all(bool(evaluate(e, valuation, cf.width)) for e in frame_formula(cf, k))


# -- SMT-LIB ----------------------------------------------------------------

_SIMPLE = re.compile(r"^[A-Za-z~!@$%^&*_+=<>.?/-][A-Za-z0-9~!@$%^&*_+=<>.?/-]*$")
_BV_OPS = {"+": "bvadd", "-": "bvsub", "*": "bvmul", "<<": "bvshl", ">>": "bvlshr",
           "&": "bvand", "|": "bvor", "^": "bvxor"}
_CMP_OPS = {"<": "bvult", "<=": "bvule", ">": "bvugt", ">=": "bvuge", "<s": "bvslt", "=": "="}


def smt_symbol(name: str) -> str:
    return name if _SIMPLE.match(name) else f"|{name}|"


def to_smt(e: Expr, width: int = 64) -> str:
    if isinstance(e, Const):
        return f"(_ bv{e.value & ((1 << width) - 1)} {width})"
    if isinstance(e, BoolConst):
        return "true" if e.value else "false"
    if isinstance(e, Var):
        return smt_symbol(e.name)
    if isinstance(e, BinOp):
        return f"({_BV_OPS[e.op]} {to_smt(e.left, width)} {to_smt(e.right, width)})"
    if isinstance(e, Cmp):
        return f"({_CMP_OPS[e.op]} {to_smt(e.left, width)} {to_smt(e.right, width)})"
    if isinstance(e, BoolOp):
        return f"({e.op} {to_smt(e.left, width)} {to_smt(e.right, width)})"
    if isinstance(e, Not):
        return f"(not {to_smt(e.arg, width)})"
    if isinstance(e, Ite):
        return f"(ite {to_smt(e.cond, width)} {to_smt(e.then, width)} {to_smt(e.other, width)})"
    raise TypeError(f"cannot emit {to_text(e)}")


def emit_smt2(cf: ConstraintFile) -> str:
    w = cf.width
    out = [f"; function {cf.function_id}", "(set-logic QF_BV)"]
    for name, sort in cf.declarations:
        ty = "Bool" if sort == BOOL else f"(_ BitVec {w})"
        out.append(f"(declare-const {smt_symbol(name)} {ty})")
    emitted = 0
    for k, f in enumerate(cf.frames):
        while emitted < f.n_background:
            out.append(f"(assert {to_smt(cf.background[emitted], w)})")
            emitted += 1
        out.append(f"; frame {k} {f.address:#x} {f.rule}")
        out.append("(push 1)")
        for h in f.hypotheses:
            out.append(f"(assert {to_smt(h, w)})")
        out.append(f"(assert (not {to_smt(f.goal, w)}))")
        out.append("(check-sat)")
        out.append("(pop 1)")
    return "\n".join(out) + "\n"


def emit_manifest(cf: ConstraintFile) -> str:
    lines = [f"# {cf.function_id} width={cf.width} frames={len(cf.frames)}"]
    for k, f in enumerate(cf.frames):
        lines.append(f"{k} {f.address:#x} {f.rule} {f.kind}")
    return "\n".join(lines) + "\n"


# -- brute-force oracle -----------------------------------------------------

@dataclass(frozen=True)
class Unsat:
    pass


@dataclass(frozen=True)
class Sat:
    model: dict[str, int | bool] = field(default_factory=dict)


@dataclass(frozen=True)
class Inconclusive:
    reason: str


Verdict = Unsat | Sat | Inconclusive

DEFAULT_BUDGET = 1 << 24
CHUNK = 1 << 20


def _literal(e: Expr) -> tuple[Var, Expr] | None:
    """``v``/``¬v`` for flags, ``v = c`` for constants."""
    if isinstance(e, Var) and e.sort == BOOL:
        return e, TRUE
    if isinstance(e, Not) and isinstance(e.arg, Var) and e.arg.sort == BOOL:
        return e.arg, FALSE
    if isinstance(e, Cmp) and e.op == "=":
        if isinstance(e.left, Var) and isinstance(e.right, (Const, BoolConst)):
            return e.left, e.right
        if isinstance(e.right, Var) and isinstance(e.left, (Const, BoolConst)):
            return e.right, e.left
    return None


def _conjuncts(e: Expr) -> list[Expr]:
    """Top-level conjuncts, also splitting negated disjunctions."""
    if isinstance(e, BoolOp) and e.op == "and":
        return _conjuncts(e.left) + _conjuncts(e.right)
    if isinstance(e, Not):
        a = e.arg
        if isinstance(a, BoolOp) and a.op == "or":
            return _conjuncts(Not(a.left)) + _conjuncts(Not(a.right))
        if isinstance(a, Not):
            return _conjuncts(a.arg)
    return [e]


def _simplify(constraints: list[Expr], width: int) -> tuple[list[Expr], dict[Var, Expr]]:
    """Propagate unit literals and eliminate acyclic definitions ``v = e``.

    Returns the residual constraints and the substitution applied (values
    are already closed under earlier substitutions, in dependency order).
    """
    defs: dict[Var, Expr] = {}
    work = [c for e in constraints for c in _conjuncts(fold(e, width))]
    changed = True
    while changed:
        changed = False
        rest: list[Expr] = []
        for c in work:
            c = fold(substitute(c, defs), width) if defs else c
            if c == TRUE:
                continue
            if c == FALSE:
                return [FALSE], defs
            lit = _literal(c)
            cand: tuple[Var, Expr] | None = lit
            if cand is None and isinstance(c, Cmp) and c.op == "=":
                for v, rhs in ((c.left, c.right), (c.right, c.left)):
                    if isinstance(v, Var) and v not in free_vars(rhs):
                        cand = (v, rhs)
                        break
            if cand is not None and cand[0] not in defs:
                v, rhs = cand
                defs = {k: substitute(val, {v: rhs}) for k, val in defs.items()}
                defs[v] = rhs
                changed = True
                continue
            rest.extend(_conjuncts(c))
        work = rest
    return work, defs


def _components(constraints: list[Expr]) -> list[tuple[list[Expr], list[Var]]]:
    parent: dict[Var, Var] = {}

    def find(v: Var) -> Var:
        while parent.setdefault(v, v) != v:
            parent[v] = parent[parent[v]]
            v = parent[v]
        return v

    groups: list[tuple[Expr, set[Var]]] = []
    for c in constraints:
        vs = free_vars(c)
        groups.append((c, vs))
        vs_list = sorted(vs, key=lambda v: v.name)
        for a, b in zip(vs_list, vs_list[1:]):
            parent[find(a)] = find(b)
    comps: dict[object, tuple[list[Expr], set[Var]]] = {}
    for c, vs in groups:
        key: object = find(min(vs, key=lambda v: v.name)) if vs else ("closed", id(c))
        bucket = comps.setdefault(key, ([], set()))
        bucket[0].append(c)
        bucket[1].update(vs)
    out = [(cs, sorted(vs, key=lambda v: v.name)) for cs, vs in comps.values()]
    return sorted(out, key=lambda item: [v.name for v in item[1]])


def _np_eval(e: Expr, env: dict[str, np.ndarray], width: int, memo: dict[int, object]):
    key = id(e)
    if key in memo:
        return memo[key]
    mask = (1 << width) - 1
    if isinstance(e, Const):
        r: object = np.int64(e.value & mask)
    elif isinstance(e, BoolConst):
        r = np.bool_(e.value)
    elif isinstance(e, Var):
        if e.name not in env:
            raise EvaluationError(e.name)
        r = env[e.name]
    elif isinstance(e, BinOp):
        a = _np_eval(e.left, env, width, memo)
        b = _np_eval(e.right, env, width, memo)
        if e.op == "+":
            r = (a + b) & mask
        elif e.op == "-":
            r = (a - b) & mask
        elif e.op == "*":
            r = (a * b) & mask
        elif e.op == "&":
            r = a & b
        elif e.op == "|":
            r = a | b
        elif e.op == "^":
            r = a ^ b
        elif e.op == "<<":
            r = np.where(b >= width, 0, (a << np.minimum(b, width)) & mask)
        else:
            r = np.where(b >= width, 0, a >> np.minimum(b, width))
    elif isinstance(e, Cmp):
        a = _np_eval(e.left, env, width, memo)
        b = _np_eval(e.right, env, width, memo)
        if e.op == "=":
            r = a == b
        elif e.op == "<":
            r = a < b
        elif e.op == "<=":
            r = a <= b
        elif e.op == ">":
            r = a > b
        elif e.op == ">=":
            r = a >= b
        else:
            sign = 1 << (width - 1)
            r = ((a ^ sign) - sign) < ((b ^ sign) - sign)
    elif isinstance(e, Not):
        r = ~np.asarray(_np_eval(e.arg, env, width, memo), dtype=bool)
    elif isinstance(e, BoolOp):
        a = np.asarray(_np_eval(e.left, env, width, memo), dtype=bool)
        b = np.asarray(_np_eval(e.right, env, width, memo), dtype=bool)
        r = (a & b) if e.op == "and" else (a | b)
    elif isinstance(e, Ite):
        c = _np_eval(e.cond, env, width, memo)
        r = np.where(c, _np_eval(e.then, env, width, memo), _np_eval(e.other, env, width, memo))
    else:
        raise TypeError(f"cannot evaluate {to_text(e)}")
    memo[key] = r
    return r


def _search(constraints: list[Expr], variables: list[Var], width: int, budget: int):
    """Exhaustive search; returns a model dict, None (UNSAT) or a reason string."""
    bits = [1 if v.sort == BOOL else width for v in variables]
    total_bits = sum(bits)
    if (1 << total_bits) > budget:
        return f"{len(variables)} variables need 2^{total_bits} assignments, budget {budget}"
    total = 1 << total_bits
    for start in range(0, total, CHUNK):
        idx = np.arange(start, min(total, start + CHUNK), dtype=np.int64)
        env: dict[str, np.ndarray] = {}
        shift = 0
        for v, b in zip(variables, bits):
            vals = (idx >> shift) & ((1 << b) - 1)
            env[v.name] = vals.astype(bool) if v.sort == BOOL else vals
            shift += b
        ok = np.ones(len(idx), dtype=bool)
        memo: dict[int, object] = {}
        for c in constraints:
            ok &= np.asarray(_np_eval(c, env, width, memo), dtype=bool)
            if not ok.any():
                break
        hits = np.flatnonzero(ok)
        if len(hits):
            j = int(hits[0])
            return {v.name: (bool(env[v.name][j]) if v.sort == BOOL else int(env[v.name][j])) for v in variables}
    return None


def solve_formula(
    constraints: Sequence[Expr],
    width: int,
    budget: int = DEFAULT_BUDGET,
    declarations: Mapping[str, str] | None = None,
) -> Verdict:
    """Decide satisfiability of a conjunction at ``width`` bits."""
    if width not in (4, 8, 16):
        raise ValueError(f"brute-force width must be 4, 8 or 16, not {width}")
    residual, defs = _simplify(list(constraints), width)
    if residual == [FALSE]:
        return Unsat()
    model: dict[str, int | bool] = {}
    for comp, variables in _components(residual):
        found = _search(comp, variables, width, budget)
        if found is None:
            return Unsat()
        if isinstance(found, str):
            return Inconclusive(found)
        model.update(found)
    full = _close(model, constraints, defs, declarations, width)
    for e in constraints:
        if not evaluate(e, full, width):
            raise AssertionError(f"oracle produced a non-model for {to_text(e)}")
    return Sat(full)


def _close(
    model: Mapping[str, int | bool],
    constraints: Sequence[Expr],
    defs: Mapping[Var, Expr],
    declarations: Mapping[str, str] | None,
    width: int,
) -> dict[str, int | bool]:
    """Extend a model of the residual problem to every variable in sight."""
    names = dict(declarations or {})
    for e in constraints:
        for v in free_vars(e):
            names.setdefault(v.name, v.sort)
    for v in list(defs):
        for u in free_vars(defs[v]):
            names.setdefault(u.name, u.sort)
    base = {n: (False if s == BOOL else 0) for n, s in names.items() if n not in model}
    full = {**base, **model}
    for v, rhs in defs.items():
        full[v.name] = evaluate(rhs, full, width)
    return dict(sorted(full.items()))


def sample_model(
    constraints: Sequence[Expr],
    width: int = 64,
    seed: int = 0,
    tries: int = 4096,
    declarations: Mapping[str, str] | None = None,
) -> dict[str, int | bool] | None:
    """Incomplete search for wide words: after definition elimination, draw
    the remaining variables from boundary values (0, powers of two and their
    predecessors, constants of the formula and their neighbours)."""
    residual, defs = _simplify(list(constraints), width)
    if residual == [FALSE]:
        return None
    mask = (1 << width) - 1
    pool = {0, 1, mask}
    for k in range(width):
        pool.update({1 << k, (1 << k) - 1})
    for e in [*residual, *defs.values()]:
        for n in walk(e):
            if isinstance(n, Const):
                pool.update({n.value & mask, (n.value + 1) & mask, (n.value - 1) & mask})
    values = sorted(pool)
    variables = sorted({v for e in residual for v in free_vars(e)}, key=lambda v: v.name)
    rng = np.random.default_rng(seed)
    for _ in range(tries):
        guess = {
            v.name: bool(rng.integers(2)) if v.sort == BOOL else values[int(rng.integers(len(values)))]
            for v in variables
        }
        try:
            if not all(evaluate(e, guess, width) for e in residual):
                continue
        except EvaluationError:
            continue
        full = _close(guess, constraints, defs, declarations, width)
        if all(evaluate(e, full, width) for e in constraints):
            return full
    return None


def brute_force_solve(cf: ConstraintFile, width: int | None = None, budget: int = DEFAULT_BUDGET) -> list[Verdict]:
    w = width if width is not None else cf.width
    decls = cf.declared()
    return [solve_formula(frame_formula(cf, k), w, budget, decls) for k in range(len(cf.frames))]


def format_model(model: Mapping[str, int | bool]) -> str:
    parts = []
    for k, v in sorted(model.items()):
        parts.append(f"{k}={str(v).lower() if isinstance(v, bool) else hex(v)}")
    return " ".join(parts)


def parse_model(text: str) -> dict[str, int | bool]:
    """Inverse of :func:`format_model`; whitespace/newline separated."""
    out: dict[str, int | bool] = {}
    for tok in text.split():
        if tok.startswith("#"):
            break
        name, sep, val = tok.rpartition("=")
        if not sep:
            raise ValueError(f"bad model entry '{tok}'")
        if val in ("true", "false"):
            out[name] = val == "true"
        else:
            out[name] = int(val, 0)
    return out

