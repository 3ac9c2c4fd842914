"""Equivalence-preserving rewrites used to disguise tasks.

Rules (each applied at a random position of a random constraint):

    commute      a ∘ b -> b ∘ a            for =, and, or, +
    dneg-in      p -> ¬¬p
    dneg-out     ¬¬p -> p
    demorgan     a ∧ b -> ¬(¬a ∨ ¬b), a ∨ b -> ¬(¬a ∧ ¬b)
    demorgan-out ¬(a ∧ b) -> ¬a ∨ ¬b, ¬(a ∨ b) -> ¬a ∧ ¬b
    add-zero     x -> x + 0                (x not a literal)
    mul-one      x -> x * 1                (x not a literal)
    unit-out     x + 0 -> x, x * 1 -> x

Afterwards the constraint list is shuffled and every variable gets a fresh
name. Every rule is an identity of fixed-width bitvector logic, so a model
carries over through the renaming alone.
"""

from __future__ import annotations

from typing import Iterator, Sequence

import numpy as np

from ..expr import (
    BOOL, BinOp, BoolConst, BoolOp, Cmp, Const, Expr, Ite, Not, Var, children, free_vars, rebuild, substitute,
)

RULES = ("commute", "dneg-in", "dneg-out", "demorgan", "demorgan-out", "add-zero", "mul-one", "unit-out")
MIN_DEPTH, MAX_DEPTH = 5, 50

Path = tuple[int, ...]


def positions(e: Expr, path: Path = ()) -> Iterator[tuple[Path, Expr]]:
    yield path, e
    for k, c in enumerate(children(e)):
        yield from positions(c, path + (k,))


def replace_at(e: Expr, path: Path, new: Expr) -> Expr:
    if not path:
        return new
    kids = list(children(e))
    kids[path[0]] = replace_at(kids[path[0]], path[1:], new)
    return rebuild(e, tuple(kids))


def _is_bool(n: Expr) -> bool:
    # shallow: operands are already well-sorted
    if isinstance(n, (Cmp, BoolConst, BoolOp, Not)):
        return True
    if isinstance(n, Var):
        return n.sort == BOOL
    if isinstance(n, Ite):
        return _is_bool(n.then)
    return False


def applicable(n: Expr) -> list[str]:
    out = []
    if isinstance(n, BinOp) and n.op == "+" or isinstance(n, Cmp) and n.op == "=" or isinstance(n, BoolOp):
        out.append("commute")
    if _is_bool(n):
        out.append("dneg-in")
    elif not isinstance(n, Const):
        out += ["add-zero", "mul-one"]
    if isinstance(n, Not) and isinstance(n.arg, Not):
        out.append("dneg-out")
    if isinstance(n, BoolOp):
        out.append("demorgan")
    if isinstance(n, Not) and isinstance(n.arg, BoolOp):
        out.append("demorgan-out")
    if isinstance(n, BinOp) and (n.op == "+" and Const(0) in (n.left, n.right)
                                 or n.op == "*" and Const(1) in (n.left, n.right)):
        out.append("unit-out")
    return out


_DUAL = {"and": "or", "or": "and"}


def apply_rule(rule: str, n: Expr) -> Expr:
    if rule == "commute":
        return rebuild(n, (children(n)[1], children(n)[0]))
    if rule == "dneg-in":
        return Not(Not(n))
    if rule == "dneg-out":
        return n.arg.arg
    if rule == "demorgan":
        return Not(BoolOp(_DUAL[n.op], Not(n.left), Not(n.right)))
    if rule == "demorgan-out":
        a = n.arg
        return BoolOp(_DUAL[a.op], Not(a.left), Not(a.right))
    if rule == "add-zero":
        return BinOp("+", n, Const(0))
    if rule == "mul-one":
        return BinOp("*", n, Const(1))
    if rule == "unit-out":
        unit = Const(0 if n.op == "+" else 1)
        return n.left if n.right == unit else n.right
    raise ValueError(f"unknown rule {rule}")


def rewrite(e: Expr, rng: np.random.Generator, depth: int) -> Expr:
    for _ in range(depth):
        cands = [(p, n, r) for p, n in positions(e) for r in applicable(n)]
        p, n, r = cands[int(rng.integers(len(cands)))]
        e = replace_at(e, p, apply_rule(r, n))
    return e


def fresh_names(variables: Sequence[Var], rng: np.random.Generator) -> dict[str, Var]:
    codes = rng.choice(1 << 16, size=len(variables), replace=False)
    return {v.name: Var(f"v{int(c):04x}", None, v.sort) for v, c in zip(variables, codes)}


def convert_formula(
    hypotheses: Sequence[Expr], goal: Expr, seed: int
) -> tuple[list[Expr], Expr, dict[str, str]]:
    """Rewrite, shuffle and rename; returns the new hypotheses, goal and the
    old-name -> new-name bijection."""
    rng = np.random.default_rng(seed)
    hyps = [rewrite(h, rng, int(rng.integers(MIN_DEPTH, MAX_DEPTH + 1))) for h in hypotheses]
    new_goal = rewrite(goal, rng, int(rng.integers(MIN_DEPTH, MAX_DEPTH + 1)))
    hyps = [hyps[int(k)] for k in rng.permutation(len(hyps))]
    variables = sorted({v for e in (*hypotheses, goal) for v in free_vars(e)}, key=lambda v: v.name)
    fresh = fresh_names(variables, rng)
    sub = {v: fresh[v.name] for v in variables}
    hyps = [substitute(h, sub) for h in hyps]
    new_goal = substitute(new_goal, sub)
    if hyps == list(hypotheses) and new_goal == goal:
        new_goal = Not(Not(new_goal))
    return hyps, new_goal, {old: v.name for old, v in fresh.items()}
