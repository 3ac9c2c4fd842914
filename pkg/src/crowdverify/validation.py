"""Two-level assertion validation.

An assertion that literally occurs in the instruction's IR (after
normalisation) is discharged on the spot. Anything else becomes a deferred
check ``F ∧ IR[i] ∧ PC[i] → a`` carrying a snapshot of the fact set.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .asm import EquationSet, SsaFunction
from .assertion import Assertion, format_assertion
from .expr import TRUE, Expr, implies, normalize, to_text
from .policy import BinaryMeta, is_special, special_assertion_check


class ValidationError(ValueError):
    pass


class Level(Enum):
    LOCAL = "local"
    DEFERRED = "deferred"


ASSERTION, DERIVATION, OBLIGATION = "assertion-check", "special-derivation", "obligation"


@dataclass(frozen=True)
class FactSet:
    facts: tuple[Expr, ...]
    n_axioms: int = 0

    def __len__(self) -> int:
        return len(self.facts)

    def extend(self, fact: Expr) -> "FactSet":
        return FactSet(self.facts + (fact,), self.n_axioms)


@dataclass(frozen=True)
class Check:
    address: int
    hypothesis: tuple[Expr, ...]  # snapshot of F when the check was generated
    ir: tuple[Expr, ...]
    pc: Expr
    goal: Expr
    kind: str = ASSERTION
    source: str = ""
    quantified: bool = False

    @property
    def rule(self) -> str:
        return "ASSERT" if self.kind == ASSERTION else "DERIVE"


def axioms(facts: list[Expr] | tuple[Expr, ...]) -> FactSet:
    return FactSet(tuple(facts), len(facts))


def validate_instruction_level(a: Assertion, ir: EquationSet) -> Level:
    if a.address != ir.address:
        raise ValidationError(f"assertion at {a.address:#x} checked against IR of {ir.address:#x}")
    if a.quantifiers:
        return Level.DEFERRED
    body = normalize(a.body)
    if any(normalize(e) == body for e in ir.equations):
        return Level.LOCAL
    return Level.DEFERRED


def validate_function(
    fn: SsaFunction,
    asserts: list[Assertion],
    facts: FactSet,
    meta: BinaryMeta | None = None,
) -> tuple[FactSet, list[Check]]:
    """Fold the (already renamed) assertions of ``fn`` into ``facts``.

    Facts discharged locally are SSA definitions and enter F as they are.
    Deferred facts hold only on their own path, so they enter F guarded by
    the path condition of their instruction.
    """
    meta = meta or BinaryMeta()
    checks: list[Check] = []
    ordered = sorted(asserts, key=lambda a: a.address)
    for a in ordered:
        if a.address not in fn.ir:
            raise ValidationError(f"{a.address:#x}: no instruction for assertion '{format_assertion(a)}'")
        ir = fn.ir[a.address]
        pc = fn.path_conditions[a.address]
        if is_special(a):
            goal = special_assertion_check(a, fn, meta)
            checks.append(Check(a.address, facts.facts, ir.equations, pc, goal, DERIVATION, a.text))
            facts = facts.extend(implies(pc, a.body))
        elif validate_instruction_level(a, ir) is Level.LOCAL:
            facts = facts.extend(a.body)
        else:
            checks.append(Check(
                a.address, facts.facts, ir.equations, pc, a.body, ASSERTION, a.text, bool(a.quantifiers)
            ))
            facts = facts.extend(implies(pc, a.body))
    return facts, checks


def describe(c: Check) -> str:
    pc = "" if c.pc == TRUE else f" under {to_text(c.pc)}"
    return f"{c.address:#x} {c.kind}{pc}: {to_text(c.goal)}"
