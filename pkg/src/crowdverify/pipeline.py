"""End-to-end verification: listing + assertions + policy -> per-frame verdicts."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

from .asm import SsaFunction, load_program
from .assertion import Assertion, parse_assertions, rename_assertion
from .constraint import (
    DEFAULT_BUDGET,
    ConstraintFile,
    Inconclusive,
    Sat,
    Unsat,
    Verdict,
    build_constraint_file,
    solve_formula,
    frame_formula,
)
from .policy import BinaryMeta, Obligation, lvi_obligations, range_axioms, sfi_axioms, sfi_obligations
from .validation import Check, FactSet, ValidationError, axioms, validate_function

POLICIES = ("sfi", "lvi", "both")


@dataclass(frozen=True)
class FunctionResult:
    ssa: SsaFunction
    facts: FactSet
    checks: tuple[Check, ...]
    obligations: tuple[Obligation, ...]
    constraints: ConstraintFile
    verdicts: tuple[Verdict, ...] = ()

    @property
    def name(self) -> str:
        return self.ssa.name

    @property
    def verified(self) -> bool:
        return all(isinstance(v, Unsat) for v in self.verdicts)

    @property
    def failing(self) -> list[int]:
        return [k for k, v in enumerate(self.verdicts) if isinstance(v, Sat)]

    @property
    def inconclusive(self) -> list[int]:
        return [k for k, v in enumerate(self.verdicts) if isinstance(v, Inconclusive)]


def policy_axioms(meta: BinaryMeta, policy: str) -> FactSet:
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}")
    facts = sfi_axioms(meta) + range_axioms(meta) if policy in ("sfi", "both") else []
    return axioms(facts)


def policy_obligations(fn: SsaFunction, hints: Mapping[int, str], meta: BinaryMeta, policy: str) -> list[Obligation]:
    out: list[Obligation] = []
    if policy in ("sfi", "both"):
        out += sfi_obligations(fn, hints, meta)
    if policy in ("lvi", "both"):
        out += lvi_obligations(fn)
    return sorted(out, key=lambda o: o.address)


def assign_assertions(functions: Sequence[SsaFunction], asserts: Sequence[Assertion]) -> dict[str, list[Assertion]]:
    owner = {a: fn.name for fn in functions for a in fn.pre}
    grouped: dict[str, list[Assertion]] = {fn.name: [] for fn in functions}
    for a in asserts:
        if a.address not in owner:
            raise ValidationError(f"{a.address:#x}: assertion does not belong to any instruction: {a.text}")
        grouped[owner[a.address]].append(a)
    return grouped


def analyze(
    fn: SsaFunction,
    asserts: Sequence[Assertion],
    meta: BinaryMeta,
    hints: Mapping[int, str] | None = None,
    policy: str = "sfi",
    width: int = 64,
) -> FunctionResult:
    renamed = [rename_assertion(a, fn) for a in asserts]
    facts, checks = validate_function(fn, renamed, policy_axioms(meta, policy), meta)
    obligations = policy_obligations(fn, hints or {}, meta, policy)
    cf = build_constraint_file(facts, checks, obligations, fn, meta, width)
    return FunctionResult(fn, facts, tuple(checks), tuple(obligations), cf)


def solve(result: FunctionResult, width: int | None = None, budget: int = DEFAULT_BUDGET) -> FunctionResult:
    cf = result.constraints
    w = width or cf.width
    decls = cf.declared()
    verdicts = tuple(solve_formula(frame_formula(cf, k), w, budget, decls) for k in range(len(cf.frames)))
    return FunctionResult(result.ssa, result.facts, result.checks, result.obligations, cf, verdicts)


def verify_text(
    asm_text: str,
    assert_text: str = "",
    meta: BinaryMeta | None = None,
    hints: Mapping[int, str] | None = None,
    policy: str = "sfi",
    width: int = 8,
    budget: int = DEFAULT_BUDGET,
    solve_frames: bool = True,
    jobs: int = 1,
) -> list[FunctionResult]:
    """Run the whole pipeline; ``width`` is used both for the constraint files
    and the brute-force oracle, so metadata must fit in it. Functions are
    independent and run on ``jobs`` threads; results come back ordered by
    entry address whatever the scheduling."""
    meta = meta or BinaryMeta()
    if width < 64 and policy != "lvi":
        meta.check_width(width)
    functions = sorted(load_program(asm_text), key=lambda fn: fn.instructions[0].address)
    grouped = assign_assertions(functions, parse_assertions(assert_text))

    def one(fn: SsaFunction) -> FunctionResult:
        r = analyze(fn, grouped[fn.name], meta, hints, policy, width)
        return solve(r, width, budget) if solve_frames else r

    if jobs <= 1 or len(functions) < 2:
        return [one(fn) for fn in functions]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(one, functions))
