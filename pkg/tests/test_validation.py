import dataclasses

import pytest

from crowdverify.asm import load_program
from crowdverify.assertion import parse_assertion, parse_assertions, rename_all, rename_assertion
from crowdverify.constraint import Unsat, solve_formula
from crowdverify.expr import Not, implies, to_text
from crowdverify.policy import is_special, sfi_axioms
from crowdverify.validation import (
    ASSERTION,
    DERIVATION,
    Level,
    ValidationError,
    axioms,
    validate_function,
    validate_instruction_level,
)

from conftest import fixture_text


def load(name, asserts=None):
    fn = load_program(fixture_text(name))[0]
    text = fixture_text(asserts) if asserts else ""
    return fn, rename_all(parse_assertions(text), fn)


def test_heap_write_all_local(meta64):
    fn, asserts = load("heap_write.s", "heap_write.asserts")
    facts, checks = validate_function(fn, asserts, axioms(sfi_axioms(meta64)), meta64)
    assert checks == []
    assert len(facts) - facts.n_axioms == 4
    # local facts go in unguarded
    assert list(facts.facts[facts.n_axioms:]) == [a.body for a in asserts]


def test_cmp_demo_levels():
    fn, asserts = load("cmp_demo.s", "cmp_demo.asserts")
    cmp_asserts = [a for a in asserts if a.address == 0x1000]
    levels = [validate_instruction_level(a, fn.ir[0x1000]) for a in cmp_asserts]
    assert levels == [Level.LOCAL, Level.DEFERRED, Level.DEFERRED]
    facts, checks = validate_function(fn, asserts, axioms([]))
    assert [c.address for c in checks] == [0x1000, 0x1000]
    assert all(c.kind == ASSERTION for c in checks)


def test_commuted_equation_is_local():
    fn, _ = load("cmp_demo.s")
    a = rename_assertion(parse_assertion("0x0ff5: rdi = rax"), fn)
    assert validate_instruction_level(a, fn.ir[0xff5]) is Level.LOCAL


def test_local_classification_is_sound():
    # oracle: anything classified local must follow from the IR alone
    fn, _ = load("cmp_demo.s")
    candidates = ["rax = rdi", "rdi = rax", "rbx = 1", "1 = rbx", "rax = rsi", "cf = (rax < rsi)",
                  "cf = (rsi > rax)", "cf = (rax > rsi)"]
    for addr in (0xff0, 0xff5, 0x1000):
        ir = fn.ir[addr]
        for text in candidates:
            try:
                a = rename_assertion(parse_assertion(f"{addr:#x}: {text}"), fn)
            except Exception:
                continue
            if validate_instruction_level(a, ir) is Level.LOCAL:
                assert isinstance(solve_formula(list(ir.equations) + [Not(a.body)], 8), Unsat), (addr, text)


def test_empty_assertion_list(meta64):
    fn, _ = load("heap_write.s")
    base = axioms(sfi_axioms(meta64))
    assert validate_function(fn, [], base, meta64) == (base, [])


def test_assertion_without_instruction():
    fn, _ = load("cmp_demo.s")
    a = rename_assertion(parse_assertion("0x0ff0: rbx = 1"), fn)
    bad = dataclasses.replace(a, address=0x2000)
    with pytest.raises(ValidationError):
        validate_function(fn, [bad], axioms([]))


def test_level_against_wrong_instruction():
    fn, asserts = load("cmp_demo.s", "cmp_demo.asserts")
    with pytest.raises(ValidationError):
        validate_instruction_level(asserts[0], fn.ir[0x1000])


def test_snapshots_are_monotone():
    fn, asserts = load("cmp_demo.s", "cmp_demo.asserts")
    facts, checks = validate_function(fn, asserts, axioms([]))
    sizes = [len(c.hypothesis) for c in checks]
    assert sizes == sorted(sizes) and sizes[0] < sizes[1] <= len(facts)
    for c in checks:
        assert facts.facts[: len(c.hypothesis)] == c.hypothesis


def test_deferred_fact_is_guarded():
    fn, asserts = load("cmp_demo.s", "cmp_demo.asserts")
    facts, _ = validate_function(fn, asserts, axioms([]))
    assert facts.facts[-1] == implies(fn.path_conditions[0x1000], asserts[-1].body)


def test_wrong_comparison_refuted():
    fn, asserts = load("cmp_demo.s", "cmp_demo.asserts")
    facts, checks = validate_function(fn, asserts, axioms([]))
    wrong = checks[0]
    assert to_text(wrong.goal) == "(cf.1 = (rax.1 > rsi.0))"
    formula = list(wrong.hypothesis) + list(wrong.ir) + [wrong.pc, Not(wrong.goal)]
    assert not isinstance(solve_formula(formula, 8), Unsat)


def test_special_assertion_becomes_derivation(meta64):
    fn, asserts = load("indirect_call.s", "indirect_call.asserts")
    _, checks = validate_function(fn, asserts, axioms(sfi_axioms(meta64)), meta64)
    derived = [c for c in checks if c.kind == DERIVATION]
    assert {c.address for c in derived} == {a.address for a in asserts if is_special(a)}
    assert derived and all(c.rule == "DERIVE" for c in derived)
