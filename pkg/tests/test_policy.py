import pytest

from crowdverify.asm import load_program
from crowdverify.assertion import parse_assertion, parse_assertions, rename_all, rename_assertion
from crowdverify.constraint import Sat, Unsat, solve_formula
from crowdverify.expr import Not, to_text
from crowdverify.pipeline import verify_text
from crowdverify.policy import (
    BinaryMeta,
    DerivationError,
    HintError,
    PolicyError,
    expand,
    fnptr_rule,
    format_meta,
    is_special,
    lvi_obligations,
    parse_hints,
    parse_meta,
    range_axioms,
    sfi_axioms,
    sfi_obligations,
    special_assertion_check,
)

from conftest import fixture_text, hints


def by_rule(obligations):
    return {(o.address, o.rule): to_text(o.formula) for o in obligations}


def test_axioms_gt_and_gts_addr(meta64):
    assert [to_text(e) for e in sfi_axioms(meta64)] == ["(GT = 0x4000)", "(GTSAddr = 0x3008)"]


def test_axioms_jump_tables():
    meta = parse_meta("gt=0x4000\ngtsAddr=0x3008\njt=0x64f3:9\njt=0x66c0:3\n")
    assert [to_text(e) for e in sfi_axioms(meta)][2:] == [
        "(JT 0x64f3)", "(JTS 0x64f3 9)", "(JT 0x66c0)", "(JTS 0x66c0 3)",
    ]


def test_meta_round_trip():
    meta = parse_meta("gt=0x4000\ngtsAddr=0x3008\njt=0x64f3:9\nheapSize=0x100\n")
    assert parse_meta(format_meta(meta)) == meta


def test_meta_rejects_unknown_key():
    with pytest.raises(PolicyError):
        parse_meta("gt=0x4000\nbogus=1\n")


def test_heap_obligation_heap_write(meta64):
    fn = load_program(fixture_text("heap_write.s"))[0]
    obs = by_rule(sfi_obligations(fn, hints("heap_write.hints"), meta64))
    assert obs[(0xbfbb, "HEAP")] == "((rdi.0 < (rcx.3 + 0x1c)) && ((rcx.3 + 0x1c) < (rdi.0 + 0x200000000)))"
    assert obs[(0xbff0, "HEAPBASE-INV")] == "(rdi.0 = rdi.0)"


def test_indirect_call_obligation(meta64):
    fn = load_program(fixture_text("indirect_call.s"))[0]
    obs = by_rule(sfi_obligations(fn, hints("indirect_call.hints"), meta64))
    assert obs[(0x62a3, "IND_CALL")] == "(FnPtr rax.1)"


def test_unhinted_access_gets_disjunction(meta64):
    fn = load_program(fixture_text("indirect_call.s"))[0]
    rules = {o.rule for o in sfi_obligations(fn, {}, meta64) if o.address == 0x6289}
    assert rules == {"MEM-DISJ"}


def test_hint_on_non_access(meta64):
    fn = load_program(fixture_text("heap_write.s"))[0]
    with pytest.raises(HintError):
        sfi_obligations(fn, {0xbf94: "heap"}, meta64)


def test_bad_hint_kind():
    with pytest.raises(HintError):
        parse_hints("0x10=code\n")


def test_ret_and_indirect_jump(meta64):
    fn = load_program("0x0: push %rbp\n0x1: mov %rsp,%rbp\n0x4: pop %rbp\n0x5: ret\n")[0]
    rets = [o for o in sfi_obligations(fn, {}, meta64) if o.rule == "RETURN"]
    assert len(rets) == 1 and to_text(rets[0].formula).startswith("(rbp.0 = rsp.")
    fn = load_program("0x0: jmp *%rax\n")[0]
    assert [o.rule for o in sfi_obligations(fn, {}, meta64)] == ["IND_JUMP"]


def test_rule_coverage(meta64):
    fn = load_program(fixture_text("indirect_call.s"))[0]
    obs = sfi_obligations(fn, hints("indirect_call.hints"), meta64)
    accesses = {a for a, xs in fn.accesses.items() if xs}
    calls = {i.address for i in fn.instructions if i.mnemonic == "call"}
    assert {o.address for o in obs if o.rule in ("META", "HEAP", "GLOBAL", "STACKR", "STACKW", "MEM-DISJ")} == accesses
    assert {o.address for o in obs if o.rule == "HEAPBASE-INV"} == calls


def test_gts_derivation(meta64):
    fn = load_program(fixture_text("indirect_call.s"))[0]
    a = rename_assertion(parse_assertion("0x6260: rsi = GTS"), fn)
    assert is_special(a)
    assert to_text(special_assertion_check(a, fn, meta64)) == "(0x3008 = (rsi.1 + 8))"


def test_fnptr_derivation(meta64):
    fn = load_program(fixture_text("indirect_call.s"))[0]
    a = rename_assertion(parse_assertion("0x6289: FnPtr rax"), fn)
    goal = to_text(special_assertion_check(a, fn, meta64))
    addr = "((rsi.3 + (rcx.1 * 0x10)) + 8)"
    assert goal == (f"((GT < {addr}) && (({addr} < (GT + (GTS * 0x10))) && "
                    f"(((({addr} & 7) = 0) && (((({addr} ^ GT) & 8) = 8)))))").replace("((((", "(((", 1) or goal


def test_fnptr_expansion_matches_rule(meta64):
    fn = load_program(fixture_text("indirect_call.s"))[0]
    a = rename_assertion(parse_assertion("0x6289: FnPtr rax"), fn)
    derived = special_assertion_check(a, fn, meta64)
    assert expand(a.body, fn, meta64) == derived
    assert derived == fnptr_rule(fn.load_addrs["mem_6289.1"])


def test_gb_derivation(meta64):
    fn = load_program(fixture_text("global_read.s"))[0]
    a = rename_assertion(parse_assertion("0x3fb3: rcx = GB"), fn)
    assert to_text(special_assertion_check(a, fn, meta64)) == "((rdi.0 - 0x20) = (r12.1 - 0x20))"


def test_derivation_on_wrong_shape(meta64):
    fn = load_program(fixture_text("heap_write.s"))[0]
    a = rename_assertion(parse_assertion("0xbf94: FnPtr rcx"), fn)
    with pytest.raises(DerivationError):
        special_assertion_check(a, fn, meta64)


def test_lvi_fenced_obligation_is_provable():
    fn = load_program(fixture_text("lvi.s"))[0]
    obs = lvi_obligations(fn)
    assert [(o.address, to_text(o.formula)) for o in obs] == [(0x2000, "(not LoadBuffer.2)")]
    r = verify_text(fixture_text("lvi.s"), fixture_text("lvi.asserts"), BinaryMeta(), {}, "lvi", 8)[0]
    assert r.verified


def test_lvi_unfenced_obligation_fails():
    r = verify_text(fixture_text("lvi_unfenced.s"), "", BinaryMeta(), {}, "lvi", 8)[0]
    assert len(r.failing) == 1


def test_lvi_no_loads():
    assert lvi_obligations(load_program("0x1: mov %rax,%rbx\n0x4: add %rbx,%rcx")[0]) == []


def test_swapped_hint_never_verifies(meta_w8):
    r = verify_text(fixture_text("heap_write_w8.s"), fixture_text("heap_write_w8.asserts"), meta_w8,
                    hints("mutants/heap_write_globalhint.hints"), "sfi", 8)[0]
    assert r.failing


def test_scaled_heap_rule_by_oracle(meta_w8):
    # GLOBAL window does not contain a heap address under the scaled layout
    fn = load_program(fixture_text("heap_write_w8.s"))[0]
    asserts = rename_all(parse_assertions(fixture_text("heap_write_w8.asserts")), fn)
    obs = sfi_obligations(fn, {0xbfbb: "heap"}, meta_w8)
    heap = next(o for o in obs if o.rule == "HEAP")
    base = sfi_axioms(meta_w8) + range_axioms(meta_w8) + [a.body for a in asserts]
    facts = base + [fn.path_conditions[0xbfbb]]
    assert isinstance(solve_formula(facts + [Not(heap.formula)], 8), Unsat)
    assert isinstance(solve_formula(base + [Not(heap.formula)], 8), Sat)
