import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crowdverify.asm import load_program
from crowdverify.assertion import (
    AssertionSyntaxError,
    AssertionTypeError,
    RenameError,
    known_vars,
    format_assertion,
    parse_assertion,
    parse_assertions,
    rename_all,
    rename_assertion,
)
from crowdverify.expr import BOOL, App, BinOp, BoolOp, Cmp, Const, Ite, Not, Var, free_vars, to_text

from conftest import fixture_text

CMP_FN = load_program("0x1000: cmp %rsi,%rax")[0]


def test_parse_cmp_assertion():
    a = parse_assertion("0x1000: cf = rax < rsi")
    assert a.address == 0x1000
    assert a.body == Cmp("=", Var("cf", None, BOOL), Cmp("<", Var("rax"), Var("rsi")))


def test_parse_predicate():
    a = parse_assertion("0x6289: FnPtr rax")
    assert a.body == App("FnPtr", (Var("rax"),))


def test_parse_quantified():
    a = parse_assertion("0x2000: forall rax. rax = rax")
    assert a.quantifiers and a.quantifiers[0][0] == "forall"


def test_parse_unicode_and_suffix():
    a = parse_assertion("0x1: ∀rax. rax ≤ 8G ∧ ¬cf")
    assert isinstance(a.body, BoolOp)
    assert Const(8 << 30) in (a.body.left.right,)


def test_syntax_error_has_location():
    with pytest.raises(AssertionSyntaxError) as exc:
        parse_assertions("0x1: rax = 1\n0x2: rax = = 2")
    assert exc.value.line == 2


def test_flag_used_arithmetically():
    with pytest.raises(AssertionTypeError):
        parse_assertion("0x1: cf + 1 = rax")


def test_predicate_arity():
    with pytest.raises((AssertionSyntaxError, AssertionTypeError)):
        parse_assertion("0x1: JmpOff rax")


def test_rename_cmp():
    a = rename_assertion(parse_assertion("0x1000: cf = rax < rsi"), CMP_FN)
    assert to_text(a.body) == "(cf.1 = (rax.0 < rsi.0))"


def test_rename_heap_write():
    fn = load_program(fixture_text("heap_write.s"))[0]
    got = [to_text(a.body) for a in rename_all(parse_assertions(fixture_text("heap_write.asserts")), fn)]
    assert got == [
        "(rcx.1 = 0x400000)",
        "(cf.1 = (rax.1 < rcx.1))",
        "(rcx.2 = rdi.0)",
        "(rcx.3 = (rcx.2 + rax.1))",
    ]


def test_rename_indirect_call_constant_load():
    fn = load_program(fixture_text("indirect_call.s"))[0]
    a = rename_assertion(parse_assertion("0x626d: rsi = 0x4000"), fn)
    assert to_text(a.body) == "(rsi.3 = 0x4000)"


def test_rename_leaves_symbols():
    fn = load_program(fixture_text("indirect_call.s"))[0]
    a = rename_assertion(parse_assertion("0x6260: rsi = GTS"), fn)
    assert to_text(a.body) == "(rsi.2 = GTS)"


def test_rename_stack_slot():
    fn = load_program("0x10: push %rbp\n0x11: mov %rsp,%rbp")[0]
    a = rename_assertion(parse_assertion("0x10: q[rsp] = rbp"), fn)
    assert to_text(a.body) == "(q[rsp.0-8].1 = rbp.0)"


def test_rename_nonexistent_version():
    with pytest.raises(RenameError):
        rename_assertion(parse_assertion("0x1000: cf.7 = true"), CMP_FN)


def test_rename_is_idempotent_on_fixtures():
    for asm, asserts in (("heap_write.s", "heap_write.asserts"), ("indirect_call.s", "indirect_call.asserts"),
                         ("global_read.s", "global_read.asserts"), ("cmp_demo.s", "cmp_demo.asserts")):
        fn = load_program(fixture_text(asm))[0]
        once = rename_all(parse_assertions(fixture_text(asserts)), fn)
        twice = rename_all(once, fn)
        assert [a.body for a in once] == [a.body for a in twice]
        names = known_vars(fn)
        for a in once:
            for v in free_vars(a.body):
                assert v.version is None or v.name in names


# -- round trip over generated ASTs ------------------------------------------

REGS = ["rax", "rbx", "rcx", "rdx", "rsi", "rdi", "rbp", "rsp", "r12"]
FLAGS = ["cf", "zf", "sf", "of"]

arith = st.recursive(
    st.one_of(st.sampled_from(REGS).map(Var), st.integers(0, 2**64 - 1).map(Const)),
    lambda sub: st.tuples(st.sampled_from(["+", "-", "*", "&", "|", "^", "<<", ">>"]), sub, sub).map(
        lambda t: BinOp(*t)),
    max_leaves=6,
)


def _bool(sub):
    return st.one_of(
        st.tuples(st.sampled_from(["<", "<=", ">", ">=", "=", "<s"]), arith, arith).map(lambda t: Cmp(*t)),
        sub.map(Not),
        st.tuples(st.sampled_from(["and", "or"]), sub, sub).map(lambda t: BoolOp(*t)),
        st.tuples(sub, arith, arith).map(lambda t: Cmp("=", Ite(*t), t[1])),
    )


boolean = st.recursive(
    st.one_of(st.sampled_from(FLAGS).map(lambda f: Var(f, None, BOOL)), st.booleans().map(
        lambda b: Cmp("=", Var("cf", None, BOOL), Var("zf", None, BOOL)) if b else Var("of", None, BOOL))),
    _bool,
    max_leaves=8,
)


@settings(max_examples=300, deadline=None)
@given(boolean, st.integers(0, 2**32))
def test_format_parse_round_trip(body, addr):
    from crowdverify.assertion import Assertion
    a = Assertion(addr, body)
    text = format_assertion(a)
    again = parse_assertion(text)
    assert again.address == addr
    assert again.body == body
