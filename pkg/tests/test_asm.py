import pytest

from crowdverify.asm import (
    Imm,
    MalformedCfg,
    ParseError,
    Reg,
    StackModelError,
    UnsupportedInstruction,
    build_cfg,
    dump_ssa,
    lift_instruction,
    load_program,
    parse_line,
    parse_program,
    path_condition,
    ssa_transform,
)
from crowdverify.expr import BOOL, TRUE, Cmp, Var, to_text

from conftest import fixture_text


def texts(eqs):
    return {to_text(e) for e in eqs}


def test_parse_cmp_line():
    i = parse_line("0x1000: cmp %rsi,%rax")
    assert i.address == 0x1000 and i.mnemonic == "cmp"
    assert [op.name for op in i.operands] == ["rsi", "rax"]
    assert all(isinstance(op, Reg) for op in i.operands)


def test_parse_empty_program():
    assert parse_program("") == []


def test_parse_error_reports_line():
    with pytest.raises(ParseError) as exc:
        parse_program("0xZZ: bogus")
    assert exc.value.line == 1


def test_unsupported_mnemonic_is_named():
    with pytest.raises(UnsupportedInstruction) as exc:
        parse_program("0x10: mov %rax,%rbx\n0x13: cpuid")
    assert "cpuid" in str(exc.value)


def test_immediate_operand():
    i = parse_line("0xbf94: mov $0x400000,%ecx")
    assert i.operands[0] == Imm(0x400000)


def test_lift_cmp():
    eqs = texts(lift_instruction(parse_line("0x1000: cmp %rsi,%rax"), 0x1003).equations)
    assert {"(rip = 0x1003)", "(cf = (rax < rsi))", "(zf = (rax = rsi))"} <= eqs


def test_lift_32bit_mov_clears_upper_half():
    eqs = texts(lift_instruction(parse_line("0xbf94: mov $0x400000,%ecx"), 0xbf99).equations)
    assert eqs == {"(rip = 0xbf99)", "(rcx = 0x400000)"}
    eqs = texts(lift_instruction(parse_line("0x6255: mov %edx,%ecx"), 0x6259).equations)
    assert "(rcx = (rdx & 0xffffffff))" in eqs


def test_lift_lfence_clears_load_buffer():
    eqs = texts(lift_instruction(parse_line("0x2003: lfence"), 0x2006).equations)
    assert eqs == {"(rip = 0x2006)", "(LoadBuffer = false)"}


def test_every_ir_has_one_rip_update():
    for name in ("heap_write.s", "indirect_call.s", "global_read.s", "lvi.s"):
        for fn in load_program(fixture_text(name)):
            for ir in fn.ir.values():
                rips = [e for e in ir.equations if isinstance(e, Cmp) and isinstance(e.left, Var)
                        and e.left.base == "rip"]
                assert len(rips) == 1


def test_straight_line_cfg():
    fn = parse_program("0x1: mov %rax,%rbx\n0x4: add %rbx,%rcx\n0x7: xor %rax,%rax")[0]
    cfg = build_cfg(fn.instructions)
    assert len(cfg.blocks) == 1 and cfg.edges == ()


def test_heap_write_cfg_edges():
    fn = parse_program(fixture_text("heap_write.s"))[0]
    cfg = build_cfg(fn.instructions)
    labels = {(e.src, e.dst): e.cond for e in cfg.edges if e.src == 0xbf91}
    assert labels[(0xbf91, 0xbfa2)] == Var("cf", None, BOOL)
    assert to_text(labels[(0xbf91, 0xcbb0)]) == "(not cf)"
    assert not cfg.succs(cfg.block_of(0xcbb0))


def test_branch_to_missing_address():
    fn = parse_program("0x1: jae 0x99\n0x7: ud2")[0]
    with pytest.raises(MalformedCfg):
        build_cfg(fn.instructions)


def test_ssa_cmp_versions():
    fn = load_program("0x1000: cmp %rsi,%rax")[0]
    eqs = texts(fn.ir[0x1000].equations)
    assert {"(cf.1 = (rax.0 < rsi.0))", "(zf.1 = (rax.0 = rsi.0))"} <= eqs


def test_ssa_stack_slot():
    fn = load_program("0x10: mov %rax,[%rsp+8]")[0]
    assert "(q[rsp.0+8].1 = rax.0)" in texts(fn.ir[0x10].equations)


def test_non_constant_rsp_adjustment_rejected():
    with pytest.raises(StackModelError) as exc:
        load_program("0x10: add %rax,%rsp\n0x13: mov %rbx,[%rsp+8]")
    assert exc.value.address in (0x10, 0x13)


def test_join_havocs_diverging_register():
    src = """
    0x00: cmp %rsi,%rdi
    0x03: jae 0x10
    0x09: mov $1,%ecx
    0x0e: jmp 0x15
    0x10: mov $2,%ecx
    0x15: add %rcx,%rax
    """
    fn = load_program(src)[0]
    defined = {to_text(e.left) for ir in fn.ir.values() for e in ir.equations}
    uses = {v.name for e in fn.ir[0x15].equations for v in _vars(e.right)}
    rcx_use = [u for u in uses if u.startswith("rcx.")]
    assert rcx_use == ["rcx.3"]
    assert "rcx.3" not in defined


def _vars(e):
    from crowdverify.expr import free_vars
    return free_vars(e)


def test_single_assignment_on_all_fixtures():
    for name in ("heap_write.s", "indirect_call.s", "global_read.s", "cmp_demo.s", "lvi.s", "lvi_unfenced.s"):
        for fn in load_program(fixture_text(name)):
            lhs = [to_text(e.left) for ir in fn.ir.values() for e in ir.equations]
            assert len(lhs) == len(set(lhs)), name


def test_ssa_is_deterministic():
    text = fixture_text("indirect_call.s")
    assert dump_ssa(load_program(text)[0]) == dump_ssa(load_program(text)[0])


def test_path_conditions():
    l1 = load_program(fixture_text("heap_write.s"))[0]
    assert path_condition(l1, l1.instructions[0].address) == TRUE
    assert to_text(path_condition(l1, 0xbfa2)) == "cf.1"
    l2 = load_program(fixture_text("indirect_call.s"))[0]
    assert to_text(path_condition(l2, 0x626d)) == "cf.1"
    with pytest.raises(KeyError):
        path_condition(l1, 0x1234)


def test_cfg_covers_instructions():
    fn = parse_program(fixture_text("indirect_call.s"))[0]
    cfg = build_cfg(fn.instructions)
    covered = sorted(a for block in cfg.blocks.values() for a in block)
    assert covered == [i.address for i in fn.instructions]


def test_ssa_transform_accepts_explicit_cfg():
    fn = parse_program(fixture_text("heap_write.s"))[0]
    a = ssa_transform(fn, build_cfg(fn.instructions))
    b = ssa_transform(fn)
    assert dump_ssa(a) == dump_ssa(b)
