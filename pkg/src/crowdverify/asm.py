"""Assembly front end: parsing, lifting to explicit equations, CFG and SSA.

Input is a textual x86-64 listing in AT&T operand order::

    fn heap_write:
    0xbf94: mov $0x400000,%ecx
    0xbf99: cmp %rcx,%rax      // comment
    0xbfbb: mov %rdx,[%rcx+0x1c]

Memory operands may be written ``[%base+%index*scale+disp]`` with an optional
size prefix (``q``/``d``/``w``/``b``), or in AT&T form ``disp(%base,%index,scale)``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Mapping

import networkx as nx

from .expr import (
    BOOL,
    BV,
    FALSE,
    TRUE,
    BinOp,
    BoolOp,
    Cmp,
    Const,
    Expr,
    Ite,
    Load,
    Not,
    Var,
    children,
    conj,
    disj,
    fold,
    rebuild,
    to_text,
)

MASK64 = (1 << 64) - 1


class AsmError(Exception):
    """Base class for front-end failures."""


class ParseError(AsmError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class UnsupportedInstruction(AsmError):
    def __init__(self, mnemonic: str, line: int | None = None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}unsupported instruction '{mnemonic}'")
        self.mnemonic = mnemonic
        self.line = line


class MalformedCfg(AsmError):
    pass


class StackModelError(AsmError):
    def __init__(self, address: int, reason: str):
        super().__init__(f"{address:#x}: {reason}")
        self.address = address


# -- registers --------------------------------------------------------------

_GPR64 = ["rax", "rbx", "rcx", "rdx", "rsi", "rdi", "rbp", "rsp"] + [f"r{i}" for i in range(8, 16)]
_LEGACY = {"rax": "a", "rbx": "b", "rcx": "c", "rdx": "d"}
_PTR = {"rsi": "si", "rdi": "di", "rbp": "bp", "rsp": "sp"}

REGISTERS: dict[str, tuple[str, int]] = {}
for _r in _GPR64:
    REGISTERS[_r] = (_r, 64)
    if _r in _LEGACY:
        c = _LEGACY[_r]
        REGISTERS[f"e{c}x"] = (_r, 32)
        REGISTERS[f"{c}x"] = (_r, 16)
        REGISTERS[f"{c}l"] = (_r, 8)
        REGISTERS[f"{c}h"] = (_r, 8)
    elif _r in _PTR:
        c = _PTR[_r]
        REGISTERS[f"e{c}"] = (_r, 32)
        REGISTERS[c] = (_r, 16)
        REGISTERS[f"{c}l"] = (_r, 8)
    else:
        REGISTERS[f"{_r}d"] = (_r, 32)
        REGISTERS[f"{_r}w"] = (_r, 16)
        REGISTERS[f"{_r}b"] = (_r, 8)

FLAGS = ("cf", "zf", "sf", "of")
UNMODELED_FLAGS = ("pf", "af")
LOAD_BUFFER = "LoadBuffer"
CALLER_SAVED = ("rax", "rcx", "rdx", "rsi", "rdi", "r8", "r9", "r10", "r11")
SIZE_BITS = {"q": 64, "d": 32, "w": 16, "b": 8}
BITS_SIZE = {v: k for k, v in SIZE_BITS.items()}


def reg_var(base: str) -> Var:
    return Var(base, None, BV)


def flag_var(name: str) -> Var:
    return Var(name, None, BOOL)


def base_sort(base: str) -> str:
    return BOOL if base in FLAGS or base in UNMODELED_FLAGS or base == LOAD_BUFFER else BV


# -- operands and instructions ---------------------------------------------

@dataclass(frozen=True)
class Reg:
    name: str
    base: str
    bits: int


@dataclass(frozen=True)
class Imm:
    value: int


@dataclass(frozen=True)
class Mem:
    base: Reg | None
    index: Reg | None
    scale: int
    disp: int
    size: str = "q"


@dataclass(frozen=True)
class Target:
    addr: int | None = None
    label: str | None = None


Operand = Reg | Imm | Mem | Target


@dataclass(frozen=True)
class Instruction:
    address: int
    mnemonic: str
    operands: tuple[Operand, ...] = ()
    line: int = 0


@dataclass(frozen=True)
class Function:
    name: str
    instructions: tuple[Instruction, ...]


JCC = {
    "ja": "a", "jnbe": "a",
    "jae": "ae", "jnb": "ae", "jnc": "ae",
    "jb": "b", "jc": "b", "jnae": "b",
    "jbe": "be", "jna": "be",
    "je": "e", "jz": "e",
    "jne": "ne", "jnz": "ne",
}
CMOV = {"cmov" + k[1:]: v for k, v in JCC.items()}
TWO_OPERAND = {"mov", "movzx", "lea", "add", "sub", "and", "or", "xor", "shl", "shr", "cmp", "test"}
ARITY = {
    **{m: 2 for m in TWO_OPERAND},
    **{m: 2 for m in CMOV},
    **{m: 1 for m in JCC},
    "push": 1, "pop": 1, "call": 1, "jmp": 1,
    "ret": 0, "ud2": 0, "lfence": 0,
}
TERMINATORS = {"jmp", "ret", "ud2"}


def condition(code: str) -> Expr:
    """Branch/cmov condition over unversioned flags."""
    cf, zf = flag_var("cf"), flag_var("zf")
    return {
        "a": BoolOp("and", Not(cf), Not(zf)),
        "ae": Not(cf),
        "b": cf,
        "be": BoolOp("or", cf, zf),
        "e": zf,
        "ne": Not(zf),
    }[code]


# -- parsing ----------------------------------------------------------------

_LINE = re.compile(r"^(0x[0-9a-fA-F]+)\s*:\s*([A-Za-z][A-Za-z0-9]*)\s*(.*)$")
_HEADER = re.compile(r"^fn\s+([A-Za-z_.$][\w.$@]*)\s*:$")
_NUM = r"[-+]?(?:0x[0-9a-fA-F]+|\d+)"


def _int(text: str) -> int:
    return int(text, 0)


def _split_operands(text: str) -> list[str]:
    parts, depth, cur = [], 0, ""
    for ch in text:
        if ch in "[(":
            depth += 1
        elif ch in "])":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append(cur.strip())
            cur = ""
        else:
            cur += ch
    if cur.strip():
        parts.append(cur.strip())
    return parts


def _reg(text: str) -> Reg | None:
    name = text.strip().lstrip("%").lower()
    if name in REGISTERS:
        base, bits = REGISTERS[name]
        return Reg(name, base, bits)
    return None


def _parse_mem(text: str, line: int) -> Mem:
    size = "q"
    explicit = False
    m = re.match(r"^([qdwb])\s*\[", text)
    if m:
        size, explicit = m.group(1), True
        text = text[1:].lstrip()
    base = index = None
    scale, disp = 1, 0
    if text.startswith("["):
        if not text.endswith("]"):
            raise ParseError(line, f"unterminated memory operand '{text}'")
        body = text[1:-1].replace(" ", "")
        for sign, term in re.findall(r"([+-]?)([^+-]+)", body):
            if "*" in term:
                r, s = term.split("*", 1)
                reg = _reg(r)
                if reg is None or sign == "-" or index is not None:
                    raise ParseError(line, f"bad index term '{term}'")
                index, scale = reg, _int(s)
                continue
            reg = _reg(term)
            if reg is not None:
                if sign == "-":
                    raise ParseError(line, f"negated register in '{text}'")
                if base is None:
                    base = reg
                elif index is None:
                    index = reg
                else:
                    raise ParseError(line, f"too many registers in '{text}'")
            else:
                try:
                    disp += -_int(term) if sign == "-" else _int(term)
                except ValueError:
                    raise ParseError(line, f"bad memory term '{term}'") from None
    else:
        m = re.match(rf"^({_NUM})?\(([^)]*)\)$", text.replace(" ", ""))
        if not m:
            raise ParseError(line, f"bad operand '{text}'")
        disp = _int(m.group(1)) if m.group(1) else 0
        fields = m.group(2).split(",")
        base = _reg(fields[0]) if fields[0] else None
        if len(fields) > 1 and fields[1]:
            index = _reg(fields[1])
            scale = _int(fields[2]) if len(fields) > 2 and fields[2] else 1
    if scale not in (1, 2, 4, 8, 16):
        raise ParseError(line, f"unsupported scale {scale}")
    for r in (base, index):
        if r is not None and r.bits != 64:
            raise ParseError(line, f"address registers must be 64-bit: {r.name}")
    return Mem(base, index, scale, disp, size if explicit else "")


def _parse_operand(text: str, branch: bool, line: int) -> Operand:
    text = text.strip()
    if text.startswith("$"):
        try:
            return Imm(_int(text[1:]))
        except ValueError:
            raise ParseError(line, f"bad immediate '{text}'") from None
    if text.startswith("*"):
        text = text[1:]
    reg = _reg(text)
    if reg is not None:
        return reg
    if "[" in text or "(" in text:
        return _parse_mem(text, line)
    if re.fullmatch(_NUM, text):
        return Target(addr=_int(text)) if branch else Imm(_int(text))
    if branch and re.fullmatch(r"[A-Za-z_.$][\w.$@]*", text):
        return Target(label=text)
    raise ParseError(line, f"bad operand '{text}'")


def parse_line(text: str, line: int = 1) -> Instruction:
    m = _LINE.match(text.strip())
    if not m:
        raise ParseError(line, f"expected '0xADDR: mnemonic operands', got '{text.strip()}'")
    addr, mnem, rest = _int(m.group(1)), m.group(2).lower(), m.group(3).strip()
    if mnem not in ARITY:
        raise UnsupportedInstruction(mnem, line)
    branch = mnem in JCC or mnem in ("call", "jmp")
    ops = tuple(_parse_operand(o, branch, line) for o in _split_operands(rest)) if rest else ()
    if len(ops) != ARITY[mnem]:
        raise ParseError(line, f"'{mnem}' takes {ARITY[mnem]} operand(s), got {len(ops)}")
    ops = _fill_sizes(mnem, ops, line)
    return Instruction(addr, mnem, ops, line)


def _fill_sizes(mnem: str, ops: tuple[Operand, ...], line: int) -> tuple[Operand, ...]:
    """Give unsized memory operands the width of the register operand."""
    if mnem == "movzx":
        return tuple(
            Mem(o.base, o.index, o.scale, o.disp, o.size or "b") if isinstance(o, Mem) else o
            for o in ops
        )
    regs = [o for o in ops if isinstance(o, Reg)]
    default = BITS_SIZE[regs[0].bits] if regs else "q"
    out = []
    for o in ops:
        if isinstance(o, Mem) and not o.size:
            o = Mem(o.base, o.index, o.scale, o.disp, default)
        out.append(o)
    return tuple(out)


def parse_program(text: str) -> list[Function]:
    """Parse a listing into functions, instructions sorted by address."""
    functions: list[tuple[str, list[Instruction]]] = []
    current: list[Instruction] | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("//", 1)[0].strip()
        if not line:
            continue
        h = _HEADER.match(line)
        if h:
            current = []
            functions.append((h.group(1), current))
            continue
        instr = parse_line(line, lineno)
        if current is None:
            current = []
            functions.append(("main", current))
        current.append(instr)
    out = []
    for name, instrs in functions:
        instrs = sorted(instrs, key=lambda i: i.address)
        for a, b in zip(instrs, instrs[1:]):
            if a.address == b.address:
                raise ParseError(b.line, f"duplicate address {b.address:#x}")
        out.append(Function(name, tuple(instrs)))
    return out


# -- lifting ----------------------------------------------------------------

@dataclass(frozen=True)
class Assign:
    dest: Var | Load  # Load as destination = memory store
    expr: Expr


@dataclass(frozen=True)
class Havoc:
    dest: Var


Effect = Assign | Havoc


@dataclass(frozen=True)
class Access:
    addr: Expr
    size: str
    read: bool
    write: bool


@dataclass(frozen=True)
class Lifted:
    effects: tuple[Effect, ...]
    accesses: tuple[Access, ...]


@dataclass(frozen=True)
class EquationSet:
    address: int
    equations: tuple[Expr, ...]

    def __contains__(self, item: object) -> bool:
        return item in self.equations


def mem_address(m: Mem) -> Expr:
    terms: list[Expr] = []
    if m.base is not None:
        terms.append(reg_var(m.base.base))
    if m.index is not None:
        idx: Expr = reg_var(m.index.base)
        terms.append(idx if m.scale == 1 else BinOp("*", idx, Const(m.scale)))
    if not terms:
        return Const(m.disp & MASK64)
    out = terms[0]
    for t in terms[1:]:
        out = BinOp("+", out, t)
    if m.disp > 0:
        out = BinOp("+", out, Const(m.disp))
    elif m.disp < 0:
        out = BinOp("-", out, Const(-m.disp))
    return out


def _mask(bits: int) -> int:
    return (1 << bits) - 1


def _read(op: Operand) -> Expr:
    if isinstance(op, Imm):
        return Const(op.value & MASK64)
    if isinstance(op, Reg):
        v = reg_var(op.base)
        if op.bits == 64:
            return v
        if op.name.endswith("h") and op.name[1] == "h":
            return BinOp("&", BinOp(">>", v, Const(8)), Const(0xFF))
        return BinOp("&", v, Const(_mask(op.bits)))
    if isinstance(op, Mem):
        return Load(op.size, mem_address(op))
    raise TypeError(op)


def _bits(op: Operand) -> int:
    if isinstance(op, Reg):
        return op.bits
    if isinstance(op, Mem):
        return SIZE_BITS[op.size]
    return 64


def _truncate(value: Expr, bits: int) -> Expr:
    mask = Const(_mask(bits))
    if isinstance(value, Const):
        return Const(value.value & mask.value)
    if isinstance(value, BinOp) and value.op == "&" and value.right == mask:
        return value
    return BinOp("&", value, mask)


def _write(op: Operand, value: Expr, bits: int) -> list[Effect]:
    if isinstance(op, Reg):
        if bits == 64:
            return [Assign(reg_var(op.base), value)]
        if bits == 32:
            return [Assign(reg_var(op.base), _truncate(value, 32))]
        return [Havoc(reg_var(op.base))]
    if isinstance(op, Mem):
        if bits < 64:
            value = _truncate(value, bits)
        return [Assign(Load(op.size, mem_address(op)), value)]
    raise TypeError(op)


def _sign(res: Expr, bits: int) -> Expr:
    if bits == 64:
        return Cmp("<s", res, Const(0))
    return Cmp("=", BinOp("&", BinOp(">>", res, Const(bits - 1)), Const(1)), Const(1))


def _flags(res: Expr, bits: int, cf: Expr | None, of: Expr | None, zf: Expr | None = None) -> list[Effect]:
    out: list[Effect] = [
        Assign(flag_var("zf"), zf if zf is not None else Cmp("=", res, Const(0))),
        Assign(flag_var("sf"), _sign(res, bits)),
    ]
    out.append(Assign(flag_var("cf"), cf) if cf is not None else Havoc(flag_var("cf")))
    out.append(Assign(flag_var("of"), of) if of is not None else Havoc(flag_var("of")))
    out.extend(Havoc(flag_var(f)) for f in UNMODELED_FLAGS)
    return out


def _xor(a: Expr, b: Expr) -> Expr:
    return Not(Cmp("=", a, b))


def lift_effects(instr: Instruction, next_addr: int | None) -> Lifted:
    m, ops = instr.mnemonic, instr.operands
    eff: list[Effect] = []
    acc: list[Access] = []
    rip: Expr = Const(next_addr) if next_addr is not None else Var(f"next_{instr.address:x}")

    def note(op: Operand, read: bool, write: bool) -> None:
        if isinstance(op, Mem):
            acc.append(Access(mem_address(op), op.size, read, write))

    if m == "mov":
        src, dst = ops
        if isinstance(src, Mem) and isinstance(dst, Mem):
            raise UnsupportedInstruction("mov mem,mem", instr.line)
        eff += _write(dst, _read(src), _bits(dst))
        note(src, True, False)
        note(dst, False, True)
    elif m == "movzx":
        src, dst = ops
        if not isinstance(dst, Reg):
            raise UnsupportedInstruction("movzx to memory", instr.line)
        eff += _write(dst, _read(src), dst.bits)
        note(src, True, False)
    elif m == "lea":
        src, dst = ops
        if not isinstance(src, Mem) or not isinstance(dst, Reg):
            raise UnsupportedInstruction("lea without memory source", instr.line)
        addr = mem_address(src)
        eff += _write(dst, addr if dst.bits == 64 else BinOp("&", addr, Const(_mask(dst.bits))), dst.bits)
    elif m in ("add", "sub", "and", "or", "xor", "cmp", "test"):
        src, dst = ops
        bits = _bits(dst)
        d, s = _read(dst), _read(src)
        if isinstance(src, Imm) and bits < 64:
            s = Const(src.value & _mask(bits))
        op = {"add": "+", "sub": "-", "cmp": "-", "and": "&", "test": "&", "or": "|", "xor": "^"}[m]
        res: Expr = BinOp(op, d, s)
        if bits < 64 and op in "+-":
            res = BinOp("&", res, Const(_mask(bits)))
        if op == "+":
            cf: Expr | None = Cmp("<", res, d)
            of = (
                BoolOp("and", Cmp("=", _sign(d, 64), _sign(s, 64)), _xor(_sign(res, 64), _sign(d, 64)))
                if bits == 64 else None
            )
        elif op == "-":
            cf = Cmp("<", d, s)
            of = _xor(Cmp("<s", d, s), _sign(res, 64)) if bits == 64 else None
        else:
            cf, of = FALSE, FALSE
        if m not in ("cmp", "test"):
            eff += _write(dst, res, bits)
        eff += _flags(res, bits, cf, of, Cmp("=", d, s) if op == "-" else None)
        note(src, True, False)
        note(dst, True, m not in ("cmp", "test"))
    elif m in ("shl", "shr"):
        cnt, dst = ops
        bits = _bits(dst)
        if isinstance(cnt, Imm):
            c: Expr = Const(cnt.value & (63 if bits == 64 else 31))
        elif isinstance(cnt, Reg) and cnt.name == "cl":
            c = BinOp("&", reg_var("rcx"), Const(63 if bits == 64 else 31))
        else:
            raise UnsupportedInstruction(f"{m} count operand", instr.line)
        res = BinOp("<<" if m == "shl" else ">>", _read(dst), c)
        if bits < 64:
            res = BinOp("&", res, Const(_mask(bits)))
        eff += _write(dst, res, bits)
        eff += _flags(res, bits, None, None)
        note(dst, True, True)
    elif m in CMOV:
        src, dst = ops
        if not isinstance(dst, Reg):
            raise UnsupportedInstruction("cmov to memory", instr.line)
        eff += _write(dst, Ite(condition(CMOV[m]), _read(src), _read(dst)), dst.bits)
        note(src, True, False)
    elif m == "push":
        (src,) = ops
        rsp = reg_var("rsp")
        slot = Load("q", BinOp("-", rsp, Const(8)))
        eff += [Assign(rsp, BinOp("-", rsp, Const(8))), Assign(slot, _read(src))]
        note(src, True, False)
        acc.append(Access(slot.addr, "q", False, True))
    elif m == "pop":
        (dst,) = ops
        if isinstance(dst, Reg) and dst.base == "rsp":
            raise UnsupportedInstruction("pop %rsp", instr.line)
        rsp = reg_var("rsp")
        eff += _write(dst, Load("q", rsp), _bits(dst))
        eff.append(Assign(rsp, BinOp("+", rsp, Const(8))))
        acc.append(Access(rsp, "q", True, False))
        note(dst, False, True)
    elif m == "call":
        (tgt,) = ops
        rip = _target(tgt, instr)
        if isinstance(tgt, Mem):
            note(tgt, True, False)
        eff += [Havoc(reg_var(r)) for r in CALLER_SAVED]
        eff += [Havoc(flag_var(f)) for f in FLAGS + UNMODELED_FLAGS]
    elif m == "jmp":
        (tgt,) = ops
        rip = _target(tgt, instr)
        if isinstance(tgt, Mem):
            note(tgt, True, False)
    elif m in JCC:
        (tgt,) = ops
        if not isinstance(tgt, Target) or tgt.addr is None:
            raise ParseError(instr.line, f"'{m}' needs a direct address target")
        rip = Ite(condition(JCC[m]), Const(tgt.addr), rip)
    elif m == "ret":
        rsp = reg_var("rsp")
        rip = Load("q", rsp)
        eff.append(Assign(rsp, BinOp("+", rsp, Const(8))))
    elif m == "ud2":
        rip = Const(instr.address)
    elif m == "lfence":
        eff.append(Assign(flag_var(LOAD_BUFFER), FALSE))
    else:  # pragma: no cover - guarded by ARITY
        raise UnsupportedInstruction(m, instr.line)

    if any(a.read for a in acc):
        eff.append(Assign(flag_var(LOAD_BUFFER), TRUE))
    eff.insert(0, Assign(reg_var("rip"), rip))
    return Lifted(tuple(eff), tuple(acc))


def _target(op: Operand, instr: Instruction) -> Expr:
    if isinstance(op, Target):
        if op.addr is not None:
            return Const(op.addr)
        return Var(f"fn_{op.label}")
    return _read(op)


def lift_instruction(instr: Instruction, next_addr: int | None) -> EquationSet:
    """Unversioned IR of one instruction (havocked destinations omitted)."""
    lifted = lift_effects(instr, next_addr)
    eqs = []
    for e in lifted.effects:
        if isinstance(e, Assign):
            eqs.append(Cmp("=", e.dest, fold(e.expr)))
    return EquationSet(instr.address, tuple(eqs))


# -- CFG --------------------------------------------------------------------

@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    cond: Expr  # unversioned flag condition; TRUE for unconditional


@dataclass(frozen=True)
class Cfg:
    entry: int
    blocks: dict[int, tuple[int, ...]]  # block start -> instruction addresses
    edges: tuple[Edge, ...]
    unreachable: frozenset[int] = frozenset()

    def block_of(self, addr: int) -> int:
        for start, addrs in self.blocks.items():
            if addr in addrs:
                return start
        raise KeyError(f"no instruction at {addr:#x}")

    def succs(self, block: int) -> list[Edge]:
        return [e for e in self.edges if e.src == block]

    def preds(self, block: int) -> list[Edge]:
        return [e for e in self.edges if e.dst == block]


def build_cfg(instructions: tuple[Instruction, ...] | list[Instruction]) -> Cfg:
    instrs = sorted(instructions, key=lambda i: i.address)
    if not instrs:
        raise MalformedCfg("empty function")
    addrs = {i.address for i in instrs}
    leaders = {instrs[0].address}
    for k, ins in enumerate(instrs):
        tgt = ins.operands[0] if ins.operands else None
        if ins.mnemonic in JCC or (ins.mnemonic == "jmp" and isinstance(tgt, Target)):
            assert isinstance(tgt, Target)
            if tgt.addr is None or tgt.addr not in addrs:
                where = hex(tgt.addr) if tgt.addr is not None else tgt.label
                raise MalformedCfg(f"{ins.address:#x}: branch to {where} outside the function")
            leaders.add(tgt.addr)
        if (ins.mnemonic in JCC or ins.mnemonic in TERMINATORS) and k + 1 < len(instrs):
            leaders.add(instrs[k + 1].address)

    blocks: dict[int, tuple[int, ...]] = {}
    cur: list[int] = []
    for ins in instrs:
        if ins.address in leaders and cur:
            blocks[cur[0]] = tuple(cur)
            cur = []
        cur.append(ins.address)
    blocks[cur[0]] = tuple(cur)

    by_addr = {i.address: i for i in instrs}
    order = sorted(blocks)
    edges: list[Edge] = []
    for n, start in enumerate(order):
        last = by_addr[blocks[start][-1]]
        nxt = order[n + 1] if n + 1 < len(order) else None
        if last.mnemonic in JCC:
            tgt = last.operands[0]
            assert isinstance(tgt, Target) and tgt.addr is not None
            cond = condition(JCC[last.mnemonic])
            edges.append(Edge(start, tgt.addr, cond))
            if nxt is not None:
                edges.append(Edge(start, nxt, _negate(cond)))
        elif last.mnemonic == "jmp":
            tgt = last.operands[0]
            if isinstance(tgt, Target):
                assert tgt.addr is not None
                edges.append(Edge(start, tgt.addr, TRUE))
        elif last.mnemonic in TERMINATORS:
            pass
        elif nxt is not None:
            edges.append(Edge(start, nxt, TRUE))

    g = nx.DiGraph()
    g.add_nodes_from(order)
    g.add_edges_from((e.src, e.dst) for e in edges)
    reach = nx.descendants(g, order[0]) | {order[0]}
    return Cfg(order[0], blocks, tuple(edges), frozenset(b for b in order if b not in reach))


def _negate(cond: Expr) -> Expr:
    return cond.arg if isinstance(cond, Not) else Not(cond)


# -- SSA --------------------------------------------------------------------

@dataclass(frozen=True)
class MemAccess:
    address: int
    addr: Expr  # SSA address expression
    size: str
    read: bool
    write: bool
    stack: bool


@dataclass(frozen=True)
class SsaFunction:
    name: str
    instructions: tuple[Instruction, ...]
    ir: dict[int, EquationSet]
    cfg: Cfg
    path_conditions: dict[int, Expr]
    pre: dict[int, dict[str, int]]
    post: dict[int, dict[str, int]]
    assigned: dict[int, frozenset[str]]
    accesses: dict[int, tuple[MemAccess, ...]]
    defs: dict[str, tuple[int, Expr]] = field(default_factory=dict)
    load_addrs: dict[str, Expr] = field(default_factory=dict)
    ptr_deltas: dict[str, tuple[str, int]] = field(default_factory=dict)

    def instruction(self, addr: int) -> Instruction:
        for i in self.instructions:
            if i.address == addr:
                return i
        raise KeyError(f"no instruction at {addr:#x} in {self.name}")

    def successor(self, addr: int) -> int | None:
        addrs = [i.address for i in self.instructions]
        k = addrs.index(addr)
        return addrs[k + 1] if k + 1 < len(addrs) else None

    def var(self, base: str, addr: int, post: bool = False) -> Var:
        table = self.post if post else self.pre
        return Var(base, table[addr].get(base, 0), base_sort(base))

    def slot_base(self, size: str, ptr: Var, offset: int) -> str | None:
        delta = self.ptr_deltas.get(ptr.name)
        if delta is None:
            return None
        anchor, off = delta
        return slot_name(size, anchor, off + offset)


def slot_name(size: str, anchor: str, offset: int) -> str:
    return f"{size}[{anchor}{offset:+d}]" if offset else f"{size}[{anchor}]"


_SLOT = re.compile(r"^([qdwb])\[(rsp\.0|rbp\.0)([+-]\d+)?\]$")


def _slot_range(name: str) -> tuple[str, int, int] | None:
    m = _SLOT.match(name)
    if not m:
        return None
    off = int(m.group(3) or 0)
    return m.group(2), off, off + SIZE_BITS[m.group(1)] // 8


class _State:
    def __init__(self, versions: dict[str, int], deltas: dict[str, tuple[str, int]]):
        self.versions = versions
        self.deltas = deltas

    def copy(self) -> "_State":
        return _State(dict(self.versions), self.deltas)

    def var(self, base: str) -> Var:
        return Var(base, self.versions.get(base, 0), base_sort(base))


def ssa_transform(fn: Function, cfg: Cfg | None = None) -> SsaFunction:
    """Rename ``fn`` into SSA form, model rsp/rbp-relative stack slots and
    compute per-address path conditions.

    Join points where predecessors disagree on a variable's version receive a
    fresh, unconstrained version; loop headers havoc everything written in the
    loop.
    """
    cfg = cfg or build_cfg(fn.instructions)
    instrs = {i.address: i for i in fn.instructions}
    addrs = [i.address for i in fn.instructions]
    nexts = {a: (addrs[k + 1] if k + 1 < len(addrs) else None) for k, a in enumerate(addrs)}
    lifted = {a: lift_effects(instrs[a], nexts[a]) for a in addrs}

    counters: dict[str, int] = {}
    deltas: dict[str, tuple[str, int]] = {"rsp.0": ("rsp.0", 0), "rbp.0": ("rbp.0", 0)}
    slots: set[str] = set()

    def fresh(base: str) -> int:
        counters[base] = counters.get(base, 0) + 1
        return counters[base]

    g = nx.DiGraph()
    g.add_nodes_from(cfg.blocks)
    g.add_edges_from((e.src, e.dst) for e in cfg.edges)
    rpo = list(reversed(list(nx.dfs_postorder_nodes(g, cfg.entry))))
    rpo += sorted(b for b in cfg.blocks if b not in set(rpo))

    loop_members: dict[int, set[int]] = {}
    for scc in nx.strongly_connected_components(g):
        if len(scc) > 1 or any(g.has_edge(b, b) for b in scc):
            for b in scc:
                loop_members[b] = scc

    def written_bases(blocks: set[int]) -> set[str]:
        out: set[str] = set()
        for b in blocks:
            for a in cfg.blocks[b]:
                for e in lifted[a].effects:
                    if isinstance(e.dest, Var):
                        out.add(e.dest.base)
        return out

    out_state: dict[int, _State] = {}
    pcs: dict[int, Expr] = {}
    ir: dict[int, EquationSet] = {}
    pre: dict[int, dict[str, int]] = {}
    post: dict[int, dict[str, int]] = {}
    assigned: dict[int, frozenset[str]] = {}
    accesses: dict[int, tuple[MemAccess, ...]] = {}
    defs: dict[str, tuple[int, Expr]] = {}
    load_addrs: dict[str, Expr] = {}

    for block in rpo:
        preds = cfg.preds(block)
        done = [e for e in preds if e.src in out_state]
        back = [e for e in preds if e.src not in out_state]
        if block == cfg.entry:
            state = _State({}, deltas)
            for base in sorted(written_bases(loop_members.get(block, set())) | (slots if preds else set())):
                state.versions[base] = fresh(base)
            pc: Expr = TRUE
        elif block in cfg.unreachable or not done:
            state = _State({}, deltas)
            for base in sorted(set(counters) | {r for r in _GPR64} | set(FLAGS) | slots):
                state.versions[base] = fresh(base)
            pc = TRUE
        else:
            state = _merge([out_state[e.src] for e in done], fresh, deltas)
            if back:
                for base in sorted(written_bases(loop_members.get(block, {block})) | slots):
                    state.versions[base] = fresh(base)
                pc = TRUE
            else:
                pc = fold(disj(
                    fold(conj([pcs[e.src], _rename_cond(e.cond, out_state[e.src])]))
                    for e in done
                ))
        pcs[block] = pc

        for a in cfg.blocks[block]:
            ins = instrs[a]
            pre[a] = dict(state.versions)
            eqs, acc = _ssa_step(ins, lifted[a], state, fresh, slots, defs, load_addrs)
            ir[a] = EquationSet(a, tuple(eqs))
            accesses[a] = tuple(acc)
            post[a] = dict(state.versions)
            assigned[a] = frozenset(b for b in post[a] if post[a][b] != pre[a].get(b, 0))
        out_state[block] = state

    path_conditions = {a: pcs[cfg.block_of(a)] for a in addrs}
    return SsaFunction(
        fn.name, fn.instructions, ir, cfg, path_conditions, pre, post, assigned,
        accesses, defs, load_addrs, deltas,
    )


def _merge(states: list[_State], fresh, deltas: dict[str, tuple[str, int]]) -> _State:
    if len(states) == 1:
        return states[0].copy()
    bases = sorted(set().union(*(s.versions for s in states)))
    out = _State({}, deltas)
    for base in bases:
        vs = {s.versions.get(base, 0) for s in states}
        if len(vs) == 1:
            out.versions[base] = vs.pop()
            continue
        v = fresh(base)
        out.versions[base] = v
        if base in ("rsp", "rbp"):
            ds = {deltas.get(f"{base}.{s.versions.get(base, 0)}") for s in states}
            if len(ds) == 1 and None not in ds:
                deltas[f"{base}.{v}"] = ds.pop()  # type: ignore[assignment]
    return out


def _rename_cond(cond: Expr, state: _State) -> Expr:
    def go(e: Expr) -> Expr:
        if isinstance(e, Var):
            return state.var(e.base)
        kids = children(e)
        return rebuild(e, tuple(go(k) for k in kids)) if kids else e

    return go(cond)


def _stack_ptr(addr: Expr) -> tuple[str, int] | None:
    """Match ``rsp``/``rbp`` +/- constant; None when not stack-relative."""
    if isinstance(addr, Var) and addr.base in ("rsp", "rbp"):
        return addr.base, 0
    if isinstance(addr, BinOp) and addr.op in "+-" and isinstance(addr.left, Var):
        if addr.left.base in ("rsp", "rbp"):
            if isinstance(addr.right, Const):
                off = addr.right.value if addr.op == "+" else -addr.right.value
                return addr.left.base, off
            return addr.left.base, None  # type: ignore[return-value]
    if any(isinstance(n, Var) and n.base in ("rsp", "rbp") for n in _iter(addr)):
        return "rsp", None  # type: ignore[return-value]
    return None


def _iter(e: Expr):
    yield e
    for k in children(e):
        yield from _iter(k)


def _ssa_step(ins, lifted: Lifted, state: _State, fresh, slots, defs, load_addrs):
    a = ins.address
    deltas = state.deltas
    n_loads = 0

    def stack_slot(size: str, addr: Expr) -> str | None:
        hit = _stack_ptr(addr)
        if hit is None:
            return None
        reg, off = hit
        if off is None:
            raise StackModelError(a, "stack access with non-constant offset")
        ptr = state.var(reg)
        delta = deltas.get(ptr.name)
        if delta is None:
            raise StackModelError(a, f"stack access through {ptr.name} with unknown frame offset")
        return slot_name(size, delta[0], delta[1] + off)

    def rename(e: Expr) -> Expr:
        nonlocal n_loads
        if isinstance(e, Var):
            if e.base.startswith(("next_", "fn_")):
                return e
            return state.var(e.base)
        if isinstance(e, Load):
            slot = stack_slot(e.size, e.addr)
            if slot is not None:
                return Var(slot, state.versions.get(slot, 0), BV)
            n_loads += 1
            name = f"mem_{a:x}" + (f"_{n_loads}" if n_loads > 1 else "")
            v = Var(name, 1, BV)
            load_addrs[v.name] = fold(rename(e.addr))
            return v
        kids = children(e)
        return rebuild(e, tuple(rename(k) for k in kids)) if kids else e

    acc = []
    for x in lifted.accesses:
        slot = stack_slot(x.size, x.addr)
        acc.append(MemAccess(a, fold(rename(x.addr)), x.size, x.read, x.write, slot is not None))

    planned: list[tuple[str, Expr | None]] = []
    for eff in lifted.effects:
        if isinstance(eff, Havoc):
            planned.append((eff.dest.base, None))
            continue
        rhs = fold(rename(eff.expr))
        if isinstance(eff.dest, Load):
            slot = stack_slot(eff.dest.size, eff.dest.addr)
            if slot is None:
                continue  # non-stack store: memory is not modelled
            planned.append((slot, rhs))
        else:
            planned.append((eff.dest.base, rhs))

    eqs: list[Expr] = []
    for base, rhs in planned:
        if base in ("rsp", "rbp") and rhs is not None:
            delta = _delta_of(rhs, deltas)
        else:
            delta = None
        v = fresh(base)
        state.versions[base] = v
        new = Var(base, v, base_sort(base))
        if base == "rsp" and (rhs is None or delta is None):
            raise StackModelError(a, "rsp adjusted by a non-constant amount")
        if delta is not None:
            deltas[new.name] = delta
        if base.startswith(("q[", "d[", "w[", "b[")):
            slots.add(base)
            _clobber_overlaps(base, slots, state, fresh)
        if rhs is None:
            continue
        eqs.append(Cmp("=", new, rhs))
        defs[new.name] = (a, rhs)
    return eqs, acc


def _delta_of(rhs: Expr, deltas: dict[str, tuple[str, int]]) -> tuple[str, int] | None:
    if isinstance(rhs, Var):
        return deltas.get(rhs.name)
    if isinstance(rhs, BinOp) and rhs.op in "+-" and isinstance(rhs.left, Var) and isinstance(rhs.right, Const):
        d = deltas.get(rhs.left.name)
        if d is None:
            return None
        c = rhs.right.value
        if c >= 1 << 63:
            c -= 1 << 64
        return d[0], d[1] + (c if rhs.op == "+" else -c)
    return None


def _clobber_overlaps(written: str, slots: set[str], state: _State, fresh) -> None:
    w = _slot_range(written)
    for other in sorted(slots):
        if other == written:
            continue
        o = _slot_range(other)
        if w is None or o is None or w[0] != o[0] or (w[1] < o[2] and o[1] < w[2]):
            state.versions[other] = fresh(other)


def path_condition(fn: SsaFunction, addr: int) -> Expr:
    if addr not in fn.path_conditions:
        raise KeyError(f"no instruction at {addr:#x} in {fn.name}")
    return fn.path_conditions[addr]


def dump_ssa(fn: SsaFunction) -> str:
    """Deterministic text rendering of an SSA function."""
    lines = [f"fn {fn.name}"]
    for ins in fn.instructions:
        a = ins.address
        lines.append(f"{a:#x} pc={to_text(fn.path_conditions[a])}")
        for e in fn.ir[a].equations:
            lines.append(f"  {to_text(e)}")
        for x in fn.accesses[a]:
            kind = ("r" if x.read else "") + ("w" if x.write else "")
            lines.append(f"  mem {kind} {x.size} {to_text(x.addr)}{' stack' if x.stack else ''}")
    for e in fn.cfg.edges:
        lines.append(f"edge {e.src:#x}->{e.dst:#x} {to_text(e.cond)}")
    return "\n".join(lines) + "\n"


def load_program(text: str) -> list[SsaFunction]:
    return [ssa_transform(f) for f in parse_program(text)]


def lookup(functions: list[SsaFunction] | Mapping[str, SsaFunction], name: str) -> SsaFunction:
    items = functions.values() if isinstance(functions, Mapping) else functions
    for f in items:
        if f.name == name:
            return f
    raise KeyError(name)
