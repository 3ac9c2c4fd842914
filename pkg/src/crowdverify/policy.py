"""SFI and LVI policies: axioms, proof obligations, derivation checks for the
policy symbols and predicates, and predicate expansion to plain formulas."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

from .asm import LOAD_BUFFER, Mem, Reg, SsaFunction, Target
from .assertion import Assertion, _num, symbol_var
from .expr import (
    BV,
    FALSE,
    App,
    BinOp,
    Cmp,
    Const,
    Expr,
    Ite,
    Not,
    Var,
    conj,
    disj,
    eq,
    to_text,
    transform,
    walk,
)

GB, GT, GTS, GTS_ADDR = (symbol_var(n) for n in ("GB", "GT", "GTS", "GTSAddr"))
RDI0 = Var("rdi", 0, BV)
RBP0 = Var("rbp", 0, BV)
RSP0 = Var("rsp", 0, BV)

HEAP, STACKR, STACKW, GLOBAL, META = "HEAP", "STACKR", "STACKW", "GLOBAL", "META"
MEM_DISJ, IND_CALL, IND_JUMP, RETURN = "MEM-DISJ", "IND_CALL", "IND_JUMP", "RETURN"
HEAPBASE_INV, LVI = "HEAPBASE-INV", "LVI"
HINT_KINDS = ("heap", "stackR", "stackW", "global", "meta")


class PolicyError(ValueError):
    pass


class HintError(PolicyError):
    pass


class DerivationError(PolicyError):
    pass


@dataclass(frozen=True)
class BinaryMeta:
    gt: int = 0x4000
    gts_addr: int = 0x3008
    jump_tables: tuple[tuple[int, int], ...] = ()
    heap_size: int = 8 << 30
    stack_ro: int = 8 << 10
    stack_rw: int = 4 << 10
    global_size: int = 4 << 10
    gts_max: int | None = None
    # "rbp": stack windows and RETURN are relative to rbp.0 as written in the
    # rules; "rsp": relative to rsp.0, the stack pointer at entry.
    stack_anchor: str = "rbp"

    def __post_init__(self) -> None:
        if self.gt <= 0 or self.gts_addr <= 0:
            raise PolicyError("GT and GTSAddr must be nonzero addresses")
        for name in ("heap_size", "stack_ro", "stack_rw", "global_size"):
            if getattr(self, name) <= 0:
                raise PolicyError(f"{name} must be positive")
        for addr, n in self.jump_tables:
            if addr <= 0 or n <= 0:
                raise PolicyError(f"bad jump table {addr:#x}:{n}")
        if self.gts_max is not None and self.gts_max <= 0:
            raise PolicyError("gtsMax must be positive")
        if self.stack_anchor not in ("rbp", "rsp"):
            raise PolicyError("stackAnchor must be rbp or rsp")

    @property
    def anchor(self) -> Var:
        return RBP0 if self.stack_anchor == "rbp" else RSP0

    def check_width(self, width: int) -> None:
        """Reject metadata whose regions do not fit in ``width`` bits."""
        limit = 1 << width
        worst = [self.gt, self.gts_addr, self.heap_size, self.stack_ro, self.stack_rw, self.global_size]
        worst += [t + 4 * n for t, n in self.jump_tables]
        if self.gts_max is not None:
            worst.append(self.gt + 16 * self.gts_max)
        bad = [hex(v) for v in worst if v >= limit]
        if bad:
            raise PolicyError(f"metadata values {', '.join(bad)} do not fit in {width} bits")


META_KEYS = {
    "gt": "gt", "gtsAddr": "gts_addr", "heapSize": "heap_size", "stackRO": "stack_ro",
    "stackRW": "stack_rw", "globalSize": "global_size", "gtsMax": "gts_max",
}


def parse_meta(text: str) -> BinaryMeta:
    """``key=value`` lines; ``jt=ADDR:COUNT`` may repeat."""
    kw: dict[str, object] = {}
    tables: list[tuple[int, int]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("//", 1)[0].split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (s.strip() for s in line.partition("="))
        if not sep:
            raise PolicyError(f"meta line {lineno}: expected key=value")
        try:
            if key == "jt":
                addr, _, n = value.partition(":")
                tables.append((_num(addr), _num(n)))
            elif key == "stackAnchor":
                kw["stack_anchor"] = value
            elif key in META_KEYS:
                kw[META_KEYS[key]] = _num(value)
            else:
                raise PolicyError(f"meta line {lineno}: unknown key '{key}'")
        except ValueError as exc:
            if isinstance(exc, PolicyError):
                raise
            raise PolicyError(f"meta line {lineno}: bad value '{value}'") from None
    return BinaryMeta(jump_tables=tuple(tables), **kw)  # type: ignore[arg-type]


def format_meta(meta: BinaryMeta) -> str:
    lines = [f"gt={meta.gt:#x}", f"gtsAddr={meta.gts_addr:#x}"]
    lines += [f"jt={a:#x}:{n}" for a, n in meta.jump_tables]
    lines += [f"heapSize={meta.heap_size:#x}", f"stackRO={meta.stack_ro:#x}",
              f"stackRW={meta.stack_rw:#x}", f"globalSize={meta.global_size:#x}"]
    if meta.gts_max is not None:
        lines.append(f"gtsMax={meta.gts_max:#x}")
    lines.append(f"stackAnchor={meta.stack_anchor}")
    return "\n".join(lines) + "\n"


def parse_hints(text: str) -> dict[int, str]:
    hints: dict[int, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("//", 1)[0].strip()
        if not line:
            continue
        addr, sep, kind = (s.strip() for s in line.partition("="))
        if not sep or kind not in HINT_KINDS:
            raise HintError(f"hints line {lineno}: expected 0xADDR=heap|stackR|stackW|global|meta")
        hints[int(addr, 16)] = kind
    return hints


@dataclass(frozen=True)
class Obligation:
    address: int
    rule: str
    formula: Expr
    detail: str = ""


# -- axioms -----------------------------------------------------------------

def sfi_axioms(meta: BinaryMeta) -> list[Expr]:
    facts: list[Expr] = [eq(GT, Const(meta.gt)), eq(GTS_ADDR, Const(meta.gts_addr))]
    for addr, n in meta.jump_tables:
        facts.append(App("JT", (Const(addr),)))
        facts.append(App("JTS", (Const(addr), Const(n))))
    return facts


def range_axioms(meta: BinaryMeta) -> list[Expr]:
    """Regions do not wrap around the address space; GTS is bounded when a
    bound is configured."""
    a = meta.anchor
    facts: list[Expr] = [
        Cmp("<", RDI0, BinOp("+", RDI0, Const(meta.heap_size))),
        Cmp("<", GB, BinOp("+", GB, Const(meta.global_size))),
        Cmp("<", BinOp("-", a, Const(meta.stack_rw)), a),
        Cmp("<", a, BinOp("+", a, Const(meta.stack_ro))),
    ]
    if meta.gts_max is not None:
        facts.append(Cmp("<=", GTS, Const(meta.gts_max)))
    return facts


# -- region rules -----------------------------------------------------------

def heap_rule(addr: Expr, meta: BinaryMeta) -> Expr:
    return conj([Cmp("<", RDI0, addr), Cmp("<", addr, BinOp("+", RDI0, Const(meta.heap_size)))])


def stack_read_rule(addr: Expr, meta: BinaryMeta) -> Expr:
    a = meta.anchor
    return conj([
        Cmp("<", BinOp("-", a, Const(meta.stack_rw)), addr),
        Cmp("<", addr, BinOp("+", a, Const(meta.stack_ro))),
    ])


def stack_write_rule(addr: Expr, meta: BinaryMeta) -> Expr:
    a = meta.anchor
    return conj([Cmp("<", BinOp("-", a, Const(meta.stack_rw)), addr), Cmp("<", addr, a)])


def global_rule(addr: Expr, meta: BinaryMeta) -> Expr:
    return conj([Cmp("<", GB, addr), Cmp("<", addr, BinOp("+", GB, Const(meta.global_size)))])


def meta_rule(addr: Expr, meta: BinaryMeta) -> Expr:
    """Reads of the policy's own read-only data: the GTS cell, the function
    table, the global-base cell below the heap, and jump tables."""
    parts = [
        eq(addr, Const(meta.gts_addr)),
        conj([Cmp("<=", GT, addr), Cmp("<", addr, BinOp("+", GT, BinOp("*", GTS, Const(16))))]),
        eq(addr, BinOp("-", RDI0, Const(32))),
    ]
    for t, n in meta.jump_tables:
        parts.append(conj([Cmp("<=", Const(t), addr), Cmp("<", addr, Const(t + 4 * n))]))
    return disj(parts)


# -- predicate expansion ----------------------------------------------------

def load_address(fn: SsaFunction, v: Expr) -> Expr | None:
    """Address of the memory load that produced ``v``, following copies and
    zero-extension masks."""
    seen = set()
    while isinstance(v, Var) and v.name not in seen:
        seen.add(v.name)
        if v.name in fn.load_addrs:
            return fn.load_addrs[v.name]
        if v.name not in fn.defs:
            return None
        _, rhs = fn.defs[v.name]
        if isinstance(rhs, BinOp) and rhs.op == "&" and isinstance(rhs.right, Const):
            rhs = rhs.left
        v = rhs
    return None


def fnptr_rule(mem_addr: Expr) -> Expr:
    return conj([
        Cmp("<", GT, mem_addr),
        Cmp("<", mem_addr, BinOp("+", GT, BinOp("*", GTS, Const(16)))),
        eq(BinOp("&", mem_addr, Const(7)), Const(0)),
        eq(BinOp("&", BinOp("^", mem_addr, GT), Const(8)), Const(8)),
    ])


def _jt(a: Expr, meta: BinaryMeta) -> Expr:
    return disj(eq(a, Const(t)) for t, _ in meta.jump_tables)


def _jts_value(a: Expr, meta: BinaryMeta) -> Expr:
    out: Expr = Const(0)
    for t, n in reversed(meta.jump_tables):
        out = Ite(eq(a, Const(t)), Const(n), out)
    return out


def jmpoff_rule(table: Expr, mem_addr: Expr, meta: BinaryMeta) -> Expr:
    return conj([
        _jt(table, meta),
        Cmp("<=", table, mem_addr),
        Cmp("<", mem_addr, BinOp("+", table, BinOp("*", _jts_value(table, meta), Const(4)))),
        eq(BinOp("&", BinOp("-", mem_addr, table), Const(3)), Const(0)),
    ])


def _add_operands(fn: SsaFunction, v: Expr) -> tuple[Expr, Expr] | None:
    if not isinstance(v, Var) or v.name not in fn.defs:
        return None
    addr, rhs = fn.defs[v.name]
    if fn.instruction(addr).mnemonic != "add" or not isinstance(rhs, BinOp) or rhs.op != "+":
        return None
    return rhs.left, rhs.right  # (Dst before the add, Src)


def jmptgt_rule(fn: SsaFunction, v: Expr, meta: BinaryMeta) -> Expr:
    ops = _add_operands(fn, v)
    if ops is None:
        return FALSE
    dst, src = ops
    options = []
    for table, off in ((src, dst), (dst, src)):
        m = load_address(fn, off)
        if m is not None:
            options.append(conj([_jt(table, meta), jmpoff_rule(table, m, meta)]))
    return disj(options)


def expand(e: Expr, fn: SsaFunction | None, meta: BinaryMeta) -> Expr:
    """Replace every predicate application by its defining formula."""

    def step(n: Expr) -> Expr | None:
        if not isinstance(n, App):
            return None
        args = n.args
        if n.name == "JT":
            return _jt(args[0], meta)
        if n.name == "JTS":
            if len(args) == 1:
                return _jts_value(args[0], meta)
            return disj(conj([eq(args[0], Const(t)), eq(args[1], Const(k))]) for t, k in meta.jump_tables)
        if fn is None:
            raise PolicyError(f"{n.name} needs the function context to expand")
        if n.name == "FnPtr":
            m = load_address(fn, args[0])
            return FALSE if m is None else fnptr_rule(m)
        if n.name == "JmpOff":
            m = load_address(fn, args[1])
            return FALSE if m is None else jmpoff_rule(args[0], m, meta)
        if n.name == "JmpTgt":
            return jmptgt_rule(fn, args[0], meta)
        raise PolicyError(f"unknown predicate {n.name}")

    return transform(e, step)


# -- special assertions -----------------------------------------------------

def is_special(a: Assertion) -> bool:
    body = a.body
    if isinstance(body, App) and body.name in ("FnPtr", "JmpOff", "JmpTgt"):
        return True
    if isinstance(body, Cmp) and body.op == "=":
        return any(s in (GTS, GB) for s in (body.left, body.right))
    return False


def special_assertion_check(a: Assertion, fn: SsaFunction, meta: BinaryMeta) -> Expr:
    """Goal whose validity justifies the symbol/predicate assertion ``a``.

    ``Reg = GTS`` and ``Reg = GB`` need ``Reg`` loaded from the GTS cell or
    from 32 bytes below the heap base; ``FnPtr Reg`` and ``JmpOff T Reg``
    constrain the address ``Reg`` was loaded from; ``JmpTgt Reg`` needs an
    ``add`` combining a jump-table base with an offset loaded from it.
    """
    body = a.body
    ins = fn.instruction(a.address)

    def loaded(reg: Expr) -> Expr:
        if not isinstance(reg, Var) or reg.version is None:
            raise DerivationError(f"{a.address:#x}: expected an SSA register, got {reg}")
        defined = fn.defs.get(reg.name)
        m = load_address(fn, reg)
        if ins.mnemonic != "mov" or defined is None or defined[0] != a.address or m is None:
            raise DerivationError(
                f"{a.address:#x}: {to_text(a.body)} needs 'mov [MemAddr],Reg' defining {reg.name} here"
            )
        return m

    if isinstance(body, Cmp):
        sym, reg = (body.left, body.right) if body.left in (GTS, GB) else (body.right, body.left)
        m = loaded(reg)
        if sym == GTS:
            return eq(Const(meta.gts_addr), m)
        return eq(BinOp("-", RDI0, Const(32)), m)
    assert isinstance(body, App)
    if body.name == "FnPtr":
        return fnptr_rule(loaded(body.args[0]))
    if body.name == "JmpOff":
        return jmpoff_rule(body.args[0], loaded(body.args[1]), meta)
    reg = body.args[0]
    defined = fn.defs.get(reg.name) if isinstance(reg, Var) else None
    if ins.mnemonic != "add" or defined is None or defined[0] != a.address:
        raise DerivationError(f"{a.address:#x}: JmpTgt needs 'add Src,Dst' defining its operand here")
    goal = jmptgt_rule(fn, reg, meta)
    if goal == FALSE:
        raise DerivationError(f"{a.address:#x}: JmpTgt operand is not table base plus loaded offset")
    return goal


# -- obligations ------------------------------------------------------------

def _region(kind: str, addr: Expr, write: bool, meta: BinaryMeta) -> tuple[str, Expr]:
    if kind == "heap":
        return HEAP, heap_rule(addr, meta)
    if kind in ("stackR", "stackW"):
        return (STACKW, stack_write_rule(addr, meta)) if write else (STACKR, stack_read_rule(addr, meta))
    if kind == "global":
        return GLOBAL, global_rule(addr, meta)
    return META, FALSE if write else meta_rule(addr, meta)


def sfi_obligations(fn: SsaFunction, hints: Mapping[int, str], meta: BinaryMeta) -> list[Obligation]:
    for h in hints:
        if h in fn.pre and not fn.accesses[h]:
            raise HintError(f"{h:#x}: hint on an instruction without a memory access")
    out: list[Obligation] = []
    for ins in fn.instructions:
        a = ins.address
        for acc in fn.accesses[a]:
            if a in hints:
                rule, f = _region(hints[a], acc.addr, acc.write, meta)
            elif acc.write:
                rule = MEM_DISJ
                f = disj([heap_rule(acc.addr, meta), stack_write_rule(acc.addr, meta), global_rule(acc.addr, meta)])
            else:
                rule = MEM_DISJ
                f = disj([heap_rule(acc.addr, meta), stack_read_rule(acc.addr, meta),
                          global_rule(acc.addr, meta), meta_rule(acc.addr, meta)])
            out.append(Obligation(a, rule, f, "write" if acc.write else "read"))
        if ins.mnemonic == "call":
            out.append(Obligation(a, HEAPBASE_INV, eq(RDI0, fn.var("rdi", a))))
            tgt = ins.operands[0]
            if isinstance(tgt, Reg):
                out.append(Obligation(a, IND_CALL, App("FnPtr", (fn.var(tgt.base, a),))))
            elif isinstance(tgt, Mem):
                out.append(Obligation(a, IND_CALL, FALSE, "call through memory"))
        elif ins.mnemonic == "jmp" and not isinstance(ins.operands[0], Target):
            tgt = ins.operands[0]
            if isinstance(tgt, Reg):
                out.append(Obligation(a, IND_JUMP, App("JmpTgt", (fn.var(tgt.base, a),))))
            else:
                out.append(Obligation(a, IND_JUMP, FALSE, "jump through memory"))
        elif ins.mnemonic == "ret":
            out.append(Obligation(a, RETURN, eq(meta.anchor, fn.var("rsp", a))))
    return out


def lvi_obligations(fn: SsaFunction) -> list[Obligation]:
    """Every instruction that reads memory must be followed by a fence: the
    LoadBuffer flag after the next instruction is clear."""
    out = []
    for ins in fn.instructions:
        a = ins.address
        if not any(acc.read for acc in fn.accesses[a]):
            continue
        nxt = fn.successor(a)
        if nxt is None:
            out.append(Obligation(a, LVI, FALSE, "load at end of function"))
            continue
        out.append(Obligation(a, LVI, Not(fn.var(LOAD_BUFFER, nxt, post=True)), f"after {nxt:#x}"))
    return out


def uses_apps(e: Expr) -> bool:
    return any(isinstance(n, App) for n in walk(e))


__all__ = [
    "BinaryMeta", "Obligation", "PolicyError", "HintError", "DerivationError",
    "parse_meta", "format_meta", "parse_hints", "sfi_axioms", "range_axioms",
    "sfi_obligations", "lvi_obligations", "special_assertion_check", "is_special", "expand",
    "load_address", "fnptr_rule", "jmpoff_rule", "heap_rule", "global_rule",
    "stack_read_rule", "stack_write_rule", "meta_rule",
]
