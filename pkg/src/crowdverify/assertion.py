"""Assertion language: parser, printer and SSA renaming.

One assertion per line::

    0x1000: cf = rax < rsi
    0x6289: FnPtr rax
    0x95e0: q[rsp] = rbp
    0x2000: forall rax. rax = rax

Boolean connectives accept ``&&``/``and``/``∧``, ``||``/``or``/``∨`` and
``not``/``!``/``¬``. ``=`` binds looser than the other comparisons, so
``cf = rax < rsi`` reads as ``cf = (rax < rsi)``. Numbers may carry a
``K``/``M``/``G`` suffix (powers of 1024).
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .asm import FLAGS, LOAD_BUFFER, UNMODELED_FLAGS, SsaFunction, _GPR64
from .expr import (
    BOOL,
    BV,
    FALSE,
    TRUE,
    App,
    BinOp,
    BoolOp,
    Cmp,
    Const,
    Expr,
    Ite,
    Not,
    SortError,
    StackRef,
    Var,
    children,
    rebuild,
    sort_of,
    to_text,
)

MASK64 = (1 << 64) - 1

REGISTER_NAMES = frozenset(_GPR64) | {"rip"}
FLAG_NAMES = frozenset(FLAGS + UNMODELED_FLAGS + (LOAD_BUFFER,))
SYMBOLS = frozenset({"GB", "GT", "GTS", "GTSAddr"})
# name -> allowed argument counts; JTS with one argument is the entry count itself
PREDICATES = {"FnPtr": (1,), "JmpOff": (2,), "JmpTgt": (1,), "JT": (1,), "JTS": (1, 2)}
KEYWORDS = {"not", "and", "or", "true", "false", "ite", "forall", "exists"}


class AssertionSyntaxError(ValueError):
    def __init__(self, line: int, col: int, message: str):
        super().__init__(f"line {line}, col {col}: {message}")
        self.line = line
        self.col = col


class AssertionTypeError(SortError):
    pass


class RenameError(KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


@dataclass(frozen=True)
class Assertion:
    address: int
    body: Expr
    quantifiers: tuple[tuple[str, Var], ...] = ()
    line: int = 0

    @property
    def text(self) -> str:
        return format_assertion(self)


def symbol_var(name: str) -> Var:
    return Var(name, None, BV)


def var_sort(base: str) -> str:
    return BOOL if base in FLAG_NAMES else BV


# -- lexer ------------------------------------------------------------------

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:0x[0-9a-fA-F]+|\d+)[KMG]?(?![\w]))
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*(?:\.\d+)?)
  | (?P<op><s(?![\w])|<=|>=|<<|>>|==|&&|\|\||[-+*&|^<>=()\[\].!,]|[∧∨¬∀∃≤≥×≪≫⊕])
    """,
    re.VERBOSE,
)
_UNICODE = {"∧": "&&", "∨": "||", "¬": "not", "∀": "forall", "∃": "exists", "≤": "<=",
            "≥": ">=", "×": "*", "≪": "<<", "≫": ">>", "⊕": "^", "==": "=", "!": "not",
            "and": "&&", "or": "||"}
_SUFFIX = {"K": 1 << 10, "M": 1 << 20, "G": 1 << 30}


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    col: int


def _lex(text: str, line: int, col0: int) -> list[_Tok]:
    out: list[_Tok] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise AssertionSyntaxError(line, col0 + pos + 1, f"unexpected character {text[pos]!r}")
        kind = m.lastgroup
        tok = m.group()
        if kind != "ws":
            if kind == "op" or (kind == "ident" and tok in ("and", "or")):
                tok = _UNICODE.get(tok, tok)
                kind = "op" if tok not in ("not", "forall", "exists") else "ident"
            out.append(_Tok(kind, tok, col0 + pos + 1))
        pos = m.end()
    out.append(_Tok("eof", "", col0 + len(text) + 1))
    return out


def _num(text: str) -> int:
    mult = 1
    if text[-1] in _SUFFIX:
        mult, text = _SUFFIX[text[-1]], text[:-1]
    return (int(text, 0) * mult) & MASK64


# -- parser -----------------------------------------------------------------

_CMP = {"<", "<=", ">", ">=", "<s"}
_ARITH_LEVELS = [("|",), ("^",), ("&",), ("<<", ">>"), ("+", "-"), ("*",)]


class _Parser:
    def __init__(self, toks: list[_Tok], line: int):
        self.toks = toks
        self.i = 0
        self.line = line
        self.bound: dict[str, Var] = {}

    @property
    def peek(self) -> _Tok:
        return self.toks[self.i]

    def next(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def error(self, msg: str, tok: _Tok | None = None) -> AssertionSyntaxError:
        tok = tok or self.peek
        return AssertionSyntaxError(self.line, tok.col, msg)

    def expect(self, text: str) -> _Tok:
        if self.peek.text != text:
            got = self.peek.text or "end of line"
            raise self.error(f"expected '{text}', got '{got}'")
        return self.next()

    # Boolean levels
    def parse_or(self) -> Expr:
        e = self.parse_and()
        while self.peek.text == "||":
            self.next()
            e = BoolOp("or", e, self.parse_and())
        return e

    def parse_and(self) -> Expr:
        e = self.parse_not()
        while self.peek.text == "&&":
            self.next()
            e = BoolOp("and", e, self.parse_not())
        return e

    def parse_not(self) -> Expr:
        if self.peek.text == "not":
            self.next()
            return Not(self.parse_not())
        return self.parse_eq()

    def parse_eq(self) -> Expr:
        left = self.parse_cmp()
        if self.peek.text == "=":
            self.next()
            return Cmp("=", left, self.parse_eq())
        return left

    def parse_cmp(self) -> Expr:
        left = self.parse_arith(0)
        if self.peek.text in _CMP:
            op = self.next().text
            left = Cmp(op, left, self.parse_arith(0))
            if self.peek.text in _CMP:
                raise self.error("chained comparison needs parentheses")
        return left

    def parse_arith(self, level: int) -> Expr:
        if level == len(_ARITH_LEVELS):
            return self.parse_unary()
        e = self.parse_arith(level + 1)
        while self.peek.text in _ARITH_LEVELS[level]:
            op = self.next().text
            e = BinOp(op, e, self.parse_arith(level + 1))
        return e

    def parse_unary(self) -> Expr:
        if self.peek.text == "-":
            self.next()
            arg = self.parse_unary()
            if isinstance(arg, Const):
                return Const(-arg.value & MASK64)
            return BinOp("-", Const(0), arg)
        return self.parse_primary()

    def starts_atom(self) -> bool:
        t = self.peek
        if t.kind == "num" or t.text == "(":
            return True
        return t.kind == "ident" and t.text not in KEYWORDS and t.text not in PREDICATES

    def parse_primary(self) -> Expr:
        t = self.peek
        if t.text == "(":
            self.next()
            e = self.parse_or()
            self.expect(")")
            return e
        if t.kind == "num":
            self.next()
            return Const(_num(t.text))
        if t.kind != "ident":
            raise self.error(f"unexpected '{t.text or 'end of line'}'")
        self.next()
        name = t.text
        if name == "true":
            return TRUE
        if name == "false":
            return FALSE
        if name == "not":
            return Not(self.parse_primary())
        if name == "ite":
            c = self.parse_primary()
            a = self.parse_primary()
            b = self.parse_primary()
            return Ite(c, a, b)
        if name in PREDICATES:
            args = []
            while len(args) < max(PREDICATES[name]) and self.starts_atom():
                args.append(self.parse_unary())
            if len(args) not in PREDICATES[name]:
                raise AssertionTypeError(
                    f"line {self.line}: {name} takes {PREDICATES[name]} argument(s), got {len(args)}"
                )
            sort = BV if name == "JTS" and len(args) == 1 else BOOL
            return App(name, tuple(args), sort)
        if name in ("q", "d", "w", "b") and self.peek.text == "[":
            return self.parse_stack(name)
        if name in ("forall", "exists"):
            raise self.error("quantifiers must prefix the whole assertion", t)
        return self.identifier(name, t)

    def parse_stack(self, size: str) -> Expr:
        self.expect("[")
        reg_tok = self.next()
        base, _, ver = reg_tok.text.partition(".")
        if reg_tok.kind != "ident" or base not in ("rsp", "rbp"):
            raise self.error("stack slots are rsp/rbp relative", reg_tok)
        reg = Var(base, int(ver) if ver else None, BV)
        offset = 0
        if self.peek.text in ("+", "-"):
            sign = -1 if self.next().text == "-" else 1
            n = self.next()
            if n.kind != "num":
                raise self.error("stack offset must be a number", n)
            offset = sign * _num(n.text)
        self.expect("]")
        version = None
        if self.peek.text == "." and self.toks[self.i + 1].kind == "num":
            self.next()
            version = int(self.next().text)
        if reg.version == 0 and version is not None:
            # canonical slot name as produced by renaming
            return Var(_slot(size, f"{base}.0", offset), version, BV)
        return StackRef(size, reg, offset, version)

    def identifier(self, name: str, tok: _Tok) -> Expr:
        if name in self.bound:
            return self.bound[name]
        base, dot, ver = name.partition(".")
        if base in SYMBOLS:
            if dot:
                raise self.error(f"symbol {base} cannot carry a version", tok)
            return symbol_var(base)
        if dot:
            return Var(base, int(ver), var_sort(base))
        if base in REGISTER_NAMES or base in FLAG_NAMES:
            return Var(base, None, var_sort(base))
        raise self.error(f"unknown identifier '{name}'", tok)


def _slot(size: str, anchor: str, offset: int) -> str:
    return f"{size}[{anchor}{offset:+d}]" if offset else f"{size}[{anchor}]"


_HEAD = re.compile(r"^\s*(0x[0-9a-fA-F]+)\s*:")


def parse_assertion(line_text: str, line: int = 1) -> Assertion:
    m = _HEAD.match(line_text)
    if not m:
        raise AssertionSyntaxError(line, 1, "expected '0xADDR: expression'")
    address = int(m.group(1), 16)
    toks = _lex(line_text[m.end():], line, m.end())
    p = _Parser(toks, line)
    quants: list[tuple[str, Var]] = []
    while p.peek.text in ("forall", "exists"):
        q = p.next().text
        v = p.next()
        if v.kind != "ident" or "." in v.text or v.text in KEYWORDS:
            raise p.error("expected a variable after quantifier", v)
        var = Var(v.text, None, var_sort(v.text))
        p.bound[v.text] = var
        quants.append((q, var))
        p.expect(".")
    body = p.parse_or()
    if p.peek.kind != "eof":
        raise p.error(f"unexpected '{p.peek.text}'")
    try:
        s = sort_of(body)
    except AssertionTypeError:
        raise
    except SortError as exc:
        raise AssertionTypeError(f"line {line}: {exc}") from None
    if s != BOOL:
        raise AssertionTypeError(f"line {line}: assertion body must be Boolean: {to_text(body)}")
    return Assertion(address, body, tuple(quants), line)


def parse_assertions(text: str) -> list[Assertion]:
    out = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("//", 1)[0]
        if line.strip():
            out.append(parse_assertion(line, lineno))
    return out


def format_assertion(a: Assertion) -> str:
    prefix = "".join(f"{q} {v.name}. " for q, v in a.quantifiers)
    return f"{a.address:#x}: {prefix}{to_text(a.body)}"


# -- renaming ---------------------------------------------------------------

def _is_assigned(e: Expr, fn: SsaFunction, addr: int) -> bool:
    if isinstance(e, Var) and e.version is None:
        return e.base in fn.assigned[addr]
    if isinstance(e, StackRef) and e.version is None and e.reg.version is None:
        ptr = fn.var(e.reg.base, addr, post=True)
        slot = fn.slot_base(e.size, ptr, e.offset)
        return slot is not None and slot in fn.assigned[addr]
    return False


def known_vars(fn: SsaFunction) -> set[str]:
    names = set()
    for table in (fn.pre, fn.post):
        for versions in table.values():
            names.update(f"{b}.{v}" for b, v in versions.items())
    for a in fn.ir:
        for eq in fn.ir[a].equations:
            for n in _walk(eq):
                if isinstance(n, Var) and n.version is not None:
                    names.add(n.name)
    return names


def _walk(e: Expr):
    yield e
    for k in children(e):
        yield from _walk(k)


def rename_assertion(a: Assertion, fn: SsaFunction) -> Assertion:
    """Assign SSA versions to the unversioned names of ``a``.

    For ``x = e`` where the instruction assigns ``x``, ``x`` takes its
    post-instruction version and ``e`` the versions reaching the instruction.
    In every other assertion names take the post-instruction version, which
    equals the reaching version for anything the instruction leaves alone.
    """
    addr = a.address
    if addr not in fn.pre:
        raise RenameError(f"{a.address:#x}: no instruction at this address in {fn.name}")
    bound = {v for _, v in a.quantifiers}
    known = known_vars(fn)

    def go(e: Expr, post: bool) -> Expr:
        if isinstance(e, Var):
            if e in bound or e.base in SYMBOLS:
                return e
            if e.version is not None:
                if e.version != 0 and e.name not in known:
                    raise RenameError(f"{addr:#x}: {e.name} is not defined in {fn.name}")
                return e
            return fn.var(e.base, addr, post)
        if isinstance(e, StackRef):
            ptr = e.reg if e.reg.version is not None else fn.var(e.reg.base, addr, post)
            slot = fn.slot_base(e.size, ptr, e.offset)
            if slot is None:
                raise RenameError(f"{addr:#x}: {to_text(e)} has no known frame offset")
            if e.version is not None:
                return Var(slot, e.version, BV)
            table = fn.post if post else fn.pre
            return Var(slot, table[addr].get(slot, 0), BV)
        kids = children(e)
        return rebuild(e, tuple(go(k, post) for k in kids)) if kids else e

    body = a.body
    if isinstance(body, Cmp) and body.op == "=":
        if _is_assigned(body.left, fn, addr):
            body = Cmp("=", go(body.left, True), go(body.right, False))
        elif _is_assigned(body.right, fn, addr):
            body = Cmp("=", go(body.left, False), go(body.right, True))
        else:
            body = go(body, True)
    else:
        body = go(body, True)
    return Assertion(a.address, body, a.quantifiers, a.line)


def rename_all(asserts: list[Assertion], fn: SsaFunction) -> list[Assertion]:
    return [rename_assertion(a, fn) for a in asserts]
