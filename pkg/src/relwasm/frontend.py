"""Text-format frontend for the supported WebAssembly subset.

Parses standard WAT syntax (folded and flat instruction styles) extended
with three module-level annotation forms:

    (public (i32.const START) (i32.const END))
    (secret (i32.const START) (i32.const END))
    (symb_exec "func" (i32.sconst 2000) (i32.sconst l1) ...)

`i32.sconst` with an integer literal is a concrete entry argument; with an
identifier it is symbolic, classified public/secret by the first letter
(l/h). Annotation forms may also appear bare at the top level of a sidecar
file next to the module they describe.
"""

from __future__ import annotations

from dataclasses import dataclass

from relwasm.wast import (
    Block, Br, BrIf, BrTable, Call, CallIndirect, ConcreteArg, ConstInstr,
    Drop, EntrySpec, EqzInstr, ExtendInstr, FuncDef, GlobalDef, GlobalGet,
    GlobalSet, If, Instr, LoadInstr, LocalGet, LocalSet, LocalTee, Loop,
    ModuleAst, Nop, NumInstr, PolicyRange, Return, Select, SrcLoc,
    StoreInstr, SymbolicArg, Unreachable,
)


class WatSyntaxError(Exception):
    def __init__(self, msg: str, loc: SrcLoc | None = None):
        super().__init__(f"{loc}: {msg}" if loc else msg)
        self.loc = loc


class ValidationError(Exception):
    def __init__(self, msg: str, loc: SrcLoc | None = None):
        super().__init__(f"{loc}: {msg}" if loc else msg)
        self.loc = loc


class PolicyError(Exception):
    pass


class MissingEntry(Exception):
    pass


class UnknownFunction(Exception):
    pass


class ArityMismatch(Exception):
    pass


# ---- lexer -------------------------------------------------------------


@dataclass(frozen=True)
class Token:
    kind: str  # "(" | ")" | "atom" | "string"
    text: str
    loc: SrcLoc


_DELIMS = set('()";')


def lex(src: str) -> list[Token]:
    toks: list[Token] = []
    i, line, col = 0, 1, 1
    n = len(src)

    def advance(k: int = 1):
        nonlocal i, line, col
        for _ in range(k):
            if i < n and src[i] == "\n":
                line += 1
                col = 1
            else:
                col += 1
            i += 1

    while i < n:
        c = src[i]
        if c in " \t\r\n":
            advance()
            continue
        if src.startswith(";;", i):
            while i < n and src[i] != "\n":
                advance()
            continue
        if src.startswith("(;", i):
            loc = SrcLoc(line, col)
            depth = 0
            while i < n:
                if src.startswith("(;", i):
                    depth += 1
                    advance(2)
                elif src.startswith(";)", i):
                    depth -= 1
                    advance(2)
                    if depth == 0:
                        break
                else:
                    advance()
            else:
                raise WatSyntaxError("unterminated block comment", loc)
            continue
        loc = SrcLoc(line, col)
        if c == "(":
            toks.append(Token("(", "(", loc))
            advance()
            continue
        if c == ")":
            toks.append(Token(")", ")", loc))
            advance()
            continue
        if c == '"':
            advance()
            out = []
            while i < n and src[i] != '"':
                if src[i] == "\\" and i + 1 < n:
                    out.append(src[i + 1])
                    advance(2)
                else:
                    out.append(src[i])
                    advance()
            if i >= n:
                raise WatSyntaxError("unterminated string", loc)
            advance()
            toks.append(Token("string", "".join(out), loc))
            continue
        start = i
        while i < n and src[i] not in " \t\r\n" and src[i] not in _DELIMS:
            advance()
        toks.append(Token("atom", src[start:i], loc))
    return toks


# ---- s-expression reader -------------------------------------------------


@dataclass(frozen=True)
class Atom:
    text: str
    loc: SrcLoc
    is_string: bool = False


@dataclass(frozen=True)
class ListExp:
    items: tuple
    loc: SrcLoc

    @property
    def head(self) -> str | None:
        if self.items and isinstance(self.items[0], Atom):
            return self.items[0].text
        return None


SExp = Atom | ListExp


def read_sexps(toks: list[Token]) -> list[SExp]:
    pos = 0

    def read_one() -> SExp:
        nonlocal pos
        t = toks[pos]
        if t.kind == "(":
            loc = t.loc
            pos += 1
            items = []
            while pos < len(toks) and toks[pos].kind != ")":
                items.append(read_one())
            if pos >= len(toks):
                raise WatSyntaxError("unclosed parenthesis", loc)
            pos += 1
            return ListExp(tuple(items), loc)
        if t.kind == ")":
            raise WatSyntaxError("unmatched ')'", t.loc)
        pos += 1
        return Atom(t.text, t.loc, t.kind == "string")

    out = []
    while pos < len(toks):
        out.append(read_one())
    return out


def _parse_int(text: str, loc: SrcLoc) -> int:
    t = text.replace("_", "")
    try:
        if t.lower().startswith("0x") or t.lower().startswith("-0x"):
            return int(t, 16)
        return int(t, 10)
    except ValueError:
        raise WatSyntaxError(f"expected integer, got {text!r}", loc) from None


def _is_int(text: str) -> bool:
    t = text.replace("_", "")
    try:
        int(t, 16) if t.lower().lstrip("-").startswith("0x") else int(t, 10)
        return True
    except ValueError:
        return False


# ---- instruction parsing ---------------------------------------------------

_BIN = {"add", "sub", "mul", "div_u", "div_s", "rem_u", "rem_s",
        "and", "or", "xor", "shl", "shr_u", "shr_s", "rotl", "rotr"}
_CMP = {"eq", "ne", "lt_u", "lt_s", "gt_u", "gt_s",
        "le_u", "le_s", "ge_u", "ge_s"}
_UN = {"clz", "ctz", "popcnt"}

_LOADS = {
    "load": (4, False), "load8_u": (1, False), "load8_s": (1, True),
    "load16_u": (2, False), "load16_s": (2, True),
    "load32_u": (4, False), "load32_s": (4, True),
}
_STORES = {"store": 4, "store8": 1, "store16": 2, "store32": 4}


class _FuncEnv:
    """Name-resolution scope while parsing one function body."""

    def __init__(self, local_names: dict[str, int], module: "_ModuleBuilder"):
        self.local_names = local_names
        self.module = module

    def local_index(self, tok: Atom, count: int) -> int:
        if tok.text.startswith("$"):
            idx = self.local_names.get(tok.text)
            if idx is None:
                raise WatSyntaxError(f"unknown local {tok.text}", tok.loc)
            return idx
        idx = _parse_int(tok.text, tok.loc)
        if idx >= count:
            raise WatSyntaxError(f"local index {idx} out of range", tok.loc)
        return idx


class _LabelStack:
    def __init__(self):
        self.labels: list[str | None] = []

    def push(self, name: str | None):
        self.labels.append(name)

    def pop(self):
        self.labels.pop()

    def depth_of(self, tok: Atom) -> int:
        if tok.text.startswith("$"):
            for d, name in enumerate(reversed(self.labels)):
                if name == tok.text:
                    return d
            raise WatSyntaxError(f"unknown label {tok.text}", tok.loc)
        d = _parse_int(tok.text, tok.loc)
        if d >= len(self.labels):
            raise WatSyntaxError(f"branch depth {d} out of range", tok.loc)
        return d


def _result_types(form_items: list, i: int) -> tuple[tuple[str, ...], int]:
    """Consume optional (result ...) clauses; returns (types, new index)."""
    types: list[str] = []
    while i < len(form_items):
        it = form_items[i]
        if isinstance(it, ListExp) and it.head == "result":
            for r in it.items[1:]:
                if not (isinstance(r, Atom) and r.text in ("i32", "i64")):
                    raise WatSyntaxError("unsupported result type", it.loc)
                types.append(r.text)
            i += 1
        elif isinstance(it, ListExp) and it.head == "param":
            raise WatSyntaxError("block parameters are not supported", it.loc)
        else:
            break
    return tuple(types), i


class _InstrParser:
    def __init__(self, fenv: _FuncEnv, local_count: int):
        self.fenv = fenv
        self.local_count = local_count
        self.labels = _LabelStack()

    # -- entry: a list of body forms (mixed atoms and folded lists)
    def parse_seq(self, items: list[SExp]) -> tuple[Instr, ...]:
        out: list[Instr] = []
        pos = 0
        while pos < len(items):
            pos = self._parse_one(items, pos, out)
        return tuple(out)

    def _parse_one(self, items: list[SExp], pos: int, out: list[Instr]) -> int:
        it = items[pos]
        if isinstance(it, ListExp):
            out.extend(self._parse_folded(it))
            return pos + 1
        return self._parse_flat(items, pos, out)

    # -- folded form: (op operand-forms... ) with operands evaluated first
    def _parse_folded(self, form: ListExp) -> list[Instr]:
        if not form.items or not isinstance(form.items[0], Atom):
            raise WatSyntaxError("expected instruction", form.loc)
        op = form.items[0].text
        loc = form.items[0].loc
        if op == "call_indirect":
            return self.parse_call_indirect(form)
        rest = list(form.items[1:])
        if op in ("block", "loop"):
            i = 0
            label = None
            if rest and isinstance(rest[0], Atom) and rest[0].text.startswith("$"):
                label = rest[0].text
                i = 1
            results, i = _result_types(rest, i)
            self.labels.push(label)
            body = self.parse_seq(rest[i:])
            self.labels.pop()
            cls = Block if op == "block" else Loop
            return [cls(loc, results, body)]
        if op == "if":
            i = 0
            label = None
            if rest and isinstance(rest[0], Atom) and rest[0].text.startswith("$"):
                label = rest[0].text
                i = 1
            results, i = _result_types(rest, i)
            cond_instrs: list[Instr] = []
            then_body: tuple[Instr, ...] = ()
            else_body: tuple[Instr, ...] = ()
            saw_then = False
            for sub in rest[i:]:
                if isinstance(sub, ListExp) and sub.head == "then":
                    self.labels.push(label)
                    then_body = self.parse_seq(list(sub.items[1:]))
                    self.labels.pop()
                    saw_then = True
                elif isinstance(sub, ListExp) and sub.head == "else":
                    self.labels.push(label)
                    else_body = self.parse_seq(list(sub.items[1:]))
                    self.labels.pop()
                else:
                    if saw_then:
                        raise WatSyntaxError("condition after then clause", sub.loc)
                    cond_instrs.extend(self._parse_folded_operand(sub))
            if not saw_then:
                raise WatSyntaxError("folded if requires a then clause", loc)
            return cond_instrs + [If(loc, results, then_body, else_body)]
        # plain op: immediates are atom items, operands are list items
        imm_atoms = [x for x in rest if isinstance(x, Atom)]
        operand_forms = [x for x in rest if isinstance(x, ListExp)]
        operands: list[Instr] = []
        for f in operand_forms:
            operands.extend(self._parse_folded(f))
        ins = self._mk_simple(op, imm_atoms, loc)
        return operands + ins

    def _parse_folded_operand(self, form: SExp) -> list[Instr]:
        if not isinstance(form, ListExp):
            raise WatSyntaxError("expected folded operand", form.loc)
        return self._parse_folded(form)

    # -- flat form: atoms in sequence; block/loop/if run to `end`
    def _parse_flat(self, items: list[SExp], pos: int, out: list[Instr]) -> int:
        tok = items[pos]
        assert isinstance(tok, Atom)
        op = tok.text
        loc = tok.loc
        if op in ("block", "loop", "if"):
            pos += 1
            label = None
            if (pos < len(items) and isinstance(items[pos], Atom)
                    and items[pos].text.startswith("$")):
                label = items[pos].text
                pos += 1
            rtypes: list[str] = []
            while (pos < len(items) and isinstance(items[pos], ListExp)
                   and items[pos].head == "result"):
                for r in items[pos].items[1:]:
                    if not (isinstance(r, Atom) and r.text in ("i32", "i64")):
                        raise WatSyntaxError("unsupported result type",
                                             items[pos].loc)
                    rtypes.append(r.text)
                pos += 1
            results = tuple(rtypes)
            self.labels.push(label)
            body: list[Instr] = []
            else_body: list[Instr] = []
            cur = body
            while True:
                if pos >= len(items):
                    raise WatSyntaxError(f"unterminated {op}", loc)
                nxt = items[pos]
                if isinstance(nxt, Atom) and nxt.text == "end":
                    pos += 1
                    break
                if isinstance(nxt, Atom) and nxt.text == "else" and op == "if":
                    cur = else_body
                    pos += 1
                    continue
                pos = self._parse_one(items, pos, cur)
            self.labels.pop()
            if op == "block":
                out.append(Block(loc, results, tuple(body)))
            elif op == "loop":
                out.append(Loop(loc, results, tuple(body)))
            else:
                out.append(If(loc, results, tuple(body), tuple(else_body)))
            return pos
        if op == "call_indirect":
            # flat style: type/param/result forms follow the opcode
            pos += 1
            params: list[str] = []
            results: list[str] = []
            while pos < len(items) and isinstance(items[pos], ListExp):
                sub = items[pos]
                if sub.head == "type":
                    p, r = self.fenv.module.type_by_ref(sub)
                    params.extend(p)
                    results.extend(r)
                elif sub.head == "param":
                    params.extend(a.text for a in sub.items[1:]
                                  if isinstance(a, Atom))
                elif sub.head == "result":
                    results.extend(a.text for a in sub.items[1:]
                                   if isinstance(a, Atom))
                else:
                    break
                pos += 1
            out.append(CallIndirect(loc, tuple(params), tuple(results)))
            return pos
        # simple op: consume the atoms that form its immediates
        imms: list[Atom] = []
        pos += 1
        while pos < len(items) and isinstance(items[pos], Atom):
            nxt = items[pos]
            if not self._takes_imm(op, nxt, len(imms)):
                break
            imms.append(nxt)
            pos += 1
        out.extend(self._mk_simple(op, imms, loc))
        return pos

    def _takes_imm(self, op: str, atom: Atom, count: int) -> bool:
        t = atom.text
        if t in ("end", "else"):
            return False
        if op in ("local.get", "local.set", "local.tee", "global.get",
                  "global.set", "br", "br_if", "call") or op.endswith(".const"):
            return count == 0
        if op == "br_table":
            return t.startswith("$") or _is_int(t)
        if "." in op:
            base = op.split(".", 1)[1]
            if base in _LOADS or base in _STORES:
                return t.startswith("offset=") or t.startswith("align=")
        return False

    def _memarg(self, imms: list[Atom]) -> int:
        offset = 0
        for a in imms:
            if a.text.startswith("offset="):
                offset = _parse_int(a.text[len("offset="):], a.loc)
            elif a.text.startswith("align="):
                pass  # alignment is a hint; byte-granular memory ignores it
            else:
                raise WatSyntaxError(f"unexpected memory immediate {a.text!r}", a.loc)
        return offset

    def _imm0(self, imms: list[Atom], op: str, loc: SrcLoc) -> Atom:
        if not imms:
            raise WatSyntaxError(f"{op} needs an immediate", loc)
        return imms[0]

    def _mk_simple(self, op: str, imms: list[Atom], loc: SrcLoc) -> list[Instr]:
        fenv = self.fenv
        if op == "nop":
            return [Nop(loc)]
        if op == "unreachable":
            return [Unreachable(loc)]
        if op == "drop":
            return [Drop(loc)]
        if op == "select":
            return [Select(loc)]
        if op == "return":
            return [Return(loc)]
        if op == "br":
            return [Br(loc, self.labels.depth_of(self._imm0(imms, op, loc)))]
        if op == "br_if":
            return [BrIf(loc, self.labels.depth_of(self._imm0(imms, op, loc)))]
        if op == "br_table":
            if not imms:
                raise WatSyntaxError("br_table needs at least a default label", loc)
            depths = [self.labels.depth_of(a) for a in imms]
            return [BrTable(loc, tuple(depths[:-1]), depths[-1])]
        if op == "call":
            return [Call(loc, fenv.module.func_index(self._imm0(imms, op, loc)))]
        if op == "local.get":
            return [LocalGet(loc, fenv.local_index(
                self._imm0(imms, op, loc), self.local_count))]
        if op == "local.set":
            return [LocalSet(loc, fenv.local_index(
                self._imm0(imms, op, loc), self.local_count))]
        if op == "local.tee":
            return [LocalTee(loc, fenv.local_index(
                self._imm0(imms, op, loc), self.local_count))]
        if op == "global.get":
            return [GlobalGet(loc, fenv.module.global_index(
                self._imm0(imms, op, loc)))]
        if op == "global.set":
            return [GlobalSet(loc, fenv.module.global_index(
                self._imm0(imms, op, loc)))]
        if "." not in op:
            raise WatSyntaxError(f"unsupported instruction {op!r}", loc)
        prefix, base = op.split(".", 1)
        if prefix in ("f32", "f64"):
            raise WatSyntaxError("floating point is not supported", loc)
        if prefix not in ("i32", "i64"):
            raise WatSyntaxError(f"unsupported instruction {op!r}", loc)
        width = 32 if prefix == "i32" else 64
        if base == "const":
            v = _parse_int(self._imm0(imms, op, loc).text, loc)
            return [ConstInstr(loc, width, v & ((1 << width) - 1))]
        if base in _BIN or base in _CMP or base in _UN:
            return [NumInstr(loc, width, base)]
        if base == "eqz":
            return [EqzInstr(loc, width)]
        if base == "extend_i32_u" and width == 64:
            return [ExtendInstr(loc, "extend_u")]
        if base == "extend_i32_s" and width == 64:
            return [ExtendInstr(loc, "extend_s")]
        if base == "wrap_i64" and width == 32:
            return [ExtendInstr(loc, "wrap")]
        if base in _LOADS:
            bytes_, signed = _LOADS[base]
            if base == "load":
                bytes_ = width // 8
            if base in ("load32_u", "load32_s") and width == 32:
                raise WatSyntaxError("load32 variants are i64-only", loc)
            if bytes_ * 8 > width:
                raise WatSyntaxError(f"{op}: load wider than result", loc)
            return [LoadInstr(loc, width, bytes_, signed, self._memarg(imms))]
        if base in _STORES:
            bytes_ = _STORES[base]
            if base == "store":
                bytes_ = width // 8
            if base == "store32" and width == 32:
                raise WatSyntaxError("store32 is i64-only", loc)
            if bytes_ * 8 > width:
                raise WatSyntaxError(f"{op}: store wider than operand", loc)
            return [StoreInstr(loc, width, bytes_, self._memarg(imms))]
        raise WatSyntaxError(f"unsupported instruction {op!r}", loc)

    # folded call_indirect: (call_indirect (type ...)|(param ..)(result ..) operands...)
    def parse_call_indirect(self, form: ListExp) -> list[Instr]:
        loc = form.loc
        params: list[str] = []
        results: list[str] = []
        operands: list[Instr] = []
        for sub in form.items[1:]:
            if isinstance(sub, ListExp) and sub.head == "param":
                for a in sub.items[1:]:
                    if not (isinstance(a, Atom) and a.text in ("i32", "i64")):
                        raise WatSyntaxError("unsupported param type", sub.loc)
                    params.append(a.text)
            elif isinstance(sub, ListExp) and sub.head == "result":
                for a in sub.items[1:]:
                    if not (isinstance(a, Atom) and a.text in ("i32", "i64")):
                        raise WatSyntaxError("unsupported result type", sub.loc)
                    results.append(a.text)
            elif isinstance(sub, ListExp) and sub.head == "type":
                p, r = self.fenv.module.type_by_ref(sub)
                params.extend(p)
                results.extend(r)
            elif isinstance(sub, ListExp):
                operands.extend(self._parse_folded(sub))
            else:
                raise WatSyntaxError("unexpected call_indirect immediate", form.loc)
        return operands + [CallIndirect(loc, tuple(params), tuple(results))]


# ---- module building ---------------------------------------------------------


class _ModuleBuilder:
    def __init__(self):
        self.func_names: dict[str, int] = {}
        self.func_forms: list[ListExp] = []
        self.functions: list[FuncDef] = []
        self.global_names: dict[str, int] = {}
        self.globals: list[GlobalDef] = []
        self.memory_decl: tuple[int, str | None] | None = None
        self.policies: list[PolicyRange] = []
        self.entry: EntrySpec | None = None
        self.types: dict[str, tuple[list[str], list[str]]] = {}
        self.type_order: list[tuple[list[str], list[str]]] = []
        self.table_size: int | None = None
        self.elem_forms: list[ListExp] = []

    def func_index(self, tok: Atom) -> int:
        if tok.text.startswith("$"):
            idx = self.func_names.get(tok.text)
            if idx is None:
                raise WatSyntaxError(f"unknown function {tok.text}", tok.loc)
            return idx
        idx = _parse_int(tok.text, tok.loc)
        if idx >= len(self.func_forms):
            raise WatSyntaxError(f"function index {idx} out of range", tok.loc)
        return idx

    def global_index(self, tok: Atom) -> int:
        if tok.text.startswith("$"):
            idx = self.global_names.get(tok.text)
            if idx is None:
                raise WatSyntaxError(f"unknown global {tok.text}", tok.loc)
            return idx
        idx = _parse_int(tok.text, tok.loc)
        if idx >= len(self.globals):
            raise WatSyntaxError(f"global index {idx} out of range", tok.loc)
        return idx

    def type_by_ref(self, form: ListExp) -> tuple[list[str], list[str]]:
        ref = form.items[1]
        if not isinstance(ref, Atom):
            raise WatSyntaxError("malformed type reference", form.loc)
        if ref.text.startswith("$"):
            t = self.types.get(ref.text)
            if t is None:
                raise WatSyntaxError(f"unknown type {ref.text}", ref.loc)
            return t
        idx = _parse_int(ref.text, ref.loc)
        if idx >= len(self.type_order):
            raise WatSyntaxError(f"type index {idx} out of range", ref.loc)
        return self.type_order[idx]


def _parse_policy_form(form: ListExp) -> PolicyRange:
    kind = form.head
    args = form.items[1:]
    vals: list[int] = []
    for a in args:
        if (isinstance(a, ListExp) and a.head == "i32.const"
                and len(a.items) == 2 and isinstance(a.items[1], Atom)):
            vals.append(_parse_int(a.items[1].text, a.loc))
        else:
            raise WatSyntaxError(f"{kind} range expects (i32.const N) bounds", form.loc)
    if len(vals) != 2:
        raise WatSyntaxError(f"{kind} range expects two bounds", form.loc)
    start, end = vals
    if start > end:
        raise PolicyError(f"{kind} range [{start},{end}]: start exceeds end")
    return PolicyRange(kind, start, end)


def _parse_entry_form(form: ListExp) -> EntrySpec:
    items = form.items[1:]
    if not items or not isinstance(items[0], Atom) or not items[0].is_string:
        raise WatSyntaxError('symb_exec expects a quoted function name', form.loc)
    name = items[0].text
    args: list = []
    for a in items[1:]:
        ok = (isinstance(a, ListExp) and a.head in ("i32.sconst", "i64.sconst")
              and len(a.items) == 2 and isinstance(a.items[1], Atom))
        if not ok:
            raise WatSyntaxError("symb_exec arguments must be (i32.sconst N|ident)", form.loc)
        tok = a.items[1]
        if _is_int(tok.text):
            args.append(ConcreteArg(_parse_int(tok.text, tok.loc)))
        else:
            first = tok.text[0]
            if first == "l":
                args.append(SymbolicArg(tok.text, "public"))
            elif first == "h":
                args.append(SymbolicArg(tok.text, "secret"))
            else:
                raise PolicyError(
                    f"symbolic argument {tok.text!r} must start with l (public) "
                    f"or h (secret)")
    return EntrySpec(name, args)


def _parse_func(mb: _ModuleBuilder, form: ListExp, index: int) -> FuncDef:
    items = list(form.items[1:])
    i = 0
    name = f"f{index}"
    if i < len(items) and isinstance(items[i], Atom) and items[i].text.startswith("$"):
        name = items[i].text
        i += 1
    exported = None
    params: list[str] = []
    results: list[str] = []
    locals_: list[str] = []
    local_names: dict[str, int] = {}

    while i < len(items) and isinstance(items[i], ListExp):
        it = items[i]
        h = it.head
        if h == "export":
            if len(it.items) != 2 or not isinstance(it.items[1], Atom):
                raise WatSyntaxError("malformed export clause", it.loc)
            exported = it.items[1].text
            i += 1
        elif h == "param":
            sub = list(it.items[1:])
            if sub and isinstance(sub[0], Atom) and sub[0].text.startswith("$"):
                if len(sub) != 2:
                    raise WatSyntaxError("named param takes one type", it.loc)
                local_names[sub[0].text] = len(params)
                sub = sub[1:]
            for a in sub:
                if not (isinstance(a, Atom) and a.text in ("i32", "i64")):
                    raise WatSyntaxError("unsupported param type", it.loc)
                params.append(a.text)
            i += 1
        elif h == "result":
            for a in it.items[1:]:
                if not (isinstance(a, Atom) and a.text in ("i32", "i64")):
                    raise WatSyntaxError("unsupported result type", it.loc)
                results.append(a.text)
            i += 1
        elif h == "local":
            sub = list(it.items[1:])
            if sub and isinstance(sub[0], Atom) and sub[0].text.startswith("$"):
                if len(sub) != 2:
                    raise WatSyntaxError("named local takes one type", it.loc)
                local_names[sub[0].text] = len(params) + len(locals_)
                sub = sub[1:]
            for a in sub:
                if not (isinstance(a, Atom) and a.text in ("i32", "i64")):
                    raise WatSyntaxError("unsupported local type", it.loc)
                locals_.append(a.text)
            i += 1
        else:
            break

    fenv = _FuncEnv(local_names, mb)
    parser = _InstrParser(fenv, len(params) + len(locals_))
    parser.labels.push(None)  # function body label (depth = innermost count)
    body = parser.parse_seq(items[i:])
    parser.labels.pop()
    return FuncDef(name, exported, params, results, locals_, body, form.loc)


def _collect_module_fields(mb: _ModuleBuilder, forms: tuple) -> None:
    # first pass: declarations, so call/$name references resolve forward
    for form in forms:
        if not isinstance(form, ListExp):
            raise WatSyntaxError("expected a module field", getattr(form, "loc", None))
        h = form.head
        if h == "func":
            idx = len(mb.func_forms)
            mb.func_forms.append(form)
            if (len(form.items) > 1 and isinstance(form.items[1], Atom)
                    and form.items[1].text.startswith("$")):
                mb.func_names[form.items[1].text] = idx
        elif h == "memory":
            if mb.memory_decl is not None:
                raise ValidationError("multiple memory declarations", form.loc)
            name = None
            pages = None
            for a in form.items[1:]:
                if isinstance(a, Atom) and a.text.startswith("$"):
                    name = a.text
                elif isinstance(a, Atom) and _is_int(a.text):
                    if pages is None:
                        pages = _parse_int(a.text, a.loc)
                elif isinstance(a, ListExp) and a.head == "export":
                    pass
                else:
                    raise WatSyntaxError("malformed memory declaration", form.loc)
            if pages is None:
                raise WatSyntaxError("memory needs a page count", form.loc)
            mb.memory_decl = (pages, name)
        elif h == "import":
            ok = (len(form.items) == 4
                  and isinstance(form.items[3], ListExp)
                  and form.items[3].head == "memory")
            if not ok:
                raise ValidationError(
                    "only a single memory import is supported", form.loc)
            memform = form.items[3]
            pages = None
            name = None
            for a in memform.items[1:]:
                if isinstance(a, Atom) and a.text.startswith("$"):
                    name = a.text
                elif isinstance(a, Atom) and _is_int(a.text):
                    if pages is None:
                        pages = _parse_int(a.text, a.loc)
            if pages is None:
                raise WatSyntaxError("imported memory needs a page count", form.loc)
            if mb.memory_decl is not None:
                raise ValidationError("multiple memory declarations", form.loc)
            mb.memory_decl = (pages, name)
        elif h == "global":
            items = list(form.items[1:])
            name = None
            if items and isinstance(items[0], Atom) and items[0].text.startswith("$"):
                name = items[0].text
                items = items[1:]
            mutable = False
            ty: str | None = None
            if items and isinstance(items[0], ListExp) and items[0].head == "mut":
                mutable = True
                tya = items[0].items[1]
                ty = tya.text if isinstance(tya, Atom) else None
                items = items[1:]
            elif items and isinstance(items[0], Atom):
                ty = items[0].text
                items = items[1:]
            if ty not in ("i32", "i64"):
                raise WatSyntaxError("unsupported global type", form.loc)
            init = 0
            if items and isinstance(items[0], ListExp) and (
                    items[0].head in ("i32.const", "i64.const")):
                init = _parse_int(items[0].items[1].text, items[0].loc)
            if name is not None:
                mb.global_names[name] = len(mb.globals)
            width = 32 if ty == "i32" else 64
            mb.globals.append(GlobalDef(name, mutable, width,
                                        init & ((1 << width) - 1)))
        elif h == "table":
            size = None
            for a in form.items[1:]:
                if isinstance(a, Atom) and _is_int(a.text):
                    size = _parse_int(a.text, a.loc)
                    break
            mb.table_size = size
        elif h == "elem":
            mb.elem_forms.append(form)
        elif h == "type":
            items = list(form.items[1:])
            name = None
            if items and isinstance(items[0], Atom) and items[0].text.startswith("$"):
                name = items[0].text
                items = items[1:]
            if not (items and isinstance(items[0], ListExp)
                    and items[0].head == "func"):
                raise WatSyntaxError("malformed type definition", form.loc)
            p: list[str] = []
            r: list[str] = []
            for sub in items[0].items[1:]:
                if isinstance(sub, ListExp) and sub.head == "param":
                    p.extend(a.text for a in sub.items[1:] if isinstance(a, Atom))
                elif isinstance(sub, ListExp) and sub.head == "result":
                    r.extend(a.text for a in sub.items[1:] if isinstance(a, Atom))
            sig = (p, r)
            mb.type_order.append(sig)
            if name is not None:
                mb.types[name] = sig
        elif h == "export":
            if (len(form.items) == 3 and isinstance(form.items[1], Atom)
                    and isinstance(form.items[2], ListExp)
                    and form.items[2].head == "func"):
                mb.elem_forms.append(form)  # resolved once func names are known
            else:
                raise WatSyntaxError("unsupported export form", form.loc)
        elif h in ("public", "secret"):
            mb.policies.append(_parse_policy_form(form))
        elif h == "symb_exec":
            if mb.entry is not None:
                raise PolicyError("duplicate symb_exec directive")
            mb.entry = _parse_entry_form(form)
        elif h == "data":
            raise ValidationError(
                "data segments are not supported; initialize memory with "
                "stores or policy annotations", form.loc)
        elif h == "start":
            raise ValidationError("start functions are not supported", form.loc)
        else:
            raise WatSyntaxError(f"unsupported module field {h!r}", form.loc)


def parse_module(source_text: str) -> ModuleAst:
    """Parse one source file: a (module ...) form, optionally preceded or
    followed by bare policy/entry forms, or a bare annotation-only file."""
    forms = read_sexps(lex(source_text))
    mb = _ModuleBuilder()
    module_fields: tuple | None = None
    extra_fields: list[SExp] = []
    for f in forms:
        if isinstance(f, ListExp) and f.head == "module":
            if module_fields is not None:
                raise WatSyntaxError("multiple module forms", f.loc)
            module_fields = f.items[1:]
        elif isinstance(f, ListExp) and f.head in ("public", "secret", "symb_exec"):
            extra_fields.append(f)
        else:
            raise WatSyntaxError(
                "top level allows one (module ...) plus policy forms",
                getattr(f, "loc", None))
    _collect_module_fields(mb, tuple(module_fields or ()) + tuple(extra_fields))

    for idx, form in enumerate(mb.func_forms):
        mb.functions.append(_parse_func(mb, form, idx))

    # resolve module-level exports and table elements
    table: list[int | None] = [None] * (mb.table_size or 0)
    for form in mb.elem_forms:
        if form.head == "export":
            ref = form.items[2].items[1]
            assert isinstance(ref, Atom)
            fi = mb.func_index(ref)
            mb.functions[fi].exported_name = form.items[1].text
            continue
        items = list(form.items[1:])
        offset = 0
        i = 0
        if items and isinstance(items[0], ListExp) and items[0].head == "i32.const":
            offset = _parse_int(items[0].items[1].text, items[0].loc)
            i = 1
        if items[i:] and isinstance(items[i], Atom) and items[i].text == "func":
            i += 1
        slot = offset
        for a in items[i:]:
            if not isinstance(a, Atom):
                raise WatSyntaxError("malformed elem entry", form.loc)
            fi = mb.func_index(a)
            while len(table) <= slot:
                table.append(None)
            table[slot] = fi
            slot += 1

    ast = ModuleAst(
        functions=mb.functions,
        memory_decl=mb.memory_decl,
        globals=mb.globals,
        policies=mb.policies,
        entry=mb.entry,
        function_table=table,
    )
    if module_fields is not None:
        validate_module(ast)
    # annotation-only sidecars are validated after merge_modules
    return ast


def merge_modules(parts: list[ModuleAst]) -> ModuleAst:
    """Combine a module file with annotation sidecars."""
    mains = [p for p in parts if p.functions or p.memory_decl]
    if not mains:
        raise ValidationError("no module definition found in the given files")
    if len(mains) > 1:
        raise ValidationError("more than one module definition given")
    main = mains[0]
    for p in parts:
        if p is main:
            continue
        main.policies.extend(p.policies)
        if p.entry is not None:
            if main.entry is not None:
                raise PolicyError("duplicate symb_exec directive")
            main.entry = p.entry
    validate_module(main)
    return main


# ---- validation ---------------------------------------------------------


def _check_policies(ast: ModuleAst) -> None:
    if not ast.policies:
        return
    if ast.memory_decl is None:
        raise PolicyError("policy ranges given but the module has no memory")
    size = ast.memory_decl[0] * 65536
    for p in ast.policies:
        if p.start < 0 or p.end >= size:
            raise PolicyError(
                f"{p.classification} range [{p.start},{p.end}] exceeds memory "
                f"size {size}")
    for a in ast.policies:
        for b in ast.policies:
            if (a.classification != b.classification
                    and not (a.end < b.start or b.end < a.start)):
                raise PolicyError(
                    f"overlapping public/secret ranges "
                    f"[{a.start},{a.end}] and [{b.start},{b.end}]")


class _TypeChecker:
    """Standard stack-type validation with unreachable polymorphism."""

    def __init__(self, ast: ModuleAst, fn: FuncDef):
        self.ast = ast
        self.fn = fn
        self.stack: list[str] = []
        # (label_types, end_types, height, unreachable); a loop frame's
        # label types are empty because branches re-enter its header
        self.ctrl: list[list] = []

    def error(self, msg: str, loc: SrcLoc):
        raise ValidationError(f"in {self.fn.name}: {msg}", loc)

    def push(self, t: str):
        self.stack.append(t)

    def pop(self, want: str | None, loc: SrcLoc) -> str:
        frame = self.ctrl[-1]
        if len(self.stack) == frame[2]:
            if frame[3]:
                return want or "i32"
            self.error("value stack underflow", loc)
        got = self.stack.pop()
        if want is not None and got != want:
            self.error(f"expected {want}, found {got}", loc)
        return got

    def check_body(self, body: tuple[Instr, ...], label_types: list[str],
                   end_types: list[str]):
        self.ctrl.append([label_types, end_types, len(self.stack), False])
        for ins in body:
            self.check_instr(ins)
        _, ends, height, unreachable = self.ctrl[-1]
        tail_loc = body[-1].loc if body else SrcLoc(0, 0)
        if not unreachable:
            if len(self.stack) != height + len(ends):
                self.error(
                    f"block leaves {len(self.stack) - height} values, "
                    f"expected {len(ends)}", tail_loc)
            for want in reversed(ends):
                self.pop(want, tail_loc)
        else:
            del self.stack[height:]
        self.ctrl.pop()
        for t in ends:
            self.push(t)

    def mark_unreachable(self):
        self.ctrl[-1][3] = True
        del self.stack[self.ctrl[-1][2]:]

    def branch_targets(self, depth: int, loc: SrcLoc) -> list[str]:
        if depth >= len(self.ctrl):
            self.error(f"branch depth {depth} out of range", loc)
        # ctrl[0] is the function frame; depth counts inward from the top
        return self.ctrl[len(self.ctrl) - 1 - depth][0]

    def check_instr(self, ins: Instr):
        w = {32: "i32", 64: "i64"}
        if isinstance(ins, ConstInstr):
            self.push(w[ins.width])
        elif isinstance(ins, NumInstr):
            t = w[ins.width]
            if ins.op in _UN:
                self.pop(t, ins.loc)
                self.push(t)
            elif ins.op in _CMP:
                self.pop(t, ins.loc)
                self.pop(t, ins.loc)
                self.push("i32")
            else:
                self.pop(t, ins.loc)
                self.pop(t, ins.loc)
                self.push(t)
        elif isinstance(ins, EqzInstr):
            self.pop(w[ins.width], ins.loc)
            self.push("i32")
        elif isinstance(ins, ExtendInstr):
            if ins.kind == "wrap":
                self.pop("i64", ins.loc)
                self.push("i32")
            else:
                self.pop("i32", ins.loc)
                self.push("i64")
        elif isinstance(ins, (LocalGet, LocalSet, LocalTee)):
            types = self.fn.local_types
            if ins.index >= len(types):
                self.error(f"local index {ins.index} out of range", ins.loc)
            t = types[ins.index]
            if isinstance(ins, LocalGet):
                self.push(t)
            elif isinstance(ins, LocalSet):
                self.pop(t, ins.loc)
            else:
                self.pop(t, ins.loc)
                self.push(t)
        elif isinstance(ins, (GlobalGet, GlobalSet)):
            if ins.index >= len(self.ast.globals):
                self.error(f"global index {ins.index} out of range", ins.loc)
            g = self.ast.globals[ins.index]
            t = w[g.width]
            if isinstance(ins, GlobalGet):
                self.push(t)
            else:
                if not g.mutable:
                    self.error("assignment to immutable global", ins.loc)
                self.pop(t, ins.loc)
        elif isinstance(ins, LoadInstr):
            if self.ast.memory_decl is None:
                self.error("load without a memory", ins.loc)
            self.pop("i32", ins.loc)
            self.push(w[ins.width])
        elif isinstance(ins, StoreInstr):
            if self.ast.memory_decl is None:
                self.error("store without a memory", ins.loc)
            self.pop(w[ins.width], ins.loc)
            self.pop("i32", ins.loc)
        elif isinstance(ins, Block):
            results = list(ins.results)
            self.check_body(ins.body, results, results)
        elif isinstance(ins, Loop):
            results = list(ins.results)
            self.check_body(ins.body, [], results)
        elif isinstance(ins, If):
            self.pop("i32", ins.loc)
            snapshot = list(self.stack)
            results = list(ins.results)
            self.check_body(ins.then_body, results, results)
            self.stack = snapshot
            self.check_body(ins.else_body, results, results)
        elif isinstance(ins, Br):
            for want in reversed(self.branch_targets(ins.depth, ins.loc)):
                self.pop(want, ins.loc)
            self.mark_unreachable()
        elif isinstance(ins, BrIf):
            self.pop("i32", ins.loc)
            targets = self.branch_targets(ins.depth, ins.loc)
            for want in reversed(targets):
                self.pop(want, ins.loc)
            for want in targets:
                self.push(want)
        elif isinstance(ins, BrTable):
            self.pop("i32", ins.loc)
            base = self.branch_targets(ins.default, ins.loc)
            for d in ins.depths:
                t = self.branch_targets(d, ins.loc)
                if t != base:
                    self.error("br_table targets disagree on types", ins.loc)
            for want in reversed(base):
                self.pop(want, ins.loc)
            self.mark_unreachable()
        elif isinstance(ins, Return):
            for want in reversed(self.fn.results):
                self.pop(want, ins.loc)
            self.mark_unreachable()
        elif isinstance(ins, Call):
            callee = self.ast.functions[ins.func_index]
            for want in reversed(callee.params):
                self.pop(want, ins.loc)
            for t in callee.results:
                self.push(t)
        elif isinstance(ins, CallIndirect):
            if not self.ast.function_table:
                self.error("call_indirect without a function table", ins.loc)
            self.pop("i32", ins.loc)
            for want in reversed(list(ins.params)):
                self.pop(want, ins.loc)
            for t in ins.results:
                self.push(t)
        elif isinstance(ins, Select):
            self.pop("i32", ins.loc)
            t1 = self.pop(None, ins.loc)
            t2 = self.pop(None, ins.loc)
            if t1 != t2:
                self.error("select arms have different types", ins.loc)
            self.push(t1)
        elif isinstance(ins, Drop):
            self.pop(None, ins.loc)
        elif isinstance(ins, Nop):
            pass
        elif isinstance(ins, Unreachable):
            self.mark_unreachable()
        else:
            self.error(f"unhandled instruction {type(ins).__name__}", ins.loc)


def validate_module(ast: ModuleAst) -> None:
    _check_policies(ast)
    for fi in ast.function_table:
        if fi is not None and (fi < 0 or fi >= len(ast.functions)):
            raise ValidationError(f"table entry {fi} out of range")
    for fn in ast.functions:
        if len(fn.results) > 1:
            raise ValidationError(f"{fn.name}: multiple results not supported",
                                  fn.loc)
        tc = _TypeChecker(ast, fn)
        tc.check_body(fn.body, list(fn.results), list(fn.results))
        if len(tc.stack) != len(fn.results):
            raise ValidationError(
                f"{fn.name}: function leaves {len(tc.stack)} values, expects "
                f"{len(fn.results)}", fn.loc)


# ---- entry resolution --------------------------------------------------------


def resolve_entry(ast: ModuleAst,
                  entry_name: str | None = None) -> tuple[FuncDef, EntrySpec]:
    """Find the entry function and its argument specs.

    With entry_name given, the directive is optional: a missing or differing
    directive yields fresh public symbols for every parameter.
    """
    spec = ast.entry
    if entry_name is not None:
        fn = ast.func_by_name(entry_name)
        if fn is None:
            raise UnknownFunction(f"no function named {entry_name!r}")
        if spec is None or spec.function_name not in (fn.name, fn.exported_name):
            spec = EntrySpec(entry_name, [
                SymbolicArg(f"l_arg{i}", "public") for i in range(len(fn.params))
            ])
    else:
        if spec is None:
            raise MissingEntry(
                "no symb_exec directive and no entry override given")
        fn = ast.func_by_name(spec.function_name)
        if fn is None:
            raise UnknownFunction(
                f"symb_exec names unknown function {spec.function_name!r}")
    if len(spec.args) != len(fn.params):
        raise ArityMismatch(
            f"{fn.name} takes {len(fn.params)} parameters, entry supplies "
            f"{len(spec.args)}")
    return fn, spec


# ---- pretty printer -----------------------------------------------------------


def _print_body(body: tuple[Instr, ...], indent: int, out: list[str]) -> None:
    pad = "  " * indent
    for ins in body:
        if isinstance(ins, Block):
            out.append(f"{pad}block{_result_suffix(ins.results)}")
            _print_body(ins.body, indent + 1, out)
            out.append(f"{pad}end")
        elif isinstance(ins, Loop):
            out.append(f"{pad}loop{_result_suffix(ins.results)}")
            _print_body(ins.body, indent + 1, out)
            out.append(f"{pad}end")
        elif isinstance(ins, If):
            out.append(f"{pad}if{_result_suffix(ins.results)}")
            _print_body(ins.then_body, indent + 1, out)
            if ins.else_body:
                out.append(f"{pad}else")
                _print_body(ins.else_body, indent + 1, out)
            out.append(f"{pad}end")
        else:
            out.append(pad + _print_simple(ins))


def _result_suffix(results: tuple[str, ...]) -> str:
    return "".join(f" (result {t})" for t in results)


def _print_simple(ins: Instr) -> str:
    w = {32: "i32", 64: "i64"}
    if isinstance(ins, ConstInstr):
        return f"{w[ins.width]}.const {ins.value}"
    if isinstance(ins, NumInstr):
        return f"{w[ins.width]}.{ins.op}"
    if isinstance(ins, EqzInstr):
        return f"{w[ins.width]}.eqz"
    if isinstance(ins, ExtendInstr):
        return {"extend_u": "i64.extend_i32_u", "extend_s": "i64.extend_i32_s",
                "wrap": "i32.wrap_i64"}[ins.kind]
    if isinstance(ins, LocalGet):
        return f"local.get {ins.index}"
    if isinstance(ins, LocalSet):
        return f"local.set {ins.index}"
    if isinstance(ins, LocalTee):
        return f"local.tee {ins.index}"
    if isinstance(ins, GlobalGet):
        return f"global.get {ins.index}"
    if isinstance(ins, GlobalSet):
        return f"global.set {ins.index}"
    if isinstance(ins, LoadInstr):
        name = _load_name(ins)
        off = f" offset={ins.offset}" if ins.offset else ""
        return name + off
    if isinstance(ins, StoreInstr):
        name = _store_name(ins)
        off = f" offset={ins.offset}" if ins.offset else ""
        return name + off
    if isinstance(ins, Br):
        return f"br {ins.depth}"
    if isinstance(ins, BrIf):
        return f"br_if {ins.depth}"
    if isinstance(ins, BrTable):
        return "br_table " + " ".join(str(d) for d in ins.depths + (ins.default,))
    if isinstance(ins, Return):
        return "return"
    if isinstance(ins, Call):
        return f"call {ins.func_index}"
    if isinstance(ins, CallIndirect):
        ps = "".join(f" (param {p})" for p in ins.params)
        rs = "".join(f" (result {r})" for r in ins.results)
        return f"(call_indirect{ps}{rs})"
    if isinstance(ins, Select):
        return "select"
    if isinstance(ins, Drop):
        return "drop"
    if isinstance(ins, Nop):
        return "nop"
    if isinstance(ins, Unreachable):
        return "unreachable"
    raise TypeError(type(ins))


def _load_name(ins: LoadInstr) -> str:
    w = "i32" if ins.width == 32 else "i64"
    full = ins.width // 8
    if ins.bytes_ == full and not ins.signed:
        return f"{w}.load"
    suffix = {1: "8", 2: "16", 4: "32"}[ins.bytes_]
    return f"{w}.load{suffix}_{'s' if ins.signed else 'u'}"


def _store_name(ins: StoreInstr) -> str:
    w = "i32" if ins.width == 32 else "i64"
    full = ins.width // 8
    if ins.bytes_ == full:
        return f"{w}.store"
    suffix = {1: "8", 2: "16", 4: "32"}[ins.bytes_]
    return f"{w}.store{suffix}"


def print_module(ast: ModuleAst) -> str:
    out: list[str] = ["(module"]
    if ast.memory_decl is not None:
        pages, name = ast.memory_decl
        nm = f" {name}" if name else ""
        out.append(f"  (memory{nm} {pages})")
    for g in ast.globals:
        ty = "i32" if g.width == 32 else "i64"
        tyd = f"(mut {ty})" if g.mutable else ty
        nm = f" {g.name}" if g.name else ""
        out.append(f"  (global{nm} {tyd} ({ty}.const {g.init}))")
    if ast.function_table:
        out.append(f"  (table {len(ast.function_table)} funcref)")
        runs: list[tuple[int, list[int]]] = []
        for slot, fi in enumerate(ast.function_table):
            if fi is None:
                continue
            if runs and runs[-1][0] + len(runs[-1][1]) == slot:
                runs[-1][1].append(fi)
            else:
                runs.append((slot, [fi]))
        for slot, fis in runs:
            names = " ".join(str(fi) for fi in fis)
            out.append(f"  (elem (i32.const {slot}) func {names})")
    for p in ast.policies:
        out.append(f"  ({p.classification} (i32.const {p.start}) "
                   f"(i32.const {p.end}))")
    for fn in ast.functions:
        header = f"  (func {fn.name}"
        if fn.exported_name:
            header += f' (export "{fn.exported_name}")'
        for p in fn.params:
            header += f" (param {p})"
        for r in fn.results:
            header += f" (result {r})"
        out.append(header)
        for lt in fn.locals:
            out.append(f"    (local {lt})")
        _print_body(fn.body, 2, out)
        out.append("  )")
    if ast.entry is not None:
        args = []
        for a in ast.entry.args:
            if isinstance(a, ConcreteArg):
                args.append(f"(i32.sconst {a.value})")
            else:
                args.append(f"(i32.sconst {a.label})")
        out.append(f'  (symb_exec "{ast.entry.function_name}" '
                   + " ".join(args) + ")")
    out.append(")")
    return "\n".join(out) + "\n"
