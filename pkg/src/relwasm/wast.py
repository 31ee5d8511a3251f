"""Module representation for the WebAssembly-text subset: instruction tree,
function/memory/global declarations, policy ranges, and the symbolic entry
directive."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class SrcLoc:
    line: int
    col: int

    def __str__(self) -> str:
        return f"{self.line}:{self.col}"


# ---- instructions -------------------------------------------------------

@dataclass(frozen=True)
class Instr:
    loc: SrcLoc


@dataclass(frozen=True)
class ConstInstr(Instr):
    width: int  # 32 or 64
    value: int


@dataclass(frozen=True)
class NumInstr(Instr):
    """Arithmetic/bitwise/comparison/unary op, e.g. op='add', width=32."""
    width: int
    op: str


@dataclass(frozen=True)
class ExtendInstr(Instr):
    """i64.extend_i32_u / i64.extend_i32_s / i32.wrap_i64."""
    kind: str  # "extend_u" | "extend_s" | "wrap"


@dataclass(frozen=True)
class EqzInstr(Instr):
    width: int


@dataclass(frozen=True)
class LocalGet(Instr):
    index: int


@dataclass(frozen=True)
class LocalSet(Instr):
    index: int


@dataclass(frozen=True)
class LocalTee(Instr):
    index: int


@dataclass(frozen=True)
class GlobalGet(Instr):
    index: int


@dataclass(frozen=True)
class GlobalSet(Instr):
    index: int


@dataclass(frozen=True)
class LoadInstr(Instr):
    width: int        # result width: 32 or 64
    bytes_: int       # 1, 2, 4, or 8
    signed: bool      # sign-extend narrow load
    offset: int       # static memarg offset


@dataclass(frozen=True)
class StoreInstr(Instr):
    width: int        # operand width: 32 or 64
    bytes_: int       # 1, 2, 4, or 8
    offset: int


@dataclass(frozen=True)
class Block(Instr):
    results: tuple[str, ...]
    body: tuple[Instr, ...]


@dataclass(frozen=True)
class Loop(Instr):
    results: tuple[str, ...]
    body: tuple[Instr, ...]


@dataclass(frozen=True)
class If(Instr):
    results: tuple[str, ...]
    then_body: tuple[Instr, ...]
    else_body: tuple[Instr, ...]


@dataclass(frozen=True)
class Br(Instr):
    depth: int


@dataclass(frozen=True)
class BrIf(Instr):
    depth: int


@dataclass(frozen=True)
class BrTable(Instr):
    depths: tuple[int, ...]
    default: int


@dataclass(frozen=True)
class Return(Instr):
    pass


@dataclass(frozen=True)
class Call(Instr):
    func_index: int


@dataclass(frozen=True)
class CallIndirect(Instr):
    params: tuple[str, ...]
    results: tuple[str, ...]


@dataclass(frozen=True)
class Select(Instr):
    pass


@dataclass(frozen=True)
class Drop(Instr):
    pass


@dataclass(frozen=True)
class Nop(Instr):
    pass


@dataclass(frozen=True)
class Unreachable(Instr):
    pass


# ---- module structure ----------------------------------------------------

@dataclass
class FuncDef:
    name: str                       # declared $name or synthesized f<i>
    exported_name: str | None
    params: list[str]               # "i32" | "i64"
    results: list[str]
    locals: list[str]               # non-param locals
    body: tuple[Instr, ...]
    loc: SrcLoc = field(default=SrcLoc(0, 0))

    @property
    def local_types(self) -> list[str]:
        return self.params + self.locals


@dataclass(frozen=True)
class PolicyRange:
    classification: str  # "public" | "secret"
    start: int           # inclusive byte address
    end: int             # inclusive byte address


@dataclass(frozen=True)
class ConcreteArg:
    value: int


@dataclass(frozen=True)
class SymbolicArg:
    label: str
    classification: str  # "public" | "secret", from the label's first letter


ArgSpec = ConcreteArg | SymbolicArg


@dataclass
class EntrySpec:
    function_name: str
    args: list[ArgSpec]


@dataclass
class GlobalDef:
    name: str | None
    mutable: bool
    width: int
    init: int


@dataclass
class ModuleAst:
    functions: list[FuncDef]
    memory_decl: tuple[int, str | None] | None   # (min pages, name)
    globals: list[GlobalDef]
    policies: list[PolicyRange]
    entry: EntrySpec | None
    function_table: list[int | None]             # slot -> function index

    def func_by_name(self, name: str) -> FuncDef | None:
        bare = name.lstrip("$")
        for f in self.functions:
            if f.name == name or f.name.lstrip("$") == bare \
                    or f.exported_name == name:
                return f
        return None
