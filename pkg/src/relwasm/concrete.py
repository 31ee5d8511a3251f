"""Concrete reference interpreter for the supported WebAssembly subset.

This is a deliberately independent implementation: it shares only the parsed
AST with the symbolic engine and re-derives all numeric semantics from the
WebAssembly spec (two's complement, truncated signed division, little-endian
memory). It serves two purposes:

  * replaying solver counterexamples against real executions, recording the
    branch outcome or effective address observed at a flagged instruction,
  * exhaustively enumerating small programs over concrete inputs in tests.

Trapping executions raise ReplayTrap rather than silently producing values,
so a replay that runs into undefined behaviour is reported as such instead
of being counted as confirming or refuting anything.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .wast import (
    Block,
    Br,
    BrIf,
    BrTable,
    Call,
    CallIndirect,
    ConstInstr,
    Drop,
    EqzInstr,
    ExtendInstr,
    FuncDef,
    GlobalGet,
    GlobalSet,
    If,
    Instr,
    LoadInstr,
    LocalGet,
    LocalSet,
    LocalTee,
    Loop,
    ModuleAst,
    Nop,
    NumInstr,
    Return,
    Select,
    StoreInstr,
    Unreachable,
)

PAGE_SIZE = 65536
DEFAULT_FUEL = 1_000_000
_MAX_CALL_DEPTH = 200


class ReplayTrap(Exception):
    """Execution trapped (div by zero, OOB access, unreachable, bad call)."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class OutOfFuel(Exception):
    """Instruction budget exhausted; the run is inconclusive, not a trap."""


@dataclass
class _Branch:
    depth: int


_RETURN = "return"


@dataclass
class _Frame:
    locals: list[int]
    stack: list[int] = field(default_factory=list)


def _mask(width: int) -> int:
    return (1 << width) - 1


def _signed(value: int, width: int) -> int:
    return value - (1 << width) if value >> (width - 1) else value


def _binop(op: str, a: int, b: int, w: int) -> int:
    m = _mask(w)
    if op == "add":
        return (a + b) & m
    if op == "sub":
        return (a - b) & m
    if op == "mul":
        return (a * b) & m
    if op == "and":
        return a & b
    if op == "or":
        return a | b
    if op == "xor":
        return a ^ b
    if op == "shl":
        return (a << (b % w)) & m
    if op == "shr_u":
        return a >> (b % w)
    if op == "shr_s":
        # python's >> on negative ints is arithmetic, which is what we want
        return (_signed(a, w) >> (b % w)) & m
    if op in ("rotl", "rotr"):
        s = b % w
        if s == 0:
            return a
        if op == "rotl":
            return ((a << s) | (a >> (w - s))) & m
        return ((a >> s) | (a << (w - s))) & m
    if op == "div_u":
        if b == 0:
            raise ReplayTrap("integer divide by zero")
        return a // b
    if op == "rem_u":
        if b == 0:
            raise ReplayTrap("integer divide by zero")
        return a % b
    if op in ("div_s", "rem_s"):
        if b == 0:
            raise ReplayTrap("integer divide by zero")
        sa, sb = _signed(a, w), _signed(b, w)
        if op == "div_s":
            if sa == -(1 << (w - 1)) and sb == -1:
                raise ReplayTrap("integer overflow")
            # truncated division; python's // floors, so steer via abs
            q = abs(sa) // abs(sb)
            if (sa < 0) != (sb < 0):
                q = -q
            return q & m
        r = abs(sa) % abs(sb)
        if sa < 0:
            r = -r
        return r & m
    raise ReplayTrap(f"unsupported binary op {op!r}")


def _cmp(op: str, a: int, b: int, w: int) -> int:
    if op in ("eq", "ne", "lt_u", "gt_u", "le_u", "ge_u"):
        x, y = a, b
    else:
        x, y = _signed(a, w), _signed(b, w)
    base = op.split("_")[0]
    res = {
        "eq": x == y,
        "ne": x != y,
        "lt": x < y,
        "gt": x > y,
        "le": x <= y,
        "ge": x >= y,
    }[base]
    return int(res)


def _unop(op: str, a: int, w: int) -> int:
    if op == "clz":
        for pos in range(w - 1, -1, -1):
            if a >> pos & 1:
                return w - 1 - pos
        return w
    if op == "ctz":
        for pos in range(w):
            if a >> pos & 1:
                return pos
        return w
    if op == "popcnt":
        return bin(a).count("1")
    raise ReplayTrap(f"unsupported unary op {op!r}")


@dataclass
class RunResult:
    results: list[int]
    machine: "Machine"


class Machine:
    """One module instance: memory, globals, and an optional watched site.

    When watch_instr is set to an instruction object from the module's own
    AST, every dynamic visit to that instruction appends the value driving
    it to watch_values: the effective address for loads/stores, the clamped
    arm index for br_table, the table index for call_indirect, and 0/1
    truthiness for br_if / if / select conditions.
    """

    def __init__(
        self,
        ast: ModuleAst,
        mem: bytearray | bytes | None = None,
        fuel: int = DEFAULT_FUEL,
        watch_instr: Instr | None = None,
    ):
        self.ast = ast
        pages = ast.memory_decl[0] if ast.memory_decl else 0
        if mem is None:
            self.mem = bytearray(pages * PAGE_SIZE)
        else:
            self.mem = bytearray(mem)
            if len(self.mem) < pages * PAGE_SIZE:
                self.mem.extend(bytes(pages * PAGE_SIZE - len(self.mem)))
        self.globals: list[int] = [g.init & _mask(g.width) for g in ast.globals]
        self.fuel = fuel
        self.watch_instr = watch_instr
        self.watch_values: list[int] = []
        self._depth = 0

    # ---- entry points ------------------------------------------------

    def invoke(self, func: FuncDef, args: list[int]) -> list[int]:
        if len(args) != len(func.params):
            raise ReplayTrap(
                f"{func.name} expects {len(func.params)} args, got {len(args)}"
            )
        if self._depth >= _MAX_CALL_DEPTH:
            raise ReplayTrap("call depth limit exceeded")
        self._depth += 1
        try:
            frame = _Frame(locals=[0] * len(func.local_types))
            for i, (a, ty) in enumerate(zip(args, func.params)):
                frame.locals[i] = a & _mask(64 if ty == "i64" else 32)
            r = self._exec_seq(func.body, frame)
            if isinstance(r, _Branch):
                raise ReplayTrap("branch depth escapes function body")
            n = len(func.results)
            if len(frame.stack) < n:
                raise ReplayTrap(f"{func.name} returned too few values")
            return frame.stack[len(frame.stack) - n :] if n else []
        finally:
            self._depth -= 1

    def invoke_by_name(self, name: str, args: list[int]) -> list[int]:
        func = self.ast.func_by_name(name)
        if func is None:
            raise ReplayTrap(f"no function named {name!r}")
        return self.invoke(func, args)

    # ---- execution ----------------------------------------------------

    def _watch(self, ins: Instr, value: int) -> None:
        if ins is self.watch_instr:
            self.watch_values.append(value)

    def _exec_seq(self, body: tuple[Instr, ...], frame: _Frame):
        for ins in body:
            r = self._exec(ins, frame)
            if r is not None:
                return r
        return None

    def _run_block(self, body, frame: _Frame, arity: int, is_loop: bool):
        base = len(frame.stack)
        while True:
            r = self._exec_seq(body, frame)
            if not isinstance(r, _Branch):
                return r  # None fallthrough or _RETURN
            if r.depth > 0:
                return _Branch(r.depth - 1)
            if is_loop:
                # back edge: loop labels carry no values in this subset
                del frame.stack[base:]
                continue
            vals = frame.stack[len(frame.stack) - arity :] if arity else []
            del frame.stack[base:]
            frame.stack.extend(vals)
            return None

    def _exec(self, ins: Instr, frame: _Frame):
        self.fuel -= 1
        if self.fuel < 0:
            raise OutOfFuel("instruction budget exhausted")
        stack = frame.stack

        if isinstance(ins, ConstInstr):
            stack.append(ins.value & _mask(ins.width))
        elif isinstance(ins, LocalGet):
            stack.append(frame.locals[ins.index])
        elif isinstance(ins, LocalSet):
            frame.locals[ins.index] = stack.pop()
        elif isinstance(ins, LocalTee):
            frame.locals[ins.index] = stack[-1]
        elif isinstance(ins, GlobalGet):
            stack.append(self.globals[ins.index])
        elif isinstance(ins, GlobalSet):
            self.globals[ins.index] = stack.pop()
        elif isinstance(ins, NumInstr):
            if ins.op in ("clz", "ctz", "popcnt"):
                stack.append(_unop(ins.op, stack.pop(), ins.width))
            elif ins.op in ("eq", "ne", "lt_u", "lt_s", "gt_u", "gt_s",
                            "le_u", "le_s", "ge_u", "ge_s"):
                b, a = stack.pop(), stack.pop()
                stack.append(_cmp(ins.op, a, b, ins.width))
            else:
                b, a = stack.pop(), stack.pop()
                stack.append(_binop(ins.op, a, b, ins.width))
        elif isinstance(ins, EqzInstr):
            stack.append(int(stack.pop() == 0))
        elif isinstance(ins, ExtendInstr):
            v = stack.pop()
            if ins.kind == "extend_u":
                stack.append(v & 0xFFFFFFFF)
            elif ins.kind == "extend_s":
                stack.append(_signed(v & 0xFFFFFFFF, 32) & _mask(64))
            else:  # wrap
                stack.append(v & 0xFFFFFFFF)
        elif isinstance(ins, LoadInstr):
            addr = (stack.pop() + ins.offset) & 0xFFFFFFFF
            self._watch(ins, addr)
            if addr + ins.bytes_ > len(self.mem):
                raise ReplayTrap(f"out of bounds load at {addr}")
            raw = int.from_bytes(self.mem[addr : addr + ins.bytes_], "little")
            if ins.signed and ins.bytes_ * 8 < ins.width:
                raw = _signed(raw, ins.bytes_ * 8) & _mask(ins.width)
            stack.append(raw)
        elif isinstance(ins, StoreInstr):
            value = stack.pop()
            addr = (stack.pop() + ins.offset) & 0xFFFFFFFF
            self._watch(ins, addr)
            if addr + ins.bytes_ > len(self.mem):
                raise ReplayTrap(f"out of bounds store at {addr}")
            self.mem[addr : addr + ins.bytes_] = (
                value & _mask(ins.bytes_ * 8)
            ).to_bytes(ins.bytes_, "little")
        elif isinstance(ins, Select):
            c, v2, v1 = stack.pop(), stack.pop(), stack.pop()
            self._watch(ins, int(c != 0))
            stack.append(v1 if c != 0 else v2)
        elif isinstance(ins, Drop):
            stack.pop()
        elif isinstance(ins, Nop):
            pass
        elif isinstance(ins, Block):
            return self._run_block(ins.body, frame, len(ins.results), False)
        elif isinstance(ins, Loop):
            return self._run_block(ins.body, frame, len(ins.results), True)
        elif isinstance(ins, If):
            c = stack.pop()
            self._watch(ins, int(c != 0))
            body = ins.then_body if c != 0 else ins.else_body
            return self._run_block(body, frame, len(ins.results), False)
        elif isinstance(ins, Br):
            return _Branch(ins.depth)
        elif isinstance(ins, BrIf):
            c = stack.pop()
            self._watch(ins, int(c != 0))
            if c != 0:
                return _Branch(ins.depth)
        elif isinstance(ins, BrTable):
            i = stack.pop()
            n = len(ins.depths)
            self._watch(ins, i if i < n else n)
            return _Branch(ins.depths[i] if i < n else ins.default)
        elif isinstance(ins, Return):
            return _RETURN
        elif isinstance(ins, Call):
            self._call(self.ast.functions[ins.func_index], frame)
        elif isinstance(ins, CallIndirect):
            i = stack.pop()
            self._watch(ins, i)
            table = self.ast.function_table
            if i >= len(table):
                raise ReplayTrap(f"undefined table element {i}")
            slot = table[i]
            if slot is None:
                raise ReplayTrap(f"uninitialized table element {i}")
            target = self.ast.functions[slot]
            if (
                tuple(target.params) != tuple(ins.params)
                or tuple(target.results) != tuple(ins.results)
            ):
                raise ReplayTrap("indirect call type mismatch")
            self._call(target, frame)
        elif isinstance(ins, Unreachable):
            raise ReplayTrap("unreachable executed")
        else:
            raise ReplayTrap(f"unsupported instruction {type(ins).__name__}")
        return None

    def _call(self, target: FuncDef, frame: _Frame) -> None:
        n = len(target.params)
        if len(frame.stack) < n:
            raise ReplayTrap(f"stack underflow calling {target.name}")
        args = frame.stack[len(frame.stack) - n :] if n else []
        del frame.stack[len(frame.stack) - n :]
        frame.stack.extend(self.invoke(target, args))


def run_function(
    ast: ModuleAst,
    func: FuncDef | str,
    args: list[int],
    mem: bytearray | bytes | None = None,
    fuel: int = DEFAULT_FUEL,
    watch_instr: Instr | None = None,
) -> RunResult:
    """Run one function on concrete arguments in a fresh module instance."""
    machine = Machine(ast, mem=mem, fuel=fuel, watch_instr=watch_instr)
    if isinstance(func, str):
        results = machine.invoke_by_name(func, args)
    else:
        results = machine.invoke(func, args)
    return RunResult(results=results, machine=machine)
