"""Relational symbolic execution with constant-time checks.

The engine runs two executions in lockstep over one expression DAG: values
that provably agree across the pair stay Shared, values derived from secrets
carry distinct left/right projections. Every memory index and every branch
condition is checked for possible divergence between the projections; a
satisfiable divergence query is a constant-time violation and the solver
model becomes the counterexample.

Paths are explored depth-first. A flagged check does not kill its path: the
two projections are forced to agree afterwards, so one run can report several
independent sites. Loops unroll up to a budget unless the invariant analyzer
is plugged in (see invariants.py).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

from . import symexpr as se
from .frontend import PolicyError, resolve_entry
from .solver import SolverHost, build_query
from .symexpr import ExprContext, RelExpr
from .symmemory import SymMemory, mem_load, mem_store
from .wast import (
    Block,
    Br,
    BrIf,
    BrTable,
    Call,
    CallIndirect,
    ConcreteArg,
    ConstInstr,
    Drop,
    EntrySpec,
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
    SrcLoc,
    StoreInstr,
    SymbolicArg,
    Unreachable,
)

CHECK_KINDS = ("MemoryIndex", "Branch", "BrTable", "CallIndirect", "Select")


class UnsupportedInstruction(Exception):
    pass


@dataclass
class EngineConfig:
    unroll_limit: int = 512
    path_limit: int = 200_000
    time_budget: float = 5400.0
    select_unsafe: bool = False
    invariants_enabled: bool = False
    portfolio_threshold: int = 1500
    feasibility_check_policy: str = "at_branch"  # or "never"

    def __post_init__(self):
        if self.unroll_limit < 1:
            raise ValueError("unroll_limit must be >= 1")
        if self.portfolio_threshold < 1:
            raise ValueError("portfolio_threshold must be >= 1")


@dataclass
class Verdict:
    kind: str  # Safe | Violation | Unknown | Trap | PathInfeasible
    check_kind: str | None = None
    site: SrcLoc | None = None
    instr: Instr | None = None
    func: str = ""
    model: dict[str, int] | None = None
    arrays: dict | None = None
    note: str = ""

    def __post_init__(self):
        if self.kind == "Violation" and self.model is None:
            raise ValueError("Violation verdicts must carry a model")
        if self.kind in ("Safe", "Unknown") and self.model is not None:
            raise ValueError(f"{self.kind} verdicts never carry a model")

    def site_key(self) -> tuple:
        loc = self.site or SrcLoc(0, 0)
        return (self.func, loc.line, loc.col, self.check_kind)


# ---- execution stack entries -------------------------------------------------


class _LabelMark:
    """Continuation of a block/loop/if; br depth k unwinds k+1 of these.

    A loop mark may carry a hook that intercepts its back edges; the loop
    analysis uses this to capture one-iteration states and to assert the
    generated invariant instead of re-entering the body.
    """

    __slots__ = ("arity", "st_height", "loop", "hook")

    def __init__(self, arity: int, st_height: int, loop: Loop | None,
                 hook=None):
        self.arity = arity
        self.st_height = st_height
        self.loop = loop
        self.hook = hook


class _RetMark:
    """Continuation of an inlined call; restores the caller frame."""

    __slots__ = ("saved_lv", "arity", "st_height", "saved_activation",
                 "fid", "saved_func_name")

    def __init__(self, saved_lv, arity, st_height, saved_activation, fid,
                 saved_func_name):
        self.saved_lv = saved_lv
        self.arity = arity
        self.st_height = st_height
        self.saved_activation = saved_activation
        self.fid = fid
        self.saved_func_name = saved_func_name


class PathStats:
    __slots__ = ("back_edges", "call_depths", "activation", "next_activation")

    def __init__(self):
        self.back_edges: dict[tuple, int] = {}
        self.call_depths: dict[int, int] = {}
        self.activation = 0
        self.next_activation = 1

    def copy(self) -> "PathStats":
        c = PathStats.__new__(PathStats)
        c.back_edges = dict(self.back_edges)
        c.call_depths = dict(self.call_depths)
        c.activation = self.activation
        c.next_activation = self.next_activation
        return c


class SymState:
    """One relational path: pending work es, value stack st, memory, locals,
    globals, and the path condition as a conjunction list."""

    __slots__ = ("es", "st", "mem", "lv", "gv", "pc", "stats", "trace",
                 "func_name")

    def __init__(self, es, st, mem, lv, gv, pc, stats, trace, func_name):
        self.es = es
        self.st = st
        self.mem = mem
        self.lv = lv
        self.gv = gv
        self.pc = pc
        self.stats = stats
        self.trace = trace
        self.func_name = func_name

    def fork(self) -> "SymState":
        return SymState(
            list(self.es), list(self.st), self.mem, list(self.lv),
            list(self.gv), list(self.pc), self.stats.copy(),
            list(self.trace), self.func_name,
        )


def _wid(ty: str) -> int:
    return 64 if ty == "i64" else 32


def _shared_const(e: RelExpr) -> int | None:
    if e.is_shared and isinstance(e.left, se.Const):
        return e.left.value
    return None


# ---- the engine ---------------------------------------------------------------


class Engine:
    def __init__(self, ast: ModuleAst, cfg: EngineConfig, host: SolverHost,
                 ctx: ExprContext | None = None):
        self.ast = ast
        self.cfg = cfg
        self.host = host
        self.ctx = ctx or ExprContext()
        self.fs_count = 0
        self.ss_count = 0
        self.verdicts: list[Verdict] = []
        self.incomplete_reasons: list[str] = []
        self.paths_completed = 0
        self.loc_seen: set[tuple[str, int]] = set()
        self.recorder = None  # invariants pre-pass hook
        self.checks_enabled = True  # cleared during the inference pre-pass
        self.loop_analyzer = None
        if cfg.invariants_enabled:
            from .invariants import analyze_loop

            self.loop_analyzer = analyze_loop
        self.invariant_dumps: list = []  # LoopInvariant debug records

    # ---- state construction ----------------------------------------------

    def init_state(self, fn: FuncDef, spec: EntrySpec) -> SymState:
        ctx = self.ctx
        seen: set[str] = set()
        for a in spec.args:
            if isinstance(a, SymbolicArg):
                if a.label in seen:
                    raise PolicyError(f"entry symbol {a.label!r} used twice")
                seen.add(a.label)
        lv: list[RelExpr] = []
        for a, ty in zip(spec.args, fn.params):
            w = _wid(ty)
            if isinstance(a, ConcreteArg):
                lv.append(ctx.rel_const(a.value, w))
            elif a.classification == "secret":
                lv.append(ctx.secret_pair(a.label, w))
            else:
                lv.append(ctx.public_sym(a.label, w))
        for ty in fn.locals:
            lv.append(ctx.rel_const(0, _wid(ty)))
        gv = [ctx.rel_const(g.init, g.width) for g in self.ast.globals]
        pages = self.ast.memory_decl[0] if self.ast.memory_decl else 0
        mem = SymMemory.initial(ctx, pages, self.ast.policies)
        fid = self.ast.functions.index(fn)
        stats = PathStats()
        stats.call_depths[fid] = 1
        es: list = [_RetMark(None, len(fn.results), 0, 0, fid, fn.name)]
        es.extend(reversed(fn.body))
        return SymState(es, [], mem, lv, gv, [], stats, [], fn.name)

    # ---- counters and verdict recording -----------------------------------

    def _mark_incomplete(self, reason: str) -> None:
        if reason not in self.incomplete_reasons:
            self.incomplete_reasons.append(reason)

    def _record(self, v: Verdict) -> Verdict:
        self.verdicts.append(v)
        return v

    def _safe(self, instr: Instr, s: SymState, check_kind: str,
              note: str = "") -> Verdict:
        return self._record(Verdict(
            kind="Safe", check_kind=check_kind, site=instr.loc, instr=instr,
            func=s.func_name, note=note))

    def _dispatch_check(self, q, s: SymState, instr: Instr,
                        check_kind: str) -> Verdict:
        self.ss_count += 1
        ans = self.host.dispatch(q)
        if ans.status == "unsat":
            return self._safe(instr, s, check_kind, note="proved")
        if ans.status == "sat":
            model = {q.name_map.get(k, k): v for k, v in (ans.model or {}).items()}
            return self._record(Verdict(
                kind="Violation", check_kind=check_kind, site=instr.loc,
                instr=instr, func=s.func_name, model=model,
                arrays=ans.arrays or {}, note=q.note))
        self._mark_incomplete(f"solver_{ans.status}")
        return self._record(Verdict(
            kind="Unknown", check_kind=check_kind, site=instr.loc,
            instr=instr, func=s.func_name, note=ans.status))

    # ---- constant-time checks ----------------------------------------------

    def check_memory_index(self, e: RelExpr, s: SymState,
                           instr: Instr) -> Verdict | None:
        if not self.checks_enabled:
            return None
        self.fs_count += 1
        if e.is_shared:
            return self._safe(instr, s, "MemoryIndex")
        diff = self.ctx.binop("sub", e.left, e.right)
        if isinstance(diff, se.Const) and diff.value == 0:
            # projections provably equal; no solver needed
            return self._safe(instr, s, "MemoryIndex", note="folded")
        q = build_query("MemIndexDivergence", s.pc, ("distinct", e),
                        note=f"{s.func_name} load/store index at {instr.loc}")
        return self._dispatch_check(q, s, instr, "MemoryIndex")

    def check_branch(self, e: RelExpr, s: SymState, instr: Instr,
                     check_kind: str = "Branch") -> Verdict | None:
        if not self.checks_enabled:
            return None
        self.fs_count += 1
        if e.is_shared:
            return self._safe(instr, s, check_kind)
        # divergence formula: truthy(left) and not truthy(right)
        if isinstance(e.left, se.Const) and e.left.value == 0:
            return self._safe(instr, s, check_kind, note="folded")
        if isinstance(e.right, se.Const) and e.right.value != 0:
            return self._safe(instr, s, check_kind, note="folded")
        q = build_query("BranchDivergence", s.pc, ("branch_div", e),
                        note=f"{s.func_name} condition at {instr.loc}")
        return self._dispatch_check(q, s, instr, check_kind)

    def check_jump_index(self, e: RelExpr, s: SymState, instr: Instr,
                         check_kind: str) -> Verdict | None:
        """br_table arm / call_indirect slot divergence: left != right."""
        if not self.checks_enabled:
            return None
        self.fs_count += 1
        if e.is_shared:
            return self._safe(instr, s, check_kind)
        diff = self.ctx.binop("sub", e.left, e.right)
        if isinstance(diff, se.Const) and diff.value == 0:
            return self._safe(instr, s, check_kind, note="folded")
        q = build_query("BranchDivergence", s.pc, ("distinct", e),
                        note=f"{s.func_name} jump index at {instr.loc}")
        return self._dispatch_check(q, s, instr, check_kind)

    def _path_feasible(self, st: SymState) -> bool:
        """False only when the solver proves the path condition unsat.

        An unknown keeps the path: a violation query re-asserts the full pc,
        so an infeasible survivor can never produce a satisfiable violation.
        """
        if not self.checks_enabled:
            return True  # the pre-pass walks every arm unconditionally
        if self.cfg.feasibility_check_policy != "at_branch":
            return True
        self.fs_count += 1
        q = build_query("Feasibility", st.pc, ("none",))
        self.ss_count += 1
        return self.host.dispatch(q).status != "unsat"

    def _fork_on(self, s: SymState, cond: RelExpr, instr: Instr
                 ) -> list[tuple[SymState | None, bool]]:
        """Split s into (taken, not-taken) under a checked-equal condition.

        Returns [(taken_state_or_None, True), (nottaken_or_None, False)];
        None marks a side pruned structurally or by the solver.
        """
        ctx = self.ctx
        c = _shared_const(cond)
        if not self.checks_enabled:
            # modification pre-pass: walk both arms even for a concretely
            # decided condition (an arm dead in iteration one may run later),
            # recording only symbolic conditions on the pc
            taken, nott = s.fork(), s
            if c is None:
                taken.pc.append(("truthy", cond))
                nott.pc.append(("truthy", ctx.rel_cmp(
                    "eq", cond, ctx.rel_const(0, cond.width))))
            return [(taken, True), (nott, False)]
        if c is not None:
            if c != 0:
                return [(s, True), (None, False)]
            return [(None, True), (s, False)]
        taken = s.fork()
        taken.pc.append(("truthy", cond))
        nott = s
        eqz = ctx.rel_cmp("eq", cond, ctx.rel_const(0, cond.width))
        nott.pc.append(("truthy", eqz))
        out: list[tuple[SymState | None, bool]] = []
        for side, flag in ((taken, True), (nott, False)):
            if self._path_feasible(side):
                out.append((side, flag))
            else:
                self._record(Verdict(
                    kind="PathInfeasible", site=instr.loc, instr=instr,
                    func=s.func_name))
                out.append((None, flag))
        return out

    # ---- control transfer --------------------------------------------------

    def _do_branch(self, s: SymState, depth: int) -> list:
        remaining = depth
        while s.es:
            item = s.es.pop()
            if isinstance(item, _LabelMark):
                if remaining > 0:
                    remaining -= 1
                    continue
                if item.loop is not None:
                    if item.hook is not None:
                        return item.hook(s, item)
                    key = (s.stats.activation, id(item.loop))
                    n = s.stats.back_edges.get(key, 0) + 1
                    s.stats.back_edges[key] = n
                    if n > self.cfg.unroll_limit:
                        self._mark_incomplete("unroll_limit")
                        return []
                    del s.st[item.st_height:]
                    s.es.append(item)
                    s.es.extend(reversed(item.loop.body))
                    return [s]
                vals = s.st[len(s.st) - item.arity:] if item.arity else []
                del s.st[item.st_height:]
                s.st.extend(vals)
                return [s]
            if isinstance(item, _RetMark):
                raise UnsupportedInstruction("branch escapes function body")
        raise UnsupportedInstruction("branch without enclosing label")

    def _do_return(self, s: SymState) -> list:
        while s.es:
            item = s.es.pop()
            if isinstance(item, _RetMark):
                return self._apply_ret(s, item)
        raise UnsupportedInstruction("return without frame")

    def _apply_ret(self, s: SymState, mark: _RetMark) -> list:
        vals = s.st[len(s.st) - mark.arity:] if mark.arity else []
        del s.st[mark.st_height:]
        s.st.extend(vals)
        s.stats.call_depths[mark.fid] -= 1
        if mark.saved_lv is None:
            s.es.clear()  # entry frame: the path is complete
            return [s]
        s.lv = list(mark.saved_lv)
        s.stats.activation = mark.saved_activation
        s.func_name = mark.saved_func_name
        return [s]

    def _inline_call(self, s: SymState, fid: int) -> list:
        target = self.ast.functions[fid]
        depth = s.stats.call_depths.get(fid, 0) + 1
        if depth > self.cfg.unroll_limit:
            self._mark_incomplete("recursion_limit")
            return []
        s.stats.call_depths[fid] = depth
        n = len(target.params)
        args = s.st[len(s.st) - n:] if n else []
        del s.st[len(s.st) - n:]
        s.es.append(_RetMark(s.lv, len(target.results), len(s.st),
                             s.stats.activation, fid, s.func_name))
        lv = list(args)
        for ty in target.locals:
            lv.append(self.ctx.rel_const(0, _wid(ty)))
        s.lv = lv
        s.func_name = target.name
        s.stats.activation = s.stats.next_activation
        s.stats.next_activation += 1
        s.es.extend(reversed(target.body))
        return [s]

    # ---- one small step -----------------------------------------------------

    def step(self, s: SymState) -> list:
        """Execute one es entry; returns successor states (and, for path
        ends, the terminal Verdict) in DFS order."""
        ctx = self.ctx
        st = s.st
        item = s.es.pop()

        if isinstance(item, _LabelMark):
            return [s]  # fell through the end of a block/loop body
        if isinstance(item, _RetMark):
            return self._apply_ret(s, item)

        ins: Instr = item
        s.trace.append(ins.loc)
        self.loc_seen.add((s.func_name, ins.loc.line))

        if isinstance(ins, ConstInstr):
            st.append(ctx.rel_const(ins.value, ins.width))
        elif isinstance(ins, LocalGet):
            st.append(s.lv[ins.index])
        elif isinstance(ins, LocalSet):
            s.lv[ins.index] = st.pop()
            if self.recorder is not None:
                self.recorder.local_set(ins.index)
        elif isinstance(ins, LocalTee):
            s.lv[ins.index] = st[-1]
            if self.recorder is not None:
                self.recorder.local_set(ins.index)
        elif isinstance(ins, GlobalGet):
            st.append(s.gv[ins.index])
        elif isinstance(ins, GlobalSet):
            s.gv[ins.index] = st.pop()
            if self.recorder is not None:
                self.recorder.global_set(ins.index)
        elif isinstance(ins, NumInstr):
            return self._exec_num(s, ins)
        elif isinstance(ins, EqzInstr):
            e = st.pop()
            st.append(ctx.rel_cmp("eq", e, ctx.rel_const(0, ins.width)))
        elif isinstance(ins, ExtendInstr):
            v = st.pop()
            if ins.kind == "extend_u":
                st.append(ctx.rel_zext(v, 64))
            elif ins.kind == "extend_s":
                st.append(ctx.rel_sext(v, 64))
            else:
                st.append(ctx.rel_extract(v, 31, 0))
        elif isinstance(ins, LoadInstr):
            idx = st.pop()
            e = idx if ins.offset == 0 else ctx.rel_binop(
                "add", idx, ctx.rel_const(ins.offset, 32))
            self.check_memory_index(e, s, ins)
            c = _shared_const(e)
            if c is not None and c + ins.bytes_ > s.mem.size:
                return [self._record(Verdict(
                    kind="Trap", site=ins.loc, instr=ins, func=s.func_name,
                    note=f"out of bounds load at {c}"))]
            st.append(mem_load(s.mem, e, ins.bytes_, ins.signed, ins.width))
        elif isinstance(ins, StoreInstr):
            val = st.pop()
            idx = st.pop()
            e = idx if ins.offset == 0 else ctx.rel_binop(
                "add", idx, ctx.rel_const(ins.offset, 32))
            self.check_memory_index(e, s, ins)
            if self.recorder is not None:
                self.recorder.store(e, ins.bytes_)
            c = _shared_const(e)
            if c is not None and c + ins.bytes_ > s.mem.size:
                return [self._record(Verdict(
                    kind="Trap", site=ins.loc, instr=ins, func=s.func_name,
                    note=f"out of bounds store at {c}"))]
            if ins.bytes_ * 8 < ins.width:
                val = ctx.rel_extract(val, ins.bytes_ * 8 - 1, 0)
            s.mem = mem_store(s.mem, e, val, ins.bytes_)
        elif isinstance(ins, Select):
            c = st.pop()
            v2 = st.pop()
            v1 = st.pop()
            if self.cfg.select_unsafe:
                self.check_branch(c, s, ins, check_kind="Select")
            st.append(ctx.rel_ite(c, v1, v2))
        elif isinstance(ins, Drop):
            st.pop()
        elif isinstance(ins, Nop):
            pass
        elif isinstance(ins, Block):
            s.es.append(_LabelMark(len(ins.results), len(st), None))
            s.es.extend(reversed(ins.body))
        elif isinstance(ins, Loop):
            if self.loop_analyzer is not None:
                return self.loop_analyzer(self, ins, s)
            s.es.append(_LabelMark(len(ins.results), len(st), ins))
            s.es.extend(reversed(ins.body))
        elif isinstance(ins, If):
            return self._exec_if(s, ins)
        elif isinstance(ins, Br):
            return self._do_branch(s, ins.depth)
        elif isinstance(ins, BrIf):
            return self._exec_br_if(s, ins)
        elif isinstance(ins, BrTable):
            return self._exec_br_table(s, ins)
        elif isinstance(ins, Return):
            return self._do_return(s)
        elif isinstance(ins, Call):
            return self._inline_call(s, ins.func_index)
        elif isinstance(ins, CallIndirect):
            return self._exec_call_indirect(s, ins)
        elif isinstance(ins, Unreachable):
            return [self._record(Verdict(
                kind="Trap", site=ins.loc, instr=ins, func=s.func_name,
                note="unreachable executed"))]
        else:
            raise UnsupportedInstruction(type(ins).__name__)
        return [s]

    # ---- numeric ops ---------------------------------------------------------

    def _exec_num(self, s: SymState, ins: NumInstr) -> list:
        ctx = self.ctx
        st = s.st
        op = ins.op
        if op in ("clz", "ctz", "popcnt"):
            st.append(ctx.rel_unop(op, st.pop()))
            return [s]
        if op in ("eq", "ne", "lt_u", "lt_s", "gt_u", "gt_s",
                  "le_u", "le_s", "ge_u", "ge_s"):
            b = st.pop()
            a = st.pop()
            st.append(ctx.rel_cmp(op, a, b))
            return [s]
        b = st.pop()
        a = st.pop()
        if op in ("div_u", "div_s", "rem_u", "rem_s"):
            w = ins.width
            bc = _shared_const(b)
            if bc == 0:
                return [self._record(Verdict(
                    kind="Trap", site=ins.loc, instr=ins, func=s.func_name,
                    note="integer divide by zero"))]
            if bc is None:
                # assume non-trapping: conjoin divisor != 0
                nz = ctx.rel_cmp("ne", b, ctx.rel_const(0, w))
                if _shared_const(nz) == 0:
                    return [self._record(Verdict(
                        kind="Trap", site=ins.loc, instr=ins,
                        func=s.func_name, note="integer divide by zero"))]
                if _shared_const(nz) != 1:
                    s.pc.append(("truthy", nz))
            if op == "div_s":
                # rule out INT_MIN / -1 overflow on symbolic operands
                mn = ctx.rel_const(1 << (w - 1), w)
                m1 = ctx.rel_const((1 << w) - 1, w)
                both = ctx.rel_binop(
                    "and", ctx.rel_cmp("eq", a, mn), ctx.rel_cmp("eq", b, m1))
                guard = ctx.rel_cmp("eq", both, ctx.rel_const(0, 32))
                g = _shared_const(guard)
                if g == 0:
                    return [self._record(Verdict(
                        kind="Trap", site=ins.loc, instr=ins,
                        func=s.func_name, note="integer overflow"))]
                if g != 1:
                    s.pc.append(("truthy", guard))
        st.append(ctx.rel_binop(op, a, b))
        return [s]

    # ---- forking instructions --------------------------------------------------

    def _exec_br_if(self, s: SymState, ins: BrIf) -> list:
        cond = s.st.pop()
        self.check_branch(cond, s, ins)
        out = []
        for side, taken in self._fork_on(s, cond, ins):
            if side is None:
                continue
            if taken:
                out.extend(self._do_branch(side, ins.depth))
            else:
                out.append(side)
        return out

    def _exec_if(self, s: SymState, ins: If) -> list:
        cond = s.st.pop()
        self.check_branch(cond, s, ins)
        out = []
        for side, taken in self._fork_on(s, cond, ins):
            if side is None:
                continue
            body = ins.then_body if taken else ins.else_body
            side.es.append(_LabelMark(len(ins.results), len(side.st), None))
            side.es.extend(reversed(body))
            out.append(side)
        return out

    def _exec_br_table(self, s: SymState, ins: BrTable) -> list:
        ctx = self.ctx
        idx = s.st.pop()
        n = len(ins.depths)
        if not self.checks_enabled:
            out = []  # pre-pass coverage: every arm, no conjuncts
            for k in range(n + 1):
                side = s.fork()
                out.extend(self._do_branch(
                    side, ins.depths[k] if k < n else ins.default))
            return out
        # divergence is over the clamped arm: indices >= n all take default
        bound = ctx.rel_const(n, 32)
        clamped = ctx.rel_ite(ctx.rel_cmp("lt_u", idx, bound), idx, bound)
        self.check_jump_index(clamped, s, ins, "BrTable")
        c = _shared_const(clamped)
        if c is not None:
            depth = ins.depths[c] if c < n else ins.default
            return self._do_branch(s, depth)
        out = []
        for k in range(n + 1):
            arm = ctx.rel_cmp("eq", clamped, ctx.rel_const(k, 32))
            if _shared_const(arm) == 0:
                continue
            side = s.fork()
            side.pc.append(("truthy", arm))
            if not self._path_feasible(side):
                self._record(Verdict(kind="PathInfeasible", site=ins.loc,
                                     instr=ins, func=s.func_name))
                continue
            depth = ins.depths[k] if k < n else ins.default
            out.extend(self._do_branch(side, depth))
        return out

    def _exec_call_indirect(self, s: SymState, ins: CallIndirect) -> list:
        ctx = self.ctx
        idx = s.st.pop()
        self.check_jump_index(idx, s, ins, "CallIndirect")
        table = self.ast.function_table
        ic = _shared_const(idx)
        arms: list[tuple[int | None, SymState | None]] = []
        if ic is not None:
            arms.append((ic if ic < len(table) else None, s))
        else:
            for slot in range(len(table)):
                cond = ctx.rel_cmp("eq", idx, ctx.rel_const(slot, 32))
                if _shared_const(cond) == 0:
                    continue
                side = s.fork()
                side.pc.append(("truthy", cond))
                if not self._path_feasible(side):
                    self._record(Verdict(kind="PathInfeasible", site=ins.loc,
                                         instr=ins, func=s.func_name))
                    continue
                arms.append((slot, side))
            oob = ctx.rel_cmp("ge_u", idx, ctx.rel_const(len(table), 32))
            if _shared_const(oob) != 0:
                side = s.fork()
                side.pc.append(("truthy", oob))
                if self._path_feasible(side):
                    arms.append((None, side))
        out = []
        for slot, side in arms:
            if side is None:
                continue
            fid = table[slot] if slot is not None and slot < len(table) else None
            if slot is None or fid is None:
                out.append(self._record(Verdict(
                    kind="Trap", site=ins.loc, instr=ins, func=side.func_name,
                    note="indirect call to invalid table slot")))
                continue
            target = self.ast.functions[fid]
            if (tuple(target.params) != tuple(ins.params)
                    or tuple(target.results) != tuple(ins.results)):
                out.append(self._record(Verdict(
                    kind="Trap", site=ins.loc, instr=ins, func=side.func_name,
                    note="indirect call type mismatch")))
                continue
            out.extend(self._inline_call(side, fid))
        return out

    # ---- exploration -------------------------------------------------------------

    def explore(self, entry_name: str | None = None):
        from .report import AnalysisReport

        t0 = time.monotonic()
        fn, spec = resolve_entry(self.ast, entry_name)
        self.entry_fn = fn
        self.entry_spec = spec
        self.entry_name = fn.name.lstrip("$")
        work = [self.init_state(fn, spec)]
        while work:
            if time.monotonic() - t0 > self.cfg.time_budget:
                self._mark_incomplete("time_budget")
                break
            s = work.pop()
            if not s.es:
                self.paths_completed += 1
                if self.paths_completed >= self.cfg.path_limit:
                    self._mark_incomplete("path_limit")
                    break
                continue
            for item in reversed(self.step(s)):
                if isinstance(item, SymState):
                    work.append(item)
        return AnalysisReport.from_engine(self, wall_time=time.monotonic() - t0)


def explore(ast: ModuleAst, cfg: EngineConfig, host: SolverHost,
            entry_name: str | None = None):
    """Run a full analysis of the module's entry function."""
    return Engine(ast, cfg, host).explore(entry_name)
