"""Automatic relational loop invariants: havoc / assume / analyze / assert.

For a loop at some location the analysis first executes one body iteration
symbolically (checks disabled, every branch arm walked) to learn the set V
of modified slots: locals, globals, and stored memory bytes. For each slot
it then asks whether the two projections can differ at the back edge; slots
where that query is unsatisfiable form the public subset V_p, and a slot
whose value is the same literal constant on every back-edge path also gets
the equality x = c. The invariant is the conjunction of pairwise equalities
over V_p plus those constant bindings.

The loop itself is then summarized instead of unrolled: all of V is
replaced by fresh symbols (a shared symbol for public slots, a distinct
pair otherwise), the constant equalities are assumed on the path condition,
and the body runs once more with the constant-time checks live. Back edges
do not re-enter the body; they assert the invariant still holds and end the
path. Exit edges continue after the loop. A failed assertion means the
candidate was not inductive; the loop is reported incomplete rather than
retried with a weaker candidate.

Memory granularity: stores at concrete addresses havoc exactly the written
bytes, and those bytes take part in the public inference. A store through a
symbolic address gives up on granularity and swaps in a whole fresh memory
image whose byte classification follows the declared policy ranges.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from relwasm import symexpr as se
from relwasm.engine import Engine, SymState, Verdict, _LabelMark, _shared_const
from relwasm.solver import build_query
from relwasm.symmemory import BaseImage, SymMemory, mem_load, mem_store
from relwasm.wast import Loop, SrcLoc

# one-iteration walk is exponential in the branches of a single body; this
# caps the walk, falling back to havoc-everything when exceeded
PREPASS_STEP_BUDGET = 20_000


class InvariantAssertFailure(Exception):
    """The candidate invariant did not survive the loop body."""


class ModificationRecorder:
    """Collects the slots a loop body may write. The engine calls the three
    hooks from local.set/tee, global.set, and store execution."""

    def __init__(self):
        self.locals: set[int] = set()
        self.globals: set[int] = set()
        self.mem_addrs: set[int] = set()
        self.mem_havoc_all = False
        self.exhausted = False

    def local_set(self, index: int) -> None:
        self.locals.add(index)

    def global_set(self, index: int) -> None:
        self.globals.add(index)

    def store(self, index, width: int) -> None:
        c = _shared_const(index)
        if c is None:
            self.mem_havoc_all = True
        else:
            self.mem_addrs.update(range(c, c + width))


@dataclass
class LoopInvariant:
    loc: SrcLoc
    func: str
    modified: list[str]
    public: list[str]  # V_p, slot names from `modified`
    const_bindings: dict[str, int] = field(default_factory=dict)
    mem_havoc_all: bool = False
    assert_failed: str = ""  # slot name of the first failed assertion

    def __post_init__(self):
        mod = set(self.modified)
        pub = set(self.public)
        if not pub <= mod:
            raise ValueError("public subset must be within modified set")
        if not set(self.const_bindings) <= pub:
            raise ValueError("constant bindings only apply to public slots")

    def formula(self) -> str:
        parts = [f"{x}|l = {x}|r" for x in self.public]
        parts += [f"{x} = {c}" for x, c in sorted(self.const_bindings.items())]
        return " and ".join(parts) if parts else "true"

    def to_dict(self) -> dict:
        return {
            "line": self.loc.line,
            "col": self.loc.col,
            "func": self.func,
            "modified": list(self.modified),
            "public": list(self.public),
            "const_bindings": dict(self.const_bindings),
            "mem_havoc_all": self.mem_havoc_all,
            "formula": self.formula(),
            "assert_failed": self.assert_failed,
        }


# ---- slot access ----------------------------------------------------------------

# a slot is ("lv", i) | ("gv", i) | ("mem", addr)


def _slot_name(slot: tuple) -> str:
    kind, n = slot
    return f"mem[{n}]" if kind == "mem" else f"{kind}{n}"


def _slot_value(engine: Engine, s: SymState, slot: tuple):
    kind, n = slot
    if kind == "lv":
        return s.lv[n]
    if kind == "gv":
        return s.gv[n]
    return mem_load(s.mem, engine.ctx.rel_const(n, 32), 1, False, 8)


def _slot_width(engine: Engine, s: SymState, slot: tuple) -> int:
    return 8 if slot[0] == "mem" else _slot_value(engine, s, slot).width


# ---- one-iteration pre-pass -----------------------------------------------------


def _prepass_inner_loop(engine: Engine, ins: Loop, s: SymState) -> list:
    # nested loops run as straight-line blocks here: their back edge breaks
    # out, giving exactly one iteration of every loop level
    s.es.append(_LabelMark(0, len(s.st), None))
    s.es.extend(reversed(ins.body))
    return [s]


def collect_modified(engine: Engine, loop: Loop, s: SymState
                     ) -> tuple[ModificationRecorder, list[SymState]]:
    """Walk one body iteration from s, recording modified slots and the
    relational state at every back edge. Checks and feasibility pruning are
    off: V must cover every arm, feasible or not."""
    rec = ModificationRecorder()
    backs: list[SymState] = []

    def capture(state: SymState, mark: _LabelMark) -> list:
        backs.append(state)
        return []

    seed = s.fork()
    base = len(seed.es)
    seed.es.append(_LabelMark(len(loop.results), len(seed.st), loop, capture))
    seed.es.extend(reversed(loop.body))

    saved = (engine.recorder, engine.loop_analyzer,
             list(engine.incomplete_reasons), len(engine.verdicts))
    engine.recorder = rec
    engine.loop_analyzer = _prepass_inner_loop
    engine.checks_enabled = False
    budget = PREPASS_STEP_BUDGET
    try:
        work = [seed]
        while work:
            cur = work.pop()
            if not cur.es or len(cur.es) <= base:
                continue  # exited past the loop: pre-pass goes no further
            budget -= 1
            if budget < 0:
                rec.exhausted = True
                break
            for item in engine.step(cur):
                if isinstance(item, SymState):
                    work.append(item)
    finally:
        engine.recorder, engine.loop_analyzer = saved[0], saved[1]
        engine.incomplete_reasons = saved[2]
        del engine.verdicts[saved[3]:]
        engine.checks_enabled = True
    return rec, backs


# ---- public / constant inference --------------------------------------------------


def infer_public(engine: Engine, slots: list[tuple], backs: list[SymState]
                 ) -> tuple[list[tuple], dict[tuple, int]]:
    """V_p = slots whose projections provably agree at every back edge;
    a slot equal to one literal constant on all of them is also bound."""
    public: list[tuple] = []
    consts: dict[tuple, int] = {}
    for slot in slots:
        ok = True
        seen_consts: set[int | None] = set()
        for b in backs:
            v = _slot_value(engine, b, slot)
            seen_consts.add(_shared_const(v))
            engine.fs_count += 1
            if v.is_shared:
                continue  # x|l != x|r folds to false
            q = build_query("PolicyProbe", b.pc, ("distinct", v),
                            note=f"is {_slot_name(slot)} public")
            engine.ss_count += 1
            if engine.host.dispatch(q).status != "unsat":
                ok = False  # satisfiable or unknown: treat as secret
                break
        if not ok or not backs:
            continue
        public.append(slot)
        if len(seen_consts) == 1:
            c = next(iter(seen_consts))
            if c is not None:
                consts[slot] = c
    return public, consts


# ---- havoc + assume --------------------------------------------------------------


def _havoc(engine: Engine, s: SymState, slots: list[tuple],
           public: list[tuple], consts: dict[tuple, int],
           mem_havoc_all: bool, tag: str) -> None:
    ctx = engine.ctx
    if mem_havoc_all:
        image = BaseImage(ctx, s.mem.image.pages, s.mem.image.policies,
                          tag=f"_{tag}")
        s.mem = SymMemory(ctx, image)
    pub = set(public)
    for slot in slots:
        w = _slot_width(engine, s, slot)
        name = _slot_name(slot).replace("[", "").replace("]", "")
        if slot in pub:
            v = ctx.public_sym(f"l_{tag}_{name}", w)
        else:
            v = ctx.secret_pair(f"h_{tag}_{name}", w)
        kind, n = slot
        if kind == "lv":
            s.lv[n] = v
        elif kind == "gv":
            s.gv[n] = v
        else:
            s.mem = mem_store(s.mem, ctx.rel_const(n, 32), v, 1)
        c = consts.get(slot)
        if c is not None:
            # the paper's x = c case: keep x symbolic, assume the equality
            s.pc.append(("truthy", ctx.rel_cmp("eq", v, ctx.rel_const(c, w))))


# ---- assert at back edges -----------------------------------------------------------


def _assert_invariant(engine: Engine, inv: LoopInvariant, loop: Loop,
                      s: SymState, public: list[tuple],
                      consts: dict[tuple, int]) -> None:
    for slot in public:
        v = _slot_value(engine, s, slot)
        name = _slot_name(slot)
        engine.fs_count += 1
        failed = ""
        if not v.is_shared:
            q = build_query("InvariantAssert", s.pc, ("distinct", v),
                            note=f"{name} stays public")
            engine.ss_count += 1
            st = engine.host.dispatch(q).status
            if st != "unsat":
                failed = f"{name} may differ across the pair ({st})"
        if not failed and slot in consts:
            c = consts[slot]
            cv = _shared_const(v)
            engine.fs_count += 1
            if cv is not None:
                if cv != c:
                    failed = f"{name} = {cv}, bound to {c}"
            else:
                q = build_query("InvariantAssert", s.pc,
                                ("neq_const_either", v, c),
                                note=f"{name} stays {c}")
                engine.ss_count += 1
                st = engine.host.dispatch(q).status
                if st != "unsat":
                    failed = f"{name} may leave constant {c} ({st})"
        if failed:
            if not inv.assert_failed:
                inv.assert_failed = failed
            engine._record(Verdict(
                kind="Unknown", check_kind="Invariant", site=loop.loc,
                instr=loop, func=s.func_name,
                note=f"invariant assertion failed: {failed}"))
            engine._mark_incomplete("invariant_assert")
            raise InvariantAssertFailure(failed)


# ---- the loop analyzer --------------------------------------------------------------


def analyze_loop(engine: Engine, loop: Loop, s: SymState) -> list:
    """Summarize one loop entry: infer the invariant from a single
    iteration, havoc the modified slots, assume, run the body with checks
    live, and assert at the back edges. Returns the body-entry state; exit
    edges flow into the surrounding continuation as usual."""
    rec, backs = collect_modified(engine, loop, s)
    if rec.exhausted:
        engine._mark_incomplete("invariant_prepass_budget")
        rec.locals = set(range(len(s.lv)))
        rec.globals = set(range(len(s.gv)))
        rec.mem_havoc_all = True
        backs = []
    slots: list[tuple] = sorted(
        [("lv", i) for i in rec.locals] + [("gv", i) for i in rec.globals]
        + [("mem", a) for a in rec.mem_addrs])
    public, consts = infer_public(engine, slots, backs)

    tag = f"hv{len(engine.invariant_dumps) + 1}"
    inv = LoopInvariant(
        loc=loop.loc, func=s.func_name,
        modified=[_slot_name(x) for x in slots]
                 + (["memory"] if rec.mem_havoc_all else []),
        public=[_slot_name(x) for x in public],
        const_bindings={_slot_name(x): c for x, c in consts.items()},
        mem_havoc_all=rec.mem_havoc_all,
    )
    engine.invariant_dumps.append(inv)
    _havoc(engine, s, slots, public, consts, rec.mem_havoc_all, tag)

    def on_back_edge(state: SymState, mark: _LabelMark) -> list:
        if not engine.checks_enabled:
            return []  # an inner pre-pass walked across our back edge
        try:
            _assert_invariant(engine, inv, loop, state, public, consts)
        except InvariantAssertFailure:
            pass  # recorded on the engine; the path still ends here
        return []  # the summary stands in for all further iterations

    s.es.append(_LabelMark(len(loop.results), len(s.st), loop, on_back_edge))
    s.es.extend(reversed(loop.body))
    return [s]
