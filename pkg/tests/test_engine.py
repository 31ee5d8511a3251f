"""Relational engine tests: state initialization, stepping semantics, the
constant-time checks with counter accounting, forking/unrolling behavior,
and end-to-end exploration on small modules."""

from __future__ import annotations

import pytest

from relwasm import frontend as fe
from relwasm import symexpr as se
from relwasm import wast
from relwasm.engine import Engine, EngineConfig, Verdict
from relwasm.frontend import PolicyError


def make_engine(src: str, host, **cfg) -> Engine:
    return Engine(fe.parse_module(src), EngineConfig(**cfg), host)


def run(src: str, host, entry=None, **cfg):
    eng = make_engine(src, host, **cfg)
    rep = eng.explore(entry)
    return eng, rep


def kinds(eng: Engine) -> list[tuple[str, str | None]]:
    return [(v.kind, v.check_kind) for v in eng.verdicts]


# ---- init_state -------------------------------------------------------------


ENTRY_STYLE = """
(module (memory 1)
  (public (i32.const 2000) (i32.const 2039))
  (secret (i32.const 2048) (i32.const 2111))
  (func $f (param i32) (param i32) (param i32) (param i32) (result i32)
    (local $a i32) (local $b i64)
    (i32.const 0)))
(symb_exec "f" (i32.sconst 2000) (i32.sconst 2040)
              (i32.sconst l1) (i32.sconst h1))
"""


def test_init_state_bindings(solver_host):
    eng = make_engine(ENTRY_STYLE, solver_host)
    s = eng.init_state(*fe.resolve_entry(eng.ast))
    assert len(s.lv) == 6
    # concrete args become shared constants
    assert s.lv[0].is_shared and s.lv[0].left.value == 2000
    assert s.lv[1].is_shared and s.lv[1].left.value == 2040
    # public symbolic arg: one shared symbol
    assert s.lv[2].is_shared and s.lv[2].left.label == "l1"
    # secret arg: pair of distinct symbols
    assert not s.lv[3].is_shared
    assert s.lv[3].left.label == "h1_L" and s.lv[3].right.label == "h1_R"
    # non-param locals zero-initialized at their own widths
    assert s.lv[4].left.value == 0 and s.lv[4].width == 32
    assert s.lv[5].left.value == 0 and s.lv[5].width == 64
    assert s.pc == [] and s.st == []


def test_init_state_rejects_duplicate_labels(solver_host):
    src = """
    (module (memory 1) (func $f (param i32) (param i32) (i32.const 0) (drop)))
    (symb_exec "f" (i32.sconst h1) (i32.sconst h1))
    """
    eng = make_engine(src, solver_host)
    with pytest.raises(PolicyError, match="used twice"):
        eng.init_state(*fe.resolve_entry(eng.ast))


# ---- stepping and the symbolic stack -----------------------------------------


def test_stack_holds_normalized_secret_index(solver_host):
    src = """
    (module (memory 1) (secret (i32.const 2048) (i32.const 2111))
      (func $f (result i32)
        (i32.load8_u (i32.add (i32.const 2112)
          (i32.sub (i32.const 1) (i32.load8_u (i32.const 2111)))))))
    (symb_exec "f")
    """
    eng = make_engine(src, solver_host)
    s = eng.init_state(*fe.resolve_entry(eng.ast))
    # run up to (not including) the outer load: the index sits on the stack
    while not (isinstance(s.es[-1], wast.LoadInstr) and len(s.st) == 1):
        (s,) = eng.step(s)
    e = s.st[-1]
    assert not e.is_shared
    # constant folding turns 2112 + (1 - h) into 2113 - h on each side
    assert isinstance(e.left, se.BinOp) and e.left.op == "sub"
    assert isinstance(e.left.a, se.Const) and e.left.a.value == 2113
    assert isinstance(e.left.b, se.ZExt)
    assert e.left.b.a.label == "h_mem2111_L"
    assert e.right.b.a.label == "h_mem2111_R"


def test_concrete_br_if_prunes_structurally(solver_host):
    src = """
    (module
      (func $f (result i32) (local $x i32)
        (block $b
          (br_if $b (i32.const 0))
          (local.set $x (i32.const 7)))
        (local.get $x)))
    (symb_exec "f")
    """
    eng, rep = run(src, solver_host)
    # concretely-false condition: single successor, zero solver traffic
    assert eng.paths_completed == 1
    assert eng.ss_count == 0
    assert ("Safe", "Branch") in kinds(eng)
    src_taken = src.replace("(i32.const 0)", "(i32.const 1)")
    eng2, _ = run(src_taken, solver_host)
    assert eng2.paths_completed == 1 and eng2.ss_count == 0


def test_division_by_concrete_zero_traps(solver_host):
    src = """
    (module
      (func $f (result i32) (i32.div_u (i32.const 5) (i32.const 0))))
    (symb_exec "f")
    """
    eng, rep = run(src, solver_host)
    assert [v.kind for v in eng.verdicts] == ["Trap"]
    assert eng.paths_completed == 0


def test_symbolic_divisor_assumed_nonzero(solver_host):
    src = """
    (module
      (func $f (param i32) (result i32)
        (i32.div_u (i32.const 64) (local.get 0))))
    (symb_exec "f" (i32.sconst l1))
    """
    eng = make_engine(src, solver_host)
    s = eng.init_state(*fe.resolve_entry(eng.ast))
    while s.es:
        out = eng.step(s)
        states = [x for x in out if not isinstance(x, Verdict)]
        assert states, "path must continue under the nonzero assumption"
        (s,) = states
    assert len(s.pc) == 1 and s.pc[0][0] == "truthy"
    assert not any(v.kind == "Trap" for v in eng.verdicts)


# ---- the checks and counters ---------------------------------------------------


SECRET_LOAD = """
(module (memory 1) (secret (i32.const 2048) (i32.const 2111))
  (func $f (result i32)
    (i32.load8_u (i32.load8_u (i32.const 2100)))))
(symb_exec "f")
"""


def test_secret_index_violation_and_counters(solver_host):
    eng, rep = run(SECRET_LOAD, solver_host)
    vio = rep.violations
    assert len(vio) == 1
    assert vio[0].check_kind == "MemoryIndex"
    assert vio[0].model is not None
    left = vio[0].model.get("h_mem2100_L", 0)
    right = vio[0].model.get("h_mem2100_R", 0)
    assert left != right
    # two checks entered simplification; only the divergent one hit a solver
    assert eng.fs_count == 2
    assert eng.ss_count == 1


def test_shared_index_safe_without_solver(solver_host):
    src = """
    (module (memory 1)
      (func $f (param i32) (result i32) (i32.load8_u (local.get 0))))
    (symb_exec "f" (i32.sconst l1))
    """
    eng, rep = run(src, solver_host)
    assert not rep.violations
    assert eng.fs_count == 1 and eng.ss_count == 0


def test_secret_minus_secret_folds_to_safe(solver_host):
    # h - h collapses to 0 during construction: counts #FS, never #SS
    src = """
    (module (memory 1) (secret (i32.const 2048) (i32.const 2111))
      (func $f (result i32) (local $h i32)
        (local.set $h (i32.load8_u (i32.const 2050)))
        (block $b
          (br_if $b (i32.sub (local.get $h) (local.get $h))))
        (i32.const 0)))
    (symb_exec "f")
    """
    eng, rep = run(src, solver_host)
    assert not rep.violations
    branch_checks = [v for v in eng.verdicts if v.check_kind == "Branch"]
    assert len(branch_checks) == 1 and branch_checks[0].kind == "Safe"
    assert eng.fs_count == 2  # the load index check plus the branch check
    assert eng.ss_count == 0


def test_secret_branch_violation_model_diverges(solver_host):
    src = """
    (module (memory 1) (secret (i32.const 2048) (i32.const 2111))
      (func $f (result i32) (local $x i32)
        (if (i32.load8_u (i32.const 2048))
          (then (local.set $x (i32.const 1))))
        (local.get $x)))
    (symb_exec "f")
    """
    eng, rep = run(src, solver_host)
    vio = [v for v in rep.violations if v.check_kind == "Branch"]
    assert len(vio) == 1
    m = vio[0].model
    # divergence formula: left truthy, right falsy
    assert m["h_mem2048_L"] != 0 and m["h_mem2048_R"] == 0
    # violation does not kill the path: both arms still explored
    assert eng.paths_completed == 2


# ---- br_table / call_indirect / select -------------------------------------------


def test_br_table_secret_index_flagged_and_forked(solver_host):
    src = """
    (module (memory 1) (secret (i32.const 2048) (i32.const 2111))
      (func $f (result i32) (local $r i32)
        (block $b1
          (block $b0
            (br_table 0 1 (i32.load8_u (i32.const 2048))))
          (return (i32.const 10)))
        (i32.const 20)))
    (symb_exec "f")
    """
    eng, rep = run(src, solver_host)
    vio = [v for v in rep.violations if v.check_kind == "BrTable"]
    assert len(vio) == 1
    assert eng.paths_completed == 2  # both arms feasible


def test_br_table_concrete_index_single_path(solver_host):
    src = """
    (module
      (func $f (param i32) (result i32)
        (block $b1
          (block $b0
            (br_table 0 1 (i32.const 7)))
          (return (i32.const 10)))
        (i32.const 20)))
    (symb_exec "f" (i32.sconst 0))
    """
    eng, rep = run(src, solver_host)
    assert eng.paths_completed == 1
    assert eng.ss_count == 0  # clamped arm is concrete: default taken


def test_select_dataflow_vs_unsafe_mode(solver_host):
    src = """
    (module (memory 1) (secret (i32.const 2048) (i32.const 2111))
      (func $f (result i32)
        (select (i32.const 1) (i32.const 2)
                (i32.load8_u (i32.const 2048)))))
    (symb_exec "f")
    """
    eng, rep = run(src, solver_host)
    assert not rep.violations  # data-flow: no branch, just an ite value
    eng2, rep2 = run(src, solver_host, select_unsafe=True)
    vio = [v for v in rep2.violations if v.check_kind == "Select"]
    assert len(vio) == 1


def test_call_indirect_secret_slot_flagged(solver_host):
    src = """
    (module (memory 1) (secret (i32.const 2048) (i32.const 2111))
      (table 2 funcref)
      (elem (i32.const 0) func $a $b)
      (func $a (result i32) (i32.const 1))
      (func $b (result i32) (i32.const 2))
      (func $f (result i32)
        (call_indirect (result i32)
          (i32.load8_u (i32.const 2048)))))
    (symb_exec "f")
    """
    eng, rep = run(src, solver_host)
    vio = [v for v in rep.violations if v.check_kind == "CallIndirect"]
    assert len(vio) == 1
    # feasible slots fork; out-of-range indices trap
    assert eng.paths_completed == 2
    assert any(v.kind == "Trap" for v in eng.verdicts)


# ---- calls and loops ---------------------------------------------------------------


def test_call_inlining_isolates_locals(solver_host):
    src = """
    (module
      (func $helper (param i32) (result i32) (local $t i32)
        (local.set $t (i32.add (local.get 0) (i32.const 5)))
        (local.get $t))
      (func $f (param i32) (result i32) (local $t i32)
        (local.set $t (i32.const 100))
        (drop (call $helper (local.get 0)))
        (local.get $t)))
    (symb_exec "f" (i32.sconst 1))
    """
    eng = make_engine(src, solver_host)
    s = eng.init_state(*fe.resolve_entry(eng.ast))
    while s.es:
        (s,) = [x for x in eng.step(s) if not isinstance(x, Verdict)]
    assert len(s.st) == 1
    assert s.st[0].left.value == 100  # callee writes never leak into caller


def test_recursion_capped(solver_host):
    src = """
    (module (func $f (result i32) (call $f)))
    (symb_exec "f")
    """
    eng, rep = run(src, solver_host, unroll_limit=8)
    assert "recursion_limit" in eng.incomplete_reasons
    assert not rep.completion["complete"]


def test_unroll_limit_marks_incomplete(solver_host):
    src = """
    (module (func $f (loop $l (br $l))))
    (symb_exec "f")
    """
    eng, rep = run(src, solver_host, unroll_limit=3)
    assert eng.incomplete_reasons == ["unroll_limit"]
    assert rep.exit_code() == 2


def test_concrete_loop_completes(solver_host):
    src = """
    (module
      (func $f (result i32) (local $i i32) (local $s i32)
        (block $exit
          (loop $top
            (br_if $exit (i32.ge_u (local.get $i) (i32.const 5)))
            (local.set $s (i32.add (local.get $s) (local.get $i)))
            (local.set $i (i32.add (local.get $i) (i32.const 1)))
            (br $top)))
        (local.get $s)))
    (symb_exec "f")
    """
    eng = make_engine(src, solver_host)
    s = eng.init_state(*fe.resolve_entry(eng.ast))
    while s.es:
        (s,) = [x for x in eng.step(s) if not isinstance(x, Verdict)]
    assert s.st[0].left.value == 10  # 0+1+2+3+4, fully concrete
    assert eng.ss_count == 0


# ---- path accounting ------------------------------------------------------------


def test_two_public_branches_yield_four_paths(solver_host):
    src = """
    (module
      (func $f (param i32) (param i32) (result i32) (local $x i32)
        (if (i32.lt_u (local.get 0) (i32.const 10))
          (then (local.set $x (i32.const 1))))
        (if (i32.lt_u (local.get 1) (i32.const 20))
          (then (local.set $x (i32.add (local.get $x) (i32.const 2)))))
        (local.get $x)))
    (symb_exec "f" (i32.sconst l1) (i32.sconst l2))
    """
    eng, rep = run(src, solver_host)
    assert eng.paths_completed == 4
    assert not rep.violations
    assert rep.completion["complete"]


def test_contradictory_branches_prune_paths(solver_host):
    src = """
    (module
      (func $f (param i32) (result i32) (local $x i32)
        (if (i32.lt_u (local.get 0) (i32.const 5))
          (then (local.set $x (i32.const 1))))
        (if (i32.ge_u (local.get 0) (i32.const 5))
          (then (local.set $x (i32.const 2))))
        (local.get $x)))
    (symb_exec "f" (i32.sconst l1))
    """
    eng, rep = run(src, solver_host)
    assert eng.paths_completed == 2
    infeasible = [v for v in eng.verdicts if v.kind == "PathInfeasible"]
    assert len(infeasible) == 2


def test_determinism_across_runs(solver_host):
    src = """
    (module (memory 1) (secret (i32.const 2048) (i32.const 2111))
      (func $f (param i32) (result i32) (local $x i32)
        (if (i32.lt_u (local.get 0) (i32.const 3))
          (then (local.set $x (i32.load8_u (i32.load8_u (i32.const 2048))))))
        (local.get $x)))
    (symb_exec "f" (i32.sconst l1))
    """
    runs = []
    for _ in range(2):
        eng, rep = run(src, solver_host)
        runs.append((sorted(v.site_key() for v in eng.verdicts
                            if v.kind in ("Violation", "Safe")),
                     eng.fs_count, eng.ss_count, eng.paths_completed))
    assert runs[0] == runs[1]


def test_ss_never_exceeds_fs(solver_host):
    for src in (SECRET_LOAD, ENTRY_STYLE):
        eng, _ = run(src, solver_host)
        assert eng.ss_count <= eng.fs_count


# ---- verdict shape ---------------------------------------------------------------


def test_verdict_model_invariants():
    with pytest.raises(ValueError, match="must carry a model"):
        Verdict(kind="Violation")
    with pytest.raises(ValueError, match="never carry"):
        Verdict(kind="Safe", model={"h1_L": 1})
    v = Verdict(kind="Violation", model={"h1_L": 1}, func="$f")
    assert v.site_key()[0] == "$f"


def test_trap_on_unreachable_and_oob(solver_host):
    src = """
    (module (memory 1)
      (func $f (result i32) (i32.load (i32.const 65534))))
    (symb_exec "f")
    """
    eng, rep = run(src, solver_host)
    assert [v.kind for v in eng.verdicts if v.kind == "Trap"] == ["Trap"]
    src2 = '(module (func $f (unreachable))) (symb_exec "f")'
    eng2, _ = run(src2, solver_host)
    assert any(v.kind == "Trap" and "unreachable" in v.note
               for v in eng2.verdicts)
