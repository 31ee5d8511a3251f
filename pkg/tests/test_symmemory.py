"""Memory tests: frozen store/load examples, policy-driven initialization,
persistence across forks, and randomized equivalence against a flat
dual-array model."""

from __future__ import annotations

import random

import pytest

from relwasm import symexpr as se
from relwasm.symexpr import ExprContext, count_exprs, eval_expr
from relwasm.symmemory import SymMemory, mem_load, mem_store
from relwasm.wast import PolicyRange

SECRET = [PolicyRange("secret", 2048, 2111)]
PUBLIC_AND_SECRET = [
    PolicyRange("public", 2000, 2039),
    PolicyRange("secret", 2048, 2111),
]


@pytest.fixture()
def ctx() -> ExprContext:
    return ExprContext()


def fresh_mem(ctx: ExprContext, policies=()) -> SymMemory:
    return SymMemory.initial(ctx, pages=1, policies=list(policies))


# ---- frozen examples --------------------------------------------------------


def test_store32_appends_four_little_endian_records(ctx: ExprContext):
    m = fresh_mem(ctx)
    m2 = mem_store(m, ctx.rel_const(100, 32), ctx.rel_const(1, 32), 4)
    recs = []
    rec = m2.chain
    while rec is not None:
        recs.append(rec)
        rec = rec.prev
    recs.reverse()  # oldest first
    assert len(recs) == 4
    addrs = [r.index.left.value for r in recs]
    vals = [r.value.left.value for r in recs]
    assert addrs == [100, 101, 102, 103]
    assert vals == [0x01, 0x00, 0x00, 0x00]
    assert m2.generation == 4 and m.generation == 0


def test_store_then_load_same_index_returns_exact_value(ctx: ExprContext):
    m = fresh_mem(ctx)
    v = ctx.public_sym("l_v", 32)
    m2 = mem_store(m, ctx.rel_const(100, 32), v, 4)
    out = mem_load(m2, ctx.rel_const(100, 32), 4, False, 32)
    assert out == v  # byte recomposition gives back the very same node


def test_store_then_load_symbolic_base_offset(ctx: ExprContext):
    # spilled-slot pattern: store at sp+4, load at sp+4 with sp symbolic
    m = fresh_mem(ctx)
    sp = ctx.public_sym("l_sp", 32)
    slot = ctx.rel_binop("add", sp, ctx.rel_const(4, 32))
    v = ctx.public_sym("l_v", 32)
    m2 = mem_store(m, slot, v, 4)
    assert mem_load(m2, slot, 4, False, 32) == v


def test_chain_not_consulted_past_concrete_match(ctx: ExprContext):
    m = fresh_mem(ctx)
    v1 = ctx.public_sym("l_a", 8)
    v2 = ctx.public_sym("l_b", 8)
    m = mem_store(m, ctx.rel_const(100, 32), v1, 1)
    m = mem_store(m, ctx.rel_const(200, 32), v2, 1)
    out = mem_load(m, ctx.rel_const(100, 32), 1, False, 8)
    assert out == v1


def test_load_secret_byte_gives_distinct_pair(ctx: ExprContext):
    m = fresh_mem(ctx, SECRET)
    out = mem_load(m, ctx.rel_const(2111, 32), 1, False, 8)
    assert not out.is_shared
    assert isinstance(out.left, se.Sym) and out.left.secret
    assert out.left.label == "h_mem2111_L"
    assert out.right.label == "h_mem2111_R"
    assert out.left is not out.right


def test_load_public_and_unannotated_bytes_are_shared(ctx: ExprContext):
    m = fresh_mem(ctx, PUBLIC_AND_SECRET)
    inside = mem_load(m, ctx.rel_const(2000, 32), 1, False, 8)
    outside = mem_load(m, ctx.rel_const(5, 32), 1, False, 8)
    assert inside.is_shared and inside.left.label == "l_mem2000"
    assert outside.is_shared and outside.left.label == "l_mem5"


def test_concrete_bytes_compose_little_endian(ctx: ExprContext):
    m = fresh_mem(ctx)
    for k, b in enumerate([0x01, 0x00, 0x00, 0x00]):
        m = mem_store(m, ctx.rel_const(300 + k, 32), ctx.rel_const(b, 8), 1)
    out = mem_load(m, ctx.rel_const(300, 32), 4, False, 32)
    assert out.is_shared and isinstance(out.left, se.Const)
    assert out.left.value == 1


def test_narrow_load_extensions(ctx: ExprContext):
    m = fresh_mem(ctx)
    m = mem_store(m, ctx.rel_const(10, 32), ctx.rel_const(0x80, 8), 1)
    u = mem_load(m, ctx.rel_const(10, 32), 1, False, 32)
    s = mem_load(m, ctx.rel_const(10, 32), 1, True, 32)
    assert u.left.value == 0x80
    assert s.left.value == 0xFFFFFF80


def test_symbolic_index_over_symbolic_store_gives_load_node(ctx: ExprContext):
    m = fresh_mem(ctx)
    s = ctx.public_sym("l_s", 32)
    x = ctx.public_sym("l_x", 32)
    m2 = mem_store(m, s, ctx.rel_const(0xAB, 8), 1)
    out = mem_load(m2, x, 1, False, 8)
    assert isinstance(out.left, se.Load)
    assert out.left.chain is m2.chain  # walk stopped at the ambiguous record
    # no secrets anywhere: both projections coincide
    assert out.is_shared and out.left.side == "B"


def test_secret_memory_makes_unresolved_loads_pairs(ctx: ExprContext):
    m = fresh_mem(ctx, SECRET)
    x = ctx.public_sym("l_x", 32)
    out = mem_load(m, x, 1, False, 8)
    assert not out.is_shared
    assert out.left.side == "L" and out.right.side == "R"
    assert isinstance(out.left, se.Load) and isinstance(out.right, se.Load)


def test_persistence_across_fork(ctx: ExprContext):
    m = fresh_mem(ctx)
    m1 = mem_store(m, ctx.rel_const(40, 32), ctx.rel_const(7, 8), 1)
    before = mem_load(m1, ctx.rel_const(40, 32), 1, False, 8)
    m2 = mem_store(m1, ctx.rel_const(40, 32), ctx.rel_const(9, 8), 1)
    after_sibling = mem_load(m1, ctx.rel_const(40, 32), 1, False, 8)
    assert before == after_sibling
    assert before.left.value == 7
    assert mem_load(m2, ctx.rel_const(40, 32), 1, False, 8).left.value == 9


def test_load_chain_grows_linearly(ctx: ExprContext):
    m = fresh_mem(ctx)
    x = ctx.public_sym("l_x", 32)
    counts = []
    for k in range(1, 9):
        m = mem_store(m, ctx.fresh_public(32, "l_s"), ctx.rel_const(k, 8), 1)
        counts.append(count_exprs(mem_load(m, x, 1, False, 8)))
    deltas = {counts[i + 1] - counts[i] for i in range(len(counts) - 1)}
    assert len(deltas) == 1  # strictly linear growth per extra store


# ---- randomized equivalence with a flat dual-array model ---------------------


def _flat_read(policies, env, store_map, side, addr):
    if addr in store_map:
        return store_map[addr]
    for p in policies:
        if p.start <= addr <= p.end and p.classification == "secret":
            return env.get(f"h_mem{addr}_{side}", 0)
    return env.get(f"l_mem{addr}", 0)


def test_concrete_program_equivalence_random():
    rng = random.Random(20260816)
    for _ in range(30):
        ctx = ExprContext()
        policies = PUBLIC_AND_SECRET
        m = fresh_mem(ctx, policies)
        env: dict[str, int] = {}
        # leaf valuation for secrets and a couple of value symbols
        for addr in range(2048, 2112):
            env[f"h_mem{addr}_L"] = rng.randrange(256)
            env[f"h_mem{addr}_R"] = rng.randrange(256)
        for addr in range(2000, 2040):
            env[f"l_mem{addr}"] = rng.randrange(256)
        flat = {"L": {}, "R": {}}

        def reader(side: str, addr: int, _env=env, _p=policies):
            return _flat_read(_p, _env, {}, side, addr)

        for _step in range(25):
            width = rng.choice([1, 2, 4, 8])
            addr = rng.randrange(1990, 2120)
            if rng.random() < 0.5:
                kind = rng.random()
                if kind < 0.4:
                    val = ctx.rel_const(rng.randrange(1 << (8 * width)), 8 * width)
                elif kind < 0.7:
                    lab = ctx.fresh_label("l_w")
                    env[lab] = rng.randrange(1 << (8 * width))
                    val = ctx.public_sym(lab, 8 * width)
                else:
                    lab = ctx.fresh_label("h_w")
                    env[lab + "_L"] = rng.randrange(1 << (8 * width))
                    env[lab + "_R"] = rng.randrange(1 << (8 * width))
                    val = ctx.secret_pair(lab, 8 * width)
                m = mem_store(m, ctx.rel_const(addr, 32), val, width)
                for side, proj in (("L", val.left), ("R", val.right)):
                    conc = eval_expr(proj, env)
                    for k in range(width):
                        flat[side][addr + k] = (conc >> (8 * k)) & 0xFF
            else:
                signed = rng.random() < 0.5
                tgt = 64 if width == 8 else rng.choice([32, 64])
                out = mem_load(m, ctx.rel_const(addr, 32), width, signed, tgt)
                for side, proj in (("L", out.left), ("R", out.right)):
                    got = eval_expr(
                        proj, env,
                        lambda s, a: _flat_read(policies, env, flat[s], s, a),
                    )
                    raw = 0
                    for k in range(width):
                        raw |= _flat_read(policies, env, flat[side], side,
                                          addr + k) << (8 * k)
                    if signed and raw & (1 << (8 * width - 1)):
                        raw -= 1 << (8 * width)
                    want = raw & ((1 << tgt) - 1)
                    assert got == want, (addr, width, signed, tgt, side)
