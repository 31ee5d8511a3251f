"""Independent brute-force evaluator for expression DAGs.

Evaluates a node over *all* valuations of its symbols at once using numpy
vectors, with the semantics written out from scratch (two's-complement
wraparound, wasm shift masking, SMT-LIB division totalization). Used to
cross-check the simplifier: a rewrite is correct iff the input and output
nodes produce identical vectors over the full valuation grid.

Kept deliberately separate from the package's own fold/eval helpers so the
two implementations can disagree when one of them is wrong.
"""

from __future__ import annotations

import numpy as np

from relwasm import symexpr as se


def sym_labels(e: se.Expr) -> list[str]:
    """Symbol labels reachable from e, in first-visit order."""
    seen: set[int] = set()
    out: list[str] = []
    stack = [e]
    while stack:
        node = stack.pop()
        if node.eid in seen:
            continue
        seen.add(node.eid)
        if isinstance(node, se.Sym) and node.label not in out:
            out.append(node.label)
        stack.extend(se._children(node))
    return sorted(out)


def valuation_grid(labels: list[str], width: int) -> dict[str, np.ndarray]:
    """Cartesian product of all width-bit values for every label."""
    n = len(labels)
    size = 1 << (width * n)
    if size > 1 << 24:
        raise ValueError(f"grid too large: {n} syms at width {width}")
    idx = np.arange(size, dtype=np.uint64)
    env = {}
    for i, lab in enumerate(labels):
        env[lab] = ((idx >> np.uint64(width * i)) & np.uint64((1 << width) - 1))
    return env


def _to_signed(v: np.ndarray, width: int) -> np.ndarray:
    half = np.uint64(1 << (width - 1))
    full = np.uint64((1 << width) - 1) if width < 64 else np.uint64(0xFFFFFFFFFFFFFFFF)
    return np.where(v >= half, v | ~full, v).astype(np.int64)


def brute_eval(e: se.Expr, env: dict[str, np.ndarray]) -> np.ndarray:
    """Vectorized evaluation; returns uint64 vectors masked to node width."""
    memo: dict[int, np.ndarray] = {}
    order: list[se.Expr] = []
    seen: set[int] = set()
    stack: list[tuple[se.Expr, bool]] = [(e, False)]
    while stack:
        node, ready = stack.pop()
        if ready:
            order.append(node)
            continue
        if node.eid in seen:
            continue
        seen.add(node.eid)
        stack.append((node, True))
        for k in se._children(node):
            stack.append((k, False))
    for node in order:
        if node.eid not in memo:
            memo[node.eid] = _brute_node(node, memo, env)
    return memo[e.eid]


def _brute_node(node: se.Expr, memo, env) -> np.ndarray:
    w = node.width
    mask = np.uint64((1 << w) - 1) if w < 64 else np.uint64(0xFFFFFFFFFFFFFFFF)

    if isinstance(node, se.Const):
        some = next(iter(env.values()))
        return np.full_like(some, np.uint64(node.value))
    if isinstance(node, se.Sym):
        return env[node.label].astype(np.uint64) & mask

    if isinstance(node, se.BinOp):
        a, b = memo[node.a.eid], memo[node.b.eid]
        op = node.op
        if op == "add":
            return (a + b) & mask
        if op == "sub":
            return (a - b) & mask
        if op == "mul":
            return (a * b) & mask
        if op == "and":
            return a & b
        if op == "or":
            return a | b
        if op == "xor":
            return a ^ b
        sh = (b % np.uint64(w)).astype(np.uint64)
        if op == "shl":
            return (a << sh) & mask
        if op == "shr_u":
            return a >> sh
        if op == "shr_s":
            sa = _to_signed(a, w)
            return (sa >> sh.astype(np.int64)).astype(np.uint64) & mask
        if op == "rotl":
            lo = np.where(sh == 0, np.uint64(0), a >> ((np.uint64(w) - sh) % np.uint64(w)))
            return ((a << sh) | lo) & mask
        if op == "rotr":
            hi = np.where(sh == 0, np.uint64(0), a << ((np.uint64(w) - sh) % np.uint64(w)))
            return ((a >> sh) | hi) & mask
        if op == "div_u":
            q = np.where(b == 0, mask, a // np.where(b == 0, np.uint64(1), b))
            return q & mask
        if op == "rem_u":
            return np.where(b == 0, a, a % np.where(b == 0, np.uint64(1), b)) & mask
        sa, sb = _to_signed(a, w), _to_signed(b, w)
        safe_b = np.where(sb == 0, np.int64(1), sb)
        if op == "div_s":
            # trunc toward zero, then SMT totalization at b = 0
            q = np.sign(sa) * np.sign(safe_b) * (np.abs(sa) // np.abs(safe_b))
            q = np.where(sb == 0, np.where(sa < 0, np.int64(1), np.int64(-1)), q)
            return q.astype(np.uint64) & mask
        if op == "rem_s":
            r = np.sign(sa) * (np.abs(sa) % np.abs(safe_b))
            r = np.where(sb == 0, sa, r)
            return r.astype(np.uint64) & mask
        raise ValueError(op)

    if isinstance(node, se.Cmp):
        a, b = memo[node.a.eid], memo[node.b.eid]
        wa = node.a.width
        sa, sb = _to_signed(a, wa), _to_signed(b, wa)
        table = {
            "eq": a == b, "ne": a != b,
            "lt_u": a < b, "gt_u": a > b, "le_u": a <= b, "ge_u": a >= b,
            "lt_s": sa < sb, "gt_s": sa > sb, "le_s": sa <= sb, "ge_s": sa >= sb,
        }
        return table[node.op].astype(np.uint64)

    if isinstance(node, se.UnOp):
        a = memo[node.a.eid]
        wa = node.a.width
        if node.op == "popcnt":
            out = np.zeros_like(a)
            for i in range(wa):
                out += (a >> np.uint64(i)) & np.uint64(1)
            return out
        if node.op == "clz":
            out = np.full_like(a, np.uint64(wa))
            pos = np.zeros_like(a)
            for i in range(wa):
                bit = (a >> np.uint64(wa - 1 - i)) & np.uint64(1)
                hit = (bit == 1) & (out == wa)
                out = np.where(hit, pos, out)
                pos = pos + np.uint64(1)
            return out
        if node.op == "ctz":
            out = np.full_like(a, np.uint64(wa))
            pos = np.zeros_like(a)
            for i in range(wa):
                bit = (a >> np.uint64(i)) & np.uint64(1)
                hit = (bit == 1) & (out == wa)
                out = np.where(hit, pos, out)
                pos = pos + np.uint64(1)
            return out
        raise ValueError(node.op)

    if isinstance(node, se.ZExt):
        return memo[node.a.eid]
    if isinstance(node, se.SExt):
        return _to_signed(memo[node.a.eid], node.a.width).astype(np.uint64) & mask
    if isinstance(node, se.Extract):
        return (memo[node.a.eid] >> np.uint64(node.lo)) & mask
    if isinstance(node, se.Concat):
        return ((memo[node.hi_part.eid] << np.uint64(node.lo_part.width))
                | memo[node.lo_part.eid]) & mask
    if isinstance(node, se.Ite):
        return np.where(memo[node.cond.eid] != 0,
                        memo[node.then_e.eid], memo[node.else_e.eid])
    raise TypeError(f"brute_eval cannot handle {type(node).__name__}")


def assert_equiv(got: se.Expr, want: se.Expr, width: int = 8) -> None:
    """Fail unless the two nodes agree on every valuation of their symbols."""
    labels = sorted(set(sym_labels(got)) | set(sym_labels(want)))
    if not labels:
        labels = ["_dummy"]
    env = valuation_grid(labels, width)
    vg = brute_eval(got, env)
    vw = brute_eval(want, env)
    bad = np.nonzero(vg != vw)[0]
    if bad.size:
        i = int(bad[0])
        point = {lab: int(env[lab][i]) for lab in labels}
        raise AssertionError(
            f"nodes differ at {point}: got {int(vg[i])}, want {int(vw[i])}\n"
            f"  got:  {se.expr_to_str(got)}\n  want: {se.expr_to_str(want)}"
        )


# ---- independent SMT-LIB encoder -----------------------------------------------
# A second, deliberately naive translation: every node is written inline with
# no subterm naming, memories are folded into one nested store term, and
# rotates use the double-width concat trick instead of two shifts. Used to
# cross-check the package translator: for each corpus expression the solver
# must find (distinct main naive) unsatisfiable. (Operator semantics
# themselves are cross-checked against brute_eval separately.)


def _smt_const(value: int, width: int) -> str:
    if width % 4 == 0:
        return f"#x{value & ((1 << width) - 1):0{width // 4}x}"
    return f"#b{value & ((1 << width) - 1):0{width}b}"


def _naive_proj(rel, side: str) -> se.Expr:
    return rel.left if side in ("L", "B") else rel.right


def naive_smt(node: se.Expr) -> str:
    if isinstance(node, se.Const):
        return _smt_const(node.value, node.width)
    if isinstance(node, se.Sym):
        assert node.label.replace("_", "a").isalnum(), node.label
        return node.label
    if isinstance(node, se.BinOp):
        a, b, w = naive_smt(node.a), naive_smt(node.b), node.width
        plain = {"add": "bvadd", "sub": "bvsub", "mul": "bvmul",
                 "and": "bvand", "or": "bvor", "xor": "bvxor",
                 "div_u": "bvudiv", "div_s": "bvsdiv",
                 "rem_u": "bvurem", "rem_s": "bvsrem"}
        if node.op in plain:
            return f"({plain[node.op]} {a} {b})"
        s = f"(bvand {b} {_smt_const(w - 1, w)})"
        if node.op == "shl":
            return f"(bvshl {a} {s})"
        if node.op == "shr_u":
            return f"(bvlshr {a} {s})"
        if node.op == "shr_s":
            return f"(bvashr {a} {s})"
        # rotate via the doubled word: rotl k = low w bits of (aa >> (w-k))
        wide = f"(concat {a} {a})"
        s2 = f"((_ zero_extend {w}) {s})"
        if node.op == "rotl":
            shifted = f"(bvlshr {wide} (bvsub {_smt_const(w, 2 * w)} {s2}))"
        elif node.op == "rotr":
            shifted = f"(bvlshr {wide} {s2})"
        else:
            raise ValueError(node.op)
        return f"((_ extract {w - 1} 0) {shifted})"
    if isinstance(node, se.Cmp):
        a, b = naive_smt(node.a), naive_smt(node.b)
        ops = {"eq": "=", "ne": "distinct", "lt_u": "bvult", "lt_s": "bvslt",
               "gt_u": "bvugt", "gt_s": "bvsgt", "le_u": "bvule",
               "le_s": "bvsle", "ge_u": "bvuge", "ge_s": "bvsge"}
        return (f"(ite ({ops[node.op]} {a} {b}) "
                f"{_smt_const(1, 32)} {_smt_const(0, 32)})")
    if isinstance(node, se.UnOp):
        a, w = naive_smt(node.a), node.width
        if node.op == "popcnt":
            bits = [f"((_ zero_extend {w - 1}) ((_ extract {i} {i}) {a}))"
                    for i in range(w)]
            return "(bvadd " + " ".join(bits) + ")"
        if node.op == "clz":
            term = _smt_const(w, w)
            for pos in range(w):
                term = (f"(ite (= ((_ extract {pos} {pos}) {a}) #b1) "
                        f"{_smt_const(w - 1 - pos, w)} {term})")
            return term
        if node.op == "ctz":
            term = _smt_const(w, w)
            for pos in range(w - 1, -1, -1):
                term = (f"(ite (= ((_ extract {pos} {pos}) {a}) #b1) "
                        f"{_smt_const(pos, w)} {term})")
            return term
        raise ValueError(node.op)
    if isinstance(node, se.ZExt):
        return f"((_ zero_extend {node.width - node.a.width}) {naive_smt(node.a)})"
    if isinstance(node, se.SExt):
        return f"((_ sign_extend {node.width - node.a.width}) {naive_smt(node.a)})"
    if isinstance(node, se.Extract):
        return f"((_ extract {node.hi} {node.lo}) {naive_smt(node.a)})"
    if isinstance(node, se.Concat):
        return f"(concat {naive_smt(node.hi_part)} {naive_smt(node.lo_part)})"
    if isinstance(node, se.Ite):
        c = naive_smt(node.cond)
        return (f"(ite (distinct {c} {_smt_const(0, node.cond.width)}) "
                f"{naive_smt(node.then_e)} {naive_smt(node.else_e)})")
    if isinstance(node, se.Load):
        side = node.side
        mem = f"A{node.base.base_id}"
        if side in ("L", "R"):
            for rng in node.base.policies:
                if rng.classification != "secret":
                    continue
                for addr in range(rng.start, rng.end + 1):
                    mem = (f"(store {mem} {_smt_const(addr, 32)} "
                           f"h_mem{addr}_{side})")
        for addr in sorted(node.base.materialized()):
            leaf = _naive_proj(node.base.materialized()[addr], side)
            mem = f"(store {mem} {_smt_const(addr, 32)} {naive_smt(leaf)})"
        records = []
        rec = node.chain
        while rec is not None:
            records.append(rec)
            rec = rec.prev
        for r in reversed(records):
            idx = naive_smt(_naive_proj(r.index, side))
            val = naive_smt(_naive_proj(r.value, side))
            mem = f"(store {mem} {idx} {val})"
        return f"(select {mem} {naive_smt(node.index)})"
    raise TypeError(type(node).__name__)
