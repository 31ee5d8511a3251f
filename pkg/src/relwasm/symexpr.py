"""Relational symbolic expression DAG: hash-consed nodes, structural
simplification at construction time, and memoized rewriting.

Every expression is interned in an ExprContext, so structural equality is
pointer equality and a relational value whose projections coincide is
represented once (Shared). All arithmetic follows two's-complement
wraparound semantics at the node's bit width.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Mapping

BIN_OPS = frozenset({
    "add", "sub", "mul", "div_u", "div_s", "rem_u", "rem_s",
    "and", "or", "xor", "shl", "shr_u", "shr_s", "rotl", "rotr",
})
CMP_OPS = frozenset({
    "eq", "ne", "lt_u", "lt_s", "gt_u", "gt_s", "le_u", "le_s", "ge_u", "ge_s",
})
UN_OPS = frozenset({"clz", "ctz", "popcnt"})

LEAF_WIDTHS = (8, 16, 32, 64)


class WidthMismatch(Exception):
    pass


def _mask(width: int) -> int:
    return (1 << width) - 1


def _signed(v: int, width: int) -> int:
    return v - (1 << width) if v & (1 << (width - 1)) else v


def fold_binop(op: str, a: int, b: int, width: int) -> int:
    """Constant-fold a binary op at the given width.

    Division and remainder by zero (and div_s overflow) follow the SMT-LIB
    total-function semantics so that folding, eval_expr, and the solver all
    agree; the engine enforces the WebAssembly trap cases before any such
    node can be built from concrete operands.
    """
    m = _mask(width)
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
        return (a << (b % width)) & m
    if op == "shr_u":
        return a >> (b % width)
    if op == "shr_s":
        return (_signed(a, width) >> (b % width)) & m
    if op == "rotl":
        s = b % width
        return ((a << s) | (a >> (width - s))) & m if s else a
    if op == "rotr":
        s = b % width
        return ((a >> s) | (a << (width - s))) & m if s else a
    if op == "div_u":
        return m if b == 0 else a // b
    if op == "rem_u":
        return a if b == 0 else a % b
    sa, sb = _signed(a, width), _signed(b, width)
    if op == "div_s":
        if b == 0:
            return 1 if sa < 0 else m  # bvsdiv totalization
        q = abs(sa) // abs(sb)
        if (sa < 0) != (sb < 0):
            q = -q
        return q & m
    if op == "rem_s":
        if b == 0:
            return a  # bvsrem totalization
        r = abs(sa) % abs(sb)
        if sa < 0:
            r = -r
        return r & m
    raise ValueError(f"unknown binop {op}")


def fold_cmp(op: str, a: int, b: int, width: int) -> int:
    sa, sb = _signed(a, width), _signed(b, width)
    table: dict[str, bool] = {
        "eq": a == b, "ne": a != b,
        "lt_u": a < b, "lt_s": sa < sb,
        "gt_u": a > b, "gt_s": sa > sb,
        "le_u": a <= b, "le_s": sa <= sb,
        "ge_u": a >= b, "ge_s": sa >= sb,
    }
    return 1 if table[op] else 0


def fold_unop(op: str, a: int, width: int) -> int:
    if op == "popcnt":
        return bin(a).count("1")
    if op == "clz":
        n = 0
        probe = 1 << (width - 1)
        while probe and not (a & probe):
            n += 1
            probe >>= 1
        return n
    if op == "ctz":
        if a == 0:
            return width
        n = 0
        while not (a >> n) & 1:
            n += 1
        return n
    raise ValueError(f"unknown unop {op}")


class Expr:
    """Immutable interned DAG node. Compare with `is`."""

    __slots__ = ("eid", "width")

    eid: int
    width: int

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"<{type(self).__name__}#{self.eid} w{self.width} {expr_to_str(self)}>"


class Const(Expr):
    __slots__ = ("value",)

    def __init__(self, value: int, width: int):
        self.value = value
        self.width = width


class Sym(Expr):
    __slots__ = ("label", "secret")

    def __init__(self, label: str, width: int, secret: bool):
        self.label = label
        self.width = width
        self.secret = secret


class BinOp(Expr):
    __slots__ = ("op", "a", "b")

    def __init__(self, op: str, a: Expr, b: Expr):
        self.op = op
        self.a = a
        self.b = b
        self.width = a.width


class Cmp(Expr):
    """WebAssembly comparison: produces an i32 in {0, 1}."""

    __slots__ = ("op", "a", "b")

    def __init__(self, op: str, a: Expr, b: Expr):
        self.op = op
        self.a = a
        self.b = b
        self.width = 32


class UnOp(Expr):
    __slots__ = ("op", "a")

    def __init__(self, op: str, a: Expr):
        self.op = op
        self.a = a
        self.width = a.width


class ZExt(Expr):
    __slots__ = ("a",)

    def __init__(self, a: Expr, width: int):
        self.a = a
        self.width = width


class SExt(Expr):
    __slots__ = ("a",)

    def __init__(self, a: Expr, width: int):
        self.a = a
        self.width = width


class Extract(Expr):
    __slots__ = ("a", "hi", "lo")

    def __init__(self, a: Expr, hi: int, lo: int):
        self.a = a
        self.hi = hi
        self.lo = lo
        self.width = hi - lo + 1


class Concat(Expr):
    """hi_part occupies the most significant bits."""

    __slots__ = ("hi_part", "lo_part")

    def __init__(self, hi_part: Expr, lo_part: Expr):
        self.hi_part = hi_part
        self.lo_part = lo_part
        self.width = hi_part.width + lo_part.width


class Ite(Expr):
    """Value select on WebAssembly truthiness: cond != 0 picks then_e."""

    __slots__ = ("cond", "then_e", "else_e")

    def __init__(self, cond: Expr, then_e: Expr, else_e: Expr):
        self.cond = cond
        self.then_e = then_e
        self.else_e = else_e
        self.width = then_e.width


class Load(Expr):
    """One byte read from a memory snapshot, unresolved structurally.

    `chain` is the newest store record still in scope for this read (or None
    for a base-only read); `side` selects the projection: 'L', 'R', or 'B'
    when both projections of the memory and index provably coincide.
    """

    __slots__ = ("index", "base", "chain", "side")

    def __init__(self, index: Expr, base: object, chain: object, side: str):
        self.index = index
        self.base = base
        self.chain = chain
        self.side = side
        self.width = 8


class RelExpr:
    """A relational value: left/right projections, one per modeled run."""

    __slots__ = ("left", "right")

    def __init__(self, left: Expr, right: Expr):
        self.left = left
        self.right = right

    @property
    def is_shared(self) -> bool:
        return self.left is self.right

    @property
    def width(self) -> int:
        return self.left.width

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, RelExpr)
            and self.left is other.left
            and self.right is other.right
        )

    def __hash__(self) -> int:
        return hash((id(self.left), id(self.right)))

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        if self.is_shared:
            return f"Shared({expr_to_str(self.left)})"
        return f"Pair({expr_to_str(self.left)}, {expr_to_str(self.right)})"


def shared(e: Expr) -> RelExpr:
    return RelExpr(e, e)


def pair(left: Expr, right: Expr) -> RelExpr:
    """Pair constructor; collapses to Shared when projections are identical."""
    if left.width != right.width:
        raise WidthMismatch(f"pair widths {left.width} vs {right.width}")
    return RelExpr(left, right)


@dataclass
class CacheStats:
    hits: int = 0
    misses: int = 0


class ExprContext:
    """Owner of the intern table, the rewrite memo, and fresh-label counters.

    Single-writer: confined to the engine thread. Nodes themselves are
    immutable and may be read from anywhere.
    """

    def __init__(self, memo_enabled: bool = True):
        self._intern: dict[tuple, Expr] = {}
        self._memo: dict[tuple, Expr] = {}
        self.memo_enabled = memo_enabled
        self.stats = CacheStats()
        self._next_eid = 0
        self._fresh_counter = 0
        self._declared_labels: set[str] = set()

    # ---- interning -------------------------------------------------------

    def _put(self, key: tuple, node: Expr) -> Expr:
        found = self._intern.get(key)
        if found is not None:
            return found
        node.eid = self._next_eid
        self._next_eid += 1
        self._intern[key] = node
        return node

    def const(self, value: int, width: int) -> Const:
        value &= _mask(width)
        return self._put(("c", width, value), Const(value, width))  # type: ignore[return-value]

    def sym(self, label: str, width: int, secret: bool) -> Sym:
        if width not in LEAF_WIDTHS:
            raise WidthMismatch(f"leaf width {width} not in {LEAF_WIDTHS}")
        return self._put(("s", label, width, secret), Sym(label, width, secret))  # type: ignore[return-value]

    def _raw_binop(self, op: str, a: Expr, b: Expr) -> Expr:
        return self._put(("b", op, a.eid, b.eid), BinOp(op, a, b))

    def _raw_cmp(self, op: str, a: Expr, b: Expr) -> Expr:
        return self._put(("m", op, a.eid, b.eid), Cmp(op, a, b))

    def _raw_unop(self, op: str, a: Expr) -> Expr:
        return self._put(("u", op, a.eid), UnOp(op, a))

    def _raw_zext(self, a: Expr, width: int) -> Expr:
        return self._put(("z", width, a.eid), ZExt(a, width))

    def _raw_sext(self, a: Expr, width: int) -> Expr:
        return self._put(("x", width, a.eid), SExt(a, width))

    def _raw_extract(self, a: Expr, hi: int, lo: int) -> Expr:
        return self._put(("e", hi, lo, a.eid), Extract(a, hi, lo))

    def _raw_concat(self, hi_part: Expr, lo_part: Expr) -> Expr:
        return self._put(("k", hi_part.eid, lo_part.eid), Concat(hi_part, lo_part))

    def _raw_ite(self, c: Expr, t: Expr, e: Expr) -> Expr:
        return self._put(("i", c.eid, t.eid, e.eid), Ite(c, t, e))

    def load(self, index: Expr, base: object, chain: object, side: str) -> Expr:
        rid = chain.rid if chain is not None else -1
        key = ("l", index.eid, id(base), rid, side)
        return self._put(key, Load(index, base, chain, side))

    # ---- fresh symbols ---------------------------------------------------

    def declare_input(self, label: str) -> None:
        if label in self._declared_labels:
            raise ValueError(f"symbol label {label!r} declared twice")
        self._declared_labels.add(label)

    def fresh_label(self, prefix: str) -> str:
        self._fresh_counter += 1
        return f"{prefix}{self._fresh_counter}"

    def public_sym(self, label: str, width: int) -> RelExpr:
        return shared(self.sym(label, width, secret=False))

    def secret_pair(self, label: str, width: int) -> RelExpr:
        return pair(
            self.sym(label + "_L", width, secret=True),
            self.sym(label + "_R", width, secret=True),
        )

    def fresh_public(self, width: int, prefix: str = "l_") -> RelExpr:
        return self.public_sym(self.fresh_label(prefix), width)

    def fresh_secret(self, width: int, prefix: str = "h_") -> RelExpr:
        return self.secret_pair(self.fresh_label(prefix), width)

    # ---- memoized smart constructors --------------------------------------

    def _memoized(self, key: tuple, compute: Callable[[], Expr]) -> Expr:
        if self.memo_enabled:
            found = self._memo.get(key)
            if found is not None:
                self.stats.hits += 1
                return found
        result = compute()
        if self.memo_enabled:
            self.stats.misses += 1
            self._memo[key] = result
        return result

    def binop(self, op: str, a: Expr, b: Expr) -> Expr:
        if op not in BIN_OPS:
            raise ValueError(f"unknown binop {op}")
        if a.width != b.width:
            raise WidthMismatch(f"{op}: {a.width} vs {b.width}")
        return self._memoized(("b", op, a.eid, b.eid), lambda: self._build_binop(op, a, b))

    def cmp(self, op: str, a: Expr, b: Expr) -> Expr:
        if op not in CMP_OPS:
            raise ValueError(f"unknown cmp {op}")
        if a.width != b.width:
            raise WidthMismatch(f"{op}: {a.width} vs {b.width}")
        return self._memoized(("m", op, a.eid, b.eid), lambda: self._build_cmp(op, a, b))

    def unop(self, op: str, a: Expr) -> Expr:
        if op not in UN_OPS:
            raise ValueError(f"unknown unop {op}")
        return self._memoized(("u", op, a.eid), lambda: self._build_unop(op, a))

    def zext(self, a: Expr, width: int) -> Expr:
        if width == a.width:
            return a
        if width < a.width:
            raise WidthMismatch("zext must widen")
        return self._memoized(("z", width, a.eid), lambda: self._build_zext(a, width))

    def sext(self, a: Expr, width: int) -> Expr:
        if width == a.width:
            return a
        if width < a.width:
            raise WidthMismatch("sext must widen")
        return self._memoized(("x", width, a.eid), lambda: self._build_sext(a, width))

    def extract(self, a: Expr, hi: int, lo: int) -> Expr:
        if not (0 <= lo <= hi < a.width):
            raise WidthMismatch(f"extract [{hi}:{lo}] of width {a.width}")
        if lo == 0 and hi == a.width - 1:
            return a
        return self._memoized(("e", hi, lo, a.eid), lambda: self._build_extract(a, hi, lo))

    def concat(self, hi_part: Expr, lo_part: Expr) -> Expr:
        return self._memoized(
            ("k", hi_part.eid, lo_part.eid), lambda: self._build_concat(hi_part, lo_part)
        )

    def ite(self, cond: Expr, then_e: Expr, else_e: Expr) -> Expr:
        if then_e.width != else_e.width:
            raise WidthMismatch("ite arm widths differ")
        return self._memoized(
            ("i", cond.eid, then_e.eid, else_e.eid),
            lambda: self._build_ite(cond, then_e, else_e),
        )

    # ---- rewrite bodies ----------------------------------------------------

    def _build_binop(self, op: str, a: Expr, b: Expr) -> Expr:
        w = a.width
        if isinstance(a, Const) and isinstance(b, Const):
            return self.const(fold_binop(op, a.value, b.value, w), w)
        if op in ("add", "sub"):
            return self._normalize_additive(op, a, b)
        if op == "mul":
            if isinstance(a, Const):
                a, b = b, a
            if isinstance(b, Const):
                if b.value == 0:
                    return self.const(0, w)
                if b.value == 1:
                    return a
            return self._raw_binop(op, a, b)
        if op == "and":
            if a is b:
                return a
            if isinstance(a, Const):
                a, b = b, a
            if isinstance(b, Const):
                if b.value == 0:
                    return self.const(0, w)
                if b.value == _mask(w):
                    return a
            return self._raw_binop(op, a, b)
        if op == "or":
            if a is b:
                return a
            if isinstance(a, Const):
                a, b = b, a
            if isinstance(b, Const):
                if b.value == 0:
                    return a
                if b.value == _mask(w):
                    return self.const(_mask(w), w)
            return self._raw_binop(op, a, b)
        if op == "xor":
            if a is b:
                return self.const(0, w)
            if isinstance(a, Const):
                a, b = b, a
            if isinstance(b, Const) and b.value == 0:
                return a
            return self._raw_binop(op, a, b)
        if op in ("shl", "shr_u", "shr_s", "rotl", "rotr"):
            if isinstance(b, Const) and b.value % w == 0:
                return a
            return self._raw_binop(op, a, b)
        if op in ("div_u", "div_s"):
            if isinstance(b, Const) and b.value == 1:
                return a
            return self._raw_binop(op, a, b)
        if op in ("rem_u", "rem_s"):
            if isinstance(b, Const) and b.value == 1:
                return self.const(0, w)
            if a is b:
                # x rem x = 0 except at x = 0 where both totalize to x = 0.
                return self.const(0, w)
            return self._raw_binop(op, a, b)
        return self._raw_binop(op, a, b)

    def _linearize(self, root: Expr) -> tuple[int, list[tuple[int, Expr]]]:
        """Flatten an add/sub spine into (const accumulator, signed terms)."""
        acc = 0
        terms: list[tuple[int, Expr]] = []
        work: list[tuple[int, Expr]] = [(1, root)]
        while work:
            sign, node = work.pop()
            if isinstance(node, Const):
                acc += sign * node.value
            elif isinstance(node, BinOp) and node.op in ("add", "sub"):
                bsign = sign if node.op == "add" else -sign
                # push b first so a is processed first (stable DFS order)
                work.append((bsign, node.b))
                work.append((sign, node.a))
            else:
                terms.append((sign, node))
        # restore left-to-right order: the explicit stack visits a before b,
        # so terms already accumulate in DFS order
        return acc, terms

    def _normalize_additive(self, op: str, a: Expr, b: Expr) -> Expr:
        w = a.width
        spine = self._raw_binop(op, a, b)
        acc, terms = self._linearize(spine)
        # cancel +t/-t pairs of the identical node
        net: dict[int, int] = {}
        order: list[Expr] = []
        by_eid: dict[int, Expr] = {}
        for sign, t in terms:
            if t.eid not in net:
                net[t.eid] = 0
                order.append(t)
                by_eid[t.eid] = t
            net[t.eid] += sign
        acc &= _mask(w)
        flat: list[tuple[int, Expr]] = []
        for t in order:
            n = net[t.eid]
            for _ in range(abs(n)):
                flat.append((1 if n > 0 else -1, t))
        if not flat:
            return self.const(acc, w)
        if acc != 0:
            out: Expr = self.const(acc, w)
            rest = flat
        elif flat[0][0] > 0:
            out = flat[0][1]
            rest = flat[1:]
        else:
            out = self.const(0, w)
            rest = flat
        for sign, t in rest:
            out = self._raw_binop("add" if sign > 0 else "sub", out, t)
        return out

    def _build_cmp(self, op: str, a: Expr, b: Expr) -> Expr:
        w = a.width
        if isinstance(a, Const) and isinstance(b, Const):
            return self.const(fold_cmp(op, a.value, b.value, w), 32)
        if a is b:
            reflexive = {"eq": 1, "ne": 0, "lt_u": 0, "lt_s": 0, "gt_u": 0,
                         "gt_s": 0, "le_u": 1, "le_s": 1, "ge_u": 1, "ge_s": 1}
            return self.const(reflexive[op], 32)
        # range pruning: zext(e) always sits in [0, 2^inner - 1] and its top
        # bit is clear, so comparisons against out-of-range constants fold
        for x, y, rel in ((a, b, op), (b, a, _swap_cmp(op))):
            if isinstance(x, Const) and isinstance(y, ZExt):
                hi = _mask(y.a.width)
                c = x.value
                neg = c >= (1 << (w - 1))  # constant is negative when signed
                if c > hi:
                    if rel == "eq":
                        return self.const(0, 32)
                    if rel == "ne":
                        return self.const(1, 32)
                if rel == "lt_u" and c >= hi:
                    return self.const(0, 32)
                if rel == "ge_u" and c >= hi:
                    return self.const(1, 32)
                if rel == "gt_u" and c > hi:
                    return self.const(1, 32)
                if rel == "le_u" and c > hi:
                    return self.const(0, 32)
                if rel == "lt_s":
                    if neg:
                        return self.const(1, 32)
                    if c >= hi:
                        return self.const(0, 32)
                if rel == "ge_s":
                    if neg:
                        return self.const(0, 32)
                    if c >= hi:
                        return self.const(1, 32)
                if rel == "gt_s":
                    if neg:
                        return self.const(0, 32)
                    if c > hi:
                        return self.const(1, 32)
                if rel == "le_s":
                    if neg:
                        return self.const(1, 32)
                    if c > hi:
                        return self.const(0, 32)
        return self._raw_cmp(op, a, b)

    def _build_unop(self, op: str, a: Expr) -> Expr:
        if isinstance(a, Const):
            return self.const(fold_unop(op, a.value, a.width), a.width)
        return self._raw_unop(op, a)

    def _build_zext(self, a: Expr, width: int) -> Expr:
        if isinstance(a, Const):
            return self.const(a.value, width)
        if isinstance(a, ZExt):
            return self.zext(a.a, width)
        return self._raw_zext(a, width)

    def _build_sext(self, a: Expr, width: int) -> Expr:
        if isinstance(a, Const):
            return self.const(_signed(a.value, a.width), width)
        if isinstance(a, SExt):
            return self.sext(a.a, width)
        return self._raw_sext(a, width)

    def _build_extract(self, a: Expr, hi: int, lo: int) -> Expr:
        if isinstance(a, Const):
            return self.const((a.value >> lo) & _mask(hi - lo + 1), hi - lo + 1)
        if isinstance(a, Extract):
            return self.extract(a.a, a.lo + hi, a.lo + lo)
        if isinstance(a, Concat):
            lo_w = a.lo_part.width
            if hi < lo_w:
                return self.extract(a.lo_part, hi, lo)
            if lo >= lo_w:
                return self.extract(a.hi_part, hi - lo_w, lo - lo_w)
            high = self.extract(a.hi_part, hi - lo_w, 0)
            low = self.extract(a.lo_part, lo_w - 1, lo)
            return self.concat(high, low)
        if isinstance(a, ZExt):
            inner_w = a.a.width
            if lo >= inner_w:
                return self.const(0, hi - lo + 1)
            if hi < inner_w:
                return self.extract(a.a, hi, lo)
            return self.zext(self.extract(a.a, inner_w - 1, lo), hi - lo + 1)
        if isinstance(a, SExt) and hi < a.a.width:
            return self.extract(a.a, hi, lo)
        return self._raw_extract(a, hi, lo)

    def _build_concat(self, hi_part: Expr, lo_part: Expr) -> Expr:
        if isinstance(hi_part, Const) and isinstance(lo_part, Const):
            return self.const((hi_part.value << lo_part.width) | lo_part.value,
                              hi_part.width + lo_part.width)
        if isinstance(hi_part, Const) and hi_part.value == 0:
            return self.zext(lo_part, hi_part.width + lo_part.width)
        if (isinstance(hi_part, Extract) and isinstance(lo_part, Extract)
                and hi_part.a is lo_part.a and hi_part.lo == lo_part.hi + 1):
            return self.extract(hi_part.a, hi_part.hi, lo_part.lo)
        return self._raw_concat(hi_part, lo_part)

    def _build_ite(self, cond: Expr, then_e: Expr, else_e: Expr) -> Expr:
        if isinstance(cond, Const):
            return then_e if cond.value != 0 else else_e
        if then_e is else_e:
            return then_e
        return self._raw_ite(cond, then_e, else_e)

    # ---- public simplify entry point --------------------------------------

    def simplify(self, e: Expr) -> Expr:
        """Re-canonicalize a DAG bottom-up. Idempotent: nodes built through
        this context are already in normal form, so this acts as the fixed
        point of the rewrite set."""
        done: dict[int, Expr] = {}
        stack: list[tuple[Expr, bool]] = [(e, False)]
        while stack:
            node, ready = stack.pop()
            if node.eid in done:
                continue
            kids = _children(node)
            if not ready:
                stack.append((node, True))
                for k in kids:
                    if k.eid not in done:
                        stack.append((k, False))
                continue
            done[node.eid] = self._rebuild(node, [done[k.eid] for k in kids])
        return done[e.eid]

    def _rebuild(self, node: Expr, kids: list[Expr]) -> Expr:
        if isinstance(node, (Const, Sym)):
            return node
        if isinstance(node, BinOp):
            return self.binop(node.op, kids[0], kids[1])
        if isinstance(node, Cmp):
            return self.cmp(node.op, kids[0], kids[1])
        if isinstance(node, UnOp):
            return self.unop(node.op, kids[0])
        if isinstance(node, ZExt):
            return self.zext(kids[0], node.width)
        if isinstance(node, SExt):
            return self.sext(kids[0], node.width)
        if isinstance(node, Extract):
            return self.extract(kids[0], node.hi, node.lo)
        if isinstance(node, Concat):
            return self.concat(kids[0], kids[1])
        if isinstance(node, Ite):
            return self.ite(kids[0], kids[1], kids[2])
        if isinstance(node, Load):
            return self.load(kids[0], node.base, node.chain, node.side)
        raise TypeError(type(node))

    # ---- relational wrappers ----------------------------------------------

    def rel_const(self, value: int, width: int) -> RelExpr:
        return shared(self.const(value, width))

    def rel_binop(self, op: str, a: RelExpr, b: RelExpr) -> RelExpr:
        if a.is_shared and b.is_shared:
            return shared(self.binop(op, a.left, b.left))
        return pair(self.binop(op, a.left, b.left), self.binop(op, a.right, b.right))

    def rel_cmp(self, op: str, a: RelExpr, b: RelExpr) -> RelExpr:
        if a.is_shared and b.is_shared:
            return shared(self.cmp(op, a.left, b.left))
        return pair(self.cmp(op, a.left, b.left), self.cmp(op, a.right, b.right))

    def rel_unop(self, op: str, a: RelExpr) -> RelExpr:
        if a.is_shared:
            return shared(self.unop(op, a.left))
        return pair(self.unop(op, a.left), self.unop(op, a.right))

    def rel_zext(self, a: RelExpr, width: int) -> RelExpr:
        if a.is_shared:
            return shared(self.zext(a.left, width))
        return pair(self.zext(a.left, width), self.zext(a.right, width))

    def rel_sext(self, a: RelExpr, width: int) -> RelExpr:
        if a.is_shared:
            return shared(self.sext(a.left, width))
        return pair(self.sext(a.left, width), self.sext(a.right, width))

    def rel_extract(self, a: RelExpr, hi: int, lo: int) -> RelExpr:
        if a.is_shared:
            return shared(self.extract(a.left, hi, lo))
        return pair(self.extract(a.left, hi, lo), self.extract(a.right, hi, lo))

    def rel_concat(self, hi_part: RelExpr, lo_part: RelExpr) -> RelExpr:
        if hi_part.is_shared and lo_part.is_shared:
            return shared(self.concat(hi_part.left, lo_part.left))
        return pair(
            self.concat(hi_part.left, lo_part.left),
            self.concat(hi_part.right, lo_part.right),
        )

    def rel_ite(self, cond: RelExpr, then_e: RelExpr, else_e: RelExpr) -> RelExpr:
        if cond.is_shared and then_e.is_shared and else_e.is_shared:
            return shared(self.ite(cond.left, then_e.left, else_e.left))
        return pair(
            self.ite(cond.left, then_e.left, else_e.left),
            self.ite(cond.right, then_e.right, else_e.right),
        )


def _swap_cmp(op: str) -> str:
    swap = {"lt_u": "gt_u", "lt_s": "gt_s", "gt_u": "lt_u", "gt_s": "lt_s",
            "le_u": "ge_u", "le_s": "ge_s", "ge_u": "le_u", "ge_s": "le_s",
            "eq": "eq", "ne": "ne"}
    return swap[op]


def _children(e: Expr) -> tuple[Expr, ...]:
    if isinstance(e, BinOp):
        return (e.a, e.b)
    if isinstance(e, Cmp):
        return (e.a, e.b)
    if isinstance(e, UnOp):
        return (e.a,)
    if isinstance(e, (ZExt, SExt)):
        return (e.a,)
    if isinstance(e, Extract):
        return (e.a,)
    if isinstance(e, Concat):
        return (e.hi_part, e.lo_part)
    if isinstance(e, Ite):
        return (e.cond, e.then_e, e.else_e)
    if isinstance(e, Load):
        return (e.index,)
    return ()


# ---- DAG size --------------------------------------------------------------


def _count_into(e: Expr, visited: set) -> None:
    stack: list[Expr] = [e]
    while stack:
        node = stack.pop()
        if node.eid in visited:
            continue
        visited.add(node.eid)
        stack.extend(_children(node))
        if isinstance(node, Load):
            sides = ("L", "R") if node.side == "B" else (node.side,)
            for side in sides:
                visited.add(("base", id(node.base), side))
                rec = node.chain
                while rec is not None:
                    rkey = ("st", rec.rid, side)
                    if rkey in visited:
                        break
                    visited.add(rkey)
                    proj_i = rec.index.left if side == "L" else rec.index.right
                    proj_v = rec.value.left if side == "L" else rec.value.right
                    stack.append(proj_i)
                    stack.append(proj_v)
                    rec = rec.prev


def count_exprs(e: RelExpr) -> int:
    """Distinct DAG nodes reachable from both projections; shared once.

    Loads contribute their index closure, one node per store record on the
    load's side (plus those records' index/value closures), and one node for
    the base array, so chains grow the count linearly.
    """
    visited: set = set()
    _count_into(e.left, visited)
    _count_into(e.right, visited)
    return len(visited)


def count_exprs_many(roots: Iterable[Expr]) -> int:
    visited: set = set()
    for r in roots:
        _count_into(r, visited)
    return len(visited)


# ---- concrete evaluation ----------------------------------------------------


def eval_expr(
    e: Expr,
    leaf_env: Mapping[str, int],
    base_reader: Callable[[str, int], int] | None = None,
) -> int:
    """Evaluate a DAG node under a symbol valuation.

    Symbols absent from leaf_env evaluate to 0 (solver don't-cares). Load
    nodes walk their store chain concretely and fall back to base_reader.
    """
    memo: dict[int, int] = {}
    stack: list[tuple[Expr, bool]] = [(e, False)]
    while stack:
        node, ready = stack.pop()
        if node.eid in memo:
            continue
        if not ready:
            stack.append((node, True))
            for k in _children(node):
                if k.eid not in memo:
                    stack.append((k, False))
            continue
        memo[node.eid] = _eval_node(node, memo, leaf_env, base_reader)
    return memo[e.eid]


def _eval_node(node, memo, leaf_env, base_reader) -> int:
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Sym):
        return leaf_env.get(node.label, 0) & _mask(node.width)
    if isinstance(node, BinOp):
        return fold_binop(node.op, memo[node.a.eid], memo[node.b.eid], node.width)
    if isinstance(node, Cmp):
        return fold_cmp(node.op, memo[node.a.eid], memo[node.b.eid], node.a.width)
    if isinstance(node, UnOp):
        return fold_unop(node.op, memo[node.a.eid], node.width)
    if isinstance(node, ZExt):
        return memo[node.a.eid]
    if isinstance(node, SExt):
        return _signed(memo[node.a.eid], node.a.width) & _mask(node.width)
    if isinstance(node, Extract):
        return (memo[node.a.eid] >> node.lo) & _mask(node.width)
    if isinstance(node, Concat):
        return (memo[node.hi_part.eid] << node.lo_part.width) | memo[node.lo_part.eid]
    if isinstance(node, Ite):
        return memo[node.then_e.eid] if memo[node.cond.eid] != 0 else memo[node.else_e.eid]
    if isinstance(node, Load):
        idx = memo[node.index.eid]
        side = "L" if node.side in ("L", "B") else "R"
        rec = node.chain
        while rec is not None:
            ri = rec.index.left if side == "L" else rec.index.right
            if eval_expr(ri, leaf_env, base_reader) == idx:
                rv = rec.value.left if side == "L" else rec.value.right
                return eval_expr(rv, leaf_env, base_reader)
            rec = rec.prev
        if base_reader is None:
            return 0
        return base_reader(side, idx) & 0xFF
    raise TypeError(type(node))


# ---- printing ---------------------------------------------------------------

_OP_GLYPH = {"add": "+", "sub": "-", "mul": "*", "and": "&", "or": "|", "xor": "^"}

_PRINT_DEPTH_CAP = 64


def expr_to_str(e: Expr, depth: int = 0) -> str:
    """Compact infix rendering for reports and debugging. Deep spines are
    elided so printing never blows the recursion limit."""
    if depth > _PRINT_DEPTH_CAP:
        return "..."
    d = depth + 1
    if isinstance(e, Const):
        return str(e.value)
    if isinstance(e, Sym):
        return e.label
    if isinstance(e, BinOp):
        glyph = _OP_GLYPH.get(e.op, f" {e.op} ")
        return f"({expr_to_str(e.a, d)}{glyph}{expr_to_str(e.b, d)})"
    if isinstance(e, Cmp):
        return f"({expr_to_str(e.a, d)} {e.op} {expr_to_str(e.b, d)})"
    if isinstance(e, UnOp):
        return f"{e.op}({expr_to_str(e.a, d)})"
    if isinstance(e, ZExt):
        return f"zext{e.width}({expr_to_str(e.a, d)})"
    if isinstance(e, SExt):
        return f"sext{e.width}({expr_to_str(e.a, d)})"
    if isinstance(e, Extract):
        return f"{expr_to_str(e.a, d)}[{e.hi}:{e.lo}]"
    if isinstance(e, Concat):
        return f"({expr_to_str(e.hi_part, d)} ++ {expr_to_str(e.lo_part, d)})"
    if isinstance(e, Ite):
        return (f"ite({expr_to_str(e.cond, d)}, {expr_to_str(e.then_e, d)}, "
                f"{expr_to_str(e.else_e, d)})")
    if isinstance(e, Load):
        return f"load{e.side}({expr_to_str(e.index, d)})"
    return repr(e)
