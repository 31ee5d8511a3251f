"""Relational symbolic linear memory.

A memory value is a persistent handle onto an append-only chain of byte-wide
store records over a policy-initialized base image. Forked paths keep their
own handles; older handles never observe younger stores.
"""

from __future__ import annotations

from relwasm import symexpr as se
from relwasm.symexpr import ExprContext, RelExpr
from relwasm.wast import PolicyRange

PAGE_SIZE = 65536


class BaseImage:
    """Initial memory environment: classification ranges plus lazily
    materialized per-byte symbols. Concrete content only ever enters memory
    through store records, so the image holds symbols and nothing else."""

    _next_base_id = 0

    def __init__(self, ctx: ExprContext, pages: int,
                 policies: list[PolicyRange], tag: str = ""):
        self.ctx = ctx
        self.pages = pages
        self.size = pages * PAGE_SIZE
        self.policies = list(policies)
        self.base_id = BaseImage._next_base_id
        BaseImage._next_base_id += 1
        self.has_secret = any(p.classification == "secret" for p in policies)
        # tag distinguishes the byte symbols of a havoc-fresh image from the
        # initial image's (the labels are hash-consed by name)
        self.tag = tag
        self._bytes: dict[int, RelExpr] = {}
        self.next_rid = 0

    def classify(self, addr: int) -> str:
        for p in self.policies:
            if p.start <= addr <= p.end:
                return p.classification
        return "public"

    def byte(self, addr: int) -> RelExpr:
        got = self._bytes.get(addr)
        if got is not None:
            return got
        if self.classify(addr) == "secret":
            v = self.ctx.secret_pair(f"h_mem{addr}{self.tag}", 8)
        else:
            v = self.ctx.public_sym(f"l_mem{addr}{self.tag}", 8)
        self._bytes[addr] = v
        return v

    def materialized(self) -> dict[int, RelExpr]:
        return self._bytes


class StoreRecord:
    __slots__ = ("rid", "index", "value", "prev")

    def __init__(self, rid: int, index: RelExpr, value: RelExpr,
                 prev: StoreRecord | None):
        self.rid = rid
        self.index = index
        self.value = value
        self.prev = prev

    @property
    def is_shared(self) -> bool:
        return self.index.is_shared and self.value.is_shared


class SymMemory:
    """Immutable handle: (image, newest record, generation)."""

    __slots__ = ("ctx", "image", "chain", "generation")

    def __init__(self, ctx: ExprContext, image: BaseImage,
                 chain: StoreRecord | None = None, generation: int = 0):
        self.ctx = ctx
        self.image = image
        self.chain = chain
        self.generation = generation

    @classmethod
    def initial(cls, ctx: ExprContext, pages: int,
                policies: list[PolicyRange]) -> "SymMemory":
        return cls(ctx, BaseImage(ctx, pages, policies))

    @property
    def size(self) -> int:
        return self.image.size


def mem_store(m: SymMemory, index: RelExpr, value: RelExpr,
              width: int) -> SymMemory:
    """Append `width` little-endian byte records; returns a new handle."""
    if value.width != 8 * width:
        raise se.WidthMismatch(f"store width {value.width} != {8 * width}")
    ctx = m.ctx
    chain = m.chain
    for k in range(width):
        byte_k = ctx.rel_extract(value, 8 * k + 7, 8 * k)
        idx_k = index if k == 0 else ctx.rel_binop(
            "add", index, ctx.rel_const(k, 32))
        rid = m.image.next_rid
        m.image.next_rid += 1
        chain = StoreRecord(rid, idx_k, byte_k, chain)
    return SymMemory(ctx, m.image, chain, m.generation + width)


def _shared_const(e: RelExpr) -> int | None:
    if e.is_shared and isinstance(e.left, se.Const):
        return e.left.value
    return None


def _must_differ(ctx: ExprContext, a: RelExpr, b: RelExpr) -> bool:
    """True when the normalized difference folds to a nonzero constant in
    both projections, i.e. the two indices provably never alias. Purely
    structural: relies on the rewriter, never on the solver."""
    dl = ctx.binop("sub", a.left, b.left)
    if not (isinstance(dl, se.Const) and dl.value != 0):
        return False
    if a.is_shared and b.is_shared:
        return True
    dr = ctx.binop("sub", a.right, b.right)
    return isinstance(dr, se.Const) and dr.value != 0


def _load_byte(m: SymMemory, index: RelExpr) -> RelExpr:
    """Resolve one byte read against the chain, structurally only.

    Newest-first walk: identical relational indices are a definite hit; a
    nonzero constant index difference (which covers distinct concrete
    addresses and same-base offsets) is a definite miss; anything else stops
    the walk and the remaining chain is captured in a symbolic Load node.
    """
    ctx = m.ctx
    qc = _shared_const(index)
    rec = m.chain
    while rec is not None:
        if index == rec.index:
            return rec.value
        if _must_differ(ctx, index, rec.index):
            rec = rec.prev
            continue
        break
    if rec is None and qc is not None:
        return m.image.byte(qc)
    # symbolic residue: resolved by array theory at solver time
    if (index.is_shared and not m.image.has_secret
            and _chain_all_shared(rec)):
        return se.shared(ctx.load(index.left, m.image, rec, "B"))
    return se.pair(
        ctx.load(index.left, m.image, rec, "L"),
        ctx.load(index.right, m.image, rec, "R"),
    )


def _chain_all_shared(rec: StoreRecord | None) -> bool:
    while rec is not None:
        if not rec.is_shared:
            return False
        rec = rec.prev
    return True


def mem_load(m: SymMemory, index: RelExpr, width: int,
             sign_extend: bool, target_width: int) -> RelExpr:
    """Compose `width` byte reads little-endian, then extend to
    target_width."""
    ctx = m.ctx
    acc: RelExpr | None = None
    for k in range(width):
        idx_k = index if k == 0 else ctx.rel_binop(
            "add", index, ctx.rel_const(k, 32))
        b = _load_byte(m, idx_k)
        acc = b if acc is None else ctx.rel_concat(b, acc)
    assert acc is not None
    if target_width > acc.width:
        if sign_extend:
            return ctx.rel_sext(acc, target_width)
        return ctx.rel_zext(acc, target_width)
    return acc
