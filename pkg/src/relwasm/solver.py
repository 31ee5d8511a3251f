"""SMT translation and solving.

Relational expressions become QF_ABV scripts with named subterms (one
define-fun per DAG node, so sharing survives serialization). Memories become
one unconstrained byte array per base image, overlaid per side with the
materialized policy symbols, then extended with the store chain.

Queries under the expression-count threshold go to a persistent warm
subprocess; larger ones race a portfolio of one-shot solver processes, first
definitive answer wins.
"""

from __future__ import annotations

import os
import re
import select as _select
import shlex
import shutil
import subprocess
import threading
import time
from dataclasses import dataclass, field
from queue import Empty, Queue

from relwasm import symexpr as se
from relwasm.symexpr import RelExpr, count_exprs_many


class SolverUnavailable(Exception):
    pass


class MalformedModel(Exception):
    pass


class TranslationLimit(Exception):
    """Secret policy region too large to encode as per-side store overlays."""


# secret ranges become per-side symbolic store overlays; cap the fill size
MAX_SECRET_FILL = 8192


# ---- configuration -----------------------------------------------------------

ENV_CONFIG_VAR = "RELWASM_SOLVER_CONFIG"


@dataclass
class SolverConfig:
    small_backend: list[str]
    portfolio: list[tuple[str, list[str]]]
    per_query_timeout: float = 10.0
    threshold: int = 1500

    def describe(self) -> str:
        names = ", ".join(name for name, _ in self.portfolio) or "none"
        return (f"small={shlex.join(self.small_backend)} portfolio=[{names}] "
                f"timeout={self.per_query_timeout}s threshold={self.threshold}")


def parse_config_text(text: str) -> SolverConfig:
    """One backend per line, `name: argv...`; the first line must be tagged
    `small:` and names the low-latency backend."""
    small: list[str] | None = None
    portfolio: list[tuple[str, list[str]]] = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if ":" not in line:
            raise SolverUnavailable(
                f"solver config line needs 'name: command': {line!r}")
        name, cmd = line.split(":", 1)
        argv = shlex.split(cmd)
        if not argv:
            raise SolverUnavailable(f"empty command for backend {name!r}")
        if name.strip() == "small":
            if small is not None:
                raise SolverUnavailable("multiple small: lines in solver config")
            small = argv
        else:
            portfolio.append((name.strip(), argv))
    if small is None:
        raise SolverUnavailable("solver config must start with a small: line")
    if not portfolio:
        portfolio = [("small-again", small)]
    return SolverConfig(small, portfolio)


def _jsolver_argv() -> list[str] | None:
    node = shutil.which("node")
    if node is None:
        return None
    here = os.path.dirname(os.path.abspath(__file__))
    shim = os.path.join(here, "jsolver", "z3pipe.mjs")
    deps = os.path.join(here, "jsolver", "node_modules", "z3-solver")
    if not os.path.exists(shim):
        return None
    if not os.path.exists(deps):
        raise SolverUnavailable(
            "the bundled solver shim is missing its npm dependency; run:\n"
            f"  npm install --prefix {os.path.join(here, 'jsolver')}")
    return [node, shim]


def discover_config(config_path: str | None = None,
                    timeout: float = 10.0,
                    threshold: int = 1500) -> SolverConfig:
    """Resolution order: explicit path, environment variable, z3 on PATH,
    bundled Node shim."""
    path = config_path or os.environ.get(ENV_CONFIG_VAR)
    if path:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = parse_config_text(fh.read())
        cfg.per_query_timeout = timeout
        cfg.threshold = threshold
        return cfg
    z3 = shutil.which("z3")
    if z3 is not None:
        return SolverConfig(
            small_backend=[z3, "-in"],
            portfolio=[
                ("z3", [z3, "-in"]),
                ("z3-seed7", [z3, "-in", "smt.random_seed=7"]),
                ("z3-seed43", [z3, "-in", "smt.random_seed=43"]),
            ],
            per_query_timeout=timeout,
            threshold=threshold,
        )
    shim = _jsolver_argv()
    if shim is not None:
        return SolverConfig(
            small_backend=shim,
            portfolio=[("z3-wasm", shim)],
            per_query_timeout=timeout,
            threshold=threshold,
        )
    raise SolverUnavailable(
        "no SMT backend found: install z3, or node plus the bundled shim "
        "dependency (npm install --prefix src/relwasm/jsolver), or point "
        f"--solver-config / ${ENV_CONFIG_VAR} at a config file")


# ---- query construction --------------------------------------------------------

QUERY_KINDS = ("MemIndexDivergence", "BranchDivergence", "PolicyProbe",
               "InvariantAssert", "Feasibility")


@dataclass
class QueryFormula:
    kind: str
    declarations: str          # declare-fun / define-fun section
    assertion: str             # assert section
    expr_count: int
    wants_model: bool
    symbols: list[tuple[str, int]] = field(default_factory=list)
    name_map: dict[str, str] = field(default_factory=dict)
    note: str = ""

    @property
    def script(self) -> str:
        if not self.declarations:
            return self.assertion
        return self.declarations + "\n" + self.assertion


def _hex(value: int, width: int) -> str:
    if width % 4 == 0:
        return f"#x{value & ((1 << width) - 1):0{width // 4}x}"
    return f"#b{value & ((1 << width) - 1):0{width}b}"


_NAME_OK = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")

_SMT_RESERVED = frozenset((
    "let", "as", "exists", "forall", "match", "par", "assert", "select",
    "store", "true", "false", "and", "or", "not", "xor", "ite", "distinct",
    "concat", "model", "error", "lambda", "define", "declare",
))


class SmtWriter:
    """Serializes DAG nodes to define-funs with term sharing by node id."""

    def __init__(self):
        self.decls: list[str] = []
        self.defs: list[str] = []
        self.asserts: list[str] = []
        self._node_names: dict[int, str] = {}
        self._declared: set[str] = set()
        self._mem_names: dict[tuple, str] = {}
        self.symbols: list[tuple[str, int]] = []
        self.name_map: dict[str, str] = {}

    # -- naming

    def _sym_name(self, node: se.Sym) -> str:
        if _NAME_OK.match(node.label) and node.label not in _SMT_RESERVED:
            return node.label
        return f"s{node.eid}"

    def _declare_sym(self, node: se.Sym) -> str:
        name = self._sym_name(node)
        if name not in self._declared:
            self._declared.add(name)
            self.decls.append(f"(declare-fun {name} () (_ BitVec {node.width}))")
            self.symbols.append((name, node.width))
            self.name_map[name] = node.label
        return name

    def _declare_array(self, base_id: int) -> str:
        name = f"A{base_id}"
        if name not in self._declared:
            self._declared.add(name)
            self.decls.append(
                f"(declare-fun {name} () (Array (_ BitVec 32) (_ BitVec 8)))")
        return name

    # -- memory states

    def _declare_raw(self, name: str, width: int) -> str:
        if name not in self._declared:
            self._declared.add(name)
            self.decls.append(f"(declare-fun {name} () (_ BitVec {width}))")
            self.symbols.append((name, width))
            self.name_map[name] = name
        return name

    def _base_name(self, base, side: str) -> str:
        key = ("base", base.base_id, side)
        got = self._mem_names.get(key)
        if got is not None:
            return got
        arr = self._declare_array(base.base_id)
        term = arr
        if side in ("L", "R"):
            # secret bytes hold independent per-side values even before any
            # access materializes them; encode the whole policy range so a
            # symbolic-index load can witness the difference
            total = 0
            for rng in base.policies:
                if rng.classification != "secret":
                    continue
                total += rng.end - rng.start + 1
                if total > MAX_SECRET_FILL:
                    raise TranslationLimit(
                        f"secret policy ranges exceed {MAX_SECRET_FILL} bytes")
                for addr in range(rng.start, rng.end + 1):
                    sym = self._declare_raw(f"h_mem{addr}_{side}", 8)
                    term = f"(store {term} {_hex(addr, 32)} {sym})"
        for addr in sorted(base.materialized()):
            rel = base.materialized()[addr]
            leaf = rel.left if side in ("L", "B") else rel.right
            term = (f"(store {term} {_hex(addr, 32)} "
                    f"{self.emit(leaf)})")
        name = f"m{base.base_id}_{side}_base"
        self.defs.append(
            f"(define-fun {name} () (Array (_ BitVec 32) (_ BitVec 8)) {term})")
        self._mem_names[key] = name
        return name

    def _chain_name_iter(self, base, rec, side: str) -> str:
        # chains can be thousands of records deep: find the deepest cached
        # suffix iteratively, then emit forward
        stack = []
        cur = rec
        while cur is not None and ("rec", base.base_id, cur.rid, side) not in self._mem_names:
            stack.append(cur)
            cur = cur.prev
        if cur is None:
            prev = self._base_name(base, side)
        else:
            prev = self._mem_names[("rec", base.base_id, cur.rid, side)]
        proj = "left" if side in ("L", "B") else "right"
        for r in reversed(stack):
            idx = self.emit(getattr(r.index, proj))
            val = self.emit(getattr(r.value, proj))
            name = f"m{base.base_id}_{side}_{r.rid}"
            self.defs.append(
                f"(define-fun {name} () (Array (_ BitVec 32) (_ BitVec 8)) "
                f"(store {prev} {idx} {val}))")
            self._mem_names[("rec", base.base_id, r.rid, side)] = name
            prev = name
        return prev

    # -- expression emission (iterative post-order)

    def emit(self, root: se.Expr) -> str:
        got = self._node_names.get(root.eid)
        if got is not None:
            return got
        stack: list[tuple[se.Expr, bool]] = [(root, False)]
        while stack:
            node, ready = stack.pop()
            if node.eid in self._node_names:
                continue
            if not ready:
                stack.append((node, True))
                for k in se._children(node):
                    if k.eid not in self._node_names:
                        stack.append((k, False))
                if isinstance(node, se.Load):
                    side = node.side
                    # force chain terms to exist before the select
                    self._chain_name_iter(node.base, node.chain, side)
                continue
            self._node_names[node.eid] = self._emit_node(node)
        return self._node_names[root.eid]

    def _emit_node(self, node: se.Expr) -> str:
        if isinstance(node, se.Const):
            return _hex(node.value, node.width)
        if isinstance(node, se.Sym):
            return self._declare_sym(node)
        name = f"e{node.eid}"
        body = self._node_body(node)
        self.defs.append(
            f"(define-fun {name} () (_ BitVec {node.width}) {body})")
        return name

    def _node_body(self, node: se.Expr) -> str:
        nm = self._node_names
        if isinstance(node, se.BinOp):
            a, b = nm[node.a.eid], nm[node.b.eid]
            w = node.width
            simple = {
                "add": "bvadd", "sub": "bvsub", "mul": "bvmul",
                "and": "bvand", "or": "bvor", "xor": "bvxor",
                "div_u": "bvudiv", "div_s": "bvsdiv",
                "rem_u": "bvurem", "rem_s": "bvsrem",
            }
            if node.op in simple:
                return f"({simple[node.op]} {a} {b})"
            mask = _hex(w - 1, w)
            sh = f"(bvand {b} {mask})"
            if node.op == "shl":
                return f"(bvshl {a} {sh})"
            if node.op == "shr_u":
                return f"(bvlshr {a} {sh})"
            if node.op == "shr_s":
                return f"(bvashr {a} {sh})"
            wc = _hex(w, w)
            if node.op == "rotl":
                return (f"(bvor (bvshl {a} {sh}) "
                        f"(bvlshr {a} (bvsub {wc} {sh})))")
            if node.op == "rotr":
                return (f"(bvor (bvlshr {a} {sh}) "
                        f"(bvshl {a} (bvsub {wc} {sh})))")
            raise ValueError(node.op)
        if isinstance(node, se.Cmp):
            return (f"(ite {self._cmp_bool(node)} "
                    f"{_hex(1, 32)} {_hex(0, 32)})")
        if isinstance(node, se.UnOp):
            a = nm[node.a.eid]
            w = node.width
            if node.op == "popcnt":
                bits = [
                    f"((_ zero_extend {w - 1}) ((_ extract {i} {i}) {a}))"
                    for i in range(w)
                ]
                return "(bvadd " + " ".join(bits) + ")"
            if node.op == "clz":
                term = _hex(w, w)
                for pos in range(w):
                    # highest set bit checked outermost
                    term = (f"(ite (= ((_ extract {pos} {pos}) {a}) #b1) "
                            f"{_hex(w - 1 - pos, w)} {term})")
                return term
            if node.op == "ctz":
                term = _hex(w, w)
                for pos in range(w - 1, -1, -1):
                    term = (f"(ite (= ((_ extract {pos} {pos}) {a}) #b1) "
                            f"{_hex(pos, w)} {term})")
                return term
            raise ValueError(node.op)
        if isinstance(node, se.ZExt):
            return (f"((_ zero_extend {node.width - node.a.width}) "
                    f"{nm[node.a.eid]})")
        if isinstance(node, se.SExt):
            return (f"((_ sign_extend {node.width - node.a.width}) "
                    f"{nm[node.a.eid]})")
        if isinstance(node, se.Extract):
            return f"((_ extract {node.hi} {node.lo}) {nm[node.a.eid]})"
        if isinstance(node, se.Concat):
            return f"(concat {nm[node.hi_part.eid]} {nm[node.lo_part.eid]})"
        if isinstance(node, se.Ite):
            c = node.cond
            cond = (f"(distinct {nm[c.eid]} {_hex(0, c.width)})")
            return f"(ite {cond} {nm[node.then_e.eid]} {nm[node.else_e.eid]})"
        if isinstance(node, se.Load):
            mem = self._chain_name_iter(node.base, node.chain, node.side)
            return f"(select {mem} {nm[node.index.eid]})"
        raise TypeError(type(node))

    def _cmp_bool(self, node: se.Cmp) -> str:
        a = self._node_names[node.a.eid]
        b = self._node_names[node.b.eid]
        ops = {"eq": "=", "ne": "distinct", "lt_u": "bvult", "lt_s": "bvslt",
               "gt_u": "bvugt", "gt_s": "bvsgt", "le_u": "bvule",
               "le_s": "bvsle", "ge_u": "bvuge", "ge_s": "bvsge"}
        return f"({ops[node.op]} {a} {b})"

    def bool_of(self, node: se.Expr, truthy: bool = True) -> str:
        """Boolean term for node != 0 (or == 0 with truthy=False).
        Comparison nodes translate to their native boolean form."""
        if isinstance(node, se.Cmp):
            self.emit(node.a)
            self.emit(node.b)
            b = self._cmp_bool(node)
            return b if truthy else f"(not {b})"
        t = self.emit(node)
        rel = "distinct" if truthy else "="
        return f"({rel} {t} {_hex(0, node.width)})"

    def add_assert(self, term: str):
        self.asserts.append(f"(assert {term})")

    def declarations_text(self) -> str:
        return "\n".join(self.decls + self.defs)

    def assertion_text(self) -> str:
        return "\n".join(self.asserts)


def translate(e: RelExpr, mem=None) -> tuple[str, str, str]:
    """Standalone translation of one relational expression: returns the left
    term, the right term, and the declarations/definitions preamble."""
    w = SmtWriter()
    left = w.emit(e.left)
    right = w.emit(e.right)
    return left, right, "\n".join(w.decls + w.defs)


PcConjunct = tuple[str, RelExpr]  # ("truthy" | "releq", value)


def build_query(kind: str, pc: list[PcConjunct], goal: tuple,
                note: str = "") -> QueryFormula:
    """Assemble a query: the path condition is asserted first, then the goal,
    so any model satisfies the path (required for valid replay).

    goal forms:
      ("none",)                      feasibility of pc alone
      ("distinct", rel)              left != right
      ("branch_div", rel)            truthy(left) and not truthy(right)
      ("neq_const_either", rel, c)   left != c or right != c
    """
    assert kind in QUERY_KINDS, kind
    w = SmtWriter()
    roots: list[se.Expr] = []
    for tag, rel in pc:
        roots.extend((rel.left, rel.right))
        if tag == "truthy":
            w.add_assert(w.bool_of(rel.left))
            if not rel.is_shared:
                w.add_assert(w.bool_of(rel.right))
        elif tag == "releq":
            if not rel.is_shared:
                w.add_assert(f"(= {w.emit(rel.left)} {w.emit(rel.right)})")
        else:
            raise ValueError(tag)
    wants_model = True
    if goal[0] == "none":
        wants_model = False
    elif goal[0] == "distinct":
        rel = goal[1]
        roots.extend((rel.left, rel.right))
        w.add_assert(f"(distinct {w.emit(rel.left)} {w.emit(rel.right)})")
    elif goal[0] == "branch_div":
        rel = goal[1]
        roots.extend((rel.left, rel.right))
        w.add_assert(w.bool_of(rel.left, truthy=True))
        w.add_assert(w.bool_of(rel.right, truthy=False))
    elif goal[0] == "neq_const_either":
        rel, c = goal[1], goal[2]
        roots.extend((rel.left, rel.right))
        cv = _hex(c, rel.width)
        w.add_assert(f"(or (distinct {w.emit(rel.left)} {cv}) "
                     f"(distinct {w.emit(rel.right)} {cv}))")
    else:
        raise ValueError(goal[0])
    return QueryFormula(
        kind=kind,
        declarations=w.declarations_text(),
        assertion=w.assertion_text(),
        expr_count=count_exprs_many(roots),
        wants_model=wants_model,
        symbols=w.symbols,
        name_map=w.name_map,
        note=note,
    )


# ---- answers and model parsing -------------------------------------------------


@dataclass
class ArrayModel:
    default: int = 0
    stores: dict[int, int] = field(default_factory=dict)

    def read(self, idx: int) -> int:
        return self.stores.get(idx, self.default)


@dataclass
class SolverAnswer:
    status: str  # sat | unsat | unknown | timeout | error
    model: dict[str, int] | None = None
    arrays: dict[str, ArrayModel] | None = None
    responder: str = ""
    elapsed: float = 0.0


def _finish_model(model: dict[str, int] | None,
                  q: QueryFormula) -> dict[str, int]:
    # absent symbols are solver don't-cares; they default to 0
    out = dict(model or {})
    for name, _width in q.symbols:
        out.setdefault(name, 0)
    return out


def _tokenize_sexp(text: str) -> list[str]:
    return re.findall(r"\(|\)|[^\s()]+", text)


def _read_tree(toks: list[str], pos: int):
    if toks[pos] == "(":
        out = []
        pos += 1
        while pos < len(toks) and toks[pos] != ")":
            node, pos = _read_tree(toks, pos)
            out.append(node)
        if pos >= len(toks):
            raise MalformedModel("unbalanced parentheses in model")
        return out, pos + 1
    return toks[pos], pos + 1


def _bv_value(node) -> int | None:
    if isinstance(node, str):
        if node.startswith("#x"):
            return int(node[2:], 16)
        if node.startswith("#b"):
            return int(node[2:], 2)
        return None
    if (isinstance(node, list) and len(node) == 3 and node[0] == "_"
            and isinstance(node[1], str) and node[1].startswith("bv")):
        return int(node[1][2:])
    return None


def _array_value(node, aux: dict[str, ArrayModel]) -> ArrayModel | None:
    # ((as const (Array ...)) v)
    if (isinstance(node, list) and len(node) == 2 and isinstance(node[0], list)
            and node[0][:2] == ["as", "const"]):
        v = _bv_value(node[1])
        if v is None:
            return None
        return ArrayModel(default=v)
    # (store inner idx val)
    if isinstance(node, list) and node and node[0] == "store" and len(node) == 4:
        inner = _array_value(node[1], aux)
        idx = _bv_value(node[2])
        val = _bv_value(node[3])
        if inner is None or idx is None or val is None:
            return None
        out = ArrayModel(inner.default, dict(inner.stores))
        out.stores[idx] = val
        return out
    # (_ as-array k!N): resolved against auxiliary function definitions
    if (isinstance(node, list) and len(node) == 3 and node[0] == "_"
            and node[1] == "as-array" and isinstance(node[2], str)):
        return aux.get(node[2])
    # (lambda ((x S)) body); z3 sometimes prints functions this way
    if isinstance(node, list) and node and node[0] == "lambda" and len(node) == 3:
        var = node[1][0][0]
        return _ite_chain_to_array(node[2], var)
    return None


def _ite_chain_to_array(body, var: str) -> ArrayModel | None:
    stores: dict[int, int] = {}
    node = body
    while isinstance(node, list) and node and node[0] == "ite":
        cond, then_v, else_v = node[1], node[2], node[3]
        if not (isinstance(cond, list) and len(cond) == 3 and cond[0] == "="):
            return None
        lhs, rhs = cond[1], cond[2]
        idx = _bv_value(rhs) if lhs == var else _bv_value(lhs)
        val = _bv_value(then_v)
        if idx is None or val is None:
            return None
        stores[idx] = val
        node = else_v
    dflt = _bv_value(node)
    if dflt is None:
        return None
    return ArrayModel(default=dflt, stores=stores)


def parse_model(raw: str) -> tuple[dict[str, int], dict[str, ArrayModel]]:
    """Extract bitvector and array assignments from (get-model) output.
    Unbalanced or unparseable top-level structure raises MalformedModel."""
    text = raw.strip()
    if not text:
        raise MalformedModel("empty model output")
    toks = _tokenize_sexp(text)
    trees = []
    pos = 0
    while pos < len(toks):
        t, pos = _read_tree(toks, pos)
        trees.append(t)
    for t in trees:
        if isinstance(t, list) and t and t[0] == "error":
            raise MalformedModel(f"solver error in model output: {t}")
    defs: list[list] = []
    for t in trees:
        if isinstance(t, list):
            if t and t[0] == "model":
                defs.extend(x for x in t[1:] if isinstance(x, list))
            elif t and t[0] == "define-fun":
                defs.append(t)
            else:
                defs.extend(x for x in t if isinstance(x, list))
    model: dict[str, int] = {}
    # two passes so as-array references resolve regardless of print order
    aux_arrays: dict[str, ArrayModel] = {}
    for d in defs:
        if len(d) >= 5 and d[0] == "define-fun" and isinstance(d[2], list) \
                and len(d[2]) == 1:
            # unary function: candidate ite-chain for as-array
            var = d[2][0][0]
            arr = _ite_chain_to_array(d[4], var)
            if arr is not None:
                aux_arrays[d[1]] = arr
    arrays: dict[str, ArrayModel] = {}
    for d in defs:
        if not (len(d) >= 5 and d[0] == "define-fun" and d[2] == []):
            continue
        name, body = d[1], d[4]
        v = _bv_value(body)
        if v is not None:
            model[name] = v
            continue
        arr = _array_value(body, aux_arrays)
        if arr is not None:
            arrays[name] = arr
    return model, arrays


# ---- backends ------------------------------------------------------------------

_PREAMBLE = ("(set-option :print-success false)\n"
             "(set-option :produce-models true)\n"
             "(set-logic QF_ABV)\n")


def _extract_status(out: str) -> tuple[str, str]:
    """First sat/unsat/unknown line, plus everything after it. A solver
    error before the status poisons the answer."""
    lines = out.splitlines()
    for i, line in enumerate(lines):
        t = line.strip()
        if t.startswith("(error"):
            return "error", ""
        if t in ("sat", "unsat", "unknown"):
            return t, "\n".join(lines[i + 1:])
    return "error", out


class SmallBackend:
    """One persistent solver process; queries are isolated with push/pop so
    per-query declarations never collide."""

    def __init__(self, argv: list[str], timeout: float):
        self.argv = argv
        self.timeout = timeout
        self.proc: subprocess.Popen | None = None
        self._buf = bytearray()

    def _spawn(self):
        self.proc = subprocess.Popen(
            self.argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL)
        self._buf = bytearray()
        self._send(_PREAMBLE)

    def _send(self, text: str):
        assert self.proc is not None and self.proc.stdin is not None
        self.proc.stdin.write(text.encode())
        self.proc.stdin.flush()

    def _read_line(self, deadline: float) -> str | None:
        assert self.proc is not None and self.proc.stdout is not None
        fd = self.proc.stdout.fileno()
        while True:
            nl = self._buf.find(b"\n")
            if nl >= 0:
                line = self._buf[:nl].decode(errors="replace")
                del self._buf[:nl + 1]
                return line
            remain = deadline - time.monotonic()
            if remain <= 0:
                return None
            ready, _, _ = _select.select([fd], [], [], remain)
            if not ready:
                return None
            chunk = os.read(fd, 65536)
            if not chunk:
                return None  # solver process died
            self._buf.extend(chunk)

    def _read_balanced(self, deadline: float) -> str | None:
        """Read lines until parentheses balance (for model output)."""
        depth = 0
        out: list[str] = []
        started = False
        while True:
            line = self._read_line(deadline)
            if line is None:
                return None
            out.append(line)
            for ch in line:
                if ch == "(":
                    depth += 1
                    started = True
                elif ch == ")":
                    depth -= 1
            if started and depth <= 0:
                return "\n".join(out)

    def _kill(self):
        if self.proc is not None:
            try:
                self.proc.kill()
                self.proc.wait(timeout=5)
            except Exception:
                pass
            self.proc = None

    def close(self):
        if self.proc is not None:
            try:
                self._send("(exit)\n")
            except Exception:
                pass
            self._kill()

    def query(self, q: QueryFormula) -> SolverAnswer:
        t0 = time.monotonic()
        try:
            if self.proc is None or self.proc.poll() is not None:
                self._spawn()
            self._send("(push 1)\n" + q.script + "\n(check-sat)\n")
        except Exception:
            self._kill()
            return SolverAnswer("error", responder="small",
                                elapsed=time.monotonic() - t0)
        deadline = t0 + self.timeout
        status = self._read_line(deadline)
        if status is None:
            self._kill()  # leave no half-answered process behind
            return SolverAnswer("timeout", responder="small",
                                elapsed=time.monotonic() - t0)
        status = status.strip()
        model = None
        arrays = None
        if status == "sat":
            if q.wants_model:
                try:
                    self._send("(get-model)\n")
                    raw = self._read_balanced(deadline)
                    if raw is None:
                        self._kill()
                        return SolverAnswer("timeout", responder="small",
                                            elapsed=time.monotonic() - t0)
                    model, arrays = parse_model(raw)
                except MalformedModel:
                    self._kill()
                    return SolverAnswer("error", responder="small",
                                        elapsed=time.monotonic() - t0)
            model = _finish_model(model, q)
        if status in ("sat", "unsat", "unknown"):
            try:
                self._send("(pop 1)\n")
            except Exception:
                self._kill()
            return SolverAnswer(status, model=model, arrays=arrays,
                                responder="small",
                                elapsed=time.monotonic() - t0)
        self._kill()
        return SolverAnswer("error", responder="small",
                            elapsed=time.monotonic() - t0)


def _portfolio_worker(name: str, argv: list[str], script: str, timeout: float,
                      results: Queue, procs: list, lock: threading.Lock):
    try:
        p = subprocess.Popen(argv, stdin=subprocess.PIPE,
                             stdout=subprocess.PIPE,
                             stderr=subprocess.DEVNULL, text=True)
    except Exception:
        results.put((name, "error", ""))
        return
    with lock:
        procs.append(p)
    try:
        out, _ = p.communicate(script, timeout=timeout)
    except subprocess.TimeoutExpired:
        p.kill()
        try:
            p.communicate(timeout=5)
        except Exception:
            pass
        results.put((name, "timeout", ""))
        return
    except Exception:
        try:
            p.kill()
        except Exception:
            pass
        results.put((name, "error", ""))
        return
    status, rest = _extract_status(out)
    results.put((name, status, rest))


class PortfolioBackend:
    """Race identical one-shot queries across all configured commands."""

    def __init__(self, commands: list[tuple[str, list[str]]], timeout: float):
        self.commands = commands
        self.timeout = timeout

    def query(self, q: QueryFormula) -> SolverAnswer:
        t0 = time.monotonic()
        script = _PREAMBLE + q.script + "\n(check-sat)\n"
        if q.wants_model:
            script += "(get-model)\n"
        script += "(exit)\n"
        results: Queue = Queue()
        procs: list[subprocess.Popen] = []
        lock = threading.Lock()
        threads = []
        for name, argv in self.commands:
            t = threading.Thread(
                target=_portfolio_worker,
                args=(name, argv, script, self.timeout, results, procs, lock),
                daemon=True)
            t.start()
            threads.append(t)
        seen = 0
        fallback = "error"
        winner: SolverAnswer | None = None
        while seen < len(self.commands):
            try:
                name, status, rest = results.get(
                    timeout=self.timeout + 10)
            except Empty:
                break
            seen += 1
            if status in ("sat", "unsat", "unknown"):
                model = None
                arrays = None
                if status == "sat":
                    if q.wants_model:
                        try:
                            model, arrays = parse_model(rest)
                        except MalformedModel:
                            fallback = "error"
                            continue
                    model = _finish_model(model, q)
                winner = SolverAnswer(status, model=model, arrays=arrays,
                                      responder=name,
                                      elapsed=time.monotonic() - t0)
                break
            if status == "timeout":
                fallback = "timeout"
            elif fallback != "timeout":
                fallback = "error"
        with lock:
            for p in procs:
                if p.poll() is None:
                    try:
                        p.kill()
                    except Exception:
                        pass
        if winner is not None:
            return winner
        return SolverAnswer(fallback, responder="portfolio",
                            elapsed=time.monotonic() - t0)


class SolverHost:
    """Expression-count dispatch between the two backend modes."""

    def __init__(self, config: SolverConfig):
        self.config = config
        self.small = SmallBackend(config.small_backend,
                                  config.per_query_timeout)
        self.portfolio = PortfolioBackend(config.portfolio,
                                          config.per_query_timeout)

    def dispatch(self, q: QueryFormula) -> SolverAnswer:
        if q.expr_count <= self.config.threshold:
            return self.small.query(q)
        return self.portfolio.query(q)

    def close(self):
        self.small.close()
