"""Verdict aggregation, counterexample replay, and report rendering.

Replay is the oracle for every Violation: the two model valuations are run
through the independent concrete interpreter and the flagged site must show
a divergent branch outcome or effective address between the runs. Models
from invariant-mode analyses may be phrased over havoc symbols that do not
name entry inputs; for those, replay falls back to canonical distinct
secret assignments and confirms if any attempt exhibits the divergence.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

from .concrete import DEFAULT_FUEL, OutOfFuel, ReplayTrap, run_function
from .solver import ArrayModel
from .wast import ConcreteArg, EntrySpec, Instr, ModuleAst, SymbolicArg

PAGE_SIZE = 65536


@dataclass
class ReplayResult:
    status: str  # "confirmed" | "refuted"
    reason: str = ""
    attempts: int = 0

    def to_dict(self) -> dict:
        return {"status": self.status, "reason": self.reason,
                "attempts": self.attempts}


def _merged_arrays(arrays: dict) -> ArrayModel:
    merged = ArrayModel()
    for name in sorted(arrays):
        am = arrays[name]
        if merged.default == 0 and am.default:
            merged.default = am.default
        for idx, val in am.stores.items():
            merged.stores.setdefault(idx, val)
    return merged


def _initial_memory(ast: ModuleAst, model: dict, arrays: dict, side: str,
                    missing_secret: int) -> bytearray:
    pages = ast.memory_decl[0] if ast.memory_decl else 0
    size = pages * PAGE_SIZE
    arr = _merged_arrays(arrays or {})
    buf = bytearray([arr.default & 0xFF]) * size if arr.default else bytearray(size)
    for idx, val in arr.stores.items():
        if 0 <= idx < size:
            buf[idx] = val & 0xFF
    for label, val in model.items():
        # havoc symbols (h_mem2048_hv3_L and the like) name a mid-loop byte,
        # not an initial one; only exact initial-image labels seed the buffer
        m = re.fullmatch(r"l_mem(\d+)", label)
        if m is None:
            m = re.fullmatch(rf"h_mem(\d+)_{side}", label)
        if m is not None:
            addr = int(m.group(1))
            if addr < size:
                buf[addr] = val & 0xFF
    for p in ast.policies:
        if p.classification != "secret":
            continue
        for addr in range(p.start, min(p.end, size - 1) + 1):
            if f"h_mem{addr}_{side}" not in model:
                buf[addr] = missing_secret & 0xFF
    return buf


def _entry_args(entry: EntrySpec, model: dict, side: str,
                missing_secret: int) -> list[int]:
    args = []
    for a in entry.args:
        if isinstance(a, ConcreteArg):
            args.append(a.value)
        elif a.classification == "secret":
            args.append(model.get(f"{a.label}_{side}", missing_secret))
        else:
            args.append(model.get(a.label, 0))
    return args


def replay(ast: ModuleAst, entry: EntrySpec, model: dict, arrays: dict,
           flagged_site: Instr, fuel: int = DEFAULT_FUEL) -> ReplayResult:
    """Dual concrete execution under the counterexample valuations.

    Confirmed iff both executions visit the flagged instruction and their
    recorded per-visit values (branch truthiness / effective address / jump
    index) differ as sequences. Attempt 1 is model-faithful; later attempts
    re-fill secrets the model left unconstrained with distinct canonical
    values, which covers models phrased over loop-havoc symbols.
    """
    model = model or {}
    reason = "no divergence at flagged site"
    # (left missing-secret fill, right missing-secret fill)
    attempts = [(0, 0), (0, 1), (1, 0)]
    for n, (fill_l, fill_r) in enumerate(attempts, start=1):
        seqs = []
        failure = None
        for side, fill in (("L", fill_l), ("R", fill_r)):
            mem = _initial_memory(ast, model, arrays, side, fill)
            args = _entry_args(entry, model, side, fill)
            try:
                out = run_function(ast, entry.function_name, args, mem=mem,
                                   fuel=fuel, watch_instr=flagged_site)
            except ReplayTrap as t:
                failure = f"execution trapped: {t.reason}"
                break
            except OutOfFuel:
                failure = "fuel exhausted before site"
                break
            seqs.append(out.machine.watch_values)
        if failure is not None:
            reason = failure
            continue
        left, right = seqs
        if not left or not right:
            reason = "flagged site not reached in both executions"
            continue
        if left != right:
            return ReplayResult(status="confirmed", attempts=n)
    return ReplayResult(status="refuted", reason=reason, attempts=len(attempts))


# ---- the report ------------------------------------------------------------------


@dataclass
class AnalysisReport:
    entry: str
    verdicts: list = field(default_factory=list)
    counters: dict = field(default_factory=dict)
    completion: dict = field(default_factory=dict)
    replay_results: list = field(default_factory=list)
    invariants: list = field(default_factory=list)

    @classmethod
    def from_engine(cls, eng, wall_time: float) -> "AnalysisReport":
        assert eng.ss_count <= eng.fs_count
        reasons = list(eng.incomplete_reasons)
        return cls(
            entry=getattr(eng, "entry_name", ""),
            verdicts=list(eng.verdicts),
            counters={
                "formulas_simplified": eng.fs_count,
                "solver_queries": eng.ss_count,
                "paths_explored": eng.paths_completed,
                "loc_visited": len(eng.loc_seen),
                "wall_time": round(wall_time, 6),
            },
            completion={
                "complete": not reasons,
                "reason": ";".join(reasons) if reasons else None,
            },
            invariants=list(getattr(eng, "invariant_dumps", [])),
        )

    @property
    def violations(self) -> list:
        return [v for v in self.verdicts if v.kind == "Violation"]

    @property
    def unknowns(self) -> list:
        return [v for v in self.verdicts if v.kind == "Unknown"]

    def run_replays(self, ast: ModuleAst, entry: EntrySpec,
                    fuel: int = DEFAULT_FUEL) -> None:
        self.replay_results = [
            replay(ast, entry, v.model, v.arrays or {}, v.instr, fuel=fuel)
            for v in self.violations
        ]

    def exit_code(self) -> int:
        if self.violations:
            return 1
        if not self.completion.get("complete") or self.unknowns:
            return 2
        return 0

    # ---- rendering -------------------------------------------------------

    def _model_excerpt(self, model: dict, limit: int = 6) -> str:
        items = sorted(model.items())
        shown = ", ".join(f"{k}={v}" for k, v in items[:limit])
        if len(items) > limit:
            shown += f", … +{len(items) - limit} more"
        return shown

    def to_json_dict(self) -> dict:
        vio = []
        for i, v in enumerate(self.violations):
            entry = {
                "check_kind": v.check_kind,
                "func": v.func,
                "line": v.site.line if v.site else 0,
                "col": v.site.col if v.site else 0,
                "note": v.note,
                "model": dict(sorted((v.model or {}).items())),
            }
            if i < len(self.replay_results):
                entry["replay"] = self.replay_results[i].to_dict()
            vio.append(entry)
        counts = {"Safe": 0, "Violation": 0, "Unknown": 0, "Trap": 0,
                  "PathInfeasible": 0}
        for v in self.verdicts:
            counts[v.kind] += 1
        return {
            "entry": self.entry,
            "violations": vio,
            "verdict_counts": counts,
            "counters": dict(self.counters),
            "completion": dict(self.completion),
            "invariants": [inv.to_dict() if hasattr(inv, "to_dict") else inv
                           for inv in self.invariants],
        }

    def render_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True) + "\n"

    def render_text(self, stats: bool = True) -> str:
        lines = [f"analysis of entry '{self.entry}'"]
        seen_sites = set()
        for i, v in enumerate(self.violations):
            loc = f"{v.func}:{v.site.line}:{v.site.col}" if v.site else v.func
            rep = ""
            if i < len(self.replay_results):
                r = self.replay_results[i]
                rep = f" (replay: {r.status}"
                if r.reason:
                    rep += f", {r.reason}"
                rep += ")"
            dedup = "" if v.site_key() not in seen_sites else " [repeat site]"
            seen_sites.add(v.site_key())
            lines.append(
                f"  VIOLATION {v.check_kind} at {loc}{dedup}: "
                f"{self._model_excerpt(v.model or {})}{rep}")
        for v in self.unknowns:
            loc = f"{v.func}:{v.site.line}:{v.site.col}" if v.site else v.func
            what = v.note if v.check_kind == "Invariant" else f"solver {v.note}"
            lines.append(f"  UNKNOWN {v.check_kind} at {loc}: {what}")
        for inv in self.invariants:
            d = inv.to_dict() if hasattr(inv, "to_dict") else inv
            lines.append(f"  invariant at line {d.get('line')}: "
                         f"{d.get('formula')}")
        if stats:
            c = self.counters
            lines.append(
                f"counters: #FS={c.get('formulas_simplified', 0)} "
                f"#SS={c.get('solver_queries', 0)} "
                f"paths={c.get('paths_explored', 0)} "
                f"loc={c.get('loc_visited', 0)} "
                f"time={c.get('wall_time', 0):.2f}s")
        if not self.completion.get("complete", False):
            lines.append(f"incomplete: {self.completion.get('reason')}")
        if self.violations:
            n_sites = len({v.site_key() for v in self.violations})
            lines.append(f"constant-time: VIOLATED "
                         f"({len(self.violations)} finding(s), "
                         f"{n_sites} distinct site(s))")
        elif self.completion.get("complete", False) and not self.unknowns:
            lines.append("constant-time: verified ✓")
        else:
            lines.append("constant-time: inconclusive")
        return "\n".join(lines) + "\n"


def render(report: AnalysisReport, fmt: str = "text",
           stats: bool = True) -> bytes:
    if fmt == "json":
        return report.render_json().encode()
    return report.render_text(stats=stats).encode()
