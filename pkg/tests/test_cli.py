"""Command-line driver: flag handling, exit codes, output formats, and
multi-file module assembly."""

from __future__ import annotations

import json
import os
import subprocess
import sys

import pytest

from relwasm import cli

CORPUS = os.path.join(os.path.dirname(os.path.abspath(__file__)), "corpus")


def corpus(name: str) -> str:
    return os.path.join(CORPUS, name)


def run_cli(capsysbinary, *argv: str) -> tuple[int, str]:
    code = cli.run(list(argv))
    out = capsysbinary.readouterr().out.decode()
    return code, out


# ---- exit codes -------------------------------------------------------------


def test_verified_file_exits_zero(capsysbinary):
    code, out = run_cli(capsysbinary, corpus("ct_select_mask.wat"))
    assert code == cli.EXIT_VERIFIED
    assert "constant-time: verified" in out


def test_violation_file_exits_one(capsysbinary):
    code, out = run_cli(capsysbinary, corpus("leaky_select_branch.wat"))
    assert code == cli.EXIT_VIOLATION
    assert "VIOLATION Branch" in out
    assert "replay: confirmed" in out


def test_invariant_assert_failure_exits_two(capsysbinary):
    code, out = run_cli(capsysbinary, corpus("leak_into_public.wat"),
                        "--invariants")
    assert code == cli.EXIT_INCOMPLETE
    assert "incomplete: invariant_assert" in out
    assert "invariant assertion failed" in out


def test_unroll_cutoff_exits_two(capsysbinary):
    code, out = run_cli(capsysbinary, corpus("lucky13.wat"),
                        "--unroll-limit", "2", "--timeout", "60")
    # bound 2 cuts the scan before the exit arm is reachable for every
    # secret, so the run is incomplete; the violations still print
    assert code == cli.EXIT_VIOLATION
    assert "incomplete" in out


def test_missing_file_exits_three(capsysbinary, capsys):
    assert cli.run(["/nonexistent/x.wat"]) == cli.EXIT_USAGE


def test_malformed_wat_exits_three(tmp_path):
    p = tmp_path / "bad.wat"
    p.write_text("(module (func $f (i32.add))")
    assert cli.run([str(p)]) == cli.EXIT_USAGE


def test_unknown_entry_exits_three():
    assert cli.run([corpus("ct_select_mask.wat"),
                    "--entry", "nope"]) == cli.EXIT_USAGE


def test_bad_flag_exits_three():
    with pytest.raises(SystemExit) as e:
        cli.run([corpus("ct_select_mask.wat"), "--frobnicate"])
    assert e.value.code == cli.EXIT_USAGE


def test_bad_numeric_flag_exits_three():
    assert cli.run([corpus("ct_select_mask.wat"),
                    "--unroll-limit", "0"]) == cli.EXIT_USAGE


def test_no_inputs_exits_three():
    with pytest.raises(SystemExit) as e:
        cli.run([])
    assert e.value.code == cli.EXIT_USAGE


# ---- flags ------------------------------------------------------------------


def test_select_unsafe_flags_native_select(capsysbinary):
    code, out = run_cli(capsysbinary, corpus("ct_select_native.wat"),
                        "--select-unsafe")
    assert code == cli.EXIT_VIOLATION
    assert "VIOLATION Select" in out


def test_entry_override_uses_fresh_public_args(capsysbinary):
    # overriding the entry ignores the directive's secret args, so the
    # selector becomes public and the branch is safe
    code, out = run_cli(capsysbinary, corpus("leaky_select_branch.wat"),
                        "--entry", "sel")
    assert code == cli.EXIT_VERIFIED


def test_no_stats_suppresses_counters(capsysbinary):
    _, out = run_cli(capsysbinary, corpus("ct_select_mask.wat"), "--no-stats")
    assert "counters:" not in out
    _, out = run_cli(capsysbinary, corpus("ct_select_mask.wat"))
    assert "counters:" in out


def test_invariants_flag_runs_summarization(capsysbinary):
    code, out = run_cli(capsysbinary, corpus("lucky13.wat"), "--invariants")
    assert code == cli.EXIT_VIOLATION
    assert "invariant at line" in out
    assert "lv4|l = lv4|r" in out


# ---- formats ----------------------------------------------------------------


def test_json_format_schema(capsysbinary):
    code, out = run_cli(capsysbinary, corpus("leaky_lookup_index.wat"),
                        "--format", "json")
    assert code == cli.EXIT_VIOLATION
    doc = json.loads(out)
    assert doc["entry"] == "lut"
    assert doc["verdict_counts"]["Violation"] == 1
    (v,) = doc["violations"]
    assert v["check_kind"] == "MemoryIndex"
    assert v["replay"]["status"] == "confirmed"


def test_json_idempotent_modulo_timing(capsysbinary):
    docs = []
    for _ in range(2):
        _, out = run_cli(capsysbinary, corpus("leaky_sort2_branch.wat"),
                         "--format", "json")
        d = json.loads(out)
        d["counters"].pop("wall_time")
        docs.append(d)
    assert docs[0] == docs[1]


# ---- module assembly --------------------------------------------------------


def test_policy_sidecar_merges(tmp_path, capsysbinary):
    mod = tmp_path / "mod.wat"
    mod.write_text("""
    (module (memory 1)
      (func $probe (result i32)
        (i32.load8_u (i32.load8_u (i32.const 4000)))))
    """)
    side = tmp_path / "policy.wat"
    side.write_text("""
    (secret (i32.const 4000) (i32.const 4000))
    (symb_exec "probe")
    """)
    code, out = run_cli(capsysbinary, str(mod), str(side))
    assert code == cli.EXIT_VIOLATION
    assert "MemoryIndex" in out


def test_two_modules_rejected(tmp_path):
    a = tmp_path / "a.wat"
    b = tmp_path / "b.wat"
    a.write_text('(module (func $f)) (symb_exec "f")')
    b.write_text("(module (func $g))")
    assert cli.run([str(a), str(b)]) == cli.EXIT_USAGE


# ---- installed script -------------------------------------------------------


def test_console_script_end_to_end():
    r = subprocess.run(
        [sys.executable, "-m", "relwasm.cli", corpus("leaky_lookup_index.wat"),
         "--format", "json", "--no-stats"],
        capture_output=True, text=True, timeout=300)
    assert r.returncode == cli.EXIT_VIOLATION
    doc = json.loads(r.stdout)
    assert doc["violations"][0]["check_kind"] == "MemoryIndex"


def test_main_raises_systemexit():
    import unittest.mock as mock

    with mock.patch.object(sys, "argv", ["relwasm"]):
        with pytest.raises(SystemExit) as e:
            cli.main()
        assert e.value.code == cli.EXIT_USAGE
