"""Shared fixtures: a session-wide solver host backed by whatever backend
discover_config finds, installing the bundled shim's npm dependency on
first use if needed."""

from __future__ import annotations

import os
import shutil
import subprocess

import pytest

JSOLVER_DIR = os.path.join(
    os.path.dirname(os.path.dirname(os.path.abspath(__file__))),
    "src", "relwasm", "jsolver")


def _ensure_backend() -> None:
    if shutil.which("z3"):
        return
    if shutil.which("node") is None:
        pytest.fail("no SMT backend available: neither z3 nor node is on PATH")
    if os.path.isdir(os.path.join(JSOLVER_DIR, "node_modules", "z3-solver")):
        return
    r = subprocess.run(
        ["npm", "install", "--prefix", JSOLVER_DIR],
        capture_output=True, text=True, timeout=600)
    if r.returncode != 0:
        pytest.fail(
            "npm install for the bundled solver shim failed:\n" + r.stderr)


@pytest.fixture(scope="session")
def solver_config():
    from relwasm.solver import discover_config

    _ensure_backend()
    return discover_config()


@pytest.fixture(scope="session")
def solver_host(solver_config):
    from relwasm.solver import SolverHost

    host = SolverHost(solver_config)
    yield host
    host.close()
