"""Relational symbolic execution for a WebAssembly-text subset, checking the constant-time policy."""

__version__ = "0.1.0"
