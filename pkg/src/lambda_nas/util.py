"""Small shared helpers."""

from __future__ import annotations

import os

__all__ = ["thread_cap"]

THREADS_ENV = "LAMBDA_NAS_THREADS"


def thread_cap() -> int:
    """Worker cap for internally parallel jobs; the env var overrides the
    serial default. Results never depend on the schedule, only timing does."""
    raw = os.environ.get(THREADS_ENV, "")
    if not raw:
        return 1
    try:
        value = int(raw)
    except ValueError as exc:
        raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from exc
    return max(1, value)
