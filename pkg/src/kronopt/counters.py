"""Process-wide flop and wall-time accounting, bucketed by pipeline phase.

The training loop brackets each stage with ``phase(...)`` so that the dense
kernels in :mod:`kronopt.linalg` can stay ignorant of which stage they serve.
Counts are floating multiply/add operations as implemented (not big-O).
"""

from __future__ import annotations

import time
from contextlib import contextmanager

PHASES = (
    "forward_backward",
    "factor_update",
    "inversion",
    "precondition",
    "weight_update",
    "other",
)

_flops: dict[str, float] = {p: 0.0 for p in PHASES}
_wall_ms: dict[str, float] = {p: 0.0 for p in PHASES}
_stack: list[str] = []


def reset() -> None:
    for p in PHASES:
        _flops[p] = 0.0
        _wall_ms[p] = 0.0
    _stack.clear()


def current_phase() -> str:
    return _stack[-1] if _stack else "other"


def add_flops(n: float) -> None:
    _flops[current_phase()] += n


@contextmanager
def phase(name: str):
    """Attribute flops and wall time to ``name`` for the duration of the block."""
    if name not in PHASES:
        raise ValueError(f"unknown phase {name!r}")
    _stack.append(name)
    t0 = time.perf_counter()
    try:
        yield
    finally:
        _wall_ms[name] += (time.perf_counter() - t0) * 1e3
        _stack.pop()


def flops_snapshot() -> dict[str, float]:
    return dict(_flops)


def wall_snapshot_ms() -> dict[str, float]:
    return dict(_wall_ms)
