"""Allocation-counting probe for kernel temporaries.

Kernels register every intermediate array they create with :func:`track`
and drop it with :func:`release` once it is dead. When no probe is active
both calls are no-ops, so the kernels stay pure functions.
"""

from __future__ import annotations

import contextvars
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

_ACTIVE: contextvars.ContextVar["AllocationProbe | None"] = contextvars.ContextVar(
    "longdoc_allocation_probe", default=None
)


@dataclass
class AllocationProbe:
    current_bytes: int = 0
    peak_bytes: int = 0
    total_bytes: int = 0
    shapes: list[tuple[int, ...]] = field(default_factory=list)

    def alloc(self, arr: np.ndarray) -> None:
        self.current_bytes += arr.nbytes
        self.total_bytes += arr.nbytes
        self.peak_bytes = max(self.peak_bytes, self.current_bytes)
        self.shapes.append(tuple(arr.shape))

    def free(self, arr: np.ndarray) -> None:
        self.current_bytes -= arr.nbytes

    def saw_square(self, n: int) -> bool:
        """True if any tracked temporary had an n x n trailing block."""
        return any(len(s) >= 2 and s[-1] == n and s[-2] == n for s in self.shapes)


def track(arr: np.ndarray) -> np.ndarray:
    probe = _ACTIVE.get()
    if probe is not None:
        probe.alloc(arr)
    return arr


def release(*arrs: np.ndarray) -> None:
    probe = _ACTIVE.get()
    if probe is not None:
        for arr in arrs:
            probe.free(arr)


@contextmanager
def probing():
    """Activate a fresh probe for the enclosed block and yield it."""
    probe = AllocationProbe()
    token = _ACTIVE.set(probe)
    try:
        yield probe
    finally:
        _ACTIVE.reset(token)
