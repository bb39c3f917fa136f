"""Model-based flop, storage and nonzero accounting."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

__all__ = ["CostLedger", "cholesky_flops", "solve_flops"]


def cholesky_flops(n: int) -> float:
    return n ** 3 / 3.0


def solve_flops(n: int, nrhs: int = 1) -> float:
    return 2.0 * n * n * nrhs


@dataclass
class CostLedger:
    """Monotone counters for a benchmark run.

    ``flops`` is keyed by kernel family (operator_apply, patch_factor,
    patch_solve, eigen_setup, ...); ``nnz`` by storage family.  ``peak_bytes``
    is the high-water mark of explicitly tracked allocations.
    """

    flops: Counter = field(default_factory=Counter)
    nnz: Counter = field(default_factory=Counter)
    peak_bytes: int = 0
    _live: int = 0

    def add(self, family: str, flops: float) -> None:
        if flops < 0:
            raise ValueError("flop counts are nonnegative")
        self.flops[family] += float(flops)

    def store(self, family: str, entries: int) -> None:
        self.nnz[family] += int(entries)
        self.allocate(8 * int(entries))

    def allocate(self, nbytes: int) -> None:
        self._live += int(nbytes)
        self.peak_bytes = max(self.peak_bytes, self._live)

    def release(self, nbytes: int) -> None:
        self._live = max(0, self._live - int(nbytes))

    def total_flops(self, *families: str) -> float:
        keys = families or tuple(self.flops)
        return float(sum(self.flops[k] for k in keys))

    def snapshot(self) -> dict:
        return {
            "flops": dict(self.flops),
            "nnz": dict(self.nnz),
            "peak_bytes": self.peak_bytes,
        }

    def since(self, before: dict) -> dict:
        """Counter increments relative to an earlier :meth:`snapshot`."""
        return {
            "flops": {k: v - before["flops"].get(k, 0.0) for k, v in self.flops.items()},
            "nnz": {k: v - before["nnz"].get(k, 0) for k, v in self.nnz.items()},
            "peak_bytes": self.peak_bytes,
        }
