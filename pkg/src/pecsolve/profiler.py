"""Named wall-clock section timers with a fixed-width text report."""

from __future__ import annotations

import time
from contextlib import contextmanager

SECTION_NAMES = ("fact_ldg", "drift_term", "recom_term", "sol_ldg", "sol_mfem", "other")


class Profiler:
    """Accumulates call counts and inclusive wall time per named section."""

    def __init__(self):
        self.calls: dict[str, int] = {name: 0 for name in SECTION_NAMES}
        self.seconds: dict[str, float] = {name: 0.0 for name in SECTION_NAMES}
        self._total_start: float | None = None
        self.total_seconds: float = 0.0

    @contextmanager
    def section(self, name: str):
        if name not in self.calls:
            self.calls[name] = 0
            self.seconds[name] = 0.0
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.seconds[name] += time.perf_counter() - t0
            self.calls[name] += 1

    def start_total(self) -> None:
        self._total_start = time.perf_counter()

    def stop_total(self) -> None:
        if self._total_start is not None:
            self.total_seconds += time.perf_counter() - self._total_start
            self._total_start = None

    def tracked_seconds(self) -> float:
        return sum(self.seconds.values())

    def report(self) -> str:
        """Fixed-width section table: name, calls, seconds, percent of total."""
        total = self.total_seconds if self.total_seconds > 0 else self.tracked_seconds()
        total = max(total, 1e-12)
        lines = [
            f"{'section':<12s} {'calls':>10s} {'seconds':>14s} {'percent':>9s}",
            "-" * 48,
        ]
        for name in self.seconds:
            sec = self.seconds[name]
            lines.append(
                f"{name:<12s} {self.calls[name]:>10d} {sec:>14.6f} {100.0 * sec / total:>8.2f}%"
            )
        other = total - self.tracked_seconds()
        lines.append("-" * 48)
        lines.append(f"{'untracked':<12s} {'':>10s} {max(other, 0.0):>14.6f}")
        lines.append(f"{'total':<12s} {'':>10s} {total:>14.6f}")
        return "\n".join(lines)
