"""Logical time.

All timestamps in this package are integers in logical milliseconds. Workflow
ticks are days; intra-tick ordering uses millisecond offsets. Nothing reads the
wall clock, so two runs with the same inputs produce identical timestamps.
"""

from __future__ import annotations

from dataclasses import dataclass

SECOND_MS = 1_000
MINUTE_MS = 60 * SECOND_MS
HOUR_MS = 60 * MINUTE_MS
DAY_MS = 24 * HOUR_MS


@dataclass
class LogicalClock:
    """A monotone counter of logical milliseconds."""

    now: int = 0

    def advance(self, ms: int) -> int:
        if ms < 0:
            raise ValueError(f"clock cannot move backwards (advance by {ms})")
        self.now += ms
        return self.now

    def advance_to(self, at: int) -> int:
        """Jump forward to an absolute time; a no-op if already past it."""
        if at > self.now:
            self.now = at
        return self.now

    @property
    def day(self) -> int:
        return self.now // DAY_MS

    def start_of_day(self, day: int) -> int:
        return day * DAY_MS
