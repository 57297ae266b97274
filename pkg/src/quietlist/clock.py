"""Injectable clock so politeness and timestamps are testable."""

from __future__ import annotations

import time
from datetime import datetime, timezone
from typing import Protocol


class Clock(Protocol):
    def now(self) -> float:
        """Seconds since the epoch."""

    def sleep(self, seconds: float) -> None: ...

    def utcnow(self) -> datetime: ...


class SystemClock:
    def now(self) -> float:
        return time.time()

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            time.sleep(seconds)

    def utcnow(self) -> datetime:
        return datetime.now(timezone.utc)


class SimulatedClock:
    """Virtual clock: sleep() advances time instantly.

    Starts at the real wall-clock time by default so recorded timestamps
    stay comparable with externally generated data (certificate windows).
    """

    def __init__(self, start: float | None = None) -> None:
        self._t = time.time() if start is None else float(start)

    def now(self) -> float:
        return self._t

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            self._t += seconds

    def advance(self, seconds: float) -> None:
        self._t += seconds

    def utcnow(self) -> datetime:
        return datetime.fromtimestamp(self._t, tz=timezone.utc)
