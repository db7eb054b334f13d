"""Single-threaded discrete-event loop keyed by (time, sequence)."""

from __future__ import annotations

import heapq
import itertools
import math
from typing import Any, Callable


class EventLoop:
    def __init__(self) -> None:
        self.now = 0.0
        self._queue: list[tuple[float, int, Callable[..., Any], tuple]] = []
        self._seq = itertools.count()
        self.processed = 0

    def at(self, t: float, fn: Callable[..., Any], *args: Any) -> None:
        if t < self.now - 1e-12:
            raise ValueError(f"cannot schedule in the past ({t} < {self.now})")
        heapq.heappush(self._queue, (t, next(self._seq), fn, args))

    def after(self, delay: float, fn: Callable[..., Any], *args: Any) -> None:
        self.at(self.now + delay, fn, *args)

    def __len__(self) -> int:
        return len(self._queue)

    def run(self, until: float = math.inf, stop: Callable[[], bool] | None = None) -> None:
        while self._queue and self._queue[0][0] <= until:
            t, _, fn, args = heapq.heappop(self._queue)
            self.now = t
            fn(*args)
            self.processed += 1
            if stop is not None and stop():
                break
