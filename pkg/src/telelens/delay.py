"""Sample-accurate fixed-delay lines for the bidirectional channel.

One global sample clock drives the entire loop.  The round trip of
``n_d = round(fs * d)`` samples is split evenly: commands see ``n_d/2``
on the way out and feedback sees ``n_d/2`` on the way back.  Odd products
are rounded up to the next even count so the split stays integral.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Any

from telelens.errors import SequencingError


@dataclass(frozen=True)
class DelayParams:
    fs: float            # samples / second
    round_trip: float    # seconds

    def __post_init__(self):
        if self.fs <= 0:
            raise ValueError("sampling rate must be positive")
        if self.round_trip < 0:
            raise ValueError("delay must be non-negative")

    @property
    def n_d(self) -> int:
        """Round-trip delay in samples, forced even."""
        n = round(self.fs * self.round_trip)
        return n + (n % 2)

    @property
    def one_way(self) -> int:
        return self.n_d // 2


class DelayLine:
    """Single-writer single-reader FIFO emitting each item ``delay_samples``
    steps after it was pushed; a configured fill value covers warm-up."""

    def __init__(self, delay_samples: int, fill: Any = None):
        if delay_samples < 0:
            raise ValueError("delay must be non-negative")
        self.delay_samples = delay_samples
        self.fill = fill
        self._queue: deque = deque()
        self._next_n = 0

    def push_pop(self, item: Any, n: int) -> Any:
        """Push the sample-``n`` item and return the sample-``n - delay`` one."""
        if n != self._next_n:
            raise SequencingError(
                f"expected sample {self._next_n}, got {n}; indices must advance by 1")
        self._next_n += 1
        if self.delay_samples == 0:
            return item
        self._queue.append(item)
        if len(self._queue) > self.delay_samples:
            return self._queue.popleft()
        return self.fill


def channel_pair(params: DelayParams, forward_fill: Any = None,
                 return_fill: Any = None) -> tuple[DelayLine, DelayLine]:
    """Independent forward (command) and return (feedback) lines of
    ``n_d/2`` samples each; their composition delays by the full ``n_d``."""
    return (DelayLine(params.one_way, forward_fill),
            DelayLine(params.one_way, return_fill))
