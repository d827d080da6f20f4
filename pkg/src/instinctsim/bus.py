"""Typed message channels between layers, plus the append-only memory log.

Channels are the only cross-layer communication path. Delivery and drop
decisions are fixed at send time from a seeded per-channel stream, so a run
is replayable from its seed alone. A lock makes each channel safe for
one-producer/one-consumer use in live mode; in deterministic mode everything
runs on one thread and the lock is uncontended.
"""

from __future__ import annotations

import random
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Any


class MemoryOrderError(ValueError):
    """Raised on an append that would break the memory log's tick order."""


@dataclass
class ChannelStats:
    sent: int = 0
    delivered: int = 0
    dropped: int = 0


class Channel:
    """FIFO channel with a fixed tick latency and optional send-time drops."""

    def __init__(
        self,
        name: str,
        latency: int = 0,
        drop_probability: float = 0.0,
        rng: random.Random | None = None,
        on_drop: Any = None,
    ) -> None:
        if latency < 0:
            raise ValueError("latency must be >= 0")
        if not 0.0 <= drop_probability <= 1.0:
            raise ValueError("drop_probability must be in [0, 1]")
        if drop_probability > 0.0 and rng is None:
            raise ValueError("lossy channel requires a seeded rng")
        self.name = name
        self.latency = latency
        self.drop_probability = drop_probability
        self.rng = rng
        self.on_drop = on_drop  # callable(channel_name, msg), e.g. a tracer
        self.stats = ChannelStats()
        self._queue: deque[tuple[int, Any]] = deque()
        self._lock = threading.Lock()

    def transmit(self, msg: Any, now: int) -> bool:
        """Send a message; returns False when it was dropped at send time."""
        with self._lock:
            self.stats.sent += 1
            if self.drop_probability > 0.0 and self.rng.random() < self.drop_probability:
                self.stats.dropped += 1
                dropped = True
            else:
                self._queue.append((now + self.latency, msg))
                dropped = False
        if dropped and self.on_drop is not None:
            self.on_drop(self.name, msg)
        return not dropped

    def poll(self, now: int) -> list[Any]:
        """Remove and return every message due at or before ``now``."""
        out: list[Any] = []
        with self._lock:
            while self._queue and self._queue[0][0] <= now:
                out.append(self._queue.popleft()[1])
            self.stats.delivered += len(out)
        return out

    def pending(self) -> int:
        with self._lock:
            return len(self._queue)


@dataclass(frozen=True)
class MemoryRecord:
    tick: int
    origin_layer: str  # "INSTINCT" or "DECISION"
    payload: dict


@dataclass
class MemoryLog:
    """Append-only event store shared by the instinct and decision layers."""

    records: list[MemoryRecord] = field(default_factory=list)

    def record(self, record: MemoryRecord) -> None:
        if self.records and record.tick < self.records[-1].tick:
            raise MemoryOrderError(
                f"append at tick {record.tick} after tick {self.records[-1].tick}"
            )
        self.records.append(record)

    def query(self, tick_lo: int, tick_hi: int) -> list[MemoryRecord]:
        """All records with tick in [tick_lo, tick_hi], in append order."""
        return [r for r in self.records if tick_lo <= r.tick <= tick_hi]
