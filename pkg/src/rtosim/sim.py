"""Deterministic discrete-event simulation core.

Time is kept as an integer number of ticks (one tick = 1 microsecond) so that
event ordering never depends on floating-point rounding and a run can be
replayed bit for bit on any platform.  Ties on the event clock are broken by
scheduling order (FIFO).

    TICKS_PER_SECOND   tick resolution
    Engine             event queue + clock
    Link               point-to-point link with store-and-forward timing
    NodeBuffer         finite drop-tail buffer, counts its own drops
    Topology           serial chain description
    substream          independent seeded random stream per label
"""
from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Optional

TICKS_PER_SECOND = 1_000_000


def seconds_to_ticks(seconds: float) -> int:
    """Quantize a duration in seconds to the nearest whole tick."""
    return round(seconds * TICKS_PER_SECOND)


def ticks_to_seconds(ticks: int) -> float:
    # Division (not multiplication by 1e-6): exact whenever the quotient is
    # representable, which keeps small tick counts bit-exact in float form.
    return ticks / TICKS_PER_SECOND


def format_ticks(ticks: int) -> str:
    """Render a tick count as fixed-point seconds with 6 decimal places.

    Integer arithmetic throughout, so the output is exact for any magnitude.
    """
    if ticks < 0:
        return "-" + format_ticks(-ticks)
    whole, frac = divmod(ticks, TICKS_PER_SECOND)
    return f"{whole}.{frac:06d}"


def parse_ticks(text: str) -> int:
    """Inverse of format_ticks."""
    neg = text.startswith("-")
    if neg:
        text = text[1:]
    whole, _, frac = text.partition(".")
    frac = (frac + "000000")[:6]
    value = int(whole) * TICKS_PER_SECOND + int(frac or 0)
    return -value if neg else value


def substream(seed: int, label: str) -> random.Random:
    """Derive an independent random stream from a scenario seed and a label.

    String seeding goes through SHA-512 inside random.Random, so the mapping
    is stable across platforms and interpreter runs.
    """
    return random.Random(f"{seed}/{label}")


class SchedulingError(ValueError):
    """Raised when an event is scheduled before the current clock."""


class LinkBusyError(RuntimeError):
    """Raised when a transmission is started on a busy link (caller bug)."""


class EventKind(Enum):
    PACKET_ARRIVAL = "packet_arrival"
    TRANSMISSION_COMPLETE = "transmission_complete"
    TIMER_EXPIRY = "timer_expiry"
    ACK_ARRIVAL = "ack_arrival"


@dataclass(slots=True)
class SimEvent:
    time: int
    sequence_number: int
    kind: EventKind
    payload: Any
    handler: Callable[["SimEvent"], None]


class Engine:
    """Event queue ordered by (time, sequence_number)."""

    def __init__(self) -> None:
        self.now: int = 0
        self._seq = 0
        self._queue: list[tuple[int, int, SimEvent]] = []
        self._stop_requested = False
        self.events_processed = 0

    def schedule(self, time: int, kind: EventKind, payload: Any,
                 handler: Callable[[SimEvent], None]) -> SimEvent:
        if time < self.now:
            raise SchedulingError(
                f"cannot schedule {kind.value} at {time}: clock is at {self.now}")
        event = SimEvent(time, self._seq, kind, payload, handler)
        self._seq += 1
        heapq.heappush(self._queue, (time, event.sequence_number, event))
        return event

    def request_stop(self) -> None:
        """Stop the run after the event currently being processed."""
        self._stop_requested = True

    def pending(self) -> int:
        return len(self._queue)

    def run(self, deadline: Optional[int] = None) -> int:
        """Process events until the queue empties or the deadline passes.

        Returns the number of events processed.  The clock follows the events:
        after the run it reads the time of the last processed event (an empty
        queue leaves it untouched, never advanced to the deadline).
        """
        self._stop_requested = False
        processed = 0
        while self._queue:
            time, _, event = self._queue[0]
            if deadline is not None and time > deadline:
                break
            heapq.heappop(self._queue)
            self.now = time
            event.handler(event)
            processed += 1
            self.events_processed += 1
            if self._stop_requested:
                break
        return processed


@dataclass(slots=True)
class Link:
    """Point-to-point link.  Arrival = start + size/rate + propagation."""

    rate_bps: int
    propagation_ticks: int
    busy_until: int = 0

    def serialization_ticks(self, size_bits: int) -> int:
        # rounded integer division: size/rate seconds at tick resolution
        num = size_bits * TICKS_PER_SECOND
        return (num + self.rate_bps // 2) // self.rate_bps

    def idle_at(self, at: int) -> bool:
        return at >= self.busy_until

    def transmit(self, size_bits: int, at: int) -> int:
        """Occupy the link and return the far-end arrival tick."""
        if at < self.busy_until:
            raise LinkBusyError(
                f"link busy until {self.busy_until}, transmit requested at {at}")
        ser = self.serialization_ticks(size_bits)
        self.busy_until = at + ser
        return at + ser + self.propagation_ticks


@dataclass(slots=True)
class NodeBuffer:
    """Finite drop-tail buffer.  Occupancy counts packets, not bytes."""

    capacity: int
    occupancy: int = 0
    dropped: int = 0

    def __post_init__(self) -> None:
        if self.capacity < 1:
            raise ValueError("buffer capacity must be >= 1")

    def enqueue_or_drop(self) -> bool:
        """Admit one packet if space remains.  Returns True when enqueued."""
        if self.occupancy >= self.capacity:
            self.dropped += 1
            return False
        self.occupancy += 1
        return True

    def release(self) -> None:
        if self.occupancy <= 0:
            raise RuntimeError("release on an empty buffer")
        self.occupancy -= 1


@dataclass(frozen=True)
class LinkSpec:
    rate_bps: int
    propagation: float  # seconds


@dataclass(frozen=True)
class Topology:
    """Serial chain: node 0 is the source, the last node the destination.

    links[i] joins node i to node i+1; every interior node forwards with a
    drop-tail buffer of `buffer_capacity` packets.
    """

    links: tuple[LinkSpec, ...]
    buffer_capacity: int = 2

    def __post_init__(self) -> None:
        if len(self.links) < 1:
            raise ValueError("a chain needs at least one link (two nodes)")
        if self.buffer_capacity < 1:
            raise ValueError("buffer capacity must be >= 1")

    @property
    def node_count(self) -> int:
        return len(self.links) + 1

    def unloaded_rtt(self, size_bits: int) -> float:
        """One packet through an idle chain plus the ack's return path."""
        total = 0
        for spec in self.links:
            link = Link(spec.rate_bps, seconds_to_ticks(spec.propagation))
            total += link.serialization_ticks(size_bits) + link.propagation_ticks
        total += sum(seconds_to_ticks(spec.propagation) for spec in self.links)
        return ticks_to_seconds(total)
