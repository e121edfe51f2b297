"""Window-based transport endpoints driven by the simulation engine.

The sender (Connection) owns the five-layer timeout algorithm: it measures
delay samples from acknowledgments (layers 1-2), arms its retransmission
timer (layer 3), backs the timer off across retries (layer 4), and declares
the peer unreachable when the give-up policy says so (layer 5).

Acks are cumulative.  A retransmitted packet's ack is ambiguous unless copy
echoing is enabled AND the ack newly acknowledges exactly that one packet;
only then is the echoed copy number trusted as the measurement origin.

Two path models carry copies to the receiver:

  FixedDelayPath  abstract path with a constant forward delay and an optional
                  synthetic per-copy drop rule (loss studies)
  ChainPath       store-and-forward serial chain with finite drop-tail buffers
                  at the interior nodes (congestion studies); acks return as
                  zero-size control packets that only pay propagation delay
"""
from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

from .estimators import (
    FromCopy,
    FromFirst,
    FromLast,
    Ignore,
    IgnoreAndIncrease,
    Layer1Policy,
    Layer2Policy,
    RttEstimate,
    TransmissionRecord,
    extract_sample,
    increase_estimate,
    layer1_update,
)
from .metrics import TraceRecorder
from .sim import (
    Engine,
    EventKind,
    Link,
    NodeBuffer,
    SimEvent,
    Topology,
    seconds_to_ticks,
    ticks_to_seconds,
)
from .timeout import (
    Layer3Policy,
    Layer4Policy,
    Layer5Policy,
    RetryState,
    backoff_interval,
    disconnect_decision,
    first_timeout,
)


@dataclass
class TimeoutAlgorithm:
    """One slot per layer; any combination is a complete algorithm."""

    layer1: Layer1Policy
    layer2: Layer2Policy
    layer3: Layer3Policy
    layer4: Layer4Policy
    layer5: Layer5Policy


class TimerMode(Enum):
    SINGLE = "single"
    PER_PACKET = "per_packet"


class RetransmitScope(Enum):
    TIMED_OUT_ONLY = "timed_out_only"
    ALL_UNACKED = "all_unacked"


class ConnectionPhase(Enum):
    ACTIVE = "active"
    DONE = "done"
    DISCONNECTED = "disconnected"


@dataclass(frozen=True)
class AckPacket:
    """Cumulative acknowledgment.  The echo fields name the arriving copy
    that triggered this ack; the sender decides whether to trust them."""

    cumulative_ack: int
    echo_packet_id: Optional[int] = None
    echoed_copy_number: Optional[int] = None


class Receiver:
    """Infinite receive buffer; every arriving copy is answered instantly
    with a cumulative ack (duplicates included, so lost acks heal)."""

    def __init__(self) -> None:
        self.cumulative = 0
        self.copies_received = 0
        self.distinct_delivered = 0
        self.duplicates = 0
        self._cached: set[int] = set()

    def on_copy(self, packet_id: int, copy_number: int) -> AckPacket:
        self.copies_received += 1
        if packet_id <= self.cumulative or packet_id in self._cached:
            self.duplicates += 1
        else:
            self._cached.add(packet_id)
            self.distinct_delivered += 1
            while self.cumulative + 1 in self._cached:
                self._cached.remove(self.cumulative + 1)
                self.cumulative += 1
        return AckPacket(self.cumulative, packet_id, copy_number)


class FixedDelayPath:
    """Constant-delay path with an optional synthetic per-copy drop rule.

    The full round-trip delay sits on the data direction; acks return after
    `reverse_ticks` (zero by default).  Synthetic drops are reported at
    location 0, the only "node" this path has.
    """

    def __init__(self, engine: Engine, receiver: Receiver,
                 recorder: TraceRecorder, forward_ticks: int,
                 reverse_ticks: int = 0,
                 drop_fn: Optional[Callable[[int, int], bool]] = None,
                 ack_drop_fn: Optional[Callable[[], bool]] = None) -> None:
        self.engine = engine
        self.receiver = receiver
        self.recorder = recorder
        self.forward_ticks = forward_ticks
        self.reverse_ticks = reverse_ticks
        self.drop_fn = drop_fn
        self.ack_drop_fn = ack_drop_fn
        self.deliver_ack: Callable[[AckPacket, int], None] = lambda ack, now: None

    def send_copy(self, packet_id: int, copy_number: int, now: int) -> None:
        if self.drop_fn is not None and self.drop_fn(packet_id, copy_number):
            self.recorder.record_drop(now, packet_id, copy_number, location=0)
            return
        self.engine.schedule(now + self.forward_ticks, EventKind.PACKET_ARRIVAL,
                             (packet_id, copy_number), self._on_arrival)

    def _on_arrival(self, event: SimEvent) -> None:
        packet_id, copy_number = event.payload
        ack = self.receiver.on_copy(packet_id, copy_number)
        if self.ack_drop_fn is not None and self.ack_drop_fn():
            return  # lost on the reverse path; a later copy will re-ack
        self.engine.schedule(event.time + self.reverse_ticks,
                             EventKind.ACK_ARRIVAL, ack, self._on_ack)

    def _on_ack(self, event: SimEvent) -> None:
        self.deliver_ack(event.payload, event.time)


class ChainPath:
    """Store-and-forward serial chain with drop-tail buffers.

    A packet occupies an interior node's buffer from full arrival until its
    onward serialization completes; arrivals finding the buffer at capacity
    are dropped and counted against that node.  The source queues its own
    sends without limit (the window bounds them anyway).
    """

    def __init__(self, engine: Engine, receiver: Receiver,
                 recorder: TraceRecorder, topology: Topology,
                 packet_size_bits: int) -> None:
        self.engine = engine
        self.receiver = receiver
        self.recorder = recorder
        self.size_bits = packet_size_bits
        self.links = [Link(spec.rate_bps, seconds_to_ticks(spec.propagation))
                      for spec in topology.links]
        n = topology.node_count
        self.buffers: dict[int, NodeBuffer] = {
            node: NodeBuffer(topology.buffer_capacity)
            for node in range(1, n - 1)
        }
        self._queues: dict[int, deque] = {node: deque() for node in range(n - 1)}
        self._last_node = n - 1
        self.reverse_ticks = sum(link.propagation_ticks for link in self.links)
        #: serialization intervals of the source's egress link, for idle-time
        #: accounting: (start, end) tick pairs in start order
        self.source_busy_intervals: list[tuple[int, int]] = []
        self.deliver_ack: Callable[[AckPacket, int], None] = lambda ack, now: None

    def send_copy(self, packet_id: int, copy_number: int, now: int) -> None:
        self._queues[0].append((packet_id, copy_number))
        self._try_start(0, now)

    def drops_per_node(self) -> list[int]:
        counts = [0] * (self._last_node + 1)
        for node, buf in self.buffers.items():
            counts[node] = buf.dropped
        return counts

    def _try_start(self, node: int, now: int) -> None:
        link = self.links[node]
        if not self._queues[node] or not link.idle_at(now):
            return
        packet_id, copy_number = self._queues[node].popleft()
        ser = link.serialization_ticks(self.size_bits)
        arrival = link.transmit(self.size_bits, now)
        if node == 0:
            self.source_busy_intervals.append((now, now + ser))
        self.engine.schedule(now + ser, EventKind.TRANSMISSION_COMPLETE,
                             (node, packet_id, copy_number, arrival),
                             self._on_complete)

    def _on_complete(self, event: SimEvent) -> None:
        node, packet_id, copy_number, arrival = event.payload
        if node in self.buffers:
            self.buffers[node].release()
        self.engine.schedule(arrival, EventKind.PACKET_ARRIVAL,
                             (node + 1, packet_id, copy_number),
                             self._on_arrival)
        self._try_start(node, event.time)

    def _on_arrival(self, event: SimEvent) -> None:
        node, packet_id, copy_number = event.payload
        if node == self._last_node:
            ack = self.receiver.on_copy(packet_id, copy_number)
            self.engine.schedule(event.time + self.reverse_ticks,
                                 EventKind.ACK_ARRIVAL, ack, self._on_ack)
            return
        if self.buffers[node].enqueue_or_drop():
            self._queues[node].append((packet_id, copy_number))
            self._try_start(node, event.time)
        else:
            self.recorder.record_drop(event.time, packet_id, copy_number,
                                      location=node)

    def _on_ack(self, event: SimEvent) -> None:
        self.deliver_ack(event.payload, event.time)


@dataclass
class _PacketTimer:
    epoch: int
    retry: RetryState
    interval: float  # seconds, as armed (quantized)


class Connection:
    """Sending endpoint: window, retransmission timer, five-layer algorithm."""

    def __init__(self, engine: Engine, path, algorithm: TimeoutAlgorithm,
                 recorder: TraceRecorder, *,
                 initial: RttEstimate,
                 packet_count: int,
                 window_size: int = 1,
                 timer_mode: TimerMode = TimerMode.SINGLE,
                 retransmit_scope: RetransmitScope = RetransmitScope.TIMED_OUT_ONLY,
                 copy_echo_enabled: bool = False,
                 backoff_rng: Optional[random.Random] = None,
                 sample_floor_ticks: int = 1,
                 stop_estimate_above: Optional[float] = None) -> None:
        if window_size < 1:
            raise ValueError(f"window size must be >= 1, got {window_size}")
        if packet_count < 0:
            raise ValueError(f"packet count must be >= 0, got {packet_count}")
        self.engine = engine
        self.path = path
        self.algorithm = algorithm
        self.recorder = recorder
        self.estimate = initial
        self.packet_count = packet_count
        self.window_size = window_size
        self.timer_mode = timer_mode
        self.retransmit_scope = retransmit_scope
        self.copy_echo_enabled = copy_echo_enabled
        self.backoff_rng = backoff_rng
        self.sample_floor_ticks = sample_floor_ticks
        self.stop_estimate_above = stop_estimate_above

        self.phase = ConnectionPhase.ACTIVE
        self.next_packet_id = 1
        self.outstanding: dict[int, TransmissionRecord] = {}
        self.retry_state = RetryState()
        self.packets_acked = 0
        self.timeout_event_count = 0
        self.total_copies_sent = 0
        self.stopped_early = False

        # single-timer bookkeeping
        self._epoch = 0
        self._armed = False
        self._armed_since = 0
        self._timer_owner: Optional[int] = None
        self._interval = 0.0  # currently armed interval, seconds
        #: closed (start, end) tick spans during which the timer was armed
        self.armed_intervals: list[tuple[int, int]] = []
        # per-packet-timer bookkeeping
        self._packet_timers: dict[int, _PacketTimer] = {}

        path.deliver_ack = self.on_ack
        recorder.state_probe = self._probe

    # -- trace plumbing ----------------------------------------------------

    def _probe(self) -> tuple[float, float, float, int]:
        return (self.estimate.mean_estimate, self.estimate.variance_estimate,
                self._interval, self.retry_state.retry_count)

    def _row(self, kind: str, packet_id: int, copy: int) -> None:
        self.recorder.record(self.engine.now, kind, packet_id, copy)

    # -- sending -----------------------------------------------------------

    def start(self) -> None:
        self.fill_window(self.engine.now)

    def fill_window(self, now: int) -> None:
        while (self.phase is ConnectionPhase.ACTIVE
               and len(self.outstanding) < self.window_size
               and self.next_packet_id <= self.packet_count):
            self._send_new(now)

    def _send_new(self, now: int) -> None:
        if len(self.outstanding) >= self.window_size:
            raise RuntimeError("attempt to send beyond the window")
        packet_id = self.next_packet_id
        self.next_packet_id += 1
        record = TransmissionRecord(packet_id)
        record.add_copy(now)
        self.outstanding[packet_id] = record
        self.total_copies_sent += 1
        self._row("send", packet_id, 1)
        self.path.send_copy(packet_id, 1, now)
        if self.timer_mode is TimerMode.SINGLE:
            if not self._armed:
                self._timer_owner = packet_id
                self._arm(now, first_timeout(self.estimate, self.algorithm.layer3))
        else:
            timer = _PacketTimer(0, RetryState(), 0.0)
            timer.retry.packets_delivered = self.packets_acked
            self._packet_timers[packet_id] = timer
            self._arm_packet(now, packet_id,
                             first_timeout(self.estimate, self.algorithm.layer3))

    # -- timer management --------------------------------------------------

    def _arm(self, now: int, interval_s: float) -> None:
        ticks = max(1, seconds_to_ticks(interval_s))
        quantized = ticks_to_seconds(ticks)
        self.retry_state.arm(quantized)
        self._interval = quantized
        self._epoch += 1
        self._armed = True
        self._armed_since = now
        self.engine.schedule(now + ticks, EventKind.TIMER_EXPIRY, self._epoch,
                             self._on_timer)

    def _disarm(self, now: int) -> None:
        if self._armed:
            self.armed_intervals.append((self._armed_since, now))
            self._armed = False
            self._epoch += 1
            self._interval = 0.0
            self._timer_owner = None

    def _arm_packet(self, now: int, packet_id: int, interval_s: float) -> None:
        ticks = max(1, seconds_to_ticks(interval_s))
        quantized = ticks_to_seconds(ticks)
        timer = self._packet_timers[packet_id]
        timer.retry.arm(quantized)
        timer.interval = quantized
        timer.epoch += 1
        self.engine.schedule(now + ticks, EventKind.TIMER_EXPIRY,
                             (packet_id, timer.epoch), self._on_packet_timer)

    @property
    def timer_armed(self) -> bool:
        return self._armed

    def close_open_intervals(self, now: int) -> None:
        """Fold a still-armed timer span into armed_intervals (end of run)."""
        if self._armed:
            self.armed_intervals.append((self._armed_since, now))
            self._armed = False
            self._epoch += 1

    # -- acknowledgment handling -------------------------------------------

    def on_ack(self, ack: AckPacket, now: int) -> None:
        if self.phase is ConnectionPhase.DISCONNECTED:
            return
        self._row("ack", ack.cumulative_ack,
                  ack.echoed_copy_number if ack.echoed_copy_number else 0)
        newly = [pid for pid in self.outstanding if pid <= ack.cumulative_ack]
        if not newly:
            return  # duplicate ack: everything it covers is already acked
        echo_usable = (self.copy_echo_enabled
                       and len(newly) == 1
                       and ack.echo_packet_id == newly[0]
                       and ack.echoed_copy_number is not None)
        for pid in newly:
            record = self.outstanding.pop(pid)
            self._apply_sample(record, now,
                               ack.echoed_copy_number if echo_usable else None)
            self.packets_acked += 1
            self.retry_state.packets_delivered = self.packets_acked
            if pid in self._packet_timers:
                del self._packet_timers[pid]  # cancels: expiry finds no timer
        if self.timer_mode is TimerMode.SINGLE and (
                self._timer_owner is None or self._timer_owner not in self.outstanding):
            self._disarm(now)
            self.retry_state.reset()
            if self.outstanding:
                self._timer_owner = next(iter(self.outstanding))
                self._arm(now, first_timeout(self.estimate, self.algorithm.layer3))
        self.fill_window(now)
        if self.packets_acked >= self.packet_count and not self.outstanding:
            self.phase = ConnectionPhase.DONE
        self._maybe_stop()

    def _apply_sample(self, record: TransmissionRecord, now: int,
                      echoed_copy: Optional[int]) -> None:
        policy = self.algorithm.layer2
        if record.copies == 1:
            sample = extract_sample(record, now, policy,
                                    floor=self.sample_floor_ticks)
            self._update(record.packet_id, sample)
            return
        # ambiguous (multi-copy) acknowledgment
        if echoed_copy is not None and isinstance(policy,
                                                  (FromFirst, FromLast, FromCopy)):
            origin = record.copy_send_times[min(echoed_copy, record.copies) - 1]
            sample = now - origin
            if sample <= 0:
                sample = self.sample_floor_ticks
            self._update(record.packet_id, sample)
            return
        sample = extract_sample(record, now, policy,
                                floor=self.sample_floor_ticks)
        if sample is not None:
            self._update(record.packet_id, sample)
        elif isinstance(policy, IgnoreAndIncrease):
            self.estimate = increase_estimate(self.estimate, policy.scheme)
            self._row("estimate_update", record.packet_id, 0)

    def _update(self, packet_id: int, sample_ticks) -> None:
        sample_s = ticks_to_seconds(sample_ticks)
        self.estimate = layer1_update(self.estimate, sample_s,
                                      self.algorithm.layer1)
        self._row("estimate_update", packet_id, 0)

    def _maybe_stop(self) -> None:
        if (self.stop_estimate_above is not None
                and self.estimate.mean_estimate > self.stop_estimate_above):
            self.stopped_early = True
            self.engine.request_stop()

    # -- timeout handling --------------------------------------------------

    def _on_timer(self, event: SimEvent) -> None:
        if (self.phase is not ConnectionPhase.ACTIVE or not self._armed
                or event.payload != self._epoch):
            return  # stale expiry: the owner was acked or the timer re-armed
        now = event.time
        self.armed_intervals.append((self._armed_since, now))
        self._armed = False
        owner = self._timer_owner
        self.timeout_event_count += 1
        self._row("timeout", owner if owner is not None else 0, 0)
        if disconnect_decision(self.retry_state, self.algorithm.layer5):
            self._disconnect()
            return
        self._retransmit(now, owner)
        self.retry_state.retry_count += 1
        next_interval = backoff_interval(self.retry_state,
                                         self.retry_state.interval_history[0],
                                         self.algorithm.layer4,
                                         self.backoff_rng)
        self._arm(now, next_interval)  # same owner, backed-off interval

    def _on_packet_timer(self, event: SimEvent) -> None:
        packet_id, epoch = event.payload
        timer = self._packet_timers.get(packet_id)
        if (self.phase is not ConnectionPhase.ACTIVE or timer is None
                or timer.epoch != epoch):
            return
        now = event.time
        self.timeout_event_count += 1
        self._row("timeout", packet_id, 0)
        timer.retry.packets_delivered = self.packets_acked
        if disconnect_decision(timer.retry, self.algorithm.layer5):
            self._disconnect()
            return
        self._retransmit(now, packet_id)
        timer.retry.retry_count += 1
        next_interval = backoff_interval(timer.retry,
                                         timer.retry.interval_history[0],
                                         self.algorithm.layer4,
                                         self.backoff_rng)
        self._arm_packet(now, packet_id, next_interval)

    def _retransmit(self, now: int, owner: Optional[int]) -> None:
        if self.retransmit_scope is RetransmitScope.ALL_UNACKED:
            targets = list(self.outstanding)
        else:
            targets = [owner] if owner in self.outstanding else []
        for pid in targets:
            record = self.outstanding[pid]
            if record.copy_send_times[-1] == now:
                # another timer already resent this packet in the same tick
                continue
            copy_number = record.add_copy(now)
            self.total_copies_sent += 1
            self._row("retransmit", pid, copy_number)
            self.path.send_copy(pid, copy_number, now)

    def _disconnect(self) -> None:
        self._row("disconnect", self._timer_owner or 0, 0)
        self.phase = ConnectionPhase.DISCONNECTED
        self.engine.request_stop()
