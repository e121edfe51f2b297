"""Trace capture, outcome detectors, and run summaries.

Everything downstream of a run is computed from the flat event trace, so a
trace file written today can be re-summarized offline tomorrow.  Two
conventions keep the fixed 8-column layout sufficient:

  * ACK rows carry the estimate as it stood BEFORE the acknowledgment was
    applied; the updates it causes follow as ESTIMATE_UPDATE rows.
  * DROP rows reuse the retry_count column for the index of the node that
    dropped the copy (the layout has no dedicated location field, and a
    drop has no meaningful retry count).

Float columns are written with 6 decimal places and times as exact
tick-resolution decimals, so a written trace re-read from disk summarizes
identically to the in-memory rows (summarize() rounds accordingly).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, NamedTuple, Optional, Sequence, Union

from .sim import format_ticks, parse_ticks, ticks_to_seconds

TRACE_HEADER = "time,event,packet_id,copy,estimate_e,estimate_v,timeout_interval,retry_count"

SEND = "send"
RETRANSMIT = "retransmit"
ACK = "ack"
TIMEOUT = "timeout"
DROP = "drop"
ESTIMATE_UPDATE = "estimate_update"
DISCONNECT = "disconnect"

EVENT_KINDS = frozenset({SEND, RETRANSMIT, ACK, TIMEOUT, DROP,
                         ESTIMATE_UPDATE, DISCONNECT})

VERDICT_BOUNDED = "Bounded"
VERDICT_DIVERGED = "Diverged"
VERDICT_FALSE_CONVERGED = "FalseConverged"


class TraceRow(NamedTuple):
    time_ticks: int
    event: str
    packet_id: int
    copy: int
    estimate_e: float
    estimate_v: float
    timeout_interval: float
    retry_count: int

    @property
    def time_seconds(self) -> float:
        return ticks_to_seconds(self.time_ticks)


class TraceRecorder:
    """Collects rows during a run.

    `state_probe` is installed by the sending endpoint and returns the
    current (estimate_e, estimate_v, timeout_interval, retry_count) tuple,
    so any component (e.g. a dropping network node) can emit a row with the
    sender's state columns filled in.
    """

    def __init__(self) -> None:
        self.rows: list[TraceRow] = []
        self.state_probe: Callable[[], tuple[float, float, float, int]] = \
            lambda: (0.0, 0.0, 0.0, 0)

    def record(self, time_ticks: int, event: str, packet_id: int,
               copy: int) -> None:
        e, v, interval, retry = self.state_probe()
        self.rows.append(TraceRow(time_ticks, event, packet_id, copy,
                                  e, v, interval, retry))

    def record_drop(self, time_ticks: int, packet_id: int, copy: int,
                    location: int) -> None:
        e, v, interval, _ = self.state_probe()
        self.rows.append(TraceRow(time_ticks, DROP, packet_id, copy,
                                  e, v, interval, location))


def _format_row(row: TraceRow) -> str:
    return ",".join((
        format_ticks(row.time_ticks),
        row.event,
        str(row.packet_id),
        str(row.copy),
        f"{row.estimate_e:.6f}",
        f"{row.estimate_v:.6f}",
        f"{row.timeout_interval:.6f}",
        str(row.retry_count),
    ))


def write_trace(rows: Iterable[TraceRow], destination) -> None:
    """Write rows as CSV.  `destination` is a path or a text file object."""
    if hasattr(destination, "write"):
        _write_trace_file(rows, destination)
    else:
        with open(destination, "w", encoding="ascii", newline="\n") as fh:
            _write_trace_file(rows, fh)


def _write_trace_file(rows: Iterable[TraceRow], fh) -> None:
    fh.write(TRACE_HEADER + "\n")
    for row in rows:
        fh.write(_format_row(row) + "\n")


def read_trace(source) -> list[TraceRow]:
    """Inverse of write_trace.  `source` is a path or a text file object."""
    if hasattr(source, "read"):
        return _read_trace_file(source)
    with open(source, "r", encoding="ascii") as fh:
        return _read_trace_file(fh)


def _read_trace_file(fh) -> list[TraceRow]:
    header = fh.readline().rstrip("\n")
    if header != TRACE_HEADER:
        raise ValueError(f"bad trace header: {header!r}")
    rows = []
    for lineno, line in enumerate(fh, start=2):
        parts = line.rstrip("\n").split(",")
        if len(parts) != 8:
            raise ValueError(f"line {lineno}: expected 8 fields, got {len(parts)}")
        time_s, event, packet_id, copy, e, v, interval, retry = parts
        if event not in EVENT_KINDS:
            raise ValueError(f"line {lineno}: unknown event kind {event!r}")
        rows.append(TraceRow(parse_ticks(time_s), event, int(packet_id),
                             int(copy), float(e), float(v), float(interval),
                             int(retry)))
    return rows


Trajectory = Sequence[Union[float, tuple]]


def _trajectory_values(trajectory: Trajectory,
                       horizon: Optional[float]) -> list[float]:
    """Accepts plain values or (time, value) pairs; horizon cuts by time
    for pairs and by index for plain values."""
    values = []
    for index, item in enumerate(trajectory):
        if isinstance(item, (tuple, list)):
            when, value = item
        else:
            when, value = index, item
        if horizon is None or when <= horizon:
            values.append(value)
    return values


def detect_divergence(trajectory: Trajectory, true_rtt: float,
                      factor: float = 100.0,
                      horizon: Optional[float] = None) -> bool:
    """True iff the estimate exceeds factor * true_rtt within the horizon."""
    if factor <= 1:
        raise ValueError(f"factor must be > 1, got {factor}")
    if true_rtt <= 0:
        raise ValueError(f"true_rtt must be positive, got {true_rtt}")
    if len(trajectory) == 0:
        raise ValueError("empty trajectory")
    threshold = factor * true_rtt
    return any(value > threshold
               for value in _trajectory_values(trajectory, horizon))


def detect_false_convergence(trajectory: Trajectory, true_rtt: float,
                             retrans_rate: float, window: int = 10,
                             epsilon: float = 0.2,
                             min_retrans_rate: float = 0.5) -> bool:
    """True iff the trailing `window` estimates all sit below
    true_rtt * (1 - epsilon) while retransmissions remain frequent.

    A low estimate alone is not enough: the failure mode of interest is the
    duplicate traffic it causes, so a sustained retransmission rate is
    required as well.
    """
    if window < 10:
        raise ValueError(f"window must be >= 10, got {window}")
    if not 0 < epsilon < 1:
        raise ValueError(f"epsilon must be in (0, 1), got {epsilon}")
    if true_rtt <= 0:
        raise ValueError(f"true_rtt must be positive, got {true_rtt}")
    values = _trajectory_values(trajectory, None)
    if len(values) < window:
        raise ValueError(
            f"trajectory has {len(values)} points, need >= {window}")
    ceiling = true_rtt * (1.0 - epsilon)
    tail = values[-window:]
    return all(value < ceiling for value in tail) \
        and retrans_rate >= min_retrans_rate


@dataclass
class SummaryReport:
    packets_offered: int
    packets_delivered: int
    total_copies_sent: int
    duplicates_received: int
    timeout_count: int
    drop_count_per_node: list[int]
    elapsed_ticks: int
    throughput: float
    final_e: float
    max_e: float
    verdict: str
    class_label: Optional[str] = None

    @property
    def elapsed_seconds(self) -> float:
        return ticks_to_seconds(self.elapsed_ticks)

    def drops_at(self, node: int) -> int:
        if 0 <= node < len(self.drop_count_per_node):
            return self.drop_count_per_node[node]
        return 0

    def as_lines(self) -> list[str]:
        lines = [
            f"packets_offered={self.packets_offered}",
            f"packets_delivered={self.packets_delivered}",
            f"total_copies_sent={self.total_copies_sent}",
            f"duplicates_received={self.duplicates_received}",
            f"timeout_count={self.timeout_count}",
            "drop_count_per_node="
            + ",".join(str(n) for n in self.drop_count_per_node),
            f"elapsed={format_ticks(self.elapsed_ticks)}",
            f"throughput={self.throughput:.6f}",
            f"final_e={self.final_e:.6f}",
            f"max_e={self.max_e:.6f}",
            f"verdict={self.verdict}",
        ]
        if self.class_label is not None:
            lines.append(f"class={self.class_label}")
        return lines


def write_summary(report: SummaryReport, destination) -> None:
    text = "\n".join(report.as_lines()) + "\n"
    if hasattr(destination, "write"):
        destination.write(text)
    else:
        with open(destination, "w", encoding="ascii", newline="\n") as fh:
            fh.write(text)


def _normalize(row: TraceRow) -> TraceRow:
    # round(x, 6) lands on the same value as parsing the %.6f rendering,
    # so in-memory rows and file rows summarize identically
    return row._replace(estimate_e=round(row.estimate_e, 6),
                        estimate_v=round(row.estimate_v, 6),
                        timeout_interval=round(row.timeout_interval, 6))


def summarize(rows: Sequence[TraceRow], true_rtt: float, *,
              divergence_factor: float = 100.0,
              fc_window: int = 10,
              fc_epsilon: float = 0.2,
              fc_min_retrans_rate: float = 0.5,
              class_epsilon: Optional[float] = None) -> SummaryReport:
    """Reduce a complete trace to a SummaryReport.

    Copies still in flight when a run was cut short are indistinguishable
    from delivered ones in the trace; they are counted as if they arrived,
    which only affects the duplicate count of truncated runs.
    """
    if not rows:
        raise ValueError("empty trace")
    if class_epsilon is None:
        class_epsilon = 0.01 * true_rtt

    rows = [_normalize(row) for row in rows]
    copies_sent: dict[int, int] = {}
    drops_by_packet: dict[int, int] = {}
    drop_locations: dict[int, int] = {}
    offered = 0
    retransmit_count = 0
    timeout_count = 0
    cumulative = 0
    ack_estimates: list[float] = []
    class_deltas: list[float] = []
    previous_time = rows[0].time_ticks

    index = 0
    while index < len(rows):
        row = rows[index]
        if row.event not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {row.event!r}")
        if row.time_ticks < previous_time:
            raise ValueError("trace rows are not in time order")
        previous_time = row.time_ticks
        if row.event == SEND:
            offered += 1
            copies_sent[row.packet_id] = 1
        elif row.event == RETRANSMIT:
            if row.copy < 2:
                raise ValueError("retransmit row with copy_number < 2")
            retransmit_count += 1
            copies_sent[row.packet_id] = copies_sent.get(row.packet_id, 0) + 1
        elif row.event == DROP:
            drops_by_packet[row.packet_id] = \
                drops_by_packet.get(row.packet_id, 0) + 1
            drop_locations[row.retry_count] = \
                drop_locations.get(row.retry_count, 0) + 1
        elif row.event == TIMEOUT:
            timeout_count += 1
        elif row.event == ACK:
            e_before = row.estimate_e
            e_after = e_before
            scan = index + 1
            while scan < len(rows) and rows[scan].event == ESTIMATE_UPDATE:
                e_after = rows[scan].estimate_e
                scan += 1
            ack_estimates.append(e_after)
            if row.packet_id > cumulative:
                newly = range(cumulative + 1, row.packet_id + 1)
                if any(copies_sent.get(pid, 0) >= 2 for pid in newly):
                    class_deltas.append(e_after - e_before)
                cumulative = row.packet_id
            index = scan
            continue
        index += 1

    delivered = cumulative
    total_copies = offered + retransmit_count
    duplicates = sum(max(0, count - drops_by_packet.get(pid, 0) - 1)
                     for pid, count in copies_sent.items())
    elapsed_ticks = rows[-1].time_ticks
    elapsed_s = ticks_to_seconds(elapsed_ticks)
    throughput = delivered / elapsed_s if elapsed_s > 0 else 0.0

    node_count = max(drop_locations) + 1 if drop_locations else 0
    drop_count_per_node = [drop_locations.get(node, 0)
                           for node in range(node_count)]

    final_e = rows[-1].estimate_e
    max_e = max(row.estimate_e for row in rows)

    diverged = detect_divergence(
        [(row.time_seconds, row.estimate_e) for row in rows],
        true_rtt, factor=divergence_factor)
    false_converged = False
    if not diverged and delivered > 0 and len(ack_estimates) >= fc_window:
        false_converged = detect_false_convergence(
            ack_estimates, true_rtt,
            retrans_rate=retransmit_count / delivered,
            window=fc_window, epsilon=fc_epsilon,
            min_retrans_rate=fc_min_retrans_rate)
    if diverged:
        verdict = VERDICT_DIVERGED
    elif false_converged:
        verdict = VERDICT_FALSE_CONVERGED
    else:
        verdict = VERDICT_BOUNDED

    class_label = None
    if class_deltas:
        mean_delta = sum(class_deltas) / len(class_deltas)
        if mean_delta > class_epsilon:
            class_label = "I"
        elif mean_delta < -class_epsilon:
            class_label = "III"
        else:
            class_label = "II"

    return SummaryReport(
        packets_offered=offered,
        packets_delivered=delivered,
        total_copies_sent=total_copies,
        duplicates_received=duplicates,
        timeout_count=timeout_count,
        drop_count_per_node=drop_count_per_node,
        elapsed_ticks=elapsed_ticks,
        throughput=throughput,
        final_e=final_e,
        max_e=max_e,
        verdict=verdict,
        class_label=class_label,
    )
