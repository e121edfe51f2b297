"""Canned, parameterized experiment definitions and their drivers.

A Scenario is a plain dataclass; (scenario, seed) determines the run
uniquely, so every driver here is replayable.  The named scenarios exposed
to the CLI are:

    fig3            geometric estimate blow-up: first copy of every packet
                    lost, samples measured from the first copy
    fig6_fromlast   stuck-low estimate: timer shorter than the true delay,
                    samples measured from the last copy
    fig6_ignore     same setup, ambiguous samples discarded outright
    tsao_lee_slow   3-link chain, matched 19.2 kb/s rates
    tsao_lee_fast   same chain with a 1 Mb/s ingress link (buffer overruns)
    loss_sweep      one Bernoulli-loss cell of the divergence-threshold grid
    jth_matrix      one (i, j) cell of the ack-of-copy-i vs measure-from-
                    copy-j outcome matrix
    classify        one canned estimator-drift classification case

The grid drivers (loss_threshold_sweep, jth_attempt_matrix run per cell,
classify_algorithm) live here as library functions; the CLI `sweep`
command and the scripts iterate them.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence, Union

from .estimators import (
    Ewma,
    FromCopy,
    FromFirst,
    FromLast,
    Ignore,
    IgnoreAndIncrease,
    initial_estimate,
)
from .metrics import (
    ACK,
    ESTIMATE_UPDATE,
    RETRANSMIT,
    SEND,
    SummaryReport,
    TraceRecorder,
    TraceRow,
    VERDICT_DIVERGED,
    VERDICT_FALSE_CONVERGED,
    summarize,
)
from .sim import (
    Engine,
    LinkSpec,
    Topology,
    seconds_to_ticks,
    substream,
)
from .timeout import FixedRetries, NoBackoff, Scale
from .transport import (
    ChainPath,
    Connection,
    FixedDelayPath,
    Receiver,
    RetransmitScope,
    TimeoutAlgorithm,
    TimerMode,
)

#: retry budget that no canned run can exhaust; keeps give-up handling out
#: of experiments whose point is the estimator trajectory
EFFECTIVELY_UNLIMITED_RETRIES = 10 ** 9


# -- loss models -----------------------------------------------------------

@dataclass(frozen=True)
class NoLoss:
    pass


@dataclass(frozen=True)
class BernoulliLoss:
    p: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.p < 1.0:
            raise ValueError(f"loss probability must be in [0, 1), got {self.p}")


@dataclass(frozen=True)
class EveryFirstCopyLost:
    """The first transmission of every packet is dropped, deterministically."""


@dataclass(frozen=True)
class BufferOverflowOnly:
    """No synthetic drops; losses arise solely from finite chain buffers."""


@dataclass(frozen=True)
class DropCopiesBefore:
    """Copies numbered below i are dropped, so copy i is the first to arrive.

    This is the deterministic forcing device for the ack-of-copy-i studies.
    """

    i: int

    def __post_init__(self) -> None:
        if self.i < 1:
            raise ValueError(f"copy index must be >= 1, got {self.i}")


LossModel = Union[NoLoss, BernoulliLoss, EveryFirstCopyLost,
                  BufferOverflowOnly, DropCopiesBefore]


def drop_decider(model: LossModel, rng) -> Optional[Callable[[int, int], bool]]:
    """Per-copy drop predicate for the fixed-delay path, or None."""
    if isinstance(model, (NoLoss, BufferOverflowOnly)):
        return None
    if isinstance(model, BernoulliLoss):
        p = model.p
        return lambda packet_id, copy: rng.random() < p
    if isinstance(model, EveryFirstCopyLost):
        return lambda packet_id, copy: copy == 1
    if isinstance(model, DropCopiesBefore):
        threshold = model.i
        return lambda packet_id, copy: copy < threshold
    raise TypeError(f"unknown loss model {model!r}")


# -- scenario definition ---------------------------------------------------

@dataclass
class Scenario:
    """Everything a run needs; plus a seed it is fully deterministic."""

    name: str
    algorithm: TimeoutAlgorithm
    loss: LossModel = NoLoss()
    true_rtt: float = 1.0
    packet_count: int = 100
    seed: int = 1
    horizon: Optional[float] = None  # seconds of simulated time, None = run out
    window_size: int = 1
    timer_mode: TimerMode = TimerMode.SINGLE
    retransmit_scope: RetransmitScope = RetransmitScope.TIMED_OUT_ONLY
    copy_echo: bool = False
    initial_mean: float = 1.0
    initial_variance: float = 0.0
    topology: Optional[Topology] = None
    packet_size_bits: int = 8000
    sample_floor: float = 1e-6  # seconds; substituted for nonpositive samples
    stop_estimate_above: Optional[float] = None  # seconds; early-out for sweeps


@dataclass
class RunResult:
    scenario: Scenario
    rows: list[TraceRow]
    summary: SummaryReport
    connection: Connection
    receiver: Receiver
    path: object


@dataclass
class PreparedRun:
    """A scenario assembled but not yet run; step the engine yourself or
    hand the whole thing to finish_run."""

    scenario: Scenario
    engine: Engine
    recorder: TraceRecorder
    receiver: Receiver
    path: object
    connection: Connection
    deadline: Optional[int]


def prepare_scenario(scenario: Scenario) -> PreparedRun:
    if isinstance(scenario.algorithm.layer2, IgnoreAndIncrease):
        scenario.algorithm.layer2.scheme.reset()  # replays must start fresh
    engine = Engine()
    recorder = TraceRecorder()
    receiver = Receiver()
    drop_fn = drop_decider(scenario.loss, substream(scenario.seed, "loss"))
    if scenario.topology is not None:
        if drop_fn is not None:
            raise ValueError(
                "synthetic per-copy loss only applies to fixed-delay paths; "
                "chain scenarios lose packets to buffer overflow")
        path = ChainPath(engine, receiver, recorder, scenario.topology,
                         scenario.packet_size_bits)
    else:
        path = FixedDelayPath(engine, receiver, recorder,
                              forward_ticks=seconds_to_ticks(scenario.true_rtt),
                              drop_fn=drop_fn)
    connection = Connection(
        engine, path, scenario.algorithm, recorder,
        initial=initial_estimate(scenario.initial_mean,
                                 scenario.initial_variance),
        packet_count=scenario.packet_count,
        window_size=scenario.window_size,
        timer_mode=scenario.timer_mode,
        retransmit_scope=scenario.retransmit_scope,
        copy_echo_enabled=scenario.copy_echo,
        backoff_rng=substream(scenario.seed, "backoff"),
        sample_floor_ticks=max(1, seconds_to_ticks(scenario.sample_floor)),
        stop_estimate_above=scenario.stop_estimate_above,
    )
    deadline = None
    if scenario.horizon is not None:
        deadline = seconds_to_ticks(scenario.horizon)
    return PreparedRun(scenario, engine, recorder, receiver, path, connection,
                       deadline)


def finish_run(prepared: PreparedRun) -> RunResult:
    """Summarize a prepared run whose engine has been drained."""
    prepared.connection.close_open_intervals(prepared.engine.now)
    summary = summarize(prepared.recorder.rows, prepared.scenario.true_rtt)
    return RunResult(prepared.scenario, prepared.recorder.rows, summary,
                     prepared.connection, prepared.receiver, prepared.path)


def run_scenario(scenario: Scenario) -> RunResult:
    prepared = prepare_scenario(scenario)
    prepared.connection.start()
    prepared.engine.run(prepared.deadline)
    return finish_run(prepared)


def multi_copy_ack_estimates(rows: Sequence[TraceRow]) -> list[float]:
    """Post-update estimate after each ack that newly covers a packet which
    had been transmitted more than once (the ambiguous acknowledgments)."""
    copies: dict[int, int] = {}
    cumulative = 0
    estimates: list[float] = []
    index = 0
    while index < len(rows):
        row = rows[index]
        if row.event == SEND:
            copies[row.packet_id] = 1
        elif row.event == RETRANSMIT:
            copies[row.packet_id] = copies.get(row.packet_id, 0) + 1
        elif row.event == ACK:
            e_after = row.estimate_e
            scan = index + 1
            while scan < len(rows) and rows[scan].event == ESTIMATE_UPDATE:
                e_after = rows[scan].estimate_e
                scan += 1
            if row.packet_id > cumulative:
                newly = range(cumulative + 1, row.packet_id + 1)
                if any(copies.get(pid, 0) >= 2 for pid in newly):
                    estimates.append(e_after)
                cumulative = row.packet_id
            index = scan
            continue
        index += 1
    return estimates


# -- canned scenario builders ---------------------------------------------

def a1_algorithm(k: float = 4.0, alpha: float = 0.5,
                 retries: int = 10) -> TimeoutAlgorithm:
    """The baseline composition: smoothed mean from the first copy, timer a
    multiple of the mean, no back-off, fixed retry budget."""
    return TimeoutAlgorithm(Ewma(alpha), FromFirst(), Scale(k), NoBackoff(),
                            FixedRetries(retries))


def make_fig3(i_max: int = 12, seed: int = 1) -> Scenario:
    if i_max < 1:
        raise ValueError(f"i_max must be >= 1, got {i_max}")
    return Scenario(
        name="fig3",
        algorithm=a1_algorithm(k=4.0, alpha=0.5,
                               retries=EFFECTIVELY_UNLIMITED_RETRIES),
        loss=EveryFirstCopyLost(),
        true_rtt=1.0,
        packet_count=i_max,
        seed=seed,
        initial_mean=1.0,
    )


_FIG6_POLICIES = {
    "from_last": FromLast,
    "ignore": Ignore,
    "from_first": FromFirst,
}


def make_fig6(policy: str = "from_last", packets: int = 1000,
              seed: int = 1) -> Scenario:
    if policy not in _FIG6_POLICIES:
        raise ValueError(f"policy must be one of {sorted(_FIG6_POLICIES)}, "
                         f"got {policy!r}")
    algorithm = TimeoutAlgorithm(Ewma(0.5), _FIG6_POLICIES[policy](),
                                 Scale(2.0), NoBackoff(),
                                 FixedRetries(EFFECTIVELY_UNLIMITED_RETRIES))
    return Scenario(
        name=f"fig6_{policy.replace('_', '')}",
        algorithm=algorithm,
        loss=NoLoss(),
        true_rtt=15.0,
        packet_count=packets,
        seed=seed,
        initial_mean=5.0,
    )


def make_tsao_lee(ingress_bps: int, packets: int = 500, window: int = 4,
                  buffer_capacity: int = 2, propagation: float = 0.010,
                  packet_size_bits: int = 8000, k: float = 4.0,
                  alpha: float = 0.5, initial_mean: float = 1.0,
                  seed: int = 1) -> Scenario:
    topology = Topology(
        links=(LinkSpec(ingress_bps, propagation),
               LinkSpec(19200, propagation),
               LinkSpec(19200, propagation)),
        buffer_capacity=buffer_capacity,
    )
    algorithm = a1_algorithm(k=k, alpha=alpha,
                             retries=EFFECTIVELY_UNLIMITED_RETRIES)
    return Scenario(
        name="tsao_lee_slow" if ingress_bps == 19200 else "tsao_lee_fast",
        algorithm=algorithm,
        loss=BufferOverflowOnly(),
        true_rtt=topology.unloaded_rtt(packet_size_bits),
        packet_count=packets,
        seed=seed,
        window_size=window,
        # Retransmitting only the blocking packet keeps the pipe starved
        # between recovery cycles, so cumulative acks cover cached packets
        # whose samples span whole timeout waits.  Go-back-N would refresh
        # every outstanding packet each cycle and the estimate equilibrates
        # instead of compounding.
        retransmit_scope=RetransmitScope.TIMED_OUT_ONLY,
        initial_mean=initial_mean,
        topology=topology,
        packet_size_bits=packet_size_bits,
    )


def make_loss_cell(p: float, k: float = 4.0, seed: int = 1,
                   packets: int = 800) -> Scenario:
    # 800 packets separates the two first-passage regimes at the default
    # divergence threshold: above the 1/(1+k) boundary the estimate crosses
    # it within ~200 packets, below it the occasional excursion needs
    # thousands
    return Scenario(
        name="loss_sweep",
        algorithm=a1_algorithm(k=k, alpha=0.5,
                               retries=EFFECTIVELY_UNLIMITED_RETRIES),
        loss=BernoulliLoss(p),
        true_rtt=1.0,
        packet_count=packets,
        seed=seed,
        initial_mean=1.0,
        stop_estimate_above=100.0,
    )


def make_jth_cell(i: int, j: int, seed: int = 1,
                  packets: int = 80) -> Scenario:
    if i < 1 or j < 1:
        raise ValueError(f"copy indices must be >= 1, got i={i} j={j}")
    algorithm = TimeoutAlgorithm(Ewma(0.875), FromCopy(j), Scale(2.0),
                                 NoBackoff(),
                                 FixedRetries(EFFECTIVELY_UNLIMITED_RETRIES))
    return Scenario(
        name="jth_matrix",
        algorithm=algorithm,
        loss=DropCopiesBefore(i),
        true_rtt=1.0,
        packet_count=packets,
        seed=seed,
        initial_mean=0.15,
        stop_estimate_above=100.0,
    )


def make_classify_case(case: str = "class1", seed: int = 1) -> Scenario:
    """Three canned drift cases: estimates that grow, hold, or shrink
    across ambiguous acknowledgments."""
    if case == "class1":
        scenario = Scenario(
            name="classify",
            algorithm=a1_algorithm(k=4.0, alpha=0.5,
                                   retries=EFFECTIVELY_UNLIMITED_RETRIES),
            loss=EveryFirstCopyLost(),
            true_rtt=1.0,
            packet_count=10,
            seed=seed,
            initial_mean=1.0,
        )
    elif case == "class2":
        algorithm = TimeoutAlgorithm(Ewma(0.5), Ignore(), Scale(4.0),
                                     NoBackoff(),
                                     FixedRetries(EFFECTIVELY_UNLIMITED_RETRIES))
        scenario = Scenario(
            name="classify",
            algorithm=algorithm,
            loss=EveryFirstCopyLost(),
            true_rtt=1.0,
            packet_count=10,
            seed=seed,
            initial_mean=1.0,
        )
    elif case == "class3":
        # spurious-timeout regime measured from the second copy: every
        # sample lands below the mean, so the estimate drifts downward
        algorithm = TimeoutAlgorithm(Ewma(0.875), FromCopy(2), Scale(2.0),
                                     NoBackoff(),
                                     FixedRetries(EFFECTIVELY_UNLIMITED_RETRIES))
        scenario = Scenario(
            name="classify",
            algorithm=algorithm,
            loss=NoLoss(),
            true_rtt=1.0,
            packet_count=12,
            seed=seed,
            initial_mean=0.49,
        )
    else:
        raise ValueError(f"case must be class1, class2 or class3, got {case!r}")
    return scenario


# -- figure-level drivers --------------------------------------------------

def fig3_divergence(i_max: int) -> list[float]:
    """Estimate after each ambiguous ack, E_0 included: i_max + 1 values."""
    scenario = make_fig3(i_max)
    result = run_scenario(scenario)
    series = multi_copy_ack_estimates(result.rows)
    if len(series) != i_max:
        raise RuntimeError(
            f"expected {i_max} ambiguous acknowledgments, saw {len(series)}")
    return [scenario.initial_mean] + series


@dataclass
class Fig6Result:
    trajectory: list[float]
    retransmissions: int
    duplicates: int
    summary: SummaryReport
    result: RunResult


def fig6_false_convergence(policy: str, packets: int = 1000) -> Fig6Result:
    result = run_scenario(make_fig6(policy, packets))
    retransmissions = sum(1 for row in result.rows if row.event == RETRANSMIT)
    return Fig6Result(
        trajectory=[row.estimate_e for row in result.rows
                    if row.event == ESTIMATE_UPDATE] or
                   [result.scenario.initial_mean],
        retransmissions=retransmissions,
        duplicates=result.receiver.duplicates,
        summary=result.summary,
        result=result,
    )


def _interval_overlap(first: list[tuple[int, int]],
                      second: list[tuple[int, int]]) -> int:
    """Total overlap of two sorted, non-overlapping interval lists."""
    i = j = 0
    total = 0
    while i < len(first) and j < len(second):
        low = max(first[i][0], second[j][0])
        high = min(first[i][1], second[j][1])
        if low < high:
            total += high - low
        if first[i][1] <= second[j][1]:
            i += 1
        else:
            j += 1
    return total


@dataclass
class TsaoLeeResult:
    elapsed_ticks: int
    drop_count_per_node: list[int]
    timeout_count: int
    waiting_fraction: float
    summary: SummaryReport
    result: RunResult

    @property
    def elapsed_seconds(self) -> float:
        return self.summary.elapsed_seconds


def tsao_lee(ingress_bps: int, **overrides) -> TsaoLeeResult:
    """Chain-transfer experiment; waiting_fraction is the share of elapsed
    time the sender sat on an armed timer with its egress link idle."""
    scenario = make_tsao_lee(ingress_bps, **overrides)
    result = run_scenario(scenario)
    path = result.path
    connection = result.connection
    elapsed = result.summary.elapsed_ticks
    armed = connection.armed_intervals
    armed_total = sum(end - start for start, end in armed)
    sending_while_armed = _interval_overlap(armed, path.source_busy_intervals)
    waiting_fraction = ((armed_total - sending_while_armed) / elapsed
                       if elapsed > 0 else 0.0)
    drops = path.drops_per_node()
    return TsaoLeeResult(
        elapsed_ticks=elapsed,
        drop_count_per_node=drops,
        timeout_count=connection.timeout_event_count,
        waiting_fraction=waiting_fraction,
        summary=result.summary,
        result=result,
    )


def loss_threshold_sweep(k: float, p_values: Sequence[float],
                         horizon: Optional[float] = None, *,
                         seed: int = 1, packets: int = 800
                         ) -> list[tuple[float, SummaryReport]]:
    """One run per loss probability; rows sorted by p."""
    outcomes = []
    for p in sorted(p_values):
        scenario = make_loss_cell(p, k=k, seed=seed, packets=packets)
        if horizon is not None:
            scenario = replace(scenario, horizon=horizon)
        outcomes.append((p, run_scenario(scenario).summary))
    return outcomes


OUTCOME_CONVERGES = "Converges"
OUTCOME_DIVERGES = "Diverges"
OUTCOME_FALSE_CONVERGES = "FalseConverges"


def jth_attempt_matrix(i: int, j: int, *, seed: int = 1,
                       packets: int = 80) -> str:
    """Outcome for one (ack-of-copy-i, measure-from-copy-j) cell."""
    scenario = make_jth_cell(i, j, seed=seed, packets=packets)
    result = run_scenario(scenario)
    summary = result.summary
    if summary.verdict == VERDICT_DIVERGED:
        return OUTCOME_DIVERGES
    if summary.verdict == VERDICT_FALSE_CONVERGED:
        return OUTCOME_FALSE_CONVERGES
    d = scenario.true_rtt
    if abs(summary.final_e - d) / d < 0.05:
        return OUTCOME_CONVERGES
    raise RuntimeError(
        f"cell (i={i}, j={j}) ended bounded but away from the true delay: "
        f"final_e={summary.final_e:.6f}")


def classify_algorithm(algorithm: TimeoutAlgorithm, loss: LossModel,
                       horizon: Optional[float] = None, *,
                       packets: int = 12, true_rtt: float = 1.0,
                       initial_mean: float = 1.0,
                       initial_variance: float = 0.0, seed: int = 1,
                       window: int = 1,
                       epsilon_fraction: float = 0.01) -> str:
    """Sign of the mean estimate change across ambiguous acks: 'I' if it
    grows beyond +epsilon, 'III' below -epsilon, 'II' otherwise."""
    scenario = Scenario(
        name="classify",
        algorithm=algorithm,
        loss=loss,
        true_rtt=true_rtt,
        packet_count=packets,
        seed=seed,
        horizon=horizon,
        window_size=window,
        initial_mean=initial_mean,
        initial_variance=initial_variance,
    )
    result = run_scenario(scenario)
    summary = summarize(result.rows, true_rtt,
                        class_epsilon=epsilon_fraction * true_rtt)
    return summary.class_label if summary.class_label is not None else "II"


def classify_case(case: str, seed: int = 1) -> str:
    scenario = make_classify_case(case, seed)
    return classify_algorithm(scenario.algorithm, scenario.loss,
                              packets=scenario.packet_count,
                              true_rtt=scenario.true_rtt,
                              initial_mean=scenario.initial_mean,
                              seed=seed)


#: CLI-addressable scenario names and their default constructions
def named_scenario(name: str, seed: int = 1) -> Scenario:
    builders: dict[str, Callable[[], Scenario]] = {
        "fig3": lambda: make_fig3(seed=seed),
        "fig6_fromlast": lambda: make_fig6("from_last", seed=seed),
        "fig6_ignore": lambda: make_fig6("ignore", seed=seed),
        "tsao_lee_slow": lambda: make_tsao_lee(19200, seed=seed),
        "tsao_lee_fast": lambda: make_tsao_lee(1_000_000, seed=seed),
        "loss_sweep": lambda: make_loss_cell(0.3, seed=seed),
        "jth_matrix": lambda: make_jth_cell(2, 2, seed=seed),
        "classify": lambda: make_classify_case("class1", seed=seed),
    }
    if name not in builders:
        raise KeyError(name)
    return builders[name]()


SCENARIO_NAMES = ("fig3", "fig6_fromlast", "fig6_ignore", "tsao_lee_slow",
                  "tsao_lee_fast", "loss_sweep", "jth_matrix", "classify")
