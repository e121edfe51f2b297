"""Randomized invariant batteries.

Each check_* function draws `cases` random instances from a seeded generator,
asserts the invariant on every one, and returns the number of cases checked.
The unit-test files exercise the same invariants through hypothesis for
shrinkable counterexamples; these loops exist so the acceptance suite can run
each invariant at a guaranteed case count.
"""
from __future__ import annotations

import io
import math
import random

from rtosim.estimators import (
    ExponentialIncrease,
    FromCopy,
    FromFirst,
    FromLast,
    Ignore,
    IgnoreAndIncrease,
    LinearIncrease,
    ParabolicIncrease,
    RttEstimate,
    SecondOrderExponentialIncrease,
    TransmissionRecord,
    edge_update,
    ewma_shift_update,
    ewma_update,
    extract_sample,
    increase_estimate,
    mills_update,
)
from rtosim.metrics import (
    ACK,
    TIMEOUT,
    detect_divergence,
    read_trace,
    summarize,
    write_trace,
)
from rtosim.scenarios import (
    BernoulliLoss,
    EveryFirstCopyLost,
    NoLoss,
    Scenario,
    a1_algorithm,
    finish_run,
    prepare_scenario,
    run_scenario,
)
from rtosim.sim import (
    Engine,
    EventKind,
    LinkSpec,
    NodeBuffer,
    SchedulingError,
    Topology,
    seconds_to_ticks,
    ticks_to_seconds,
)
from rtosim.timeout import (
    ExponentialBackoff,
    FixedRetries,
    GrowingRetries,
    LinearBackoff,
    MeanPlusDeviation,
    NoBackoff,
    RandomExponentialBackoff,
    RetryState,
    Scale,
    TotalTimeAndRetries,
    backoff_interval,
    disconnect_decision,
    first_timeout,
    setup_probe_plan,
)
from rtosim.transport import TimeoutAlgorithm
from rtosim.estimators import Ewma
from rtosim.timeout import Clamped


def _estimate(rng: random.Random) -> RttEstimate:
    return RttEstimate(rng.uniform(1e-3, 1e3), rng.uniform(0.0, 1e3),
                       rng.randrange(100))


# -- layer 1 / layer 2 ------------------------------------------------------

def check_shift_equivalence(cases: int, seed: int = 101) -> int:
    """ewma_shift(n) tracks ewma(alpha = 1 - 2**-n) to within one ulp."""
    rng = random.Random(seed)
    for _ in range(cases):
        est = _estimate(rng)
        sample = rng.uniform(0.0, 1e3)
        n = rng.randint(1, 10)
        via_shift = ewma_shift_update(est, sample, n).mean_estimate
        via_alpha = ewma_update(est, sample, 1.0 - 2.0 ** -n).mean_estimate
        assert abs(via_shift - via_alpha) <= math.ulp(via_alpha), \
            (est, sample, n)
    return cases


def check_update_bounds(cases: int, seed: int = 102) -> int:
    """Every layer 1 mean lands inside [min(E, S), max(E, S)]; edge keeps
    the variance nonnegative."""
    rng = random.Random(seed)
    for _ in range(cases):
        est = _estimate(rng)
        sample = rng.uniform(0.0, 1e3)
        lo, hi = sorted((est.mean_estimate, sample))
        outputs = [
            ewma_update(est, sample, rng.uniform(1e-6, 1 - 1e-6)),
            ewma_shift_update(est, sample, rng.randint(1, 16)),
            mills_update(est, sample, 15 / 16, 3 / 4),
            edge_update(est, sample, rng.uniform(1e-6, 1 - 1e-6),
                        rng.uniform(1e-6, 1 - 1e-6)),
        ]
        for out in outputs:
            assert lo <= out.mean_estimate <= hi, (est, sample, out)
            assert out.variance_estimate >= 0.0
            assert out.update_count == est.update_count + 1
    return cases


def check_mills_degenerate(cases: int, seed: int = 103) -> int:
    """mills with alpha1 = alpha2 = alpha is exactly ewma(alpha)."""
    rng = random.Random(seed)
    for _ in range(cases):
        est = _estimate(rng)
        sample = rng.uniform(0.0, 1e3)
        alpha = rng.uniform(1e-6, 1 - 1e-6)
        assert mills_update(est, sample, alpha, alpha) == \
            ewma_update(est, sample, alpha), (est, sample, alpha)
    return cases


def check_single_copy_policies(cases: int, seed: int = 104) -> int:
    """A single-copy record yields the same sample under every policy."""
    rng = random.Random(seed)
    policies = [FromFirst(), FromLast(), FromCopy(1), FromCopy(7), Ignore(),
                IgnoreAndIncrease(ExponentialIncrease())]
    for _ in range(cases):
        send = rng.uniform(0.0, 1e3)
        ack = send + rng.uniform(1e-6, 1e3)
        record = TransmissionRecord(1, [send])
        samples = {extract_sample(record, ack, p) for p in policies}
        assert samples == {ack - send}, (send, ack, samples)
    return cases


def check_first_vs_last(cases: int, seed: int = 105) -> int:
    """On multi-copy records FromFirst strictly exceeds FromLast, and any
    FromCopy(j) sample sits between them."""
    rng = random.Random(seed)
    for _ in range(cases):
        times = [rng.uniform(0.0, 10.0)]
        for _ in range(rng.randint(1, 4)):
            times.append(times[-1] + rng.uniform(1e-3, 10.0))
        ack = times[-1] + rng.uniform(1e-3, 10.0)
        record = TransmissionRecord(1, times)
        from_first = extract_sample(record, ack, FromFirst())
        from_last = extract_sample(record, ack, FromLast())
        assert from_first > from_last, (times, ack)
        j = rng.randint(1, 6)
        mid = extract_sample(record, ack, FromCopy(j))
        assert from_last <= mid <= from_first, (times, ack, j)
    return cases


def check_increase_monotone(cases: int, seed: int = 106) -> int:
    """Every increase application strictly raises the mean; the parabolic
    step and second-order multiplier never shrink between calls."""
    rng = random.Random(seed)
    for _ in range(cases):
        schemes = [
            LinearIncrease(rng.uniform(1e-3, 5.0)),
            ParabolicIncrease(rng.uniform(1e-3, 5.0), rng.uniform(0.0, 5.0)),
            ExponentialIncrease(1.0 + rng.uniform(1e-3, 3.0)),
            SecondOrderExponentialIncrease(1.0 + rng.uniform(1e-3, 2.0),
                                           rng.uniform(0.0, 2.0)),
        ]
        for scheme in schemes:
            est = RttEstimate(rng.uniform(1e-3, 100.0))
            last_step, last_mult = 0.0, 0.0
            for _ in range(5):
                nxt = increase_estimate(est, scheme)
                assert nxt.mean_estimate > est.mean_estimate, scheme
                if isinstance(scheme, ParabolicIncrease):
                    step = nxt.mean_estimate - est.mean_estimate
                    assert step >= last_step - 1e-12
                    last_step = step
                elif isinstance(scheme, SecondOrderExponentialIncrease):
                    mult = nxt.mean_estimate / est.mean_estimate
                    assert mult >= last_mult - 1e-12
                    last_mult = mult
                est = nxt
    return cases


# -- layers 3-5 -------------------------------------------------------------

def check_scale_linearity(cases: int, seed: int = 107) -> int:
    rng = random.Random(seed)
    for _ in range(cases):
        k = rng.uniform(1e-3, 50.0)
        mean = rng.uniform(1e-3, 1e3)
        lam = rng.uniform(1e-3, 1e3)
        scaled = first_timeout(RttEstimate(lam * mean), Scale(k))
        direct = lam * first_timeout(RttEstimate(mean), Scale(k))
        assert math.isclose(scaled, direct, rel_tol=1e-12), (k, mean, lam)
    return cases


def _armed_sequence(policy, t0: float, steps: int,
                    rng: random.Random) -> list[float]:
    state = RetryState()
    state.arm(t0)
    intervals = [t0]
    for _ in range(steps):
        state.retry_count += 1
        nxt = backoff_interval(state, t0, policy, rng)
        state.arm(nxt)
        intervals.append(nxt)
    return intervals


def check_backoff_shapes(cases: int, seed: int = 108) -> int:
    """Uncapped exponential back-off is exactly geometric; adding any cap
    keeps the sequence nondecreasing and never above t_max."""
    rng = random.Random(seed)
    for _ in range(cases):
        b = 1.0 + rng.uniform(1e-3, 3.0)
        t0 = rng.uniform(1e-3, 10.0)
        steps = rng.randint(2, 8)
        free = _armed_sequence(ExponentialBackoff(b), t0, steps, rng)
        for prev, cur in zip(free, free[1:]):
            assert cur == b * prev, (b, t0, free)
        t_max = rng.uniform(t0, t0 * b ** steps)
        capped = _armed_sequence(ExponentialBackoff(b, t_max=t_max), t0,
                                 steps, rng)
        for prev, cur in zip(capped, capped[1:]):
            assert prev <= cur <= t_max + 1e-15, (b, t0, t_max, capped)
        lin = _armed_sequence(LinearBackoff(rng.uniform(1e-3, 5.0),
                                            t_max=t_max), t0, steps, rng)
        assert all(v <= t_max + 1e-15 for v in lin[1:])
    return cases


def check_randexp_backoff(cases: int, seed: int = 109) -> int:
    """Random exponential draws stay inside [t_min, b**i * t0] and replay
    bit-identically from an equally seeded stream."""
    rng = random.Random(seed)
    for _ in range(cases):
        b = 1.0 + rng.uniform(1e-3, 2.0)
        t0 = rng.uniform(1e-2, 10.0)
        t_min = rng.uniform(1e-6, t0)
        policy = RandomExponentialBackoff(b, t_min)
        steps = rng.randint(2, 6)
        stream_seed = rng.randrange(2 ** 32)
        first = _armed_sequence(policy, t0, steps, random.Random(stream_seed))
        second = _armed_sequence(policy, t0, steps, random.Random(stream_seed))
        assert first == second
        for i, value in enumerate(first[1:], start=1):
            upper = b ** i * t0
            assert min(t_min, upper) <= value <= upper, (b, t0, t_min, i)
    return cases


def check_disconnect_monotone(cases: int, seed: int = 110) -> int:
    """Once a give-up policy says disconnect, more retries or elapsed
    timeout never revoke the decision."""
    rng = random.Random(seed)
    for _ in range(cases):
        policy = rng.choice([
            FixedRetries(rng.randint(1, 6)),
            GrowingRetries(rng.randint(1, 4)),
            TotalTimeAndRetries(rng.uniform(0.5, 20.0), rng.randint(1, 5)),
        ])
        state = RetryState(packets_delivered=rng.randrange(10))
        state.arm(rng.uniform(0.1, 5.0))
        tripped = False
        for _ in range(12):
            decision = disconnect_decision(state, policy)
            assert not (tripped and not decision), (policy, state)
            tripped = tripped or decision
            state.retry_count += 1
            state.arm(rng.uniform(0.1, 5.0))
    return cases


def check_probe_plans(cases: int, seed: int = 111) -> int:
    rng = random.Random(seed)
    for _ in range(cases):
        t0 = rng.uniform(1e-3, 5.0)
        r = rng.randint(1, 6)
        patience = r * t0 + rng.uniform(1e-6, 10.0)
        plan = setup_probe_plan(t0, r, patience)
        assert len(plan.send_offsets) == r
        assert plan.send_offsets == tuple(i * t0 for i in range(r))
        assert plan.deadline == patience
        assert all(off < plan.deadline for off in plan.send_offsets)
    return cases


# -- simulation core --------------------------------------------------------

def check_engine_ordering(cases: int, seed: int = 112) -> int:
    """Events come back in (time, insertion) order; scheduling into the
    past is refused."""
    rng = random.Random(seed)
    for _ in range(cases):
        engine = Engine()
        seen: list[tuple[int, int]] = []
        count = rng.randint(1, 12)
        for label in range(count):
            when = rng.randrange(5)  # ties on purpose
            engine.schedule(when, EventKind.PACKET_ARRIVAL, (when, label),
                            lambda ev: seen.append(ev.payload))
        engine.run()
        assert seen == sorted(seen), seen
        try:
            engine.schedule(engine.now - 1, EventKind.PACKET_ARRIVAL, None,
                            lambda ev: None)
        except SchedulingError:
            pass
        else:
            assert engine.now == 0, "past scheduling must be rejected"
    return cases


def check_buffer_bounds(cases: int, seed: int = 113) -> int:
    """Drop-tail occupancy stays within [0, capacity] under random
    enqueue/release traffic and matches a shadow model."""
    rng = random.Random(seed)
    for _ in range(cases):
        capacity = rng.randint(1, 5)
        buf = NodeBuffer(capacity)
        model_occupancy = model_drops = 0
        for _ in range(rng.randint(1, 30)):
            if model_occupancy > 0 and rng.random() < 0.4:
                buf.release()
                model_occupancy -= 1
            else:
                admitted = buf.enqueue_or_drop()
                if model_occupancy < capacity:
                    assert admitted
                    model_occupancy += 1
                else:
                    assert not admitted
                    model_drops += 1
            assert 0 <= buf.occupancy <= capacity
        assert buf.occupancy == model_occupancy
        assert buf.dropped == model_drops
    return cases


def _random_chain_scenario(rng: random.Random, name: str) -> Scenario:
    links = tuple(
        LinkSpec(rng.choice([9600, 19200, 48000, 96000]),
                 rng.uniform(0.001, 0.02))
        for _ in range(rng.randint(1, 3))
    )
    topology = Topology(links, buffer_capacity=rng.randint(1, 2))
    return Scenario(
        name=name,
        algorithm=a1_algorithm(k=rng.uniform(2.0, 6.0),
                               retries=10 ** 9),
        true_rtt=topology.unloaded_rtt(8000),
        packet_count=rng.randint(1, 4),
        seed=rng.randrange(2 ** 16),
        window_size=rng.randint(1, 3),
        topology=topology,
    )


def check_chain_conservation(cases: int, seed: int = 114) -> int:
    """On a drained chain every sent copy was either delivered or dropped,
    interior buffers are empty, and no ack beats the unloaded round trip."""
    rng = random.Random(seed)
    for index in range(cases):
        result = run_scenario(_random_chain_scenario(rng, f"chain{index}"))
        conn, receiver, path = result.connection, result.receiver, result.path
        dropped = sum(path.drops_per_node())
        assert receiver.copies_received + dropped == conn.total_copies_sent
        assert all(buf.occupancy == 0 for buf in path.buffers.values())
        floor_ticks = seconds_to_ticks(result.scenario.true_rtt)
        first_ack = next(r for r in result.rows if r.event == ACK)
        assert first_ack.time_ticks >= floor_ticks
        assert result.summary.packets_delivered == result.scenario.packet_count
    return cases


# -- transport --------------------------------------------------------------

def check_zero_loss_convergence(cases: int, seed: int = 115) -> int:
    """Without loss no retransmission ever happens and the smoothed mean
    obeys the geometric error bound |E_n - d| <= alpha**n |E0 - d|.

    The initial mean is drawn at or above the true delay: an undershooting
    first timer causes genuine spurious retransmissions even without loss
    (that is the false-convergence setup, tested elsewhere).
    """
    rng = random.Random(seed)
    for index in range(cases):
        alpha = rng.uniform(0.1, 0.9)
        rtt = rng.uniform(0.05, 5.0)
        scenario = Scenario(
            name=f"clean{index}",
            algorithm=TimeoutAlgorithm(Ewma(alpha), FromFirst(),
                                       Scale(rng.uniform(2.0, 6.0)),
                                       NoBackoff(), FixedRetries(10)),
            loss=NoLoss(),
            true_rtt=rtt,
            packet_count=rng.randint(1, 10),
            seed=index,
            window_size=rng.randint(1, 3),
            initial_mean=rtt * rng.uniform(1.0, 5.0),
        )
        result = run_scenario(scenario)
        assert result.summary.total_copies_sent == scenario.packet_count
        assert all(row.event != "retransmit" for row in result.rows)
        est = result.connection.estimate
        d = ticks_to_seconds(seconds_to_ticks(rtt))  # as sampled, tick-exact
        bound = alpha ** est.update_count * abs(scenario.initial_mean - d)
        assert abs(est.mean_estimate - d) <= bound + 1e-9, scenario
    return cases


def _random_lossy_scenario(rng: random.Random, name: str) -> Scenario:
    return Scenario(
        name=name,
        algorithm=a1_algorithm(k=rng.uniform(1.5, 4.0), retries=10 ** 9),
        loss=BernoulliLoss(rng.uniform(0.0, 0.25)),
        true_rtt=rng.uniform(0.1, 2.0),
        packet_count=rng.randint(1, 5),
        seed=rng.randrange(2 ** 16),
        window_size=rng.randint(1, 3),
    )


def check_single_timer_exclusive(cases: int, seed: int = 116) -> int:
    """In single-timer mode at most one live expiry event is pending at any
    event boundary (stale epochs do not count)."""
    rng = random.Random(seed)
    for index in range(cases):
        prepared = prepare_scenario(_random_lossy_scenario(rng, f"tmr{index}"))
        engine, conn = prepared.engine, prepared.connection
        prepared.connection.start()
        guard = 0
        while engine._queue:
            guard += 1
            assert guard < 100_000
            engine.run(deadline=engine._queue[0][0])
            live = sum(
                1 for _, _, ev in engine._queue
                if ev.kind is EventKind.TIMER_EXPIRY
                and ev.payload == conn._epoch
            )
            assert live <= 1, f"{live} live timers pending"
        finish_run(prepared)
    return cases


def check_copy_accounting(cases: int, seed: int = 117) -> int:
    """Receiver duplicates equal copies sent minus distinct deliveries minus
    network drops, and the trace's timeout rows match the sender counter."""
    rng = random.Random(seed)
    for index in range(cases):
        result = run_scenario(_random_lossy_scenario(rng, f"acct{index}"))
        conn, receiver = result.connection, result.receiver
        drops = sum(result.summary.drop_count_per_node)
        assert receiver.duplicates == \
            conn.total_copies_sent - receiver.distinct_delivered - drops
        assert receiver.duplicates == result.summary.duplicates_received
        timeout_rows = sum(1 for r in result.rows if r.event == TIMEOUT)
        assert timeout_rows == conn.timeout_event_count
        assert result.summary.timeout_count == conn.timeout_event_count
    return cases


# -- scenarios / metrics ----------------------------------------------------

def check_replay_determinism(cases: int, seed: int = 118) -> int:
    """The same scenario and seed replays to the identical trace."""
    rng = random.Random(seed)
    for index in range(cases):
        scenario = _random_lossy_scenario(rng, f"replay{index}")
        first = run_scenario(scenario)
        second = run_scenario(scenario)
        assert first.rows == second.rows
        assert first.summary == second.summary
    return cases


def check_summary_roundtrip(cases: int, seed: int = 119) -> int:
    """Summarizing a trace re-read from its serialized form reproduces the
    in-memory report, and the verdict is always exactly one of the three."""
    rng = random.Random(seed)
    verdicts = {"Bounded", "Diverged", "FalseConverged"}
    for index in range(cases):
        if index % 2:
            scenario = _random_lossy_scenario(rng, f"io{index}")
        else:  # mix in a systematically retransmitting shape
            scenario = Scenario(
                name=f"io{index}",
                algorithm=a1_algorithm(k=rng.uniform(2.0, 5.0),
                                       retries=10 ** 9),
                loss=EveryFirstCopyLost(),
                packet_count=rng.randint(1, 4),
                seed=index,
            )
        result = run_scenario(scenario)
        buffer = io.StringIO()
        write_trace(result.rows, buffer)
        buffer.seek(0)
        reread = summarize(read_trace(buffer), scenario.true_rtt)
        assert reread == result.summary
        assert result.summary.verdict in verdicts
    return cases


def check_divergence_monotone(cases: int, seed: int = 120) -> int:
    """Raising any single point of a trajectory can only turn the
    divergence verdict on, never off."""
    rng = random.Random(seed)
    for _ in range(cases):
        rtt = rng.uniform(0.1, 10.0)
        factor = rng.uniform(2.0, 50.0)
        trajectory = [rng.uniform(0.0, rtt * factor * 1.5)
                      for _ in range(rng.randint(1, 20))]
        before = detect_divergence(trajectory, rtt, factor)
        bumped = list(trajectory)
        bumped[rng.randrange(len(bumped))] += rng.uniform(0.0, rtt * factor)
        after = detect_divergence(bumped, rtt, factor)
        assert after or not before, (trajectory, bumped)
    return cases


#: name -> battery, used by the acceptance suite to drive every invariant
ALL_BATTERIES = {
    fn.__name__: fn
    for fn in (
        check_shift_equivalence,
        check_update_bounds,
        check_mills_degenerate,
        check_single_copy_policies,
        check_first_vs_last,
        check_increase_monotone,
        check_scale_linearity,
        check_backoff_shapes,
        check_randexp_backoff,
        check_disconnect_monotone,
        check_probe_plans,
        check_engine_ordering,
        check_buffer_bounds,
        check_chain_conservation,
        check_zero_loss_convergence,
        check_single_timer_exclusive,
        check_copy_accounting,
        check_replay_determinism,
        check_summary_roundtrip,
        check_divergence_monotone,
    )
}
