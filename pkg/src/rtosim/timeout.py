"""Timeout interval selection, back-off, and give-up policies.

Three more layers on top of the delay estimate:

  * layer 3 - the interval armed for a fresh transmission (first_timeout)
  * layer 4 - how the interval evolves across retransmissions of the same
             packet (backoff_interval); t0 is retry 0, t_i the interval armed
             after the i-th retransmission
  * layer 5 - when to declare the peer unreachable (disconnect_decision), plus
             a connection-setup probe plan helper

Pure functions over explicit state, like the estimator layer.  Durations are
in the caller's unit; an optional cap t_max is applied after every back-off
rule that carries one.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Optional, Union

from .estimators import RttEstimate

# ---------------------------------------------------------------------------
# layer 3: first timeout


@dataclass(frozen=True)
class Scale:
    """t0 = k * E."""

    k: float = 4.0

    def __post_init__(self) -> None:
        if self.k <= 0:
            raise ValueError(f"k must be > 0, got {self.k}")


@dataclass(frozen=True)
class MeanPlusDeviation:
    """t0 = E + k * sqrt(V)."""

    k: float = 2.0

    def __post_init__(self) -> None:
        if self.k <= 0:
            raise ValueError(f"k must be > 0, got {self.k}")


@dataclass(frozen=True)
class Clamped:
    """t0 = clamp(k * E, t_min, t_max)."""

    k: float = 4.0
    t_min: float = 1.0
    t_max: float = 30.0

    def __post_init__(self) -> None:
        if self.k <= 0:
            raise ValueError(f"k must be > 0, got {self.k}")
        if not 0 < self.t_min <= self.t_max:
            raise ValueError(
                f"need 0 < t_min <= t_max, got [{self.t_min}, {self.t_max}]")


Layer3Policy = Union[Scale, MeanPlusDeviation, Clamped]


def first_timeout(est: RttEstimate, policy: Layer3Policy) -> float:
    """Interval to arm for a packet's first transmission.  Always > 0."""
    if est.mean_estimate <= 0:
        raise ValueError(
            f"estimate must be initialized with a positive mean, "
            f"got {est.mean_estimate}")
    if isinstance(policy, Scale):
        return policy.k * est.mean_estimate
    if isinstance(policy, MeanPlusDeviation):
        if est.variance_estimate < 0:
            raise ValueError(
                f"variance must be >= 0, got {est.variance_estimate}")
        return est.mean_estimate + policy.k * math.sqrt(est.variance_estimate)
    if isinstance(policy, Clamped):
        return max(policy.t_min, min(policy.k * est.mean_estimate, policy.t_max))
    raise TypeError(f"unknown layer 3 policy: {policy!r}")


# ---------------------------------------------------------------------------
# layer 4: back-off across retransmissions


@dataclass(frozen=True)
class NoBackoff:
    """t_i = t0 for every retry."""

    t_max: Optional[float] = None


@dataclass(frozen=True)
class ExponentialBackoff:
    """t_i = b * t_{i-1}."""

    b: float = 2.0
    t_max: Optional[float] = None

    def __post_init__(self) -> None:
        if self.b <= 1.0:
            raise ValueError(f"back-off base b must be > 1, got {self.b}")


@dataclass(frozen=True)
class RandomExponentialBackoff:
    """t_i drawn uniformly from [t_min, b**i * t0]."""

    b: float = 2.0
    t_min: float = 1e-6
    t_max: Optional[float] = None

    def __post_init__(self) -> None:
        if self.b <= 1.0:
            raise ValueError(f"back-off base b must be > 1, got {self.b}")
        if self.t_min <= 0:
            raise ValueError(f"t_min must be > 0, got {self.t_min}")


@dataclass(frozen=True)
class LinearBackoff:
    """t_i = t_{i-1} + delta_t."""

    delta_t: float = 1.0
    t_max: Optional[float] = None

    def __post_init__(self) -> None:
        if self.delta_t <= 0:
            raise ValueError(f"delta_t must be > 0, got {self.delta_t}")


Layer4Policy = Union[NoBackoff, ExponentialBackoff,
                     RandomExponentialBackoff, LinearBackoff]


@dataclass
class RetryState:
    """Per-timer retry bookkeeping.

    retry_count        retransmissions performed for the current packet
    interval_history   every interval armed so far, t0 first
    cumulative_timeout sum of interval_history
    packets_delivered  connection-lifetime acknowledged-packet count (feeds
                       policies whose patience grows with progress)
    """

    retry_count: int = 0
    interval_history: list = field(default_factory=list)
    cumulative_timeout: float = 0.0
    packets_delivered: int = 0

    def arm(self, interval: float) -> None:
        self.interval_history.append(interval)
        self.cumulative_timeout += interval

    def reset(self) -> None:
        """Fresh timer for a new packet; lifetime counters survive."""
        self.retry_count = 0
        self.interval_history = []
        self.cumulative_timeout = 0.0


def backoff_interval(state: RetryState, t0: float, policy: Layer4Policy,
                     rng: Optional[random.Random] = None) -> float:
    """Interval t_i to arm after the state's latest retransmission (i >= 1)."""
    i = state.retry_count
    if i < 1:
        raise ValueError(
            f"back-off produces intervals for retry >= 1, state has {i}")
    if not state.interval_history:
        raise ValueError("no interval has been armed yet")
    previous = state.interval_history[-1]
    if isinstance(policy, NoBackoff):
        interval = t0
    elif isinstance(policy, ExponentialBackoff):
        interval = policy.b * previous
    elif isinstance(policy, RandomExponentialBackoff):
        if rng is None:
            raise ValueError("random back-off needs a seeded random stream")
        upper = policy.b ** i * t0
        lower = min(policy.t_min, upper)
        interval = rng.uniform(lower, upper)
    elif isinstance(policy, LinearBackoff):
        interval = previous + policy.delta_t
    else:
        raise TypeError(f"unknown layer 4 policy: {policy!r}")
    if policy.t_max is not None:
        interval = min(policy.t_max, interval)
    return interval


# ---------------------------------------------------------------------------
# layer 5: disconnection


@dataclass(frozen=True)
class FixedRetries:
    """Give up once r retransmissions have gone unanswered."""

    r: int = 10

    def __post_init__(self) -> None:
        if not isinstance(self.r, int) or self.r < 1:
            raise ValueError(f"retry budget r must be an integer >= 1, got {self.r}")


@dataclass(frozen=True)
class GrowingRetries:
    """Retry budget grows with delivered progress:

        r = base_r + floor(log2(1 + packets_delivered))

    A connection that has moved a lot of data earns more patience before the
    peer is declared unreachable.
    """

    base_r: int = 10

    def __post_init__(self) -> None:
        if not isinstance(self.base_r, int) or self.base_r < 1:
            raise ValueError(
                f"base retry budget must be an integer >= 1, got {self.base_r}")

    def budget(self, packets_delivered: int) -> int:
        return self.base_r + ((1 + packets_delivered).bit_length() - 1)


@dataclass(frozen=True)
class TotalTimeAndRetries:
    """Give up only when BOTH the summed timeout intervals reach g seconds
    and at least r retransmissions have gone unanswered."""

    g: float = 20.0
    r: int = 3

    def __post_init__(self) -> None:
        if self.g <= 0:
            raise ValueError(f"time budget g must be > 0, got {self.g}")
        if not isinstance(self.r, int) or self.r < 1:
            raise ValueError(f"retry budget r must be an integer >= 1, got {self.r}")


Layer5Policy = Union[FixedRetries, GrowingRetries, TotalTimeAndRetries]


def disconnect_decision(state: RetryState, policy: Layer5Policy) -> bool:
    """True when the connection should be declared broken."""
    if isinstance(policy, FixedRetries):
        return state.retry_count >= policy.r
    if isinstance(policy, GrowingRetries):
        return state.retry_count >= policy.budget(state.packets_delivered)
    if isinstance(policy, TotalTimeAndRetries):
        return (state.cumulative_timeout >= policy.g
                and state.retry_count >= policy.r)
    raise TypeError(f"unknown layer 5 policy: {policy!r}")


# ---------------------------------------------------------------------------
# connection-setup probing

#: Event label surfaced to the user when a probe round expires unanswered.
RETRY_EVENT_LABEL = "retrying"


@dataclass(frozen=True)
class ProbePlan:
    """Connection-setup probe schedule.

    Send r probes spaced t0 apart (offsets 0, t0, ..., (r-1)*t0), wait until
    `deadline` for an answer, and if none arrives start another round while
    reporting a user-visible event carrying RETRY_EVENT_LABEL.
    """

    send_offsets: tuple
    deadline: float
    retry_event_label: str = RETRY_EVENT_LABEL

    def on_deadline(self) -> tuple["ProbePlan", str]:
        """No answer by the deadline: repeat the round, surface the label."""
        return self, self.retry_event_label


def setup_probe_plan(t0: float, r: int, patience: float) -> ProbePlan:
    if t0 <= 0:
        raise ValueError(f"probe spacing t0 must be > 0, got {t0}")
    if not isinstance(r, int) or r < 1:
        raise ValueError(f"probe count r must be an integer >= 1, got {r}")
    if patience <= r * t0:
        raise ValueError(
            f"patience {patience} does not cover {r} probes spaced {t0} apart")
    return ProbePlan(tuple(i * t0 for i in range(r)), patience)
