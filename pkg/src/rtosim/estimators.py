"""Round-trip delay estimation.

Two concerns live here, kept as pure state-passing functions:

  * layer 1 - how a new delay sample updates the running estimate
             (ewma, ewma_shift, mills, edge)
  * layer 2 - which sample, if any, to extract when a packet was sent more
             than once and the acknowledgment does not say which copy it
             answers (from_first, from_last, from_copy, ignore, and the
             ignore-and-increase family)

All durations are plain numbers in the caller's unit.  The EWMA core uses the
increment form E + (1-a)*(S-E): it is algebraically identical to a*E+(1-a)*S
and, unlike the two-product form, can never round outside [min(E,S), max(E,S)].
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Union

#: Default clamp for a non-positive extracted sample: one simulation tick.
DEFAULT_SAMPLE_FLOOR = 1e-6


@dataclass(frozen=True)
class RttEstimate:
    """Running delay estimate: smoothed mean, smoothed variance, update count."""

    mean_estimate: float
    variance_estimate: float = 0.0
    update_count: int = 0


def initial_estimate(mean: float, variance: float = 0.0) -> RttEstimate:
    if mean <= 0:
        raise ValueError(f"initial mean estimate must be > 0, got {mean}")
    if variance < 0:
        raise ValueError(f"initial variance must be >= 0, got {variance}")
    return RttEstimate(mean, variance, 0)


def _check_sample(sample: float) -> None:
    if sample < 0:
        raise ValueError(f"delay sample must be >= 0, got {sample}")


def _blend(old: float, new: float, keep: float) -> float:
    # keep*old + (1-keep)*new, computed in increment form
    return old + (1.0 - keep) * (new - old)


# ---------------------------------------------------------------------------
# layer 1 updates


def ewma_update(est: RttEstimate, sample: float, alpha: float) -> RttEstimate:
    """E <- alpha*E + (1-alpha)*S."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    _check_sample(sample)
    return RttEstimate(_blend(est.mean_estimate, sample, alpha),
                       est.variance_estimate, est.update_count + 1)


def ewma_shift_update(est: RttEstimate, sample: float, n: int) -> RttEstimate:
    """E <- E + 2**-n * (S - E), i.e. ewma with alpha = 1 - 2**-n.

    The shift-friendly form: the weight is an exact power of two, so this is
    bit-identical to ewma_update at the corresponding alpha.
    """
    if not isinstance(n, int) or n < 1:
        raise ValueError(f"shift amount n must be an integer >= 1, got {n}")
    _check_sample(sample)
    return RttEstimate(_blend(est.mean_estimate, sample, 1.0 - 2.0 ** -n),
                       est.variance_estimate, est.update_count + 1)


def mills_update(est: RttEstimate, sample: float,
                 alpha1: float, alpha2: float) -> RttEstimate:
    """Asymmetric smoothing: weight alpha1 when the sample falls below the
    estimate, alpha2 otherwise.  A sample exactly equal to the estimate takes
    the alpha2 branch (the value is the same either way).

    Requires 0 < alpha2 <= alpha1 < 1; the equal case exists so the policy
    degenerates to ewma, which is also how it is property-tested.
    """
    if not (0.0 < alpha2 <= alpha1 < 1.0):
        raise ValueError(
            f"need 0 < alpha2 <= alpha1 < 1, got alpha1={alpha1} alpha2={alpha2}")
    _check_sample(sample)
    keep = alpha1 if sample < est.mean_estimate else alpha2
    return RttEstimate(_blend(est.mean_estimate, sample, keep),
                       est.variance_estimate, est.update_count + 1)


def edge_update(est: RttEstimate, sample: float,
                alpha: float, beta: float) -> RttEstimate:
    """Mean and variance update.

    The variance is smoothed against the squared error of the sample from the
    mean as it stood *before* this update, then the mean moves:

        V <- beta*V + (1-beta)*(S - E)**2
        E <- alpha*E + (1-alpha)*S
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    if not 0.0 < beta < 1.0:
        raise ValueError(f"beta must be in (0, 1), got {beta}")
    _check_sample(sample)
    err = sample - est.mean_estimate
    variance = _blend(est.variance_estimate, err * err, beta)
    mean = _blend(est.mean_estimate, sample, alpha)
    return RttEstimate(mean, variance, est.update_count + 1)


# ---------------------------------------------------------------------------
# layer 1 policy objects (validated parameter bundles + dispatch)


@dataclass(frozen=True)
class Ewma:
    alpha: float = 0.5

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")


@dataclass(frozen=True)
class EwmaShift:
    n: int = 3

    def __post_init__(self) -> None:
        if not isinstance(self.n, int) or self.n < 1:
            raise ValueError(f"n must be an integer >= 1, got {self.n}")


@dataclass(frozen=True)
class Mills:
    alpha1: float = 15.0 / 16.0
    alpha2: float = 3.0 / 4.0

    def __post_init__(self) -> None:
        if not (0.0 < self.alpha2 < self.alpha1 < 1.0):
            raise ValueError(
                f"need 0 < alpha2 < alpha1 < 1, got {self.alpha1}, {self.alpha2}")


@dataclass(frozen=True)
class Edge:
    alpha: float = 0.5
    beta: float = 0.5

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"beta must be in (0, 1), got {self.beta}")


Layer1Policy = Union[Ewma, EwmaShift, Mills, Edge]


def layer1_update(est: RttEstimate, sample: float,
                  policy: Layer1Policy) -> RttEstimate:
    if isinstance(policy, Ewma):
        return ewma_update(est, sample, policy.alpha)
    if isinstance(policy, EwmaShift):
        return ewma_shift_update(est, sample, policy.n)
    if isinstance(policy, Mills):
        return mills_update(est, sample, policy.alpha1, policy.alpha2)
    if isinstance(policy, Edge):
        return edge_update(est, sample, policy.alpha, policy.beta)
    raise TypeError(f"unknown layer 1 policy: {policy!r}")


# ---------------------------------------------------------------------------
# estimate-increase schemes (used by the ignore-and-increase layer 2 family)


@dataclass
class LinearIncrease:
    """E <- E + delta."""

    delta: float = 2.0

    def __post_init__(self) -> None:
        if self.delta <= 0:
            raise ValueError(f"delta must be > 0, got {self.delta}")

    def next_mean(self, mean: float) -> float:
        return mean + self.delta

    def reset(self) -> None:
        pass


@dataclass
class ParabolicIncrease:
    """E <- E + delta_i, where the step itself grows by delta2 each time."""

    delta0: float = 1.0
    delta2: float = 1.0
    _current: float = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.delta0 <= 0:
            raise ValueError(f"delta0 must be > 0, got {self.delta0}")
        if self.delta2 < 0:
            raise ValueError(f"delta2 must be >= 0, got {self.delta2}")
        self._current = self.delta0

    def next_mean(self, mean: float) -> float:
        step = self._current
        self._current += self.delta2
        return mean + step

    def reset(self) -> None:
        self._current = self.delta0


@dataclass
class ExponentialIncrease:
    """E <- c * E with c > 1."""

    c: float = 2.0

    def __post_init__(self) -> None:
        if self.c <= 1.0:
            raise ValueError(f"c must be > 1, got {self.c}")

    def next_mean(self, mean: float) -> float:
        return self.c * mean

    def reset(self) -> None:
        pass


@dataclass
class SecondOrderExponentialIncrease:
    """E <- c_i * E, where the multiplier itself grows by delta_c each time."""

    c0: float = 1.5
    delta_c: float = 0.5
    _current: float = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.c0 <= 1.0:
            raise ValueError(f"c0 must be > 1, got {self.c0}")
        if self.delta_c < 0:
            raise ValueError(f"delta_c must be >= 0, got {self.delta_c}")
        self._current = self.c0

    def next_mean(self, mean: float) -> float:
        mult = self._current
        self._current += self.delta_c
        return mult * mean

    def reset(self) -> None:
        self._current = self.c0


IncreaseScheme = Union[LinearIncrease, ParabolicIncrease,
                       ExponentialIncrease, SecondOrderExponentialIncrease]


def increase_estimate(est: RttEstimate, scheme: IncreaseScheme) -> RttEstimate:
    """Apply one blind estimate increase.  Advances the scheme's own state."""
    return RttEstimate(scheme.next_mean(est.mean_estimate),
                       est.variance_estimate, est.update_count + 1)


# ---------------------------------------------------------------------------
# layer 2: sample extraction from a possibly-retransmitted packet


@dataclass
class TransmissionRecord:
    """Send history of one packet: strictly increasing per-copy send times."""

    packet_id: int
    copy_send_times: list = field(default_factory=list)

    def add_copy(self, send_time) -> int:
        if self.copy_send_times and send_time <= self.copy_send_times[-1]:
            raise ValueError(
                f"copy send times must be strictly increasing: "
                f"{send_time} after {self.copy_send_times[-1]}")
        self.copy_send_times.append(send_time)
        return len(self.copy_send_times)

    @property
    def copies(self) -> int:
        return len(self.copy_send_times)


@dataclass(frozen=True)
class FromFirst:
    pass


@dataclass(frozen=True)
class FromLast:
    pass


@dataclass(frozen=True)
class FromCopy:
    """Measure from copy j (1-based), or from the last copy if fewer exist."""

    j: int = 2

    def __post_init__(self) -> None:
        if not isinstance(self.j, int) or self.j < 1:
            raise ValueError(f"copy index j must be an integer >= 1, got {self.j}")


@dataclass(frozen=True)
class Ignore:
    pass


@dataclass
class IgnoreAndIncrease:
    scheme: IncreaseScheme = field(default_factory=ExponentialIncrease)


Layer2Policy = Union[FromFirst, FromLast, FromCopy, Ignore, IgnoreAndIncrease]


def extract_sample(record: TransmissionRecord, ack_time,
                   policy: Layer2Policy,
                   floor=DEFAULT_SAMPLE_FLOOR) -> Optional[float]:
    """Pick the delay sample this acknowledgment yields, if any.

    A record with a single copy is unambiguous and yields ack_time - send_time
    under every policy.  With two or more copies the policy decides which send
    to measure from; the ignore family yields no sample at all.  A computed
    interval <= 0 (possible under from_copy, since the measuring origin may
    postdate the copy that was actually answered) is clamped to `floor`.
    """
    n = record.copies
    if n == 0:
        raise ValueError(f"packet {record.packet_id} has no recorded copies")
    times = record.copy_send_times
    if n == 1:
        origin = times[0]
    elif isinstance(policy, (Ignore, IgnoreAndIncrease)):
        return None
    elif isinstance(policy, FromFirst):
        origin = times[0]
    elif isinstance(policy, FromLast):
        origin = times[-1]
    elif isinstance(policy, FromCopy):
        origin = times[min(policy.j, n) - 1]
    else:
        raise TypeError(f"unknown layer 2 policy: {policy!r}")
    sample = ack_time - origin
    if sample <= 0:
        return floor
    return sample
