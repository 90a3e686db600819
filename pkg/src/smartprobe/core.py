"""Domain types and the capacity arithmetic used by every other module.

Units: capacities are bits per second, packet sizes are bytes, times are
seconds.  Nothing in here touches clocks or sockets.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence


class DomainError(ValueError):
    """Raised when an input lies outside the domain of a capacity formula."""


class TechLabel(str, enum.Enum):
    GPRS = "GPRS"
    EDGE = "EDGE"
    UMTS = "UMTS"
    HSPA = "HSPA"
    LTE = "LTE"
    WIFI_B = "WIFI_B"
    WIFI_AG = "WIFI_AG"
    WIFI_N = "WIFI_N"
    OTHER = "OTHER"


# Nominal capacities in bits/s.
NOMINAL_CAPACITY = {
    TechLabel.WIFI_B: 11_000_000,
    TechLabel.WIFI_AG: 54_000_000,
    TechLabel.WIFI_N: 450_000_000,
    TechLabel.GPRS: 171_000,
    TechLabel.EDGE: 473_000,
    TechLabel.UMTS: 1_800_000,
    TechLabel.HSPA: 14_400_000,
    TechLabel.LTE: 326_400_000,
}


@dataclass(frozen=True)
class NetworkTechnology:
    label: TechLabel
    nominal_capacity: float

    def __post_init__(self):
        if not self.nominal_capacity > 0:
            raise ValueError("nominal_capacity must be > 0")
        expected = NOMINAL_CAPACITY.get(self.label)
        if expected is not None and self.nominal_capacity != expected:
            raise ValueError(
                f"{self.label.value} has a fixed nominal capacity of {expected} bps")

    @classmethod
    def named(cls, label: str | TechLabel) -> "NetworkTechnology":
        label = TechLabel(label)
        if label is TechLabel.OTHER:
            raise ValueError("OTHER needs an explicit capacity; use NetworkTechnology.other()")
        return cls(label, NOMINAL_CAPACITY[label])

    @classmethod
    def other(cls, capacity_bps: float) -> "NetworkTechnology":
        return cls(TechLabel.OTHER, float(capacity_bps))

    @classmethod
    def parse(cls, text: str) -> "NetworkTechnology":
        """Parse ``WIFI_AG`` style labels or ``OTHER:<bps>``."""
        text = text.strip()
        if text.upper().startswith("OTHER"):
            _, _, cap = text.partition(":")
            if not cap:
                raise ValueError("OTHER technology needs a capacity, e.g. OTHER:1e9")
            return cls.other(float(cap))
        return cls.named(text.upper())

    @property
    def name(self) -> str:
        if self.label is TechLabel.OTHER:
            return f"OTHER:{self.nominal_capacity:g}"
        return self.label.value

    def __str__(self):
        return self.name


NAMED_TECHNOLOGIES: tuple[NetworkTechnology, ...] = tuple(
    NetworkTechnology.named(label) for label in NOMINAL_CAPACITY)


@dataclass(frozen=True)
class ProbeParameters:
    packet_size: int = 1500
    dispersion_threshold: float = 0.010
    trains_per_campaign: int = 60
    max_consecutive_failures: int = 3
    min_train_length: int = 2
    # engine knobs
    train_timeout_floor: float = 2.0
    learned_timeout_floor: float = 0.5
    reorder_grace: float = 0.05
    max_restarts_at_floor: int = 3
    handshake_attempts: int = 3
    handshake_timeout: float = 3.0
    prober_idle_timeout: float = 30.0

    def __post_init__(self):
        if not 64 <= self.packet_size <= 1500:
            raise ValueError("packet_size must be within [64, 1500] bytes")
        if not self.dispersion_threshold > 0:
            raise ValueError("dispersion_threshold must be > 0")
        if self.trains_per_campaign < 1:
            raise ValueError("trains_per_campaign must be >= 1")
        if self.min_train_length < 2:
            raise ValueError("min_train_length must be >= 2")
        if self.max_consecutive_failures < 1:
            raise ValueError("max_consecutive_failures must be >= 1")

    @classmethod
    def from_dict(cls, data: dict) -> "ProbeParameters":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown probe parameters: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class TrainObservation:
    """One train as seen by the Estimator.

    ``t_first``/``t_last`` are measured from the RTS send instant on the
    Estimator's own clock; ``t_last`` is when the train became complete.
    """
    train_index: int
    k_used: int
    t_first: float
    t_last: float
    complete: bool = True

    def __post_init__(self):
        if self.k_used < 2:
            raise ValueError("k_used must be >= 2")
        if self.complete and not 0 < self.t_first <= self.t_last:
            raise ValueError("complete train needs 0 < t_first <= t_last")


@dataclass(frozen=True)
class CapacityEstimate:
    capacity_bps: float
    chosen_train_index: int
    delay_sum_min: float
    dispersion_used: float
    per_train_capacities: tuple[tuple[int, float], ...]
    k_final: int
    trains_received: int
    restarts: int
    observations: tuple[TrainObservation, ...] = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        if not self.capacity_bps > 0:
            raise ValueError("capacity_bps must be > 0")
        if len(self.per_train_capacities) != self.trains_received:
            raise ValueError("per_train_capacities must have trains_received entries")
        if self.chosen_train_index not in {i for i, _ in self.per_train_capacities}:
            raise ValueError("chosen_train_index must appear in per_train_capacities")

    @classmethod
    def from_remote(cls, capacity_bps: float, k_final: int, restarts: int,
                    packet_size: int = 1500) -> "CapacityEstimate":
        """Summary of an estimate computed by the remote Estimator.

        Only the final value travels back over the wire, so the per-train
        list holds that single value and the delay sum is unknown (NaN).
        """
        dispersion = (k_final - 1) * packet_size * 8 / capacity_bps
        return cls(capacity_bps, 0, math.nan, dispersion, ((0, capacity_bps),),
                   k_final, 1, restarts)


def capacity_from_dispersion(k: int, packet_size: int, dispersion: float) -> float:
    """(k - 1) * P * 8 / D, in bits per second."""
    if k < 2:
        raise DomainError(f"train length must be >= 2, got {k}")
    if packet_size <= 0:
        raise DomainError("packet size must be positive")
    if not dispersion > 0:
        raise DomainError(f"dispersion must be positive, got {dispersion}")
    return (k - 1) * packet_size * 8 / dispersion


def _exact(x: float) -> Fraction:
    # the reference k values need decimal semantics: 0.01 s must be exactly 1/100.
    return Fraction(x).limit_denominator(10**9)


def initial_train_length(tech: NetworkTechnology,
                         params: ProbeParameters = ProbeParameters()) -> int:
    """Smallest k whose dispersion at nominal capacity reaches the threshold."""
    bits = params.packet_size * 8
    needed = _exact(tech.nominal_capacity) * _exact(params.dispersion_threshold) / bits
    return max(params.min_train_length, math.ceil(needed + 1))


def halved_train_length(k: int, floor: int = 2) -> int:
    if k < 2:
        raise DomainError("train length must be >= 2")
    return max(k // 2, floor)


def train_length_sequence(k_initial: int, floor: int = 2) -> list[int]:
    """k_initial, halved repeatedly down to (and including) the floor."""
    seq = [k_initial]
    while seq[-1] > floor:
        seq.append(halved_train_length(seq[-1], floor))
    return seq


def refined_dispersion(obs: TrainObservation, t_first_min_so_far: float) -> float:
    if not obs.complete:
        raise DomainError("dispersion is undefined for an incomplete train")
    d = obs.t_last - min(t_first_min_so_far, obs.t_first)
    if not d > 0:
        raise DomainError(f"non-positive dispersion {d!r} (clock anomaly)")
    return d


def delay_sum(obs: TrainObservation) -> float:
    return obs.t_first + obs.t_last


def select_min_delay_sum(observations: Sequence[TrainObservation],
                         packet_size: int = 1500):
    """Replay the min-delay-sum selection over a list of complete trains.

    Returns ``(position, dispersion, delay_sum, per_train)`` where
    ``per_train`` holds the refined-dispersion capacity of every train.
    Independent of the engine's incremental bookkeeping; used to audit it
    and to replay prefixes of a campaign.
    """
    if not observations:
        raise DomainError("no observations")
    t1_min = math.inf
    best = None
    per_train = []
    for pos, obs in enumerate(observations):
        t1_min = min(t1_min, obs.t_first)
        d = refined_dispersion(obs, t1_min)
        s = delay_sum(obs)
        per_train.append(capacity_from_dispersion(obs.k_used, packet_size, d))
        if best is None or s < best[2]:
            best = (pos, d, s)
    return best[0], best[1], best[2], per_train


def campaign_traffic_bytes(n: int, k: int, packet_size: int = 1500) -> int:
    """Probe payload of one campaign, control messages excluded."""
    if n < 1 or k < 2:
        raise DomainError("need n >= 1 and k >= 2")
    return n * k * packet_size


def worst_case_traffic_bytes(k_initial: int, n: int = 60, packet_size: int = 1500) -> int:
    """Payload when every k level runs a full campaign before halving."""
    return sum(campaign_traffic_bytes(n, k, packet_size)
               for k in train_length_sequence(k_initial))


def pbprobe_train_lengths(tech: NetworkTechnology, packet_size: int = 1500,
                          threshold: float = 0.010) -> tuple[list[int], int]:
    """Ramp-up train lengths and the final length PBProbe settles on.

    Starts from a packet pair and multiplies (k - 1) by ten while the
    dispersion at nominal capacity stays below the threshold.
    """
    cap = _exact(tech.nominal_capacity)
    thr = _exact(threshold)
    ramp = []
    k = 2
    while (k - 1) * packet_size * 8 / cap < thr:
        ramp.append(k)
        k = (k - 1) * 10 + 1
    return ramp, k


def pbprobe_traffic_bytes(tech: NetworkTechnology, packet_size: int = 1500,
                          threshold: float = 0.010, n: int = 200) -> int:
    ramp, k = pbprobe_train_lengths(tech, packet_size, threshold)
    return (sum(ramp) + n * k) * packet_size


def nominal_train_time(k: int, packet_size: int, capacity_bps: float) -> float:
    return k * packet_size * 8 / capacity_bps


def coefficient_of_variation(values: Iterable[float]) -> float:
    vals = list(values)
    if not vals:
        raise DomainError("empty sample")
    mean = sum(vals) / len(vals)
    var = sum((v - mean) ** 2 for v in vals) / len(vals)
    return math.sqrt(var) / mean
