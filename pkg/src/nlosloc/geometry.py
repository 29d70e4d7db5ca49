"""Per-edge distance bounds from raw range measurements and anchor geometry.

Measured ranges carry zero-mean noise and, possibly, a positive bias from
an obstructed path. Instead of classifying edges, every edge gets an
interval [lower, upper] that contains the true distance whenever the
line-of-sight error stays below the configured error cap:

* upper: measured distance plus the error cap. Edges flagged a priori as
  obstructed use the measurement itself (the bias is positive, so the raw
  measurement already overestimates the true distance).
* lower, for sensor-anchor edges of sensors with three or more anchors in
  range: the sensor lies inside the range disc of every other in-range
  anchor k, so its distance to anchor j is at least
  ``|a_j - a_k| - upper_ik``, maximised over k and clamped at zero.

Sensor-sensor edges and under-anchored sensors get lower = 0.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Mapping

from .errors import InvalidInputError


class MeasurementKind(str, enum.Enum):
    """Prior knowledge attached to a single range measurement."""

    UNKNOWN = "unknown"
    LOS_PRIOR = "los-prior"
    NLOS_PRIOR = "nlos-prior"


@dataclass(frozen=True)
class Point2:
    """A 2-D coordinate in meters."""

    x: float
    y: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise InvalidInputError(f"non-finite coordinate ({self.x}, {self.y})")

    def distance_to(self, other: "Point2") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)

    def as_tuple(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class RangeMeasurement:
    """One observed edge distance with an optional path prior and weight."""

    i: int
    j: int
    distance: float
    kind: MeasurementKind = MeasurementKind.UNKNOWN
    weight: float = 1.0

    def __post_init__(self) -> None:
        if self.i == self.j:
            raise InvalidInputError(f"self edge ({self.i}, {self.j})")
        if not (math.isfinite(self.distance) and self.distance > 0):
            raise InvalidInputError(f"distance must be positive, got {self.distance}")
        if not (math.isfinite(self.weight) and self.weight >= 0):
            raise InvalidInputError(f"weight must be nonnegative, got {self.weight}")

    @property
    def edge(self) -> tuple[int, int]:
        """Unordered node pair, normalized to (low, high)."""
        return (self.i, self.j) if self.i < self.j else (self.j, self.i)


@dataclass(frozen=True)
class DistanceBounds:
    """Interval [lower, upper] for the true distance of one edge.

    ``consistent`` is False only when the raw geometric lower bound
    exceeded the upper bound and was clamped down to it.
    """

    i: int
    j: int
    lower: float
    upper: float
    consistent: bool = True

    def __post_init__(self) -> None:
        if not (0.0 <= self.lower <= self.upper):
            raise InvalidInputError(
                f"bounds must satisfy 0 <= lower <= upper, got [{self.lower}, {self.upper}]"
            )

    @property
    def edge(self) -> tuple[int, int]:
        return (self.i, self.j) if self.i < self.j else (self.j, self.i)


@dataclass(frozen=True)
class NoiseBoundPolicy:
    """How the per-edge error cap is obtained.

    mode "absolute": ``value`` is the cap in meters.
    mode "sigma-multiple": cap is ``value * sigma`` for the sigma passed in
    at resolution time. Default in the pipeline is a multiple of 3, which
    covers 99.7% of Gaussian line-of-sight errors.
    """

    mode: str = "sigma-multiple"
    value: float = 3.0

    def __post_init__(self) -> None:
        if self.mode not in ("absolute", "sigma-multiple"):
            raise InvalidInputError(f"unknown noise bound mode {self.mode!r}")
        if not (math.isfinite(self.value) and self.value > 0):
            raise InvalidInputError(f"policy value must be positive, got {self.value}")

    def resolve(self, sigma: float) -> float:
        """Return the error cap in meters."""
        if self.mode == "absolute":
            return self.value
        return self.value * sigma


def upper_bound(measurement: RangeMeasurement, policy: NoiseBoundPolicy, sigma: float = 0.0) -> float:
    """Upper bound on the true distance of one measured edge.

    Edges with an obstructed-path prior use the measurement verbatim;
    everything else gets the resolved error cap added.
    """
    if measurement.distance <= 0:
        raise InvalidInputError("measurement distance must be positive")
    cap = policy.resolve(sigma)
    if not (math.isfinite(cap) and cap > 0):
        raise InvalidInputError(f"resolved error cap must be positive, got {cap}")
    if measurement.kind is MeasurementKind.NLOS_PRIOR:
        return measurement.distance
    return measurement.distance + cap


def pairwise_anchor_lower_bound(a_j: Point2, a_k: Point2, upper_ik: float) -> float:
    """Lower bound on the sensor-to-``a_j`` distance from one other anchor.

    The sensor lies within ``upper_ik`` of ``a_k``, so its distance to
    ``a_j`` is at least the distance from ``a_j`` to that disc:
    ``max(0, |a_j - a_k| - upper_ik)``. Valid also when the discs are
    disjoint; only the disc around ``a_k`` matters.
    """
    if not (math.isfinite(upper_ik) and upper_ik > 0):
        raise InvalidInputError(f"upper_ik must be positive, got {upper_ik}")
    separation = a_j.distance_to(a_k)
    if separation == 0.0:
        raise InvalidInputError("coincident anchors give no lower bound")
    return max(0.0, separation - upper_ik)


def derive_bounds(
    measurements: Iterable[RangeMeasurement],
    anchors: Mapping[int, Point2],
    policy: NoiseBoundPolicy,
    sigma: float = 0.0,
) -> list[DistanceBounds]:
    """Derive [lower, upper] for every measured edge.

    Sensor-anchor edges of sensors with >= 3 anchors in range get the
    geometric lower bound (max over the other in-range anchors); all other
    edges get lower = 0. If a lower bound exceeds its upper bound it is
    clamped and the edge marked inconsistent. Output preserves input order
    and never drops edges.
    """
    ms = list(measurements)
    seen: set[tuple[int, int]] = set()
    for m in ms:
        if m.edge in seen:
            raise InvalidInputError(f"duplicate edge {m.edge}")
        seen.add(m.edge)
        if m.i in anchors and m.j in anchors:
            raise InvalidInputError(f"anchor-anchor edge {m.edge} is not supported")

    uppers = {m.edge: upper_bound(m, policy, sigma) for m in ms}

    # sensor id -> list of (anchor id, upper bound of that sensor-anchor edge)
    anchor_edges: dict[int, list[tuple[int, float]]] = {}
    for m in ms:
        if m.j in anchors and m.i not in anchors:
            anchor_edges.setdefault(m.i, []).append((m.j, uppers[m.edge]))
        elif m.i in anchors and m.j not in anchors:
            anchor_edges.setdefault(m.j, []).append((m.i, uppers[m.edge]))

    out: list[DistanceBounds] = []
    for m in ms:
        upper = uppers[m.edge]
        lower = 0.0
        sensor = anchor = None
        if m.j in anchors and m.i not in anchors:
            sensor, anchor = m.i, m.j
        elif m.i in anchors and m.j not in anchors:
            sensor, anchor = m.j, m.i
        if sensor is not None:
            in_range = anchor_edges.get(sensor, [])
            if len(in_range) >= 3:
                for k, upper_ik in in_range:
                    if k == anchor:
                        continue
                    cand = pairwise_anchor_lower_bound(anchors[anchor], anchors[k], upper_ik)
                    if cand > lower:
                        lower = cand
        consistent = True
        if lower > upper:
            lower, consistent = upper, False
        out.append(DistanceBounds(i=m.i, j=m.j, lower=lower, upper=upper, consistent=consistent))
    return out
