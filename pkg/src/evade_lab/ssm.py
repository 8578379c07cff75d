"""Two-dimensional time-to-collision for an ego/leader vehicle pair.

Both vehicles are rectangles of the same length and width moving at constant
velocity.  Longitudinal TTC is the time until the ego front reaches the
leader rear with the two bodies laterally overlapping; lateral TTC is the
time until the near sides meet with the bodies longitudinally overlapping.
The 2D-TTC is the smaller of the two.

Lateral quantities share one signed axis: ``s0_lat`` is the leader's
center offset from the ego and ``v_lat``/``v0_lat`` are the two lateral
speeds along that axis.  A missing time-to-collision is ``None``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

DEFAULT_LENGTH = 4.8
DEFAULT_WIDTH = 1.6


class ConflictKind(str, enum.Enum):
    NONE = "none"
    REAR_END = "rear_end"
    SIDESWIPE = "sideswipe"


@dataclass(frozen=True)
class VehicleDims:
    length: float = DEFAULT_LENGTH
    width: float = DEFAULT_WIDTH

    def __post_init__(self):
        if not (self.length > 0 and self.width > 0):
            raise ValueError(f"vehicle dimensions must be positive, got {self}")


@dataclass(frozen=True)
class PairState:
    """Relative geometry of a follower (ego) and a leader.

    ``s0_lon`` is the bumper-referenced spacing, i.e. the sensed gap plus one
    vehicle length, so the bodies touch longitudinally at ``s0_lon == length``.
    """

    s0_lon: float
    s0_lat: float
    v_lon: float
    v_lat: float
    v0_lon: float
    v0_lat: float

    def canonical(self) -> "PairState":
        """Mirror the lateral axis so the leader offset is non-negative."""
        if self.s0_lat < 0:
            return PairState(self.s0_lon, -self.s0_lat, self.v_lon, -self.v_lat,
                             self.v0_lon, -self.v0_lat)
        return self


@dataclass(frozen=True)
class TtcResult:
    ttc_lon: Optional[float]
    ttc_lat: Optional[float]
    ttc_2d: Optional[float]
    kind: ConflictKind

    @classmethod
    def from_components(cls, ttc_lon: Optional[float], ttc_lat: Optional[float]) -> "TtcResult":
        if ttc_lon is None and ttc_lat is None:
            return cls(None, None, None, ConflictKind.NONE)
        if ttc_lat is None or (ttc_lon is not None and ttc_lon <= ttc_lat):
            return cls(ttc_lon, ttc_lat, ttc_lon, ConflictKind.REAR_END)
        return cls(ttc_lon, ttc_lat, ttc_lat, ConflictKind.SIDESWIPE)


def ttc_longitudinal(p: PairState, dims: VehicleDims = VehicleDims()) -> Optional[float]:
    p = p.canonical()
    closing = p.v_lon - p.v0_lon
    if not (p.s0_lon > dims.length and closing > 0):
        return None
    ttc = (p.s0_lon - dims.length) / closing
    # remaining lateral offset when the front reaches the leader's rear
    s1_lat = p.s0_lat - (p.v_lat - p.v0_lat) * ttc
    if s1_lat < dims.width:
        return ttc
    return None


def ttc_lateral(p: PairState, dims: VehicleDims = VehicleDims()) -> Optional[float]:
    p = p.canonical()
    closing = p.v_lat - p.v0_lat
    if not (p.s0_lat > dims.width and closing > 0):
        return None
    ttc = (p.s0_lat - dims.width) / closing
    s1_lon = p.s0_lon - (p.v_lon - p.v0_lon) * ttc
    if s1_lon < dims.length:
        return ttc
    return None


def ttc_2d(p: PairState, dims: VehicleDims = VehicleDims()) -> TtcResult:
    return TtcResult.from_components(ttc_longitudinal(p, dims), ttc_lateral(p, dims))


def classify_risk(result: TtcResult, threshold: float) -> bool:
    """True when the pair is in conflict: 2D-TTC strictly below ``threshold``."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    return result.ttc_2d is not None and result.ttc_2d < threshold


def conventional_ttc(spacing: float, v_follower: float, v_leader: float,
                     length: float = DEFAULT_LENGTH) -> Optional[float]:
    """Same-lane car-following TTC: gap over closing speed."""
    if spacing > length and v_follower > v_leader:
        return (spacing - length) / (v_follower - v_leader)
    return None


def ttc_2d_arrays(s0_lon, s0_lat, v_lon, v_lat, v0_lon, v0_lat,
                  dims: VehicleDims = VehicleDims()):
    """Vectorised :func:`ttc_2d` over equal-length arrays.

    Returns ``(ttc_lon, ttc_lat, ttc_2d, kind)`` where missing values are NaN
    and ``kind`` is an object array of :class:`ConflictKind`.
    """
    s0_lon, s0_lat, v_lon, v_lat, v0_lon, v0_lat = (
        np.asarray(a, dtype=float) for a in (s0_lon, s0_lat, v_lon, v_lat, v0_lon, v0_lat))
    flip = s0_lat < 0
    s0_lat = np.where(flip, -s0_lat, s0_lat)
    v_lat = np.where(flip, -v_lat, v_lat)
    v0_lat = np.where(flip, -v0_lat, v0_lat)
    l, w = dims.length, dims.width

    with np.errstate(divide="ignore", invalid="ignore"):
        close_lon = v_lon - v0_lon
        t_lon = (s0_lon - l) / close_lon
        ok_lon = (s0_lon > l) & (close_lon > 0)
        ok_lon &= s0_lat - (v_lat - v0_lat) * t_lon < w
        t_lon = np.where(ok_lon, t_lon, np.nan)

        close_lat = v_lat - v0_lat
        t_lat = (s0_lat - w) / close_lat
        ok_lat = (s0_lat > w) & (close_lat > 0)
        ok_lat &= s0_lon - (v_lon - v0_lon) * t_lat < l
        t_lat = np.where(ok_lat, t_lat, np.nan)

    rear = ok_lon & (~ok_lat | (t_lon <= t_lat))
    side = ok_lat & ~rear
    t2d = np.where(rear, t_lon, np.where(side, t_lat, np.nan))
    kind = np.empty(t2d.shape, dtype=object)
    kind[:] = [ConflictKind.REAR_END if r else ConflictKind.SIDESWIPE if s else ConflictKind.NONE
               for r, s in zip(rear.ravel(), side.ravel())]
    return t_lon, t_lat, t2d, kind
