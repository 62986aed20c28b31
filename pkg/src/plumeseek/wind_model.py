"""Wind measurements, dense reconstruction, and tilt-based estimation.

Direction convention used everywhere in this package: the angle a wind
*blows toward*, counter-clockwise from the +x axis, in radians. A
measurement (speed, direction) therefore maps to the vector
(speed*cos(dir), speed*sin(dir)).

Sparse measurements are expanded to a dense series by zero-order hold:
each sample time takes the most recent measurement at or before it, and
times before the first measurement take the first.

A hovering vehicle leans into the wind, so the thrust-lean direction
points at where the wind comes from; the estimated blow-toward direction
is the opposite of the lean azimuth. Tilt magnitude is the angle between
the body z axis and the world vertical, and a monotone calibration table
maps tilt degrees to speed in m/s.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ValidationError

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class WindMeasurement:
    t_s: float
    speed_mps: float
    direction_rad: float

    def __post_init__(self) -> None:
        if self.t_s < 0.0:
            raise ValidationError("measurement time must be >= 0")
        if self.speed_mps < 0.0:
            raise ValidationError("wind speed must be >= 0")
        if not math.isfinite(self.direction_rad):
            raise ValidationError("wind direction must be finite")
        object.__setattr__(self, "direction_rad", self.direction_rad % TWO_PI)

    def vector(self) -> np.ndarray:
        return np.array(
            [
                self.speed_mps * math.cos(self.direction_rad),
                self.speed_mps * math.sin(self.direction_rad),
            ]
        )


@dataclass
class WindSeries:
    """Dense wind vectors at a fixed sampling interval starting at t=0."""

    dt_s: float
    vectors: np.ndarray  # (n, 2)

    def __post_init__(self) -> None:
        if not self.dt_s > 0.0:
            raise ValidationError("wind series dt must be positive")
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[1] != 2 or self.vectors.shape[0] < 1:
            raise ValidationError("wind series needs an (n, 2) vector array, n >= 1")

    @property
    def horizon_s(self) -> float:
        return (self.vectors.shape[0] - 1) * self.dt_s

    def at(self, t: float) -> np.ndarray:
        idx = int(math.floor(t / self.dt_s + 1e-9))
        idx = min(max(idx, 0), self.vectors.shape[0] - 1)
        return self.vectors[idx]

    def __call__(self, t: float) -> np.ndarray:
        return self.at(t)


def reconstruct(
    measurements: Sequence[WindMeasurement], dt_s: float, horizon_s: float
) -> WindSeries:
    """Zero-order-hold expansion of sparse measurements onto [0, horizon]."""
    if not measurements:
        raise ValidationError("need at least one wind measurement")
    if horizon_s < 0.0:
        raise ValidationError("horizon must be >= 0")
    ms = sorted(measurements, key=lambda m: m.t_s)
    times = np.array([m.t_s for m in ms])
    vecs = np.array([m.vector() for m in ms])
    n = int(math.floor(horizon_s / dt_s + 1e-9)) + 1
    sample_t = np.arange(n) * dt_s
    # most recent measurement at or before each sample; before-first -> first
    idx = np.searchsorted(times, sample_t + 1e-12, side="right") - 1
    idx = np.clip(idx, 0, len(ms) - 1)
    return WindSeries(dt_s=dt_s, vectors=vecs[idx])


@dataclass
class TiltCalibration:
    """Monotone tilt-to-speed table, linearly interpolated and clamped."""

    tilt_deg: np.ndarray
    speed_mps: np.ndarray

    def __post_init__(self) -> None:
        self.tilt_deg = np.asarray(self.tilt_deg, dtype=np.float64)
        self.speed_mps = np.asarray(self.speed_mps, dtype=np.float64)
        if self.tilt_deg.ndim != 1 or self.tilt_deg.size < 2:
            raise ValidationError("calibration needs >= 2 breakpoints")
        if self.tilt_deg.shape != self.speed_mps.shape:
            raise ValidationError("calibration columns must have equal length")
        if np.any(np.diff(self.tilt_deg) <= 0.0):
            raise ValidationError("tilt breakpoints must be strictly increasing")
        if np.any(np.diff(self.speed_mps) < 0.0) or self.speed_mps[0] < 0.0:
            raise ValidationError("speeds must be non-negative and non-decreasing")

    def speed_at(self, tilt_deg: float) -> float:
        return float(np.interp(tilt_deg, self.tilt_deg, self.speed_mps))


@dataclass(frozen=True)
class Attitude:
    """Roll/pitch/yaw in radians, aerospace Z-Y-X convention."""

    roll_rad: float
    pitch_rad: float
    yaw_rad: float


def tilt_angle_deg(attitude: Attitude) -> float:
    """Angle between the body z axis and the world vertical, degrees."""
    c = math.cos(attitude.roll_rad) * math.cos(attitude.pitch_rad)
    return math.degrees(math.acos(min(1.0, max(-1.0, c))))


def tilt_to_wind(
    attitude: Attitude, calibration: TiltCalibration, t_s: float = 0.0
) -> WindMeasurement:
    """Estimate the wind from hover attitude.

    The horizontal projection of the body z axis (before yaw) is
    (sin(pitch) cos(roll), -sin(roll)); the wind blows toward the opposite
    azimuth, rotated into the world frame by yaw. A nose-up pitch therefore
    reports wind blowing along -x in the body frame. At zero tilt the
    direction is reported as 0 by convention (speed is zero there for any
    valid table).
    """
    tilt = tilt_angle_deg(attitude)
    speed = calibration.speed_at(tilt)
    if tilt < 1e-12:
        direction = 0.0
    else:
        lean_x = math.sin(attitude.pitch_rad) * math.cos(attitude.roll_rad)
        lean_y = -math.sin(attitude.roll_rad)
        direction = math.atan2(-lean_y, -lean_x) + attitude.yaw_rad
        direction = direction % TWO_PI
    return WindMeasurement(t_s=t_s, speed_mps=speed, direction_rad=direction)
