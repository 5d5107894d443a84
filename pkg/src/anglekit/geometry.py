"""Angle conventions, line orientation, and Doppler velocity math.

Orientation convention: an angle is measured between an undirected line
and the vertical image axis (the beam travels down the image), in degrees
within [0, 180). With x growing right and y growing down, the segment
(x1, y1)-(x2, y2) has orientation atan2(x2 - x1, y2 - y1) wrapped mod 180:
a vertical line reads 0, a horizontal line reads 90.

All public functions take and return degrees; radians appear only
transiently inside the trig calls.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import AngleSingularError, DegenerateLineError, InvalidArgumentError

COS_FLOOR = 1e-6
"""|cos(angle)| at or below this counts as the 90-degree singularity."""


@dataclass(frozen=True)
class LineSegment:
    """Pixel-space segment; x right, y down, origin at the top-left corner."""

    x1: float
    y1: float
    x2: float
    y2: float


@dataclass(frozen=True)
class DopplerParams:
    """Transmit frequency f0 (Hz), speed of sound c (m/s), measured shift fd (Hz)."""

    f0: float
    c: float
    fd: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.f0) and self.f0 > 0):
            raise InvalidArgumentError(f"f0 must be positive and finite, got {self.f0!r}")
        if not (math.isfinite(self.c) and self.c > 0):
            raise InvalidArgumentError(f"c must be positive and finite, got {self.c!r}")
        if not math.isfinite(self.fd):
            raise InvalidArgumentError(f"fd must be finite, got {self.fd!r}")


def wrap_angle(raw: float) -> float:
    """Map any finite angle onto the undirected-line range [0, 180)."""
    if not math.isfinite(raw):
        raise InvalidArgumentError(f"angle must be finite, got {raw!r}")
    wrapped = float(raw) % 180.0
    # Float modulo can round up to the modulus itself for tiny negatives.
    return 0.0 if wrapped >= 180.0 else wrapped


def angle_difference(a: float, b: float) -> float:
    """Smallest separation between two line orientations, in [0, 90]."""
    d = abs(wrap_angle(a) - wrap_angle(b))
    return min(d, 180.0 - d)


def angle_from_endpoints(seg: LineSegment) -> float:
    """Orientation of a drawn segment relative to the vertical axis.

    Invariant under swapping the endpoints; raises DegenerateLineError when
    they coincide.
    """
    dx = seg.x2 - seg.x1
    dy = seg.y2 - seg.y1
    if dx == 0 and dy == 0:
        raise DegenerateLineError(f"segment endpoints coincide at ({seg.x1}, {seg.y1})")
    return wrap_angle(math.degrees(math.atan2(dx, dy)))


def doppler_velocity(params: DopplerParams, theta_deg: float,
                     cos_floor: float = COS_FLOOR) -> float:
    """Convert a measured frequency shift to flow velocity in m/s.

    Inverts fd = 2 * f0 * v * cos(theta) / c. Near 90 degrees the cosine
    vanishes and the conversion is undefined.
    """
    if not math.isfinite(theta_deg):
        raise InvalidArgumentError(f"theta must be finite, got {theta_deg!r}")
    cos_t = math.cos(math.radians(theta_deg))
    if abs(cos_t) <= cos_floor:
        raise AngleSingularError(
            f"velocity is undefined at theta={theta_deg} deg (|cos| <= {cos_floor})"
        )
    return params.fd * params.c / (2.0 * params.f0 * cos_t)


def velocity_error_factor(theta_true_deg: float, delta_deg: float,
                          cos_floor: float = COS_FLOOR) -> float:
    """Relative velocity error from assigning theta_true + delta instead of theta_true.

    Returns cos(theta_true) / cos(theta_true + delta) - 1; positive values
    mean the velocity is overestimated. Blows up as the assigned angle
    approaches 90 degrees.
    """
    if not (math.isfinite(theta_true_deg) and math.isfinite(delta_deg)):
        raise InvalidArgumentError("theta and delta must be finite")
    cos_true = math.cos(math.radians(theta_true_deg))
    cos_assigned = math.cos(math.radians(theta_true_deg + delta_deg))
    if abs(cos_true) <= cos_floor or abs(cos_assigned) <= cos_floor:
        raise AngleSingularError(
            f"error factor undefined near 90 deg (true={theta_true_deg}, delta={delta_deg})"
        )
    return cos_true / cos_assigned - 1.0
