"""Ground-truth motion-in-depth (eta) and time-to-contact (tau).

eta is the ratio of an object's camera distance at t1 to that at t0, so
eta < 1 means the object approaches.  tau = T / (1 - eta) is positive for
approaching objects, where T is the key-frame period.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Tuple

from .core import (
    MiDAnnotation,
    Method,
    ObjectInstance,
    OttcError,
    TrackedSequence,
    Vec3,
    bbox_center,
)

SINGULARITY_EPSILON = 1e-6

GT_METHODS = (
    Method.DEPTH_VELOCITY,
    Method.TRACKS_3D,
    Method.TRACKS_2D,
    Method.TRACKS_2D_CORRECTED,
)


class GeometryError(OttcError, ValueError):
    code = "GeometryError"


class NonPositiveDepth(GeometryError):
    code = "NonPositiveDepth"


class NonPositivePeriod(GeometryError):
    code = "NonPositivePeriod"


class NonPositiveHeight(GeometryError):
    code = "NonPositiveHeight"


class BehindCamera(GeometryError):
    code = "BehindCamera"


class OrientationSingularity(GeometryError):
    code = "OrientationSingularity"


class NonPositiveResult(GeometryError):
    code = "NonPositiveResult"


class MissingField(GeometryError):
    code = "MissingField"


def eta_from_depth_pair(lambda_t0: float, lambda_t1: float) -> float:
    if not (lambda_t0 > 0 and lambda_t1 > 0):
        raise NonPositiveDepth(f"depths must be positive, got {lambda_t0}, {lambda_t1}")
    return lambda_t1 / lambda_t0


def tau_from_eta(eta: float, period: float) -> Optional[float]:
    """Time to contact in seconds, or None when eta is exactly 1."""
    if not period > 0:
        raise NonPositivePeriod(f"period must be positive, got {period}")
    if not eta > 0:
        raise GeometryError(f"eta must be positive, got {eta}")
    if eta == 1.0:
        return None
    return period / (1.0 - eta)


def eta_from_tau(tau: float, period: float) -> float:
    """Inverse of tau_from_eta for finite, nonzero tau."""
    if not period > 0:
        raise NonPositivePeriod(f"period must be positive, got {period}")
    if tau == 0 or not math.isfinite(tau):
        raise GeometryError(f"tau must be finite and nonzero, got {tau}")
    eta = 1.0 - period / tau
    if not eta > 0:
        raise NonPositiveResult(f"tau {tau} s is shorter than one period {period} s")
    return eta


def eta_tau_from_depth_velocity(
    distance: float, range_rate: float, period: float
) -> Tuple[float, Optional[float]]:
    """eta and tau from distance and its signed rate of change.

    ``range_rate`` is negative for an approaching object, giving tau > 0.
    """
    if not distance > 0:
        raise NonPositiveDepth(f"distance must be positive, got {distance}")
    if not period > 0:
        raise NonPositivePeriod(f"period must be positive, got {period}")
    if range_rate == 0:
        return 1.0, None
    eta = 1.0 + range_rate * period / distance
    if not eta > 0:
        # object would pass the camera within one period
        raise NonPositiveResult(f"eta {eta} not positive for rate {range_rate} at {distance} m")
    return eta, distance / -range_rate


def distance_from_camera(location: Vec3) -> float:
    x, y, z = location
    if not z > 0:
        raise BehindCamera(f"Z must be positive, got {z}")
    return math.sqrt(x * x + y * y + z * z)


def eta_from_height_pair(h_t0: float, h_t1: float) -> float:
    # perceived height is inversely proportional to distance
    if not (h_t0 > 0 and h_t1 > 0):
        raise NonPositiveHeight(f"heights must be positive, got {h_t0}, {h_t1}")
    return h_t0 / h_t1


def projected_height(
    h_bbox: float, w_bbox: float, theta: float, epsilon: float = SINGULARITY_EPSILON
) -> float:
    """Recover the projected object height from a box and orientation angle.

    Inverts the enclosing box of a rectangle rotated by ``theta``:
    ``(h cos t - w sin t) / (cos^2 t - sin^2 t)``.  Raises
    OrientationSingularity near |theta| = 45 deg (mod 90) and
    NonPositiveResult if the geometry yields h_p <= 0.
    """
    if not h_bbox > 0:
        raise NonPositiveHeight(f"box height must be positive, got {h_bbox}")
    if w_bbox < 0:
        raise GeometryError(f"box width must be non-negative, got {w_bbox}")
    c, s = math.cos(theta), math.sin(theta)
    denom = c * c - s * s
    if abs(denom) <= epsilon:
        raise OrientationSingularity(f"theta={theta} is within {epsilon} of the pole")
    h_p = (h_bbox * c - w_bbox * s) / denom
    if not h_p > 0:
        raise NonPositiveResult(f"projected height {h_p} for h={h_bbox}, w={w_bbox}, theta={theta}")
    return h_p


def projected_angle(instance: ObjectInstance) -> float:
    """Orientation angle used for the box-height correction.

    The observation angle ``alpha`` when present, otherwise ``rotation_y``
    minus the azimuth of the object center.
    """
    if instance.alpha is not None:
        return instance.alpha
    if instance.rotation_y is not None and instance.location is not None:
        x, _, z = instance.location
        return instance.rotation_y - math.atan2(x, z)
    raise MissingField("needs alpha, or rotation_y with location")


@dataclass(frozen=True)
class Skip:
    frame_index: int
    track_id: int
    reason: str


@dataclass
class AnnotationRun:
    annotations: List[MiDAnnotation] = field(default_factory=list)
    skipped: List[Skip] = field(default_factory=list)

    @property
    def skip_reasons(self) -> Counter:
        return Counter(s.reason for s in self.skipped)


def consecutive_pairs(
    seq: TrackedSequence,
) -> Iterator[Tuple[ObjectInstance, Optional[ObjectInstance]]]:
    """Yield (instance at t0, same track at t0+1 or None) for every instance."""
    frames = seq.frames
    for i, frame in enumerate(frames):
        nxt = {}
        if i + 1 < len(frames) and frames[i + 1].index == frame.index + 1:
            nxt = {o.track_id: o for o in frames[i + 1].objects}
        for obj in frame.objects:
            yield obj, nxt.get(obj.track_id)


def pair_eta(method: Method, t0: ObjectInstance, t1: ObjectInstance) -> float:
    """eta between two observations of one track under a pairwise method."""
    if method is Method.TRACKS_3D:
        if t0.location is None or t1.location is None:
            raise MissingField("tracks3d needs location")
        return eta_from_depth_pair(distance_from_camera(t0.location), distance_from_camera(t1.location))
    if method is Method.TRACKS_2D:
        return eta_from_height_pair(t0.box_height, t1.box_height)
    if method is Method.TRACKS_2D_CORRECTED:
        h0 = projected_height(t0.box_height, t0.box_width, projected_angle(t0))
        h1 = projected_height(t1.box_height, t1.box_width, projected_angle(t1))
        return eta_from_height_pair(h0, h1)
    raise ValueError(f"{method} is not a pairwise method")


def annotate_sequence(seq: TrackedSequence, method: Method) -> AnnotationRun:
    """Annotate every object of ``seq`` with eta/tau from ``method``.

    Pairwise methods label frame t0 from the same track at t0+1; instances
    without a successor, or whose geometry fails, are recorded as skips.
    Depth-velocity labels each instance carrying location and range_rate.
    """
    method = Method(method)
    if method not in GT_METHODS:
        raise ValueError(f"{method.value} cannot be computed from a tracked sequence")
    period = seq.period
    run = AnnotationRun()
    for t0, t1 in consecutive_pairs(seq):
        try:
            if method is Method.DEPTH_VELOCITY:
                if t0.location is None or t0.range_rate is None:
                    raise MissingField("depth-velocity needs location and range_rate")
                eta, tau = eta_tau_from_depth_velocity(
                    distance_from_camera(t0.location), t0.range_rate, period
                )
            elif t1 is None:
                run.skipped.append(Skip(t0.frame_index, t0.track_id, "no successor"))
                continue
            else:
                eta = pair_eta(method, t0, t1)
                tau = tau_from_eta(eta, period)
        except GeometryError as exc:
            run.skipped.append(Skip(t0.frame_index, t0.track_id, exc.code))
            continue
        run.annotations.append(
            MiDAnnotation(
                sequence_id=seq.sequence_id,
                frame_index=t0.frame_index,
                track_id=t0.track_id,
                category=t0.category,
                eta=eta,
                tau_s=tau,
                center=bbox_center(t0),
                method=method,
            )
        )
    return run
