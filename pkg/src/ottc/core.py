"""Domain types shared by every module.

Camera coordinates follow the KITTI convention: X right, Y down, Z forward.
All types validate their invariants in ``__post_init__`` and are frozen.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

BBox = Tuple[float, float, float, float]
Vec3 = Tuple[float, float, float]


class OttcError(Exception):
    """Base class for every typed error raised by the toolkit."""

    code = "OttcError"


class InvariantError(OttcError, ValueError):
    code = "InvariantError"


class Method(str, enum.Enum):
    """Provenance of a motion-in-depth annotation."""

    DEPTH_VELOCITY = "depth-velocity"
    TRACKS_3D = "tracks3d"
    TRACKS_2D = "tracks2d"
    TRACKS_2D_CORRECTED = "tracks2d-corrected"
    SIMULATOR_EXACT = "simulator-exact"


class RiskLabel(str, enum.Enum):
    RISKY = "risky"
    SAFE = "safe"
    NEUTRAL = "neutral"


def _finite(name: str, *values: float) -> None:
    for value in values:
        if not math.isfinite(value):
            raise InvariantError(f"{name} must be finite, got {value!r}")


@dataclass(frozen=True)
class CameraIntrinsics:
    focal_length_px: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        _finite("intrinsics", self.focal_length_px, self.cx, self.cy)
        if self.focal_length_px <= 0:
            raise InvariantError(f"focal length must be > 0, got {self.focal_length_px}")
        if self.width <= 0 or self.height <= 0:
            raise InvariantError(f"image size must be positive, got {self.width}x{self.height}")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise InvariantError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image"
            )

    @property
    def principal_point(self) -> Tuple[float, float]:
        return (self.cx, self.cy)

    @property
    def image_size(self) -> Tuple[int, int]:
        return (self.width, self.height)


@dataclass(frozen=True)
class ObjectInstance:
    """One observation of a tracked object in one frame.

    ``location`` is optional 3D position in camera coordinates (meters),
    ``dimensions`` is (H, W, L) in meters.  ``range_rate`` is a signed rate of
    change of camera distance in m/s (negative when approaching) and is only
    needed by the depth-velocity method.
    """

    frame_index: int
    track_id: int
    category: str
    bbox: BBox
    location: Optional[Vec3] = None
    dimensions: Optional[Vec3] = None
    rotation_y: Optional[float] = None
    alpha: Optional[float] = None
    truncated: float = 0.0
    occluded: int = 0
    range_rate: Optional[float] = None

    def __post_init__(self) -> None:
        if self.frame_index < 0:
            raise InvariantError(f"frame_index must be >= 0, got {self.frame_index}")
        if self.track_id < 0:
            raise InvariantError(f"track_id must be >= 0, got {self.track_id}")
        if not self.category:
            raise InvariantError("category must be a non-empty label")
        x1, y1, x2, y2 = self.bbox
        _finite("bbox", x1, y1, x2, y2)
        if not (x2 > x1 and y2 > y1):
            raise InvariantError(f"degenerate bbox {self.bbox}")
        if self.location is not None:
            _finite("location", *self.location)
            if self.location[2] <= 0:
                raise InvariantError(f"object behind camera: Z={self.location[2]}")
        if self.dimensions is not None:
            _finite("dimensions", *self.dimensions)
            if min(self.dimensions) <= 0:
                raise InvariantError(f"dimensions must be positive, got {self.dimensions}")
        for name in ("rotation_y", "alpha", "range_rate"):
            value = getattr(self, name)
            if value is not None:
                _finite(name, value)
        if not 0.0 <= self.truncated <= 1.0:
            raise InvariantError(f"truncated must lie in [0, 1], got {self.truncated}")

    @property
    def box_height(self) -> float:
        return self.bbox[3] - self.bbox[1]

    @property
    def box_width(self) -> float:
        return self.bbox[2] - self.bbox[0]


def bbox_center(instance: ObjectInstance) -> Tuple[float, float]:
    x1, y1, x2, y2 = instance.bbox
    return ((x1 + x2) / 2, (y1 + y2) / 2)


@dataclass(frozen=True)
class Frame:
    index: int
    objects: Tuple[ObjectInstance, ...] = ()

    def __post_init__(self) -> None:
        seen = set()
        for obj in self.objects:
            if obj.frame_index != self.index:
                raise InvariantError(
                    f"object of frame {obj.frame_index} stored in frame {self.index}"
                )
            if obj.track_id in seen:
                raise InvariantError(f"duplicate track_id {obj.track_id} in frame {self.index}")
            seen.add(obj.track_id)


@dataclass(frozen=True)
class TrackedSequence:
    sequence_id: str
    intrinsics: CameraIntrinsics
    kfps: float
    frames: Tuple[Frame, ...] = ()

    def __post_init__(self) -> None:
        if not self.sequence_id or any(c.isspace() for c in self.sequence_id):
            raise InvariantError(f"sequence_id must be non-empty without whitespace: {self.sequence_id!r}")
        if not (math.isfinite(self.kfps) and self.kfps > 0):
            raise InvariantError(f"kfps must be > 0, got {self.kfps}")
        for prev, cur in zip(self.frames, self.frames[1:]):
            if cur.index <= prev.index:
                raise InvariantError(
                    f"frames must have strictly increasing indices ({prev.index} then {cur.index})"
                )

    @property
    def period(self) -> float:
        """Seconds between consecutive key frames."""
        return 1.0 / self.kfps

    def instances(self):
        for frame in self.frames:
            yield from frame.objects


@dataclass(frozen=True)
class MiDAnnotation:
    """Ground-truth motion-in-depth of one object between frame t0 and t0+1.

    ``tau_s`` is None when there is no relative motion (eta exactly 1).
    """

    sequence_id: str
    frame_index: int
    track_id: int
    category: str
    eta: float
    tau_s: Optional[float]
    center: Tuple[float, float]
    method: Method

    def __post_init__(self) -> None:
        if not (math.isfinite(self.eta) and self.eta > 0):
            raise InvariantError(f"eta must be positive and finite, got {self.eta}")
        if self.eta == 1.0:
            if self.tau_s is not None:
                raise InvariantError("eta == 1 requires tau_s None (no contact)")
        elif self.tau_s is None or not math.isfinite(self.tau_s):
            raise InvariantError(f"eta {self.eta} requires a finite tau_s, got {self.tau_s}")
        elif (self.eta < 1) != (self.tau_s > 0):
            raise InvariantError(f"sign mismatch: eta={self.eta}, tau_s={self.tau_s}")
        _finite("center", *self.center)
        object.__setattr__(self, "method", Method(self.method))

    @property
    def key(self) -> Tuple[str, int, int]:
        return (self.sequence_id, self.frame_index, self.track_id)


@dataclass(frozen=True)
class PredictionRecord:
    """A predicted eta for one object, keyed by track id, center, or box."""

    sequence_id: str
    frame_index: int
    eta_pred: float
    track_id: Optional[int] = None
    center: Optional[Tuple[float, float]] = None
    box: Optional[BBox] = None
    risk_pred: Optional[RiskLabel] = None

    def __post_init__(self) -> None:
        if not (math.isfinite(self.eta_pred) and self.eta_pred > 0):
            raise InvariantError(f"eta_pred must be positive and finite, got {self.eta_pred}")
        keys = sum(k is not None for k in (self.track_id, self.center, self.box))
        if keys != 1:
            raise InvariantError("prediction needs exactly one of track_id, center, box")
        if self.center is not None:
            _finite("center", *self.center)
        if self.box is not None:
            _finite("box", *self.box)
            if not (self.box[2] > self.box[0] and self.box[3] > self.box[1]):
                raise InvariantError(f"degenerate box {self.box}")
        if self.risk_pred is not None:
            label = RiskLabel(self.risk_pred)
            if label is RiskLabel.NEUTRAL:
                raise InvariantError("predicted risk is binary; neutral is ground-truth only")
            object.__setattr__(self, "risk_pred", label)

    @property
    def key_kind(self) -> str:
        if self.track_id is not None:
            return "track"
        return "center" if self.center is not None else "box"


@dataclass(frozen=True, eq=False)
class DenseMiDMap:
    """Row-major per-pixel eta grid; NaN marks pixels without data."""

    width: int
    height: int
    values: Tuple[float, ...] = field(repr=False)
    frame_index: int = 0

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise InvariantError(f"map size must be positive, got {self.width}x{self.height}")
        values = tuple(float(v) for v in self.values)
        if len(values) != self.width * self.height:
            raise InvariantError(
                f"grid has {len(values)} values, expected {self.width * self.height}"
            )
        for v in values:
            if not math.isnan(v) and not v > 0:
                raise InvariantError(f"map values must be > 0 or NaN, got {v}")
        object.__setattr__(self, "values", values)

    def value_at(self, col: int, row: int) -> Optional[float]:
        """Return eta at pixel (col, row), or None for NoData."""
        if not (0 <= col < self.width and 0 <= row < self.height):
            raise IndexError(f"pixel ({col}, {row}) outside {self.width}x{self.height} map")
        v = self.values[row * self.width + col]
        return None if math.isnan(v) else v

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DenseMiDMap):
            return NotImplemented
        # bit-level comparison so NaN cells compare equal
        return (
            (self.width, self.height, self.frame_index)
            == (other.width, other.height, other.frame_index)
            and all(
                (math.isnan(a) and math.isnan(b)) or a == b
                for a, b in zip(self.values, other.values)
            )
        )

    __hash__ = None  # type: ignore[assignment]
