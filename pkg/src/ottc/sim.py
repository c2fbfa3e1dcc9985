"""Pinhole-camera scene simulator with exact motion-in-depth.

Objects are rigid cuboids translating at constant velocity and rotating
about the vertical (Y) axis.  Each frame they are rendered as the image box
enclosing their eight projected corners, clipped to the image.  The exact
annotation uses the Euclidean distance of the cuboid center, so comparing
box-based estimates against it measures their approximation error.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

from .core import (
    CameraIntrinsics,
    Frame,
    MiDAnnotation,
    Method,
    ObjectInstance,
    OttcError,
    TrackedSequence,
    Vec3,
    bbox_center,
)
from .ingest import (
    SchemaViolation,
    _get,
    _vector,
    intrinsics_from_doc,
    intrinsics_to_doc,
    load_json,
)
from .ttc import distance_from_camera, tau_from_eta

SPEC_FORMAT = "ottc-scene-spec v1"

# KITTI-like rectified left color camera
DEFAULT_INTRINSICS = CameraIntrinsics(721.5377, 609.5593, 172.854, 1242, 375)
CAMERA_HEIGHT = 1.65

# (H, W, L) ranges in meters
CLASS_SIZES = {
    "Car": ((1.4, 1.7), (1.6, 1.9), (3.6, 4.6)),
    "Pedestrian": ((1.6, 1.9), (0.5, 0.7), (0.6, 0.9)),
    "Cyclist": ((1.6, 1.8), (0.5, 0.7), (1.6, 1.9)),
}


class DegenerateSpec(OttcError, ValueError):
    code = "DegenerateSpec"


@dataclass(frozen=True)
class SimObject:
    track_id: int
    category: str
    position: Vec3
    velocity: Vec3
    size: Vec3  # (H, W, L); W or L may be 0 for a flat plate
    yaw0: float = 0.0
    yaw_rate: float = 0.0


@dataclass(frozen=True)
class SceneSpec:
    scene_id: str
    intrinsics: CameraIntrinsics
    kfps: float
    n_frames: int
    objects: Tuple[SimObject, ...]
    seed: int = 0
    family: str = "custom"

    def validate(self) -> None:
        if self.n_frames < 1:
            raise DegenerateSpec(f"{self.scene_id}: n_frames must be >= 1")
        if not self.kfps > 0:
            raise DegenerateSpec(f"{self.scene_id}: kfps must be positive")
        ids = [o.track_id for o in self.objects]
        if len(set(ids)) != len(ids) or any(i < 0 for i in ids):
            raise DegenerateSpec(f"{self.scene_id}: track ids must be unique and >= 0")
        for o in self.objects:
            h, w, l = o.size
            if o.position[2] <= 0:
                raise DegenerateSpec(f"{self.scene_id}: object {o.track_id} starts at Z={o.position[2]}")
            if not (h > 0 and w >= 0 and l >= 0 and w + l > 0):
                raise DegenerateSpec(f"{self.scene_id}: object {o.track_id} has invalid size {o.size}")


def _rotate_y(point: Vec3, yaw: float) -> Vec3:
    c, s = math.cos(yaw), math.sin(yaw)
    x, y, z = point
    return (c * x + s * z, y, -s * x + c * z)


def cuboid_corners(center: Vec3, size: Vec3, yaw: float) -> List[Vec3]:
    """Corners of a cuboid whose length runs along the heading (KITTI rotation_y)."""
    h, w, l = size
    out = []
    for dx in (l / 2, -l / 2):
        for dy in (h / 2, -h / 2):
            for dz in (w / 2, -w / 2):
                rx, ry, rz = _rotate_y((dx, dy, dz), yaw)
                out.append((center[0] + rx, center[1] + ry, center[2] + rz))
    return out


def wrap_angle(angle: float) -> float:
    return math.atan2(math.sin(angle), math.cos(angle))


def state_at(obj: SimObject, t: float) -> Tuple[Vec3, float]:
    p = tuple(p + v * t for p, v in zip(obj.position, obj.velocity))
    return p, obj.yaw0 + obj.yaw_rate * t


def render(
    obj: SimObject, t: float, k: CameraIntrinsics, frame_index: int
) -> Optional[ObjectInstance]:
    """Observation of ``obj`` at time ``t``, or None if it is not visible."""
    center, yaw = state_at(obj, t)
    corners = cuboid_corners(center, obj.size, yaw)
    if center[2] <= 0 or any(c[2] <= 0 for c in corners):
        return None
    us = [k.focal_length_px * x / z + k.cx for x, _, z in corners]
    vs = [k.focal_length_px * y / z + k.cy for _, y, z in corners]
    full = (min(us), min(vs), max(us), max(vs))
    box = (max(full[0], 0.0), max(full[1], 0.0), min(full[2], float(k.width)), min(full[3], float(k.height)))
    if not (box[2] > box[0] and box[3] > box[1]):
        return None
    area = (full[2] - full[0]) * (full[3] - full[1])
    truncated = 1.0 - (box[2] - box[0]) * (box[3] - box[1]) / area
    dist = distance_from_camera(center)
    range_rate = sum(p * v for p, v in zip(center, obj.velocity)) / dist
    return ObjectInstance(
        frame_index=frame_index,
        track_id=obj.track_id,
        category=obj.category,
        bbox=box,
        location=center,
        dimensions=obj.size if min(obj.size) > 0 else None,
        rotation_y=wrap_angle(yaw),
        alpha=wrap_angle(yaw - math.atan2(center[0], center[2])),
        truncated=min(max(truncated, 0.0), 1.0),
        range_rate=range_rate,
    )


def simulate(spec: SceneSpec) -> Tuple[TrackedSequence, List[MiDAnnotation]]:
    """Render ``spec`` and return the sequence with its exact annotations."""
    spec.validate()
    period = 1.0 / spec.kfps
    frames = []
    for index in range(spec.n_frames):
        t = index / spec.kfps
        objs = (render(o, t, spec.intrinsics, index) for o in spec.objects)
        frames.append(Frame(index, tuple(o for o in objs if o is not None)))
    seq = TrackedSequence(spec.scene_id, spec.intrinsics, spec.kfps, tuple(frames))

    annotations = []
    for f0, f1 in zip(frames, frames[1:]):
        later = {o.track_id for o in f1.objects}
        for inst in f0.objects:
            if inst.track_id not in later:
                continue
            obj = next(o for o in spec.objects if o.track_id == inst.track_id)
            p0, _ = state_at(obj, f0.index / spec.kfps)
            p1, _ = state_at(obj, f1.index / spec.kfps)
            eta = distance_from_camera(p1) / distance_from_camera(p0)
            annotations.append(
                MiDAnnotation(
                    sequence_id=spec.scene_id,
                    frame_index=f0.index,
                    track_id=inst.track_id,
                    category=inst.category,
                    eta=eta,
                    tau_s=tau_from_eta(eta, period),
                    center=bbox_center(inst),
                    method=Method.SIMULATOR_EXACT,
                )
            )
    return seq, annotations


# -- scene generation -------------------------------------------------------


def _rng(seed: int, family: str, index: int) -> random.Random:
    # str seeds hash with sha512, independent of PYTHONHASHSEED
    return random.Random(f"{seed}:{family}:{index}")


def _size(rng: random.Random, category: str) -> Vec3:
    return tuple(rng.uniform(lo, hi) for lo, hi in CLASS_SIZES[category])


def _on_ground(rng: random.Random, h: float, depth: Tuple[float, float], max_azimuth: float) -> Vec3:
    z = rng.uniform(*depth)
    x = z * math.tan(rng.uniform(-max_azimuth, max_azimuth))
    return (x, CAMERA_HEIGHT - h / 2, z)


def _fully_visible(spec: SceneSpec) -> bool:
    seq, _ = simulate(spec)
    return all(
        len(f.objects) == len(spec.objects) and all(o.truncated == 0.0 for o in f.objects)
        for f in seq.frames
    )


def _generate(seed: int, family: str, index: int, build) -> SceneSpec:
    rng = _rng(seed, family, index)
    for _ in range(1000):
        spec = build(rng)
        if _fully_visible(spec):
            return spec
    raise RuntimeError(f"could not place a visible {family} scene for seed {seed}")


def _radial_velocity(position: Vec3, speed: float) -> Vec3:
    norm = math.sqrt(sum(p * p for p in position))
    return tuple(speed * p / norm for p in position)


def plate_scene(seed: int, index: int = 0, kfps: float = 10.0, n_frames: int = 10) -> SceneSpec:
    """Fronto-parallel flat plate moving along its line of sight."""

    def build(rng: random.Random) -> SceneSpec:
        h, _, l = _size(rng, "Car")
        pos = _on_ground(rng, h, (12.0, 45.0), math.radians(15))
        vel = _radial_velocity(pos, rng.uniform(-12.0, 12.0))
        obj = SimObject(0, "Car", pos, vel, (h, 0.0, l))
        return SceneSpec(f"plate-{seed}-{index:04d}", DEFAULT_INTRINSICS, kfps, n_frames, (obj,), seed, "plate")

    return _generate(seed, "plate", index, build)


def plate_scenes(seed: int, n: int) -> List[SceneSpec]:
    return [plate_scene(seed, i) for i in range(n)]


def constant_yaw_scene(seed: int, index: int, theta: float, category: str = "Car") -> SceneSpec:
    """Cuboid on a radial path with fixed yaw, so its observation angle stays ``theta``."""

    def build(rng: random.Random) -> SceneSpec:
        size = _size(rng, category)
        pos = _on_ground(rng, size[0], (12.0, 40.0), math.radians(15))
        vel = _radial_velocity(pos, rng.uniform(-10.0, -2.0) if rng.random() < 0.7 else rng.uniform(2.0, 10.0))
        yaw = theta + math.atan2(pos[0], pos[2])
        obj = SimObject(0, category, pos, vel, size, yaw0=yaw)
        name = f"yaw{round(math.degrees(theta)):+d}-{category.lower()}-{seed}-{index:03d}"
        return SceneSpec(name, DEFAULT_INTRINSICS, 10.0, 10, (obj,), seed, "constant-yaw")

    return _generate(seed, f"constant-yaw:{theta!r}:{category}", index, build)


CONSTANT_YAWS_DEG = (10.0, -10.0, 30.0, -30.0)


def constant_yaw_suite(seed: int, per_yaw: int = 6) -> List[SceneSpec]:
    cats = ("Car", "Pedestrian", "Cyclist")
    return [
        constant_yaw_scene(seed, i, math.radians(deg), cats[i % len(cats)])
        for deg in CONSTANT_YAWS_DEG
        for i in range(per_yaw)
    ]


ROTATING_KFPS = (2.0, 10.0, 30.0)


def rotating_group(seed: int, index: int, duration: float = 3.0) -> List[SceneSpec]:
    """One rotating cuboid rendered at each of the ROTATING_KFPS rates."""

    def at(kfps: float, obj: SimObject) -> SceneSpec:
        n = int(round(duration * kfps)) + 1
        return SceneSpec(f"rotating-{seed}-{index:03d}-k{int(kfps)}", DEFAULT_INTRINSICS, kfps, n, (obj,), seed, "rotating")

    def build(rng: random.Random) -> SceneSpec:
        category = rng.choice(("Car", "Car", "Cyclist"))
        size = _size(rng, category)
        pos = _on_ground(rng, size[0], (20.0, 40.0), math.radians(10))
        vel = (rng.uniform(-1.0, 1.0), 0.0, rng.uniform(-4.0, 2.0))
        rate = rng.choice((-1, 1)) * rng.uniform(0.3, 0.8)
        obj = SimObject(0, category, pos, vel, size, rng.uniform(-math.pi, math.pi), rate)
        return at(max(ROTATING_KFPS), obj)

    finest = _generate(seed, "rotating", index, build)
    return [at(k, finest.objects[0]) for k in ROTATING_KFPS]


def lateral_scene(seed: int, index: int) -> SceneSpec:
    """Object crossing the view at constant depth: Z fixed, distance changing."""

    def build(rng: random.Random) -> SceneSpec:
        category = rng.choice(("Pedestrian", "Cyclist", "Car"))
        size = _size(rng, category)
        z = rng.uniform(10.0, 30.0)
        x = rng.uniform(-0.25, 0.25) * z
        vx = rng.choice((-1, 1)) * rng.uniform(1.0, 4.0)
        obj = SimObject(0, category, (x, CAMERA_HEIGHT - size[0] / 2, z), (vx, 0.0, 0.0), size, rng.uniform(-math.pi, math.pi))
        return SceneSpec(f"lateral-{seed}-{index:03d}", DEFAULT_INTRINSICS, 10.0, 10, (obj,), seed, "lateral")

    return _generate(seed, "lateral", index, build)


NEAR_SINGULAR_OFFSETS = (0.0, 1e-8, -1e-7, 1e-3)


def near_singular_scene(seed: int, index: int, offset: float) -> SceneSpec:
    """Constant observation angle within ``offset`` of 45 degrees."""
    spec = constant_yaw_scene(seed, index, math.pi / 4 + offset, "Pedestrian")
    return replace(spec, scene_id=f"near45-{seed}-{index:03d}", family="near-singular")


def make_validation_suite(seed: int) -> List[SceneSpec]:
    suite = plate_scenes(seed, 12)
    suite += constant_yaw_suite(seed)
    for i in range(4):
        suite += rotating_group(seed, i)
    suite += [lateral_scene(seed, i) for i in range(6)]
    suite += [near_singular_scene(seed, i, off) for i, off in enumerate(NEAR_SINGULAR_OFFSETS)]
    return suite


# -- serialization ----------------------------------------------------------


def spec_to_doc(spec: SceneSpec) -> Dict[str, Any]:
    return {
        "format": SPEC_FORMAT,
        "scene_id": spec.scene_id,
        "family": spec.family,
        "seed": spec.seed,
        "kfps": spec.kfps,
        "n_frames": spec.n_frames,
        "intrinsics": intrinsics_to_doc(spec.intrinsics),
        "objects": [
            {
                "track_id": o.track_id,
                "category": o.category,
                "position": list(o.position),
                "velocity": list(o.velocity),
                "size": list(o.size),
                "yaw0": o.yaw0,
                "yaw_rate": o.yaw_rate,
            }
            for o in spec.objects
        ],
    }


def spec_from_doc(doc: Any) -> SceneSpec:
    objects = []
    for i, odoc in enumerate(_get(doc, "objects", "$", list)):
        path = f"$.objects[{i}]"
        objects.append(
            SimObject(
                track_id=_get(odoc, "track_id", path, int),
                category=_get(odoc, "category", path, str),
                position=_vector(odoc, "position", path, 3),
                velocity=_vector(odoc, "velocity", path, 3),
                size=_vector(odoc, "size", path, 3),
                yaw0=_get(odoc, "yaw0", path, float, optional=True) or 0.0,
                yaw_rate=_get(odoc, "yaw_rate", path, float, optional=True) or 0.0,
            )
        )
    scene_id = _get(doc, "scene_id", "$", str)
    if not scene_id or any(c.isspace() for c in scene_id):
        raise SchemaViolation("$.scene_id", "must be non-empty without whitespace")
    return SceneSpec(
        scene_id=scene_id,
        intrinsics=intrinsics_from_doc(_get(doc, "intrinsics", "$", dict), "$.intrinsics"),
        kfps=_get(doc, "kfps", "$", float),
        n_frames=_get(doc, "n_frames", "$", int),
        objects=tuple(objects),
        seed=_get(doc, "seed", "$", int, optional=True) or 0,
        family=_get(doc, "family", "$", str, optional=True) or "custom",
    )


def write_specs(specs: Sequence[SceneSpec]) -> str:
    return json.dumps({"format": SPEC_FORMAT + " list", "scenes": [spec_to_doc(s) for s in specs]}, indent=1) + "\n"


def parse_specs(text: str) -> List[SceneSpec]:
    """Parse either a single scene-spec document or a list document."""
    doc = load_json(text)
    if isinstance(doc, dict) and "scenes" in doc:
        return [spec_from_doc(d) for d in _get(doc, "scenes", "$", list)]
    return [spec_from_doc(doc)]
