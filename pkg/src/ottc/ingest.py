"""Readers and writers for every on-disk format.

Text formats are line oriented with a versioned header line and
tab-separated records.  Floats are written with ``repr`` so every value
round-trips bit-exactly.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .core import (
    CameraIntrinsics,
    DenseMiDMap,
    Frame,
    InvariantError,
    MiDAnnotation,
    Method,
    ObjectInstance,
    OttcError,
    PredictionRecord,
    RiskLabel,
    TrackedSequence,
)

ANNOTATION_HEADER = "ottc-annotations v1"
PREDICTION_HEADER = "ottc-predictions v1"
SCENE_FORMAT = "ottc-scene v1"
DENSE_MAGIC = b"OMID"
DENSE_VERSION = 1

KITTI_FIELDS = 17
KITTI_IMAGE_SIZE = (1242, 375)


class ParseError(OttcError, ValueError):
    code = "ParseError"


class MalformedRecord(ParseError):
    code = "MalformedRecord"

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class MissingCalibration(ParseError):
    code = "MissingCalibration"


class SchemaViolation(ParseError):
    code = "SchemaViolation"

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


@dataclass
class ParseDiagnostics:
    warnings: List[Tuple[int, str]] = field(default_factory=list)
    skipped_records: int = 0

    def skip(self, line: int, message: str) -> None:
        self.warnings.append((line, message))
        self.skipped_records += 1


def _float(token: str, line: int) -> float:
    # float() ignores locale, but also accepts things like "1_0" and "nan"
    try:
        value = float(token)
    except ValueError:
        raise MalformedRecord(f"not a number: {token!r}", line) from None
    if "_" in token or not math.isfinite(value):
        raise MalformedRecord(f"not a finite number: {token!r}", line)
    return value


def _int(token: str, line: int) -> int:
    try:
        return int(token)
    except ValueError:
        raise MalformedRecord(f"not an integer: {token!r}", line) from None


# -- KITTI tracking ---------------------------------------------------------


def parse_kitti_calibration(
    calib_text: str, camera: str = "P2", image_size: Tuple[int, int] = KITTI_IMAGE_SIZE
) -> CameraIntrinsics:
    """Focal length and principal point from a rectified projection matrix."""
    for line in calib_text.splitlines():
        name, _, rest = line.partition(":") if ":" in line else line.partition(" ")
        if name.strip() != camera:
            continue
        tokens = rest.split()
        if len(tokens) != 12:
            raise MissingCalibration(f"{camera} has {len(tokens)} entries, expected 12")
        try:
            p = [float(t) for t in tokens]
        except ValueError:
            raise MissingCalibration(f"{camera} contains a non-numeric entry") from None
        try:
            return CameraIntrinsics(p[0], p[2], p[6], image_size[0], image_size[1])
        except InvariantError as exc:
            raise MissingCalibration(f"{camera} is not a usable projection: {exc}") from None
    raise MissingCalibration(f"no {camera} projection matrix in calibration")


def parse_kitti_tracking(
    label_text: str,
    calib_text: str,
    kfps: float,
    sequence_id: str = "0000",
    camera: str = "P2",
    image_size: Tuple[int, int] = KITTI_IMAGE_SIZE,
) -> Tuple[TrackedSequence, ParseDiagnostics]:
    """Parse a KITTI tracking label file (17 columns) and its calibration.

    DontCare records and negative track ids are skipped, as are records
    that violate an object invariant (Z <= 0, empty box).  Every frame index
    from 0 to the last labelled frame is present, possibly empty, so that
    consecutive indices are consecutive key frames.
    """
    intrinsics = parse_kitti_calibration(calib_text, camera, image_size)
    diag = ParseDiagnostics()
    by_frame: Dict[int, List[ObjectInstance]] = {}
    for lineno, raw in enumerate(label_text.splitlines(), start=1):
        tokens = raw.split()
        if not tokens:
            continue
        if len(tokens) != KITTI_FIELDS:
            raise MalformedRecord(f"expected {KITTI_FIELDS} fields, got {len(tokens)}", lineno)
        frame, track = _int(tokens[0], lineno), _int(tokens[1], lineno)
        category = tokens[2]
        nums = [_float(t, lineno) for t in tokens[3:]]
        trunc, occ, alpha = nums[0], nums[1], nums[2]
        bbox = tuple(nums[3:7])
        dims, loc, rot_y = tuple(nums[7:10]), tuple(nums[10:13]), nums[13]
        if category == "DontCare" or track < 0:
            diag.skip(lineno, f"{category} record with track {track}")
            continue
        if frame < 0:
            raise MalformedRecord(f"negative frame index {frame}", lineno)
        if not float(occ).is_integer():
            raise MalformedRecord(f"occlusion level must be an integer, got {tokens[4]}", lineno)
        try:
            obj = ObjectInstance(
                frame_index=frame,
                track_id=track,
                category=category,
                bbox=bbox,
                location=loc,
                dimensions=dims,
                rotation_y=rot_y,
                alpha=alpha,
                truncated=min(max(trunc, 0.0), 1.0),
                occluded=int(occ),
            )
        except InvariantError as exc:
            diag.skip(lineno, str(exc))
            continue
        objs = by_frame.setdefault(frame, [])
        if any(o.track_id == track for o in objs):
            raise MalformedRecord(f"duplicate track {track} in frame {frame}", lineno)
        objs.append(obj)
    n_frames = max(by_frame) + 1 if by_frame else 0
    frames = tuple(Frame(i, tuple(by_frame.get(i, ()))) for i in range(n_frames))
    return TrackedSequence(sequence_id, intrinsics, kfps, frames), diag


# -- scene documents --------------------------------------------------------


def _get(doc: Any, key: str, path: str, kind: type, optional: bool = False) -> Any:
    if not isinstance(doc, dict):
        raise SchemaViolation(path, "expected an object")
    if key not in doc or doc[key] is None:
        if optional:
            return None
        raise SchemaViolation(f"{path}.{key}", "missing")
    value = doc[key]
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SchemaViolation(f"{path}.{key}", f"expected a number, got {value!r}")
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise SchemaViolation(f"{path}.{key}", f"expected an integer, got {value!r}")
        return value
    if not isinstance(value, kind):
        raise SchemaViolation(f"{path}.{key}", f"expected {kind.__name__}")
    return value


def _vector(doc: Any, key: str, path: str, n: int, optional: bool = False):
    value = _get(doc, key, path, list, optional)
    if value is None:
        return None
    if len(value) != n or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in value):
        raise SchemaViolation(f"{path}.{key}", f"expected {n} numbers")
    return tuple(float(v) for v in value)


def intrinsics_from_doc(doc: Any, path: str) -> CameraIntrinsics:
    try:
        return CameraIntrinsics(
            _get(doc, "f", path, float),
            _get(doc, "cx", path, float),
            _get(doc, "cy", path, float),
            _get(doc, "width", path, int),
            _get(doc, "height", path, int),
        )
    except InvariantError as exc:
        raise SchemaViolation(path, str(exc)) from None


def intrinsics_to_doc(k: CameraIntrinsics) -> dict:
    return {"f": k.focal_length_px, "cx": k.cx, "cy": k.cy, "width": k.width, "height": k.height}


def load_json(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaViolation("$", f"invalid JSON: {exc}") from None


def scene_from_doc(doc: Any) -> TrackedSequence:
    sequence_id = _get(doc, "sequence_id", "$", str)
    kfps = _get(doc, "kfps", "$", float)
    if not kfps > 0:
        raise SchemaViolation("$.kfps", "must be positive")
    intrinsics = intrinsics_from_doc(_get(doc, "intrinsics", "$", dict), "$.intrinsics")
    frames = []
    for i, fdoc in enumerate(_get(doc, "frames", "$", list)):
        fpath = f"$.frames[{i}]"
        index = _get(fdoc, "frame_index", fpath, int)
        objects = []
        for j, odoc in enumerate(_get(fdoc, "objects", fpath, list)):
            opath = f"{fpath}.objects[{j}]"
            try:
                objects.append(
                    ObjectInstance(
                        frame_index=index,
                        track_id=_get(odoc, "track_id", opath, int),
                        category=_get(odoc, "category", opath, str),
                        bbox=_vector(odoc, "bbox", opath, 4),
                        location=_vector(odoc, "location", opath, 3, optional=True),
                        dimensions=_vector(odoc, "dimensions", opath, 3, optional=True),
                        rotation_y=_get(odoc, "rotation_y", opath, float, optional=True),
                        alpha=_get(odoc, "alpha", opath, float, optional=True),
                        truncated=_get(odoc, "truncated", opath, float, optional=True) or 0.0,
                        occluded=_get(odoc, "occluded", opath, int, optional=True) or 0,
                        range_rate=_get(odoc, "range_rate", opath, float, optional=True),
                    )
                )
            except InvariantError as exc:
                raise SchemaViolation(opath, str(exc)) from None
        try:
            frames.append(Frame(index, tuple(objects)))
        except InvariantError as exc:
            raise SchemaViolation(fpath, str(exc)) from None
    try:
        return TrackedSequence(sequence_id, intrinsics, kfps, tuple(frames))
    except InvariantError as exc:
        raise SchemaViolation("$", str(exc)) from None


def parse_scene(scene_text: str) -> TrackedSequence:
    """Parse a scene document; unknown fields are ignored."""
    return scene_from_doc(load_json(scene_text))


def _object_doc(o: ObjectInstance) -> dict:
    doc: Dict[str, Any] = {"track_id": o.track_id, "category": o.category, "bbox": list(o.bbox)}
    for name in ("location", "dimensions"):
        value = getattr(o, name)
        if value is not None:
            doc[name] = list(value)
    for name in ("rotation_y", "alpha", "range_rate"):
        value = getattr(o, name)
        if value is not None:
            doc[name] = value
    if o.truncated:
        doc["truncated"] = o.truncated
    if o.occluded:
        doc["occluded"] = o.occluded
    return doc


def scene_to_doc(seq: TrackedSequence) -> dict:
    return {
        "format": SCENE_FORMAT,
        "sequence_id": seq.sequence_id,
        "kfps": seq.kfps,
        "intrinsics": intrinsics_to_doc(seq.intrinsics),
        "frames": [
            {"frame_index": f.index, "objects": [_object_doc(o) for o in f.objects]}
            for f in seq.frames
        ],
    }


def write_scene(seq: TrackedSequence) -> str:
    return json.dumps(scene_to_doc(seq), indent=1) + "\n"


# -- annotations ------------------------------------------------------------


def _check_token(value: str, what: str) -> str:
    if not value or any(c.isspace() for c in value):
        raise ValueError(f"{what} {value!r} must be non-empty without whitespace")
    return value


def _sort_key(a: MiDAnnotation):
    return (a.sequence_id, a.frame_index, a.track_id)


def write_annotations(annotations: Iterable[MiDAnnotation]) -> str:
    lines = [ANNOTATION_HEADER]
    for a in sorted(annotations, key=_sort_key):
        tau = "null" if a.tau_s is None else repr(a.tau_s)
        lines.append(
            "\t".join(
                (
                    _check_token(a.sequence_id, "sequence_id"),
                    str(a.frame_index),
                    str(a.track_id),
                    _check_token(a.category, "category"),
                    repr(a.eta),
                    tau,
                    repr(a.center[0]),
                    repr(a.center[1]),
                    a.method.value,
                )
            )
        )
    return "\n".join(lines) + "\n"


def _check_header(lines: Sequence[str], header: str) -> None:
    if not lines or lines[0].strip() != header:
        got = lines[0].strip() if lines else "<empty>"
        raise SchemaViolation("line 1", f"expected header {header!r}, got {got!r}")


def parse_annotations(text: str) -> List[MiDAnnotation]:
    lines = text.splitlines()
    _check_header(lines, ANNOTATION_HEADER)
    out = []
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        cols = raw.split("\t")
        if len(cols) != 9:
            raise SchemaViolation(f"line {lineno}", f"expected 9 columns, got {len(cols)}")
        try:
            seq, frame, track, category, eta, tau, u, v, method = cols
            out.append(
                MiDAnnotation(
                    sequence_id=seq,
                    frame_index=_int(frame, lineno),
                    track_id=_int(track, lineno),
                    category=category,
                    eta=_float(eta, lineno),
                    tau_s=None if tau == "null" else _float(tau, lineno),
                    center=(_float(u, lineno), _float(v, lineno)),
                    method=Method(method),
                )
            )
        except (MalformedRecord, InvariantError, ValueError) as exc:
            raise SchemaViolation(f"line {lineno}", str(exc)) from None
    return out


# -- predictions ------------------------------------------------------------


def write_predictions(predictions: Iterable[PredictionRecord]) -> str:
    lines = [PREDICTION_HEADER]
    for p in predictions:
        if p.track_id is not None:
            key = ["track", str(p.track_id)]
        elif p.center is not None:
            key = ["center", repr(p.center[0]), repr(p.center[1])]
        else:
            key = ["box"] + [repr(x) for x in p.box]
        cols = [_check_token(p.sequence_id, "sequence_id"), str(p.frame_index), *key, repr(p.eta_pred)]
        if p.risk_pred is not None:
            cols.append(p.risk_pred.value)
        lines.append("\t".join(cols))
    return "\n".join(lines) + "\n"


_KEY_WIDTH = {"track": 1, "center": 2, "box": 4}


def parse_predictions(text: str) -> Tuple[List[PredictionRecord], ParseDiagnostics]:
    """Parse prediction records; non-positive eta is skipped with a warning.

    Record columns: sequence_id, frame_index, key kind (track|center|box),
    key values, eta_pred, optional risk label (risky|safe).
    """
    lines = text.splitlines()
    if not lines or lines[0].strip() != PREDICTION_HEADER:
        raise MalformedRecord(f"expected header {PREDICTION_HEADER!r}", 1)
    diag = ParseDiagnostics()
    out = []
    for lineno, raw in enumerate(lines[1:], start=2):
        cols = raw.split()
        if not cols:
            continue
        if len(cols) < 3 or cols[2] not in _KEY_WIDTH:
            raise MalformedRecord("expected <sequence> <frame> track|center|box ...", lineno)
        n = _KEY_WIDTH[cols[2]]
        if len(cols) not in (4 + n, 5 + n):
            raise MalformedRecord(f"wrong number of columns ({len(cols)}) for {cols[2]} key", lineno)
        frame = _int(cols[1], lineno)
        values = cols[3 : 3 + n]
        eta = _float(cols[3 + n], lineno)
        risk = None
        if len(cols) == 5 + n:
            if cols[-1] not in ("risky", "safe"):
                raise MalformedRecord(f"risk label must be risky or safe, got {cols[-1]!r}", lineno)
            risk = RiskLabel(cols[-1])
        if eta <= 0:
            diag.skip(lineno, f"eta_pred {eta} is not positive")
            continue
        key: Dict[str, Any] = {}
        if cols[2] == "track":
            key["track_id"] = _int(values[0], lineno)
        elif cols[2] == "center":
            key["center"] = tuple(_float(x, lineno) for x in values)
        else:
            key["box"] = tuple(_float(x, lineno) for x in values)
        try:
            out.append(PredictionRecord(cols[0], frame, eta, risk_pred=risk, **key))
        except InvariantError as exc:
            raise MalformedRecord(str(exc), lineno) from None
    return out, diag


# -- dense maps -------------------------------------------------------------

_DENSE_HEADER = struct.Struct("<4sIII")


def write_dense_map(dense: DenseMiDMap) -> bytes:
    grid = np.asarray(dense.values, dtype="<f4")
    return _DENSE_HEADER.pack(DENSE_MAGIC, DENSE_VERSION, dense.width, dense.height) + grid.tobytes()


def parse_dense_map(data: bytes, frame_index: int = 0) -> DenseMiDMap:
    """Decode an OMID grid: magic, version, width, height, then float32 LE."""
    if len(data) < _DENSE_HEADER.size:
        raise MalformedRecord("truncated header", None)
    magic, version, width, height = _DENSE_HEADER.unpack_from(data)
    if magic != DENSE_MAGIC:
        raise MalformedRecord(f"bad magic {magic!r} at offset 0")
    if version != DENSE_VERSION:
        raise MalformedRecord(f"unsupported version {version} at offset 4")
    if width == 0 or height == 0:
        raise MalformedRecord(f"empty grid {width}x{height} at offset 8")
    expected = _DENSE_HEADER.size + 4 * width * height
    if len(data) != expected:
        raise MalformedRecord(f"payload is {len(data)} bytes, expected {expected}")
    grid = np.frombuffer(data, dtype="<f4", offset=_DENSE_HEADER.size).astype(float)
    bad = ~np.isnan(grid) & ~(grid > 0)
    if bad.any():
        offset = _DENSE_HEADER.size + 4 * int(np.argmax(bad))
        raise MalformedRecord(f"non-positive eta at offset {offset}")
    return DenseMiDMap(width, height, tuple(grid.tolist()), frame_index)
