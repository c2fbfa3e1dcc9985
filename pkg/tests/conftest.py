import pytest

from ottc.core import CameraIntrinsics, Frame, ObjectInstance, TrackedSequence

KITTI_CALIB = """\
P0: 7.215377e+02 0.000000e+00 6.095593e+02 0.000000e+00 0.000000e+00 7.215377e+02 1.728540e+02 0.000000e+00 0.000000e+00 0.000000e+00 1.000000e+00 0.000000e+00
P1: 7.215377e+02 0.000000e+00 6.095593e+02 -3.875744e+02 0.000000e+00 7.215377e+02 1.728540e+02 0.000000e+00 0.000000e+00 0.000000e+00 1.000000e+00 0.000000e+00
P2: 7.215377e+02 0.000000e+00 6.095593e+02 4.485728e+01 0.000000e+00 7.215377e+02 1.728540e+02 2.163791e-01 0.000000e+00 0.000000e+00 1.000000e+00 2.745884e-03
P3: 7.215377e+02 0.000000e+00 6.095593e+02 -3.395242e+02 0.000000e+00 7.215377e+02 1.728540e+02 2.199936e+00 0.000000e+00 0.000000e+00 1.000000e+00 2.729905e-03
R_rect 9.999239e-01 9.837760e-03 -7.445048e-03 -9.869795e-03 9.999421e-01 -4.278459e-03 7.402527e-03 4.351614e-03 9.999631e-01
"""

KITTI_LINE = "0 2 Car 0 0 -1.57 599.41 156.40 629.75 189.25 1.49 1.65 3.92 2.85 1.70 12.34 -1.56"

# two tracks over three frames, one DontCare, one pedestrian appearing once
KITTI_LABELS = """\
0 2 Car 0 0 -1.57 599.41 156.40 629.75 189.25 1.49 1.65 3.92 2.85 1.70 12.34 -1.56
0 -1 DontCare -1 -1 -10 503.89 169.71 590.61 190.13 -1000 -1000 -1000 -1000 -1000 -1000 -10
0 5 Pedestrian 0 1 0.35 700.00 150.00 720.00 200.00 1.75 0.60 0.80 4.00 1.60 20.00 0.55
1 2 Car 0 0 -1.57 598.90 155.90 630.50 190.10 1.49 1.65 3.92 2.85 1.70 12.00 -1.56
2 2 Car 0 0 -1.57 598.10 155.10 631.40 191.00 1.49 1.65 3.92 2.85 1.70 11.60 -1.56
"""


@pytest.fixture
def intrinsics():
    return CameraIntrinsics(700.0, 600.0, 180.0, 1242, 375)


def make_instance(frame, track, bbox=(100.0, 100.0, 150.0, 200.0), category="Car", **kw):
    return ObjectInstance(frame_index=frame, track_id=track, category=category, bbox=bbox, **kw)


def make_sequence(intrinsics, frames, kfps=10.0, sequence_id="s0"):
    return TrackedSequence(
        sequence_id, intrinsics, kfps, tuple(Frame(i, tuple(objs)) for i, objs in frames)
    )


# -- acceptance verdicts ------------------------------------------------------

_VERDICTS = pytest.StashKey[dict]()


@pytest.fixture
def verdict(request):
    """Record one pass/fail line for an acceptance criterion."""
    store = request.config.stash.setdefault(_VERDICTS, {})

    def record(number: int, title: str, ok: bool, detail: str) -> None:
        line = f"criterion {number:>2} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
        store[number] = line
        print(line)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(_VERDICTS, {})
    if store:
        terminalreporter.write_sep("=", "acceptance criteria")
        for number in sorted(store):
            terminalreporter.write_line(store[number])
