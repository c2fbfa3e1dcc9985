import math

import pytest
from hypothesis import assume, given, strategies as st

from ottc import sim
from ottc.core import Method
from ottc.ttc import (
    BehindCamera,
    MissingField,
    NonPositiveDepth,
    NonPositiveHeight,
    NonPositivePeriod,
    NonPositiveResult,
    OrientationSingularity,
    annotate_sequence,
    distance_from_camera,
    eta_from_depth_pair,
    eta_from_height_pair,
    eta_tau_from_depth_velocity,
    projected_angle,
    projected_height,
    tau_from_eta,
)

from conftest import make_instance, make_sequence

# 40-digit mpmath evaluation of (100 cos 0.2 - 50 sin 0.2) / cos 0.4
HP_ORACLE = 95.62145375585759147677887248


@pytest.mark.parametrize("a, b, eta", [(10.0, 10.0, 1.0), (20.0, 19.0, 0.95), (10.0, 13.0, 1.3)])
def test_eta_from_depth_pair(a, b, eta):
    assert eta_from_depth_pair(a, b) == pytest.approx(eta, rel=1e-15)


@pytest.mark.parametrize("a, b", [(0.0, 1.0), (1.0, -2.0)])
def test_eta_from_depth_pair_rejects(a, b):
    with pytest.raises(NonPositiveDepth):
        eta_from_depth_pair(a, b)


def test_tau_from_eta_examples():
    assert tau_from_eta(1.0, 0.1) is None
    assert tau_from_eta(0.95, 0.1) == pytest.approx(2.0, rel=1e-12)
    assert tau_from_eta(1.05, 0.5) == pytest.approx(-10.0, rel=1e-12)
    with pytest.raises(NonPositivePeriod):
        tau_from_eta(0.9, 0.0)


def test_depth_velocity_examples():
    assert eta_tau_from_depth_velocity(20.0, 0.0, 0.1) == (1.0, None)
    eta, tau = eta_tau_from_depth_velocity(20.0, -5.0, 0.1)
    assert tau == 4.0
    assert eta == pytest.approx(0.975, rel=1e-15)
    # independent route through the depth-pair ratio
    assert eta == pytest.approx(eta_from_depth_pair(20.0, 20.0 - 5.0 * 0.1), rel=1e-15)
    eta, tau = eta_tau_from_depth_velocity(20.0, 5.0, 0.1)
    assert (eta, tau) == (pytest.approx(1.025, rel=1e-15), -4.0)
    assert eta == pytest.approx(eta_from_depth_pair(20.0, 20.5), rel=1e-15)
    with pytest.raises(NonPositiveDepth):
        eta_tau_from_depth_velocity(0.0, -1.0, 0.1)
    with pytest.raises(NonPositiveResult):
        eta_tau_from_depth_velocity(1.0, -20.0, 0.1)


@pytest.mark.parametrize("loc, d", [((0, 0, 10), 10.0), ((3, 0, 4), 5.0), ((1, 2, 2), 3.0)])
def test_distance_from_camera(loc, d):
    assert distance_from_camera(loc) == d


def test_distance_behind_camera():
    with pytest.raises(BehindCamera):
        distance_from_camera((1.0, 0.0, 0.0))


def test_eta_from_height_pair():
    assert eta_from_height_pair(52.5, 52.5) == 1.0
    # pinhole plate H=1.5 m, f=700 px at 20 m then 19 m
    h0, h1 = 700 * 1.5 / 20, 700 * 1.5 / 19
    assert h0 == 52.5
    assert h1 == pytest.approx(55.26315789473684, rel=1e-15)
    assert eta_from_height_pair(h0, h1) == pytest.approx(0.95, rel=1e-15)
    assert eta_from_height_pair(40.0, 32.0) == 1.25
    with pytest.raises(NonPositiveHeight):
        eta_from_height_pair(0.0, 3.0)


def test_projected_height_examples():
    assert projected_height(100, 50, 0) == 100.0
    with pytest.raises(OrientationSingularity):
        projected_height(100, 50, math.pi / 4)
    assert projected_height(100, 50, 0.2) == pytest.approx(HP_ORACLE, rel=1e-14)
    with pytest.raises(NonPositiveResult):
        projected_height(10, 50, 0.5)


def test_projected_height_singularity_band():
    with pytest.raises(OrientationSingularity):
        projected_height(100, 1, math.pi / 4 + 4e-7)
    with pytest.raises(OrientationSingularity):
        projected_height(100, 1, -3 * math.pi / 4)
    assert projected_height(100, 1, math.pi / 4 - 1e-5) > 0


@given(st.floats(0.01, 1e4), st.floats(0.01, 1e4))
def test_depth_ratio_reciprocal(a, b):
    assert eta_from_depth_pair(a, b) * eta_from_depth_pair(b, a) == pytest.approx(1.0, rel=1e-15)


@given(st.floats(-1e4, 1e4), st.sampled_from([0.1, 0.5]))
def test_tau_round_trip(tau, period):
    assume(abs(tau) > 1e-3)
    eta = 1 - period / tau
    assume(eta > 0)
    assert tau_from_eta(eta, period) == pytest.approx(tau, rel=1e-9)


@given(st.floats(0.01, 0.999), st.floats(0.01, 0.999))
def test_tau_increasing_below_one(a, b):
    assume(b - a > 1e-9)
    assert tau_from_eta(a, 0.1) < tau_from_eta(b, 0.1)


@given(st.floats(1, 1e3), st.floats(0, 1e3), st.floats(-1.5, 1.5))
def test_projected_height_reductions(h, w, theta):
    assert projected_height(h, w, 0.0) == h
    assume(abs(math.cos(2 * theta)) > 1e-3)
    expected = h * math.cos(theta) / math.cos(2 * theta)
    assume(expected > 0)
    assert projected_height(h, 0.0, theta) == pytest.approx(expected, rel=1e-12)


def test_projected_angle_sources():
    assert projected_angle(make_instance(0, 0, alpha=0.3, rotation_y=1.0, location=(1.0, 0.0, 1.0))) == 0.3
    got = projected_angle(make_instance(0, 0, rotation_y=1.0, location=(1.0, 0.0, 1.0)))
    assert got == pytest.approx(1.0 - math.pi / 4)
    with pytest.raises(MissingField):
        projected_angle(make_instance(0, 0, rotation_y=1.0))


# -- annotate_sequence ------------------------------------------------------


def test_annotate_tracks3d_single_pair(intrinsics):
    seq = make_sequence(
        intrinsics,
        [(0, [make_instance(0, 7, location=(0.0, 0.0, 20.0))]), (1, [make_instance(1, 7, location=(0.0, 0.0, 19.0))])],
    )
    run = annotate_sequence(seq, Method.TRACKS_3D)
    assert len(run.annotations) == 1
    a = run.annotations[0]
    assert (a.frame_index, a.track_id, a.method) == (0, 7, Method.TRACKS_3D)
    assert a.eta == pytest.approx(0.95, rel=1e-15)
    assert a.tau_s == pytest.approx(2.0, rel=1e-12)
    assert a.center == (125.0, 150.0)
    # the last observation has no successor
    assert [s.reason for s in run.skipped] == ["no successor"]


def test_annotate_single_frame(intrinsics):
    seq = make_sequence(intrinsics, [(0, [make_instance(0, 1, location=(0.0, 0.0, 5.0))])])
    run = annotate_sequence(seq, Method.TRACKS_3D)
    assert run.annotations == []
    assert len(run.skipped) == 1


def test_annotate_requires_consecutive_indices(intrinsics):
    seq = make_sequence(
        intrinsics,
        [(0, [make_instance(0, 1, location=(0.0, 0.0, 5.0))]), (2, [make_instance(2, 1, location=(0.0, 0.0, 4.0))])],
    )
    assert annotate_sequence(seq, Method.TRACKS_3D).annotations == []


def test_annotate_skips_with_reasons(intrinsics):
    seq = make_sequence(
        intrinsics,
        [
            (0, [make_instance(0, 1), make_instance(0, 2, alpha=math.pi / 4)]),
            (1, [make_instance(1, 1), make_instance(1, 2, alpha=math.pi / 4)]),
        ],
    )
    run = annotate_sequence(seq, Method.TRACKS_2D_CORRECTED)
    assert run.annotations == []
    assert run.skip_reasons == {"MissingField": 1, "OrientationSingularity": 1, "no successor": 2}
    raw = annotate_sequence(seq, Method.TRACKS_2D)
    assert [a.eta for a in raw.annotations] == [1.0, 1.0]
    assert all(a.tau_s is None for a in raw.annotations)


def test_annotate_depth_velocity(intrinsics):
    seq = make_sequence(
        intrinsics,
        [(0, [make_instance(0, 1, location=(0.0, 0.0, 20.0), range_rate=-5.0), make_instance(0, 2)])],
    )
    run = annotate_sequence(seq, Method.DEPTH_VELOCITY)
    assert [(a.track_id, a.tau_s) for a in run.annotations] == [(1, 4.0)]
    assert run.skip_reasons == {"MissingField": 1}


def test_annotate_rejects_simulator_method(intrinsics):
    with pytest.raises(ValueError):
        annotate_sequence(make_sequence(intrinsics, []), Method.SIMULATOR_EXACT)


def test_every_instance_is_annotated_or_skipped():
    for spec in sim.make_validation_suite(3)[::5]:
        seq, _ = sim.simulate(spec)
        n = sum(len(f.objects) for f in seq.frames)
        for method in (Method.TRACKS_3D, Method.TRACKS_2D, Method.TRACKS_2D_CORRECTED):
            run = annotate_sequence(seq, method)
            assert len(run.annotations) + len(run.skipped) == n


def test_plate_tracks2d_equals_tracks3d():
    for i in range(20):
        seq, _ = sim.simulate(sim.plate_scene(11, i))
        a3 = annotate_sequence(seq, Method.TRACKS_3D).annotations
        a2 = annotate_sequence(seq, Method.TRACKS_2D).annotations
        assert [a.key for a in a2] == [a.key for a in a3]
        for x, y in zip(a2, a3):
            assert abs(x.eta - y.eta) < 1e-9


def _mean_log_error(seq, exact, method):
    ex = {a.key: a.eta for a in exact}
    ann = annotate_sequence(seq, method).annotations
    return sum(abs(math.log(a.eta / ex[a.key])) for a in ann) / len(ann)


def test_correction_helps_for_negative_observation_angles():
    # the orientation correction only improves on the raw ratio for one sign of theta (see README);
    # this checks the sign where it does, inside (-30 deg, 30 deg).
    for deg in (-25.0, -15.0, -5.0):
        for i, cat in enumerate(("Car", "Pedestrian", "Cyclist")):
            seq, exact = sim.simulate(sim.constant_yaw_scene(5, i, math.radians(deg), cat))
            raw = _mean_log_error(seq, exact, Method.TRACKS_2D)
            corrected = _mean_log_error(seq, exact, Method.TRACKS_2D_CORRECTED)
            assert corrected <= raw
