import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_transform
from gtf.errors import DegenerateGeometryError, InputError
from gtf.types import (
    Frame,
    PoseSample,
    PrismLayout,
    RawMeasurement,
    RigidTransform,
    Status,
    compose,
    distance,
    quat_normalize,
    wrap_angle,
)

finite = st.floats(-1e3, 1e3, allow_nan=False)
vec3 = st.tuples(finite, finite, finite)
angle = st.floats(-math.pi, math.pi, allow_nan=False)


def transforms():
    return st.builds(lambda y, p, r, t: RigidTransform.from_euler(y, p, r, t), angle,
                     st.floats(-1.5, 1.5), angle, vec3)


def test_distance_examples():
    assert distance((0, 0, 0), (0, 0, 0)) == 0
    assert distance((1, 0, 0), (0, 0, 0)) == 1
    lay = PrismLayout.default()
    assert distance(lay.p1, lay.p2) == pytest.approx(0.987, abs=1e-12)


@given(vec3, vec3)
def test_distance_symmetric(a, b):
    assert distance(a, b) == distance(b, a)


def test_distance_rejects_nonfinite():
    with pytest.raises(InputError):
        distance((math.nan, 0, 0), (0, 0, 0))


def test_common_frame_is_station1():
    assert Frame.COMMON is Frame.STATION1
    assert Frame.station(3) is Frame.STATION3
    assert Frame.STATION2.index == 2


def test_status_codes_roundtrip_and_unknown():
    for s in (Status.OK, Status.PRISM_NOT_DETECTED, Status.PRISM_TOO_CLOSE, Status.NOT_LEVELLED):
        assert Status.from_code(s.code) is s
    assert Status.from_code(77) is Status.INVALID
    assert not RawMeasurement(Frame.STATION1, 0.0, 0.0, 0.0, 0, Status.INVALID).ok


@pytest.mark.parametrize("kw", [dict(range=0.0), dict(va=-0.1), dict(va=3.2), dict(ha=2 * math.pi),
                                dict(ha=-0.1), dict(t_client=-1)])
def test_raw_measurement_invariants(kw):
    base = dict(station=Frame.STATION1, ha=1.0, va=1.0, range=5.0, t_client=0)
    base.update(kw)
    with pytest.raises(InputError):
        RawMeasurement(**base)


def test_error_status_relaxes_range():
    m = RawMeasurement(Frame.STATION2, 0.0, 0.0, 0.0, 10, Status.PRISM_NOT_DETECTED)
    assert not m.ok


def test_identity_compose_and_inverse(rng):
    T = random_transform(rng)
    assert compose(RigidTransform.identity(), T).isclose(T, 1e-12)
    assert (T @ T.inverse()).isclose(RigidTransform.identity(), 1e-9)


def test_compose_pointwise_oracle(rng):
    a, b = random_transform(rng), random_transform(rng)
    pts = rng.normal(size=(10, 3)) * 10
    np.testing.assert_allclose((a @ b).apply(pts), a.apply(b.apply(pts)), atol=1e-9)


@given(transforms(), transforms(), transforms())
def test_compose_associative(a, b, c):
    left, right = (a @ b) @ c, a @ (b @ c)
    assert np.allclose(left.translation, right.translation, atol=1e-9 * (1 + np.abs(left.translation).max()))
    assert left.angle_to(right) < 1e-12 * 1e3


@given(transforms(), vec3, vec3)
def test_isometry(T, a, b):
    assert math.isclose(distance(T(np.array(a)), T(np.array(b))), distance(a, b), abs_tol=1e-9)


@given(st.lists(transforms(), min_size=2, max_size=30))
def test_quaternion_stays_unit(ts):
    acc = RigidTransform.identity()
    for t in ts:
        acc = acc @ t
        assert abs(np.linalg.norm(acc.rotation) - 1) < 1e-9


def test_non_unit_quaternion_rejected():
    with pytest.raises(InputError):
        RigidTransform(np.array([1.0, 0.1, 0.0, 0.0]))


def test_quat_normalize_sign():
    q = quat_normalize([-2.0, 0.0, 0.0, 0.0])
    np.testing.assert_array_equal(q, [1.0, 0.0, 0.0, 0.0])


def test_euler_roundtrip():
    T = RigidTransform.from_euler(0.3, -0.2, 0.1)
    np.testing.assert_allclose(T.euler_zyx(), [0.3, -0.2, 0.1], atol=1e-12)


def test_wrap_angle():
    np.testing.assert_allclose(wrap_angle([math.pi, -math.pi, 3 * math.pi, 0.5]), [math.pi, math.pi, math.pi, 0.5])


def test_default_layout_distances():
    lay = PrismLayout.default()
    assert lay.distances == pytest.approx((0.987, 0.681, 0.815), abs=1e-12)
    np.testing.assert_allclose(lay.points[:, 2], 0.2)


def test_layout_rejects_collinear_and_inconsistent():
    with pytest.raises(DegenerateGeometryError):
        PrismLayout.from_points((0, 0, 0), (1, 0, 0), (2, 0, 0))
    with pytest.raises(InputError):
        PrismLayout((0, 0, 0), (1, 0, 0), (0, 1, 0), 1.0, 1.0, 1.5)
    with pytest.raises(DegenerateGeometryError):
        PrismLayout.from_distances(1.0, 0.2, 0.2)


def test_invalid_pose_sample_keeps_time():
    p = PoseSample.invalid(42)
    assert p.t == 42 and not p.valid and p.pose is None
