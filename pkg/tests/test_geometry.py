"""Geometry oracles.

Great-circle distances are checked against closed-form reference values
(quarter circumference, meters per degree of latitude) and against an
independent spherical law-of-cosines implementation written here.
"""

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semnav.geometry import (
    EARTH_RADIUS_M,
    Box3D,
    GeoPoint,
    LocalFrame,
    OutOfRange,
    Pose,
    compose_pose,
    haversine_m,
    invert_pose,
    wrap_angle,
)

METERS_PER_DEG_LAT = math.pi * EARTH_RADIUS_M / 180.0  # 111194.9266...


def law_of_cosines_m(a, b):
    la1, la2 = math.radians(a.lat_deg), math.radians(b.lat_deg)
    dlo = math.radians(b.lon_deg - a.lon_deg)
    c = math.sin(la1) * math.sin(la2) + math.cos(la1) * math.cos(la2) * math.cos(dlo)
    return EARTH_RADIUS_M * math.acos(min(1.0, max(-1.0, c)))


class TestWrapAngle:
    def test_range_is_half_open_on_the_left(self):
        assert wrap_angle(math.pi) == pytest.approx(math.pi)
        assert wrap_angle(-math.pi) == pytest.approx(math.pi)

    def test_identity_inside_range(self):
        assert wrap_angle(0.0) == 0.0
        assert wrap_angle(1.2) == pytest.approx(1.2)
        assert wrap_angle(-3.0) == pytest.approx(-3.0)

    def test_full_turns_collapse(self):
        assert wrap_angle(2 * math.pi) == pytest.approx(0.0, abs=1e-12)
        assert wrap_angle(5 * math.pi) == pytest.approx(math.pi)
        assert wrap_angle(-7 * math.pi / 2) == pytest.approx(math.pi / 2)

    @given(st.floats(-50, 50))
    def test_always_in_range(self, a):
        w = wrap_angle(a)
        assert -math.pi < w <= math.pi

    @given(st.floats(-50, 50))
    def test_preserves_direction(self, a):
        w = wrap_angle(a)
        assert math.cos(w) == pytest.approx(math.cos(a), abs=1e-9)
        assert math.sin(w) == pytest.approx(math.sin(a), abs=1e-9)


class TestHaversine:
    def test_zero_distance(self):
        p = GeoPoint(37.0, -122.0)
        assert haversine_m(p, p) == 0.0

    def test_one_degree_latitude(self):
        d = haversine_m(GeoPoint(10.0, 5.0), GeoPoint(11.0, 5.0))
        assert d == pytest.approx(METERS_PER_DEG_LAT, rel=1e-9)

    def test_quarter_circumference_along_equator(self):
        d = haversine_m(GeoPoint(0.0, 0.0), GeoPoint(0.0, 90.0))
        assert d == pytest.approx(math.pi * EARTH_RADIUS_M / 2.0, rel=1e-9)

    def test_antipodal(self):
        d = haversine_m(GeoPoint(0.0, 0.0), GeoPoint(0.0, 180.0))
        assert d == pytest.approx(math.pi * EARTH_RADIUS_M, rel=1e-9)

    def test_longitude_shrinks_with_latitude(self):
        near_equator = haversine_m(GeoPoint(0.0, 0.0), GeoPoint(0.0, 0.01))
        at_60 = haversine_m(GeoPoint(60.0, 0.0), GeoPoint(60.0, 0.01))
        assert at_60 == pytest.approx(near_equator * 0.5, rel=1e-4)

    @given(
        st.floats(-80, 80), st.floats(-179, 179),
        st.floats(-80, 80), st.floats(-179, 179),
    )
    @settings(max_examples=200)
    def test_matches_law_of_cosines(self, la1, lo1, la2, lo2):
        a, b = GeoPoint(la1, lo1), GeoPoint(la2, lo2)
        d_h = haversine_m(a, b)
        d_c = law_of_cosines_m(a, b)
        # Law of cosines loses precision for near-coincident points; only
        # compare where it is well conditioned.
        if d_c > 1000.0:
            assert d_h == pytest.approx(d_c, rel=1e-6)

    @given(
        st.floats(-80, 80), st.floats(-179, 179),
        st.floats(-80, 80), st.floats(-179, 179),
    )
    def test_symmetric(self, la1, lo1, la2, lo2):
        a, b = GeoPoint(la1, lo1), GeoPoint(la2, lo2)
        assert haversine_m(a, b) == pytest.approx(haversine_m(b, a), abs=1e-9)


class TestLocalFrame:
    def test_anchor_maps_to_origin(self):
        f = LocalFrame(GeoPoint(37.4, -122.1))
        assert f.to_local(GeoPoint(37.4, -122.1)) == (0.0, 0.0)

    def test_north_offset(self):
        f = LocalFrame(GeoPoint(0.0, 0.0))
        x, y = f.to_local(GeoPoint(0.001, 0.0))
        assert x == pytest.approx(0.0, abs=1e-12)
        assert y == pytest.approx(METERS_PER_DEG_LAT * 0.001, rel=1e-12)

    def test_east_offset_scales_with_anchor_latitude(self):
        f = LocalFrame(GeoPoint(60.0, 10.0))
        x, y = f.to_local(GeoPoint(60.0, 10.001))
        assert y == pytest.approx(0.0, abs=1e-12)
        assert x == pytest.approx(METERS_PER_DEG_LAT * 0.001 * math.cos(math.radians(60.0)), rel=1e-9)

    def test_agrees_with_haversine_at_short_range(self):
        anchor = GeoPoint(45.0, 7.0)
        f = LocalFrame(anchor)
        p = GeoPoint(45.003, 7.004)
        x, y = f.to_local(p)
        assert math.hypot(x, y) == pytest.approx(haversine_m(anchor, p), rel=1e-4)

    @given(st.floats(-20000, 20000), st.floats(-20000, 20000))
    @settings(max_examples=150)
    def test_round_trip_local_geo_local(self, x, y):
        f = LocalFrame(GeoPoint(37.0, -122.0))
        p = f.to_geo(x, y)
        x2, y2 = f.to_local(p)
        assert x2 == pytest.approx(x, abs=1e-6)
        assert y2 == pytest.approx(y, abs=1e-6)

    @given(st.floats(-0.1, 0.1), st.floats(-0.1, 0.1))
    @settings(max_examples=150)
    def test_round_trip_geo_local_geo(self, dla, dlo):
        f = LocalFrame(GeoPoint(37.0, -122.0))
        p = GeoPoint(37.0 + dla, -122.0 + dlo)
        q = f.to_geo(*f.to_local(p))
        assert q.lat_deg == pytest.approx(p.lat_deg, abs=1e-12)
        assert q.lon_deg == pytest.approx(p.lon_deg, abs=1e-12)

    def test_out_of_range_geo(self):
        f = LocalFrame(GeoPoint(0.0, 0.0))
        with pytest.raises(OutOfRange):
            f.to_local(GeoPoint(1.0, 0.0))  # ~111 km north

    def test_out_of_range_local(self):
        f = LocalFrame(GeoPoint(0.0, 0.0))
        with pytest.raises(OutOfRange):
            f.to_geo(60000.0, 0.0)
        f.to_geo(40000.0, 0.0)  # inside the envelope

    def test_polar_anchor_rejected(self):
        with pytest.raises(ValueError):
            LocalFrame(GeoPoint(90.0, 0.0))


finite_pose = st.builds(
    Pose,
    st.floats(-100, 100),
    st.floats(-100, 100),
    st.floats(-10, 10),
)


class TestPose:
    def test_heading_normalized_on_construction(self):
        assert Pose(0, 0, 3 * math.pi).heading == pytest.approx(math.pi)
        assert Pose(0, 0, -math.pi).heading == pytest.approx(math.pi)

    def test_compose_pure_translation(self):
        out = compose_pose(Pose(1.0, 2.0, 0.0), Pose(3.0, -1.0, 0.0))
        assert (out.x, out.y, out.heading) == pytest.approx((4.0, 1.0, 0.0))

    def test_compose_rotated_base(self):
        # Facing +y: a forward offset of 3 m lands 3 m up in y.
        out = compose_pose(Pose(1.0, 2.0, math.pi / 2), Pose(3.0, 0.0, 0.0))
        assert out.x == pytest.approx(1.0, abs=1e-12)
        assert out.y == pytest.approx(5.0)
        assert out.heading == pytest.approx(math.pi / 2)

    def test_compose_headings_add_and_wrap(self):
        out = compose_pose(Pose(0, 0, 3 * math.pi / 4), Pose(0, 0, math.pi / 2))
        assert out.heading == pytest.approx(-3 * math.pi / 4)

    @given(finite_pose)
    def test_identity(self, p):
        e = Pose(0.0, 0.0, 0.0)
        for q in (compose_pose(p, e), compose_pose(e, p)):
            assert q.x == pytest.approx(p.x, abs=1e-9)
            assert q.y == pytest.approx(p.y, abs=1e-9)
            assert q.heading == pytest.approx(p.heading, abs=1e-9)

    @given(finite_pose, finite_pose, finite_pose)
    @settings(max_examples=150)
    def test_associative(self, a, b, c):
        lhs = compose_pose(compose_pose(a, b), c)
        rhs = compose_pose(a, compose_pose(b, c))
        assert lhs.x == pytest.approx(rhs.x, abs=1e-6)
        assert lhs.y == pytest.approx(rhs.y, abs=1e-6)
        assert math.cos(lhs.heading) == pytest.approx(math.cos(rhs.heading), abs=1e-9)
        assert math.sin(lhs.heading) == pytest.approx(math.sin(rhs.heading), abs=1e-9)

    @given(finite_pose)
    def test_inverse(self, p):
        q = compose_pose(p, invert_pose(p))
        assert q.x == pytest.approx(0.0, abs=1e-6)
        assert q.y == pytest.approx(0.0, abs=1e-6)
        assert math.cos(q.heading) == pytest.approx(1.0, abs=1e-9)


class TestBox3D:
    def test_axis_aligned_footprint(self):
        box = Box3D(2.0, 3.0, 0.0, 4.0, 2.0, 1.0, 0.0)
        corners = box.footprint()
        assert corners[0] == pytest.approx((4.0, 4.0))
        assert corners[2] == pytest.approx((0.0, 2.0))

    def test_rotated_footprint(self):
        box = Box3D(0.0, 0.0, 0.0, 4.0, 2.0, 1.0, math.pi / 2)
        corners = box.footprint()
        # Length now runs along y.
        assert corners[0] == pytest.approx((-1.0, 2.0))
