import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lanecraft.double_edge import (
    DoubleEdge,
    Edge,
    EdgePoint,
    LaneGeometryError,
    SceneAnnotation,
    SceneFormatError,
    deserialize,
    lane_polygon,
    serialize,
    validate,
)


from helpers import straight_lane, valid_scene


class TestValidate:
    def test_valid_scene_empty_report(self):
        assert validate(valid_scene(), points_per_edge=10) == []

    def test_edge_length_mismatch(self):
        lane = straight_lane()
        bad = DoubleEdge(left=lane.left, right=Edge(lane.right.points[:-1]))
        report = validate(SceneAnnotation(lanes=(bad,), speed=0.0))
        assert any(v.rule == "edge length mismatch" for v in report)

    def test_non_binary_attribute(self):
        lane = straight_lane()
        pts = list(lane.left.points)
        pts[3] = EdgePoint(pts[3].x, pts[3].y, occ=2, plan=0)
        bad = DoubleEdge(left=Edge(tuple(pts)), right=lane.right)
        report = validate(SceneAnnotation(lanes=(bad,), speed=0.0))
        assert any(v.rule == "attribute not binary" and "occ" in v.field for v in report)

    def test_out_of_range_point(self):
        lane = straight_lane()
        pts = list(lane.left.points)
        pts[0] = EdgePoint(99.0, 0.0)
        bad = DoubleEdge(left=Edge(tuple(pts)), right=lane.right)
        report = validate(SceneAnnotation(lanes=(bad,), speed=0.0))
        assert any(v.rule == "point outside BEV extent" for v in report)

    def test_scene_level_rules(self):
        report = validate(SceneAnnotation(lanes=(), speed=-1.0, signal="purple"))
        rules = {v.field for v in report}
        assert "speed" in rules and "signal" in rules

    def test_lane_capacity(self):
        lanes = tuple(straight_lane() for _ in range(31))
        report = validate(SceneAnnotation(lanes=lanes, speed=0.0))
        assert any(v.field == "lanes" for v in report)

    def test_exact_point_count_enforced(self):
        report = validate(valid_scene(9), points_per_edge=10)
        assert any("must be 10" in v.rule for v in report)


def segments_intersect(p1, p2, p3, p4):
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(p3, p4, p1), orient(p3, p4, p2)
    d3, d4 = orient(p1, p2, p3), orient(p1, p2, p4)
    return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0))


def is_simple_polygon(ring):
    n = len(ring)
    for i in range(n):
        a1, a2 = ring[i], ring[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue
            if segments_intersect(a1, a2, ring[j], ring[(j + 1) % n]):
                return False
    return True


class TestLanePolygon:
    def test_rectangle_ring_order(self):
        left = Edge((EdgePoint(0, 1), EdgePoint(1, 1)))
        right = Edge((EdgePoint(0, -1), EdgePoint(1, -1)))
        ring = lane_polygon(DoubleEdge(left=left, right=right))
        assert ring == [(0, 1), (1, 1), (1, -1), (0, -1)]

    def test_single_point_edges(self):
        lane = DoubleEdge(left=Edge((EdgePoint(0, 1),)), right=Edge((EdgePoint(0, -1),)))
        with pytest.raises(LaneGeometryError, match="degenerate"):
            lane_polygon(lane)

    def test_all_identical_points(self):
        pts = tuple(EdgePoint(1.0, 1.0) for _ in range(5))
        with pytest.raises(LaneGeometryError, match="degenerate"):
            lane_polygon(DoubleEdge(left=Edge(pts), right=Edge(pts)))

    def test_curved_lane_is_simple_with_full_vertex_count(self):
        # quarter-arc lane, 10 points per edge
        angles = np.linspace(0.0, math.pi / 2, 10)
        left = Edge(tuple(EdgePoint(12 * math.cos(a), 12 * math.sin(a)) for a in angles))
        right = Edge(tuple(EdgePoint(9 * math.cos(a), 9 * math.sin(a)) for a in angles))
        ring = lane_polygon(DoubleEdge(left=left, right=right))
        assert len(ring) == 20
        assert is_simple_polygon(ring)


class TestSerialization:
    def test_round_trip(self):
        scene = valid_scene()
        assert deserialize(serialize(scene)) == scene

    def test_canonical_bytes(self):
        scene = valid_scene()
        assert serialize(scene) == serialize(deserialize(serialize(scene)))

    def test_truncated_input_reports_offset(self):
        data = serialize(valid_scene())[:-5]
        with pytest.raises(SceneFormatError, match="parse error at byte"):
            deserialize(data)

    def test_unknown_field_rejected(self):
        with pytest.raises(SceneFormatError, match="unknown field 'extra'"):
            deserialize('{"lanes":[],"speed":0,"signal":"none","extra":1}')

    def test_missing_field_rejected(self):
        with pytest.raises(SceneFormatError, match="missing field 'signal'"):
            deserialize('{"lanes":[],"speed":0}')

    def test_non_binary_attribute_rejected(self):
        payload = (
            '{"lanes":[{"left":[{"x":0,"y":1,"occ":2,"plan":0}],"right":[{"x":0,"y":-1,"occ":1,"plan":0}],'
            '"int":0,"dir":1}],"speed":0,"signal":"none"}'
        )
        with pytest.raises(SceneFormatError, match="must be 0 or 1"):
            deserialize(payload)

    def test_bool_attribute_rejected(self):
        payload = (
            '{"lanes":[{"left":[{"x":0,"y":1,"occ":true,"plan":0}],"right":[{"x":0,"y":-1,"occ":1,"plan":0}],'
            '"int":0,"dir":1}],"speed":0,"signal":"none"}'
        )
        with pytest.raises(SceneFormatError):
            deserialize(payload)

    def test_non_finite_rejected(self):
        with pytest.raises(SceneFormatError):
            deserialize('{"lanes":[],"speed":NaN,"signal":"none"}')

    def test_full_capacity_scene_round_trips(self):
        lanes = tuple(straight_lane(plan=i % 2) for i in range(30))
        scene = SceneAnnotation(lanes=lanes, speed=8.0, signal="red")
        restored = deserialize(serialize(scene))
        assert restored == scene
        assert validate(restored, points_per_edge=10) == []


@st.composite
def scenes(draw):
    n_lanes = draw(st.integers(0, 4))
    n_pts = draw(st.integers(2, 6))
    coord = st.floats(-32.0, 32.0, allow_nan=False, allow_infinity=False)
    bit = st.integers(0, 1)
    lanes = []
    for _ in range(n_lanes):
        edges = []
        for _ in range(2):
            pts = tuple(
                EdgePoint(draw(coord), draw(coord), draw(bit), draw(bit)) for _ in range(n_pts)
            )
            edges.append(Edge(pts))
        lanes.append(DoubleEdge(left=edges[0], right=edges[1], intersection=draw(bit), direction=draw(bit)))
    speed = draw(st.floats(0.0, 30.0, allow_nan=False))
    signal = draw(st.sampled_from(["green", "red", "yellow", "none"]))
    return SceneAnnotation(lanes=tuple(lanes), speed=speed, signal=signal)


@given(scenes())
@settings(max_examples=50, deadline=None)
def test_round_trip_property(scene):
    assert deserialize(serialize(scene)) == scene
