"""Paired-edge lane scenes: types, validation, geometry, and JSON serialization.

A lane is a pair of left/right edge point lists. Each point carries binary
occupancy and plan attributes; each lane carries binary intersection and
direction attributes. Attribute polarity: occ=1 means the point's lane region
is free of traffic agents, dir=1 means the lane runs with the ego route, and
plan=1 marks the point as selected for driving.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

SIGNAL_STATES = ("green", "red", "yellow", "none")
DEFAULT_BEV_RANGE = (32.0, 32.0)
DEFAULT_MAX_LANES = 30

_POINT_KEYS = {"x", "y", "occ", "plan"}
_LANE_KEYS = {"left", "right", "int", "dir"}
_SCENE_KEYS = {"lanes", "speed", "signal"}


class SceneFormatError(ValueError):
    """Raised for malformed or schema-violating scene payloads."""


class LaneGeometryError(ValueError):
    """Raised when lane geometry is degenerate."""


@dataclass(frozen=True)
class EdgePoint:
    """One edge sample in ego-frame BEV meters (forward = +x, left = +y)."""

    x: float
    y: float
    occ: int = 1
    plan: int = 0


@dataclass(frozen=True)
class Edge:
    points: tuple[EdgePoint, ...]

    def __len__(self) -> int:
        return len(self.points)

    def xy(self) -> np.ndarray:
        """Edge coordinates as an (n, 2) array."""
        return np.array([(p.x, p.y) for p in self.points], dtype=np.float64)

    def occ(self) -> np.ndarray:
        return np.array([p.occ for p in self.points], dtype=np.int64)

    def plan(self) -> np.ndarray:
        return np.array([p.plan for p in self.points], dtype=np.int64)

    @classmethod
    def from_arrays(cls, xy, occ=None, plan=None) -> "Edge":
        xy = np.asarray(xy, dtype=np.float64)
        n = xy.shape[0]
        occ = np.ones(n, dtype=np.int64) if occ is None else np.asarray(occ)
        plan = np.zeros(n, dtype=np.int64) if plan is None else np.asarray(plan)
        return cls(
            tuple(
                EdgePoint(float(xy[j, 0]), float(xy[j, 1]), int(occ[j]), int(plan[j]))
                for j in range(n)
            )
        )


@dataclass(frozen=True)
class DoubleEdge:
    """A lane as paired edges plus lane-level attributes."""

    left: Edge
    right: Edge
    intersection: int = 0
    direction: int = 1


@dataclass(frozen=True)
class SceneAnnotation:
    """All lanes visible in one BEV snapshot plus scene-level targets."""

    lanes: tuple[DoubleEdge, ...]
    speed: float = 0.0
    signal: str = "none"


@dataclass(frozen=True)
class TargetPoint:
    """Navigation goal in the ego frame."""

    x: float
    y: float


@dataclass(frozen=True)
class Violation:
    """One invariant violation found by validate()."""

    lane: int | None
    field: str
    rule: str

    def __str__(self) -> str:
        where = "scene" if self.lane is None else f"lane {self.lane}"
        return f"{where}.{self.field}: {self.rule}"


def _binary_ok(value) -> bool:
    return type(value) is int and value in (0, 1)


def validate(
    scene: SceneAnnotation,
    *,
    bev_range: tuple[float, float] = DEFAULT_BEV_RANGE,
    max_lanes: int = DEFAULT_MAX_LANES,
    points_per_edge: int | None = None,
) -> list[Violation]:
    """Check every scene invariant; returns an empty list iff all hold.

    ``points_per_edge`` enforces an exact edge length when given (half the
    configured points-per-lane); left/right length equality is always checked.
    """
    out: list[Violation] = []
    rx, ry = bev_range
    if len(scene.lanes) > max_lanes:
        out.append(Violation(None, "lanes", f"lane count {len(scene.lanes)} exceeds capacity {max_lanes}"))
    if not (math.isfinite(scene.speed) and scene.speed >= 0.0):
        out.append(Violation(None, "speed", "speed must be finite and non-negative"))
    if scene.signal not in SIGNAL_STATES:
        out.append(Violation(None, "signal", f"signal must be one of {SIGNAL_STATES}"))
    for i, lane in enumerate(scene.lanes):
        if len(lane.left) != len(lane.right):
            out.append(Violation(i, "edges", "edge length mismatch"))
        if points_per_edge is not None:
            for side, edge in (("left", lane.left), ("right", lane.right)):
                if len(edge) != points_per_edge:
                    out.append(Violation(i, side, f"edge length must be {points_per_edge}"))
        for attr, value in (("int", lane.intersection), ("dir", lane.direction)):
            if not _binary_ok(value):
                out.append(Violation(i, attr, "attribute not binary"))
        for side, edge in (("left", lane.left), ("right", lane.right)):
            for j, p in enumerate(edge.points):
                if not (math.isfinite(p.x) and math.isfinite(p.y)):
                    out.append(Violation(i, f"{side}[{j}]", "coordinate not finite"))
                elif abs(p.x) > rx or abs(p.y) > ry:
                    out.append(Violation(i, f"{side}[{j}]", "point outside BEV extent"))
                if not _binary_ok(p.occ):
                    out.append(Violation(i, f"{side}[{j}].occ", "attribute not binary"))
                if not _binary_ok(p.plan):
                    out.append(Violation(i, f"{side}[{j}].plan", "attribute not binary"))
    return out


def lane_polygon(lane: DoubleEdge) -> list[tuple[float, float]]:
    """Lane outline as a closed ring: left points forward, right points back.

    Raises LaneGeometryError for degenerate lanes (fewer than two points per
    edge, or all points coincident).
    """
    if len(lane.left) < 2 or len(lane.right) < 2:
        raise LaneGeometryError("degenerate geometry")
    ring = [(p.x, p.y) for p in lane.left.points]
    ring += [(p.x, p.y) for p in reversed(lane.right.points)]
    first = ring[0]
    if all(abs(x - first[0]) < 1e-12 and abs(y - first[1]) < 1e-12 for x, y in ring):
        raise LaneGeometryError("degenerate geometry")
    return ring


def _point_to_dict(p: EdgePoint) -> dict:
    return {"x": p.x, "y": p.y, "occ": p.occ, "plan": p.plan}


def _lane_to_dict(lane: DoubleEdge) -> dict:
    return {
        "left": [_point_to_dict(p) for p in lane.left.points],
        "right": [_point_to_dict(p) for p in lane.right.points],
        "int": lane.intersection,
        "dir": lane.direction,
    }


def scene_to_dict(scene: SceneAnnotation) -> dict:
    return {
        "lanes": [_lane_to_dict(lane) for lane in scene.lanes],
        "speed": scene.speed,
        "signal": scene.signal,
    }


def serialize(scene: SceneAnnotation) -> bytes:
    """Canonical JSON encoding (sorted keys, no whitespace); byte-stable."""
    return json.dumps(scene_to_dict(scene), sort_keys=True, separators=(",", ":")).encode("utf-8")


def _require_keys(obj: dict, allowed: set, context: str) -> None:
    for key in obj:
        if key not in allowed:
            raise SceneFormatError(f"unknown field '{key}' in {context}")
    for key in allowed:
        if key not in obj:
            raise SceneFormatError(f"missing field '{key}' in {context}")


def _parse_number(value, field: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SceneFormatError(f"field '{field}' must be a number")
    value = float(value)
    if not math.isfinite(value):
        raise SceneFormatError(f"field '{field}' must be finite")
    return value


def _parse_bit(value, field: str) -> int:
    if not _binary_ok(value):
        raise SceneFormatError(f"field '{field}' must be 0 or 1")
    return value


def _parse_point(obj, context: str) -> EdgePoint:
    if not isinstance(obj, dict):
        raise SceneFormatError(f"{context} must be an object")
    _require_keys(obj, _POINT_KEYS, context)
    return EdgePoint(
        x=_parse_number(obj["x"], f"{context}.x"),
        y=_parse_number(obj["y"], f"{context}.y"),
        occ=_parse_bit(obj["occ"], f"{context}.occ"),
        plan=_parse_bit(obj["plan"], f"{context}.plan"),
    )


def _parse_edge(obj, context: str) -> Edge:
    if not isinstance(obj, list):
        raise SceneFormatError(f"{context} must be a list")
    return Edge(tuple(_parse_point(p, f"{context}[{j}]") for j, p in enumerate(obj)))


def deserialize(data: bytes | str) -> SceneAnnotation:
    """Parse a scene payload; exact inverse of serialize on valid scenes.

    Raises SceneFormatError with a byte offset for malformed JSON and with a
    field name for schema violations. Unknown fields are rejected.
    """
    if isinstance(data, bytes):
        data = data.decode("utf-8")

    def _reject_constant(name):
        raise SceneFormatError(f"non-finite literal '{name}' not allowed")

    try:
        raw = json.loads(data, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise SceneFormatError(f"parse error at byte {exc.pos}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise SceneFormatError("top level must be an object")
    _require_keys(raw, _SCENE_KEYS, "scene")
    if not isinstance(raw["lanes"], list):
        raise SceneFormatError("field 'lanes' must be a list")
    lanes = []
    for i, lane_obj in enumerate(raw["lanes"]):
        if not isinstance(lane_obj, dict):
            raise SceneFormatError(f"lanes[{i}] must be an object")
        _require_keys(lane_obj, _LANE_KEYS, f"lanes[{i}]")
        lanes.append(
            DoubleEdge(
                left=_parse_edge(lane_obj["left"], f"lanes[{i}].left"),
                right=_parse_edge(lane_obj["right"], f"lanes[{i}].right"),
                intersection=_parse_bit(lane_obj["int"], f"lanes[{i}].int"),
                direction=_parse_bit(lane_obj["dir"], f"lanes[{i}].dir"),
            )
        )
    speed = _parse_number(raw["speed"], "speed")
    signal = raw["signal"]
    if signal not in SIGNAL_STATES:
        raise SceneFormatError(f"field 'signal' must be one of {SIGNAL_STATES}")
    return SceneAnnotation(lanes=tuple(lanes), speed=speed, signal=signal)
