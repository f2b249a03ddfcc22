"""Turns lane attribute maps into a drivable path, a stop decision, and a trajectory.

Path points are midpoints of left/right edge pairs where both plan bits are
set. The stop decision late-fuses perception: occupancy is only consulted on
lanes running with the ego route (direction attribute 1), a length-1 path
always stops, and a red signal stops any plan that crosses an intersection
lane.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .double_edge import DoubleEdge, Edge, EdgePoint, SceneAnnotation, SIGNAL_STATES

PLAN_THRESHOLD = 0.5


@dataclass(frozen=True)
class Trajectory:
    """Interpreter-to-controller contract; stop dominates the speed field."""

    path: tuple[tuple[float, float], ...]
    speed: float
    stop: bool

    def to_json(self) -> str:
        return json.dumps(
            {"path": [[x, y] for x, y in self.path], "speed": self.speed, "stop": self.stop},
            sort_keys=True,
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, payload: str) -> "Trajectory":
        raw = json.loads(payload)
        return cls(
            path=tuple((float(x), float(y)) for x, y in raw["path"]),
            speed=float(raw["speed"]),
            stop=bool(raw["stop"]),
        )


def binarize(perception, plan, tau: float = PLAN_THRESHOLD) -> SceneAnnotation:
    """Threshold predicted probabilities into a scene annotation.

    An attribute becomes 1 iff its probability is >= tau (ties round up);
    points are copied through unchanged. Idempotent on already-binary input.
    Points per lane are split first half left edge, second half right edge.
    """
    points = np.asarray(perception.points, dtype=np.float64)
    p_int = np.asarray(perception.p_int, dtype=np.float64)[:, 0]
    p_dir = np.asarray(perception.p_dir, dtype=np.float64)[:, 0]
    p_occ = np.asarray(perception.p_occ, dtype=np.float64)[:, :, 0]
    p_plan = np.asarray(plan.p_plan, dtype=np.float64)[:, :, 0]
    n_lanes, n_points, _ = points.shape
    half = n_points // 2
    lanes = []
    for d in range(n_lanes):
        occ_bits = (p_occ[d] >= tau).astype(int)
        plan_bits = (p_plan[d] >= tau).astype(int)
        left = Edge(
            tuple(
                EdgePoint(float(points[d, j, 0]), float(points[d, j, 1]), int(occ_bits[j]), int(plan_bits[j]))
                for j in range(half)
            )
        )
        right = Edge(
            tuple(
                EdgePoint(float(points[d, j, 0]), float(points[d, j, 1]), int(occ_bits[j]), int(plan_bits[j]))
                for j in range(half, n_points)
            )
        )
        lanes.append(
            DoubleEdge(
                left=left,
                right=right,
                intersection=int(p_int[d] >= tau),
                direction=int(p_dir[d] >= tau),
            )
        )
    signal = SIGNAL_STATES[int(np.argmax(perception.signal_logits))]
    return SceneAnnotation(lanes=tuple(lanes), speed=float(perception.speed), signal=signal)


def _lane_midpoints(lane: DoubleEdge) -> list[tuple[float, float]]:
    out = []
    for lp, rp in zip(lane.left.points, lane.right.points):
        if lp.plan == 1 and rp.plan == 1:
            out.append(((lp.x + rp.x) / 2.0, (lp.y + rp.y) / 2.0))
    return out


def generate_path(scene: SceneAnnotation) -> list[tuple[float, float]]:
    """Midpoints of plan-licensed edge pairs, ordered lane-by-lane then by index.

    Lanes are ordered by the distance of their first licensed midpoint from
    the ego origin; duplicates across lanes are preserved.
    """
    per_lane = []
    for idx, lane in enumerate(scene.lanes):
        mids = _lane_midpoints(lane)
        if mids:
            per_lane.append((math.hypot(*mids[0]), idx, mids))
    per_lane.sort(key=lambda entry: (entry[0], entry[1]))
    path: list[tuple[float, float]] = []
    for _, _, mids in per_lane:
        path.extend(mids)
    return path


def stop_decision(scene: SceneAnnotation, path) -> bool:
    """Late-fusion stop flag for a binarized scene.

    True iff any plan-marked point on a route-aligned lane is occupied, or the
    path has exactly one point, or the signal is red and the plan crosses an
    intersection lane. Occupancy on counter-direction lanes never stops.
    """
    if len(path) == 1:
        return True
    red = scene.signal == "red"
    for lane in scene.lanes:
        if red and lane.intersection == 1 and _lane_midpoints(lane):
            return True
        if lane.direction != 1:
            continue
        for edge in (lane.left, lane.right):
            for p in edge.points:
                if p.plan == 1 and p.occ == 0:
                    return True
    return False


def assemble_trajectory(path, speed: float, stop: bool) -> Trajectory:
    """Bundle path, target speed, and stop flag; rejects negative speed."""
    if speed < 0:
        raise ValueError(f"speed must be non-negative, got {speed}")
    return Trajectory(path=tuple((float(x), float(y)) for x, y in path), speed=float(speed), stop=bool(stop))
