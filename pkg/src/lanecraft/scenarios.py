"""Deterministic synthetic scenario generation.

Each scenario kind builds a small world-frame lane network, a driving route
along it, scripted traffic agents, and a signal schedule. Geometry is jittered
slightly per seed but fully deterministic for a given (seed, kind).
The ego always spawns at the route start heading along the route.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import arc_lengths, densify, polyline_point_at, rect_footprint

SCENARIO_KINDS = ("straight", "curve", "intersection", "multi_lane", "blocked_lane", "red_light")
LANE_WIDTH = 3.5
DEFAULT_SPEED_LIMIT = 7.0
DEFAULT_TARGET_LEAD = 20.0

_AGENT_HALF_LEN = 2.2
_AGENT_HALF_WID = 0.9


class ScenarioFormatError(ValueError):
    """Raised for malformed scenario payloads."""


@dataclass(frozen=True)
class WorldLane:
    centerline: tuple[tuple[float, float], ...]  # ordered along the travel direction
    width: float = LANE_WIDTH
    intersection: bool = False
    on_route: bool = False


@dataclass(frozen=True)
class AgentSpec:
    footprint: tuple[tuple[float, float], ...]  # convex CCW corners at t=0, world frame
    velocity: tuple[float, float] = (0.0, 0.0)
    lane: int = -1  # index into the lane list, -1 if unbound


@dataclass(frozen=True)
class ScenarioSpec:
    seed: int
    kind: str
    lanes: tuple[WorldLane, ...]
    route: tuple[tuple[float, float], ...]
    agents: tuple[AgentSpec, ...]
    signal_schedule: tuple[tuple[float, str], ...]  # (activation time, state), sorted
    speed_limit: float = DEFAULT_SPEED_LIMIT
    target_lead: float = DEFAULT_TARGET_LEAD


def _pts(seq) -> tuple[tuple[float, float], ...]:
    return tuple((float(x), float(y)) for x, y in seq)


def _line(x0, y0, x1, y1) -> tuple[tuple[float, float], ...]:
    return ((float(x0), float(y0)), (float(x1), float(y1)))


def _curve_centerline(lead: float, radius: float, tail: float) -> tuple[tuple[float, float], ...]:
    pts = [(-10.0, 0.0), (lead, 0.0)]
    n_arc = 18
    for k in range(1, n_arc + 1):
        ang = (math.pi / 2.0) * k / n_arc
        pts.append((lead + radius * math.sin(ang), radius * (1.0 - math.cos(ang))))
    end_x, end_y = pts[-1]
    pts.append((end_x, end_y + tail))
    return _pts(pts)


def _slice_polyline(points, s_from: float, s_to: float, step: float = 2.0) -> tuple[tuple[float, float], ...]:
    """Sub-polyline between two arc positions, endpoints interpolated exactly."""
    pts = np.asarray(points, dtype=np.float64)
    samples, s, _ = densify(pts, step)
    inner = samples[(s > s_from + 1e-6) & (s < s_to - 1e-6)]
    head = polyline_point_at(pts, s_from)
    tail = polyline_point_at(pts, s_to)
    return _pts([head, *inner, tail])


def _parked_agent(x: float, y: float, yaw: float = 0.0, velocity=(0.0, 0.0), lane: int = -1) -> AgentSpec:
    return AgentSpec(
        footprint=_pts(rect_footprint(x, y, yaw, _AGENT_HALF_LEN, _AGENT_HALF_WID)),
        velocity=(float(velocity[0]), float(velocity[1])),
        lane=lane,
    )


def gen_scenario(seed: int, kind: str) -> ScenarioSpec:
    """Build the deterministic scenario for (seed, kind)."""
    if kind not in SCENARIO_KINDS:
        raise ValueError(f"unknown scenario kind '{kind}' (choose from {SCENARIO_KINDS})")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), SCENARIO_KINDS.index(kind)]))
    jitter = rng.uniform(0.0, 1.0, 4)
    route_len = 50.0 + 4.0 * jitter[0]
    lanes: list[WorldLane]
    agents: tuple[AgentSpec, ...] = ()
    schedule: tuple[tuple[float, str], ...] = ()
    speed = DEFAULT_SPEED_LIMIT

    if kind == "straight":
        lanes = [WorldLane(_line(-10, 0, 70, 0), on_route=True)]
        route = _line(0, 0, route_len, 0)
    elif kind == "curve":
        radius = 18.0 + 4.0 * jitter[1]
        center = _curve_centerline(15.0, radius, 24.0)
        lanes = [WorldLane(center, on_route=True)]
        # Route: from the ego spawn (10 m into the lane) to 14 m before the
        # lane end, so plan labels survive past the goal.
        total = float(arc_lengths(np.asarray(center))[-1])
        route = _slice_polyline(center, 10.0, total - 14.0)
        speed = 5.0
    elif kind in ("intersection", "red_light"):
        lanes = [
            WorldLane(_line(-10, 0, 24, 0), on_route=True),
            WorldLane(_line(24, 0, 40, 0), intersection=True, on_route=True),
            WorldLane(_line(40, 0, 80, 0), on_route=True),
            WorldLane(_line(32, -30, 32, -8)),
            WorldLane(_line(32, -8, 32, 8), intersection=True),
            WorldLane(_line(32, 8, 32, 30)),
        ]
        route = _line(0, 0, 58.0 + 4.0 * jitter[0], 0)
        if kind == "red_light":
            schedule = ((0.0, "red"), (8.0, "green"))
    elif kind == "multi_lane":
        lanes = [
            WorldLane(_line(-10, 0, 70, 0), on_route=True),
            WorldLane(_line(-10, LANE_WIDTH, 70, LANE_WIDTH)),
            WorldLane(_line(70, -LANE_WIDTH, -10, -LANE_WIDTH)),  # opposing traffic
        ]
        route = _line(0, 0, route_len, 0)
        agents = (_parked_agent(25.0 + 4.0 * jitter[1], -LANE_WIDTH, math.pi, velocity=(-2.0, 0.0), lane=2),)
    elif kind == "blocked_lane":
        lanes = [WorldLane(_line(-10, 0, 70, 0), on_route=True)]
        route = _line(0, 0, 52.0, 0)
        agents = (_parked_agent(26.0 + 3.0 * jitter[1], 0.0, lane=0),)
    else:  # pragma: no cover - guarded above
        raise AssertionError(kind)

    return ScenarioSpec(
        seed=int(seed),
        kind=kind,
        lanes=tuple(lanes),
        route=_pts(route),
        agents=agents,
        signal_schedule=schedule,
        speed_limit=speed,
        target_lead=DEFAULT_TARGET_LEAD,
    )


def spec_to_dict(spec: ScenarioSpec) -> dict:
    return {
        "seed": spec.seed,
        "kind": spec.kind,
        "lanes": [
            {
                "centerline": [[x, y] for x, y in lane.centerline],
                "width": lane.width,
                "intersection": lane.intersection,
                "on_route": lane.on_route,
            }
            for lane in spec.lanes
        ],
        "route": [[x, y] for x, y in spec.route],
        "agents": [
            {"footprint": [[x, y] for x, y in a.footprint], "velocity": list(a.velocity), "lane": a.lane}
            for a in spec.agents
        ],
        "signal_schedule": [[t, state] for t, state in spec.signal_schedule],
        "speed_limit": spec.speed_limit,
        "target_lead": spec.target_lead,
    }


def spec_from_dict(raw: dict) -> ScenarioSpec:
    try:
        return ScenarioSpec(
            seed=int(raw["seed"]),
            kind=str(raw["kind"]),
            lanes=tuple(
                WorldLane(
                    centerline=_pts(lane["centerline"]),
                    width=float(lane["width"]),
                    intersection=bool(lane["intersection"]),
                    on_route=bool(lane["on_route"]),
                )
                for lane in raw["lanes"]
            ),
            route=_pts(raw["route"]),
            agents=tuple(
                AgentSpec(
                    footprint=_pts(a["footprint"]),
                    velocity=(float(a["velocity"][0]), float(a["velocity"][1])),
                    lane=int(a.get("lane", -1)),
                )
                for a in raw["agents"]
            ),
            signal_schedule=tuple((float(t), str(state)) for t, state in raw["signal_schedule"]),
            speed_limit=float(raw["speed_limit"]),
            target_lead=float(raw["target_lead"]),
        )
    except (KeyError, TypeError, IndexError) as exc:
        raise ScenarioFormatError(f"bad scenario payload: {exc!r}") from exc


def save_scenario(spec: ScenarioSpec, path) -> None:
    Path(path).write_text(
        json.dumps(spec_to_dict(spec), sort_keys=True, separators=(",", ":")) + "\n", encoding="utf-8"
    )


def load_scenario(path) -> ScenarioSpec:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ScenarioFormatError(f"parse error at byte {exc.pos}: {exc.msg}") from exc
    return spec_from_dict(raw)
