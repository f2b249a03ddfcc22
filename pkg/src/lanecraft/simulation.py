"""Closed-loop synthetic world: privileged annotation, stepping, episodes, metrics.

The runner alternates a 2 Hz perceive-and-plan tick with a 10 Hz control tick
that reuses the latest trajectory. Perception is either the privileged
annotator (ground truth rendered as a lane scene) or the full network path.
Episode results mirror benchmark conventions: route completion in [0, 1], an
infraction score that multiplies a penalty per event, and their product as
the composite driving score.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace

import numpy as np

from .controller import ControlCommand, MpcConfig, VehicleState, bicycle_step, track
from .double_edge import (
    DoubleEdge,
    Edge,
    SceneAnnotation,
    TargetPoint,
    validate,
)
from .fusion import fuse
from .geometry import (
    arc_lengths,
    convex_overlap,
    densify,
    point_in_polygon,
    polyline_point_at,
    project_to_polyline,
    rect_footprint,
    tangent_at,
)
from .interpreter import assemble_trajectory, binarize, generate_path, stop_decision
from .perception import FULL_CONFIG, NetConfig, PerceptionNet
from .scenarios import ScenarioSpec
from .target_planner import TargetPlanner

EGO_HALF_LENGTH = 2.25
EGO_HALF_WIDTH = 1.0
CONTROL_DT = 0.1
CONTROL_TICKS_PER_PLAN = 5  # planning at 2 Hz, control at 10 Hz
EPISODE_TIMEOUT_S = 120.0
ROUTE_COVER_DIST = 3.0
ROUTE_DEVIATION_DIST = 5.0
COMPLETION_SLACK = 0.3

INFRACTION_PENALTIES = {
    "collision": 0.5,
    "red_light": 0.7,
    "wrong_direction": 0.7,
    "route_deviation": 0.8,
}


class InvariantBreach(RuntimeError):
    """An internal consistency check failed while running an episode."""


@dataclass(frozen=True)
class SceneConfig:
    """Annotation parameters; points_per_lane counts both edges together.

    The plan corridor must span at least two lane sample spacings (a BEV-wide
    lane yields roughly 7.5 m between points at the default density), or the
    path can degenerate to a single point and latch the stop rule.
    """

    points_per_lane: int = 20
    bev_range: tuple[float, float] = (32.0, 32.0)
    plan_corridor: float = 16.0
    plan_back: float = 2.0
    plan_spacing: float = 5.0  # min route-arc separation between plan-marked points


@dataclass(frozen=True)
class RunConfig:
    mode: str = "oracle"  # "oracle" or "network"
    tgp: bool = True  # target-guided planning attention
    hef: bool = True  # feature-level fusion gate
    dlf: bool = True  # result-level stop fusion
    occ_noise: float = 0.0  # probability of flipping each occupancy bit
    timeout: float = EPISODE_TIMEOUT_S
    net_config: NetConfig = FULL_CONFIG
    weights_seed: int = 0
    feature_seed: int = 0
    gamma: float = 0.0

    def __post_init__(self):
        if self.mode not in ("oracle", "network"):
            raise ValueError(f"mode must be 'oracle' or 'network', got '{self.mode}'")
        if not 0.0 <= self.occ_noise <= 1.0:
            raise ValueError("occ_noise must be in [0, 1]")


@dataclass(frozen=True)
class WorldState:
    t: float
    ego: VehicleState
    agents: tuple  # current convex footprints, world frame
    signal: str


@dataclass(frozen=True)
class EpisodeResult:
    kind: str
    seed: int
    mode: str
    rc: float
    infractions: tuple[tuple[float, str], ...]
    is_score: float
    ds: float
    ticks: int
    completed: bool
    wall_ms_per_tick: tuple[float, ...]

    def to_dict(self) -> dict:
        wall = list(self.wall_ms_per_tick)
        return {
            "kind": self.kind,
            "seed": self.seed,
            "mode": self.mode,
            "rc": self.rc,
            "is_score": self.is_score,
            "ds": self.ds,
            "ticks": self.ticks,
            "completed": self.completed,
            "infractions": [[t, kind] for t, kind in self.infractions],
            "wall_ms_per_tick": wall,
            "wall_ms_median": float(np.median(wall)) if wall else 0.0,
        }


def signal_at(schedule, t: float) -> str:
    state = "none"
    for at, value in schedule:
        if t >= at:
            state = value
    return state


def agent_footprint_at(agent, t: float) -> np.ndarray:
    base = np.asarray(agent.footprint, dtype=np.float64)
    return base + t * np.asarray(agent.velocity, dtype=np.float64)


def init_world(spec: ScenarioSpec) -> WorldState:
    route = np.asarray(spec.route, dtype=np.float64)
    tx, ty = tangent_at(route, 0.0)
    ego = VehicleState(x=float(route[0, 0]), y=float(route[0, 1]), yaw=math.atan2(ty, tx), v=0.0)
    agents = tuple(agent_footprint_at(a, 0.0) for a in spec.agents)
    return WorldState(t=0.0, ego=ego, agents=agents, signal=signal_at(spec.signal_schedule, 0.0))


def step(world: WorldState, spec: ScenarioSpec, command: ControlCommand, dt: float, wheelbase: float = 2.8) -> WorldState:
    """Advance ego by the bicycle model and agents by their scripted velocities."""
    t = world.t + dt
    return WorldState(
        t=t,
        ego=bicycle_step(world.ego, command, dt, wheelbase),
        agents=tuple(agent_footprint_at(a, t) for a in spec.agents),
        signal=signal_at(spec.signal_schedule, t),
    )


class _LaneCache:
    def __init__(self, lane):
        self.width = lane.width
        self.intersection = lane.intersection
        self.on_route = lane.on_route
        self.samples, self.s, self.tangents = densify(np.asarray(lane.centerline, dtype=np.float64), 0.5)
        normals = np.stack([-self.tangents[:, 1], self.tangents[:, 0]], axis=1)
        left = self.samples + normals * (lane.width / 2.0)
        right = self.samples - normals * (lane.width / 2.0)
        self.ring = np.concatenate([left, right[::-1]], axis=0)


class ScenarioCache:
    """Episode-constant geometry derived from a scenario spec."""

    def __init__(self, spec: ScenarioSpec):
        self.spec = spec
        self.route = np.asarray(spec.route, dtype=np.float64)
        self.route_s_end = float(arc_lengths(self.route)[-1])
        tx, ty = tangent_at(self.route, self.route_s_end)
        # Plan labels extend a short way past the goal so the path never
        # collapses to a single point right before completion.
        ext = self.route[-1] + 12.0 * np.array([tx, ty])
        self.label_route = np.vstack([self.route, ext])
        self.lanes = [_LaneCache(lane) for lane in spec.lanes]
        self.int_rings = [lc.ring for lc in self.lanes if lc.intersection]
        self.agent_radii = [
            float(np.max(np.hypot(*(np.asarray(a.footprint).T - np.mean(a.footprint, axis=0)[:, None])))) + 0.1
            for a in spec.agents
        ]


def _cells_occupied(left_lo, left_hi, right_lo, right_hi, agents, agent_radii) -> np.ndarray:
    """Occupancy bit per lane cell: 1 = free, 0 = some agent overlaps the cell."""
    n = left_lo.shape[0]
    occ = np.ones(n, dtype=np.int64)
    if not agents:
        return occ
    centers = (left_lo + right_hi) / 2.0
    cell_radius = np.max(
        [np.hypot(*(left_lo - centers).T), np.hypot(*(right_lo - centers).T)], initial=0.0
    ) + np.max(np.hypot(*(left_hi - left_lo).T), initial=0.0)
    for agent, radius in zip(agents, agent_radii):
        apos = np.mean(agent, axis=0)
        near = np.hypot(centers[:, 0] - apos[0], centers[:, 1] - apos[1]) <= radius + cell_radius + 0.5
        for j in np.nonzero(near)[0]:
            cell = np.stack([left_lo[j], left_hi[j], right_hi[j], right_lo[j]])
            if convex_overlap(cell, np.asarray(agent)):
                occ[j] = 0
    return occ


def annotate(
    world: WorldState,
    spec: ScenarioSpec,
    cfg: SceneConfig = SceneConfig(),
    cache: ScenarioCache | None = None,
) -> tuple[SceneAnnotation, TargetPoint]:
    """Privileged ground-truth annotation of the current world in the ego frame.

    Lanes are clipped to the BEV extent and resampled to a fixed point count.
    Intersection comes from the lane network, direction compares the lane
    heading with the route heading at the ego, occupancy tests agent footprints
    against per-point lane cells, and plan marks the route corridor ahead of
    the ego at waypoint granularity (one point per ``plan_spacing`` meters of
    route arc). The returned target sits ``spec.target_lead`` meters down route.
    """
    if cache is None:
        cache = ScenarioCache(spec)
    ego = world.ego
    cos_y, sin_y = math.cos(ego.yaw), math.sin(ego.yaw)
    origin = np.array([ego.x, ego.y])

    def to_ego(pts: np.ndarray) -> np.ndarray:
        d = np.atleast_2d(pts) - origin
        return np.stack([cos_y * d[:, 0] + sin_y * d[:, 1], -sin_y * d[:, 0] + cos_y * d[:, 1]], axis=1)

    s_ego, _ = project_to_polyline(cache.route, np.array([[ego.x, ego.y]]))
    s_ego = float(s_ego[0])
    route_dir = np.array(tangent_at(cache.route, s_ego))

    n = cfg.points_per_lane // 2
    rx, ry = cfg.bev_range
    visible = []
    for lc in cache.lanes:
        pe = to_ego(lc.samples)
        margin_x = rx - lc.width / 2.0 - 0.25
        margin_y = ry - lc.width / 2.0 - 0.25
        inside = (np.abs(pe[:, 0]) <= margin_x) & (np.abs(pe[:, 1]) <= margin_y)
        if not inside.any():
            continue
        idx = np.nonzero(inside)[0]
        s_lo, s_hi = lc.s[idx[0]], lc.s[idx[-1]]
        if s_hi - s_lo < 1.0:
            continue
        sv = np.linspace(s_lo, s_hi, n)
        half = (s_hi - s_lo) / (n - 1) / 2.0

        def at(sq):
            cx = np.interp(sq, lc.s, lc.samples[:, 0])
            cy = np.interp(sq, lc.s, lc.samples[:, 1])
            tx = np.interp(sq, lc.s, lc.tangents[:, 0])
            ty = np.interp(sq, lc.s, lc.tangents[:, 1])
            norm = np.maximum(np.hypot(tx, ty), 1e-9)
            tx, ty = tx / norm, ty / norm
            centers = np.stack([cx, cy], axis=1)
            normal = np.stack([-ty, tx], axis=1)
            return centers + normal * (lc.width / 2.0), centers - normal * (lc.width / 2.0), centers

        left_w, right_w, centers_w = at(sv)
        left_lo, right_lo, _ = at(np.maximum(sv - half, s_lo))
        left_hi, right_hi, _ = at(np.minimum(sv + half, s_hi))

        occ = _cells_occupied(left_lo, left_hi, right_lo, right_hi, world.agents, cache.agent_radii)
        mid = n // 2
        lane_dir = np.array(tangent_at(lc.samples, float(sv[mid])))
        direction = int(float(lane_dir @ route_dir) > 0.0)
        visible.append(
            {
                "cache": lc,
                "left": to_ego(left_w),
                "right": to_ego(right_w),
                "centers_w": centers_w,
                "occ": occ,
                "plan": np.zeros(n, dtype=np.int64),
                "direction": direction,
            }
        )

    # Plan labels: corridor candidates across all route lanes, thinned to one
    # point per plan_spacing meters of route arc so dense short lanes do not
    # over-mark the corridor.
    candidates = []
    for li, entry in enumerate(visible):
        if not entry["cache"].on_route:
            continue
        s_p, d_p = project_to_polyline(cache.label_route, entry["centers_w"])
        mask = (d_p <= entry["cache"].width * 0.6) & (s_p >= s_ego - cfg.plan_back) & (
            s_p <= s_ego + cfg.plan_corridor
        )
        for j in np.nonzero(mask)[0]:
            candidates.append((float(s_p[j]), li, int(j)))
    candidates.sort()
    last_kept = -math.inf
    for s_p, li, j in candidates:
        if s_p - last_kept >= cfg.plan_spacing:
            visible[li]["plan"][j] = 1
            last_kept = s_p

    lanes_out = [
        DoubleEdge(
            left=Edge.from_arrays(entry["left"], entry["occ"], entry["plan"]),
            right=Edge.from_arrays(entry["right"], entry["occ"], entry["plan"]),
            intersection=int(entry["cache"].intersection),
            direction=entry["direction"],
        )
        for entry in visible
    ]
    scene = SceneAnnotation(lanes=tuple(lanes_out), speed=float(spec.speed_limit), signal=world.signal)
    tx, ty = polyline_point_at(cache.route, min(s_ego + spec.target_lead, cache.route_s_end))
    target_e = to_ego(np.array([[tx, ty]]))[0]
    return scene, TargetPoint(float(target_e[0]), float(target_e[1]))


def flip_occ_bits(scene: SceneAnnotation, rate: float, rng: np.random.Generator) -> SceneAnnotation:
    """Independently flip each occupancy bit with probability ``rate``."""
    lanes = []
    for lane in scene.lanes:
        new_edges = []
        for edge in (lane.left, lane.right):
            flips = rng.random(len(edge)) < rate
            new_edges.append(
                Edge(
                    tuple(
                        replace(p, occ=int(p.occ ^ 1) if flip else p.occ)
                        for p, flip in zip(edge.points, flips)
                    )
                )
            )
        lanes.append(replace(lane, left=new_edges[0], right=new_edges[1]))
    return replace(scene, lanes=tuple(lanes))


def route_completion(route: np.ndarray, trace_xy: np.ndarray, cover_dist: float = ROUTE_COVER_DIST) -> float:
    """Fraction of route samples with an ego trace point within ``cover_dist``."""
    samples, _, _ = densify(np.asarray(route, dtype=np.float64), 0.5)
    d2 = (samples[:, None, 0] - trace_xy[None, :, 0]) ** 2 + (samples[:, None, 1] - trace_xy[None, :, 1]) ** 2
    covered = np.sqrt(d2.min(axis=1)) <= cover_dist
    return float(np.count_nonzero(covered) / covered.size)


def infraction_score(infractions) -> float:
    score = 1.0
    for _, kind in infractions:
        score *= INFRACTION_PENALTIES[kind]
    return score


def _ego_footprint(ego: VehicleState) -> np.ndarray:
    return rect_footprint(ego.x, ego.y, ego.yaw, EGO_HALF_LENGTH, EGO_HALF_WIDTH)


def _relative_state(ego: VehicleState, capture: VehicleState) -> VehicleState:
    """Current ego state expressed in the frame the trajectory was planned in."""
    dx = ego.x - capture.x
    dy = ego.y - capture.y
    cos_y, sin_y = math.cos(capture.yaw), math.sin(capture.yaw)
    return VehicleState(
        x=cos_y * dx + sin_y * dy,
        y=-sin_y * dx + cos_y * dy,
        yaw=ego.yaw - capture.yaw,
        v=ego.v,
    )


class _InfractionTracker:
    def __init__(self, cache: ScenarioCache):
        self.cache = cache
        self.inside_int = False
        self.wrong_dir_latch = False

    def check(self, world: WorldState) -> list[str]:
        events = []
        ego = world.ego
        foot = _ego_footprint(ego)
        for agent, radius in zip(world.agents, self.cache.agent_radii):
            apos = np.mean(agent, axis=0)
            if math.hypot(ego.x - apos[0], ego.y - apos[1]) > radius + 3.0:
                continue
            if convex_overlap(foot, np.asarray(agent)):
                events.append("collision")
                break

        inside = any(point_in_polygon(ego.x, ego.y, ring) for ring in self.cache.int_rings)
        if inside and not self.inside_int and world.signal == "red":
            events.append("red_light")
        self.inside_int = inside

        if ego.v > 1.0:
            heading = np.array([math.cos(ego.yaw), math.sin(ego.yaw)])
            containing = [
                lc for lc in self.cache.lanes if point_in_polygon(ego.x, ego.y, lc.ring)
            ]
            if containing:
                aligned = False
                for lc in containing:
                    s_p, _ = project_to_polyline(lc.samples, np.array([[ego.x, ego.y]]))
                    if float(np.array(tangent_at(lc.samples, float(s_p[0]))) @ heading) >= 0.0:
                        aligned = True
                        break
                if not aligned and not self.wrong_dir_latch:
                    events.append("wrong_direction")
                    self.wrong_dir_latch = True
                if aligned:
                    self.wrong_dir_latch = False

        _, dev = project_to_polyline(self.cache.route, np.array([[ego.x, ego.y]]))
        if float(dev[0]) > ROUTE_DEVIATION_DIST:
            events.append("route_deviation")
        return events


def run_episode(
    spec: ScenarioSpec,
    config: RunConfig = RunConfig(),
    *,
    net: PerceptionNet | None = None,
    planner: TargetPlanner | None = None,
    mpc: MpcConfig | None = None,
    scene_cfg: SceneConfig | None = None,
    cache: ScenarioCache | None = None,
    validate_first: bool = True,
) -> tuple[EpisodeResult, list[dict]]:
    """Run one closed-loop episode; returns the result and a per-tick trace.

    The trace holds no timing fields, so identical inputs reproduce it
    byte-for-byte; wall-clock numbers live only in the result.
    """
    if scene_cfg is None:
        points = config.net_config.points_per_lane if config.mode == "network" else SceneConfig.points_per_lane
        scene_cfg = SceneConfig(points_per_lane=points)
    if mpc is None:
        mpc = MpcConfig()
    if cache is None:
        cache = ScenarioCache(spec)
    if config.mode == "network":
        if net is None:
            net = PerceptionNet(config.net_config, seed=config.weights_seed)
        if planner is None:
            planner = TargetPlanner(config.net_config, seed=config.weights_seed)

    world = init_world(spec)
    tracker = _InfractionTracker(cache)
    trajectory = None
    plan_pose = world.ego  # frame the current trajectory is expressed in
    infractions: list[tuple[float, str]] = []
    trace: list[dict] = []
    wall_ms: list[float] = []
    ego_xy = [(world.ego.x, world.ego.y)]
    tick = 0
    completed = False
    collided = False
    aborted = False

    while world.t < config.timeout - 1e-9 and not (collided or completed or aborted):
        if tick % CONTROL_TICKS_PER_PLAN == 0:
            t0 = time.perf_counter()
            scene, target = annotate(world, spec, scene_cfg, cache)
            if validate_first and tick == 0:
                problems = validate(
                    scene,
                    bev_range=scene_cfg.bev_range,
                    points_per_edge=scene_cfg.points_per_lane // 2,
                )
                if problems:
                    raise InvariantBreach(f"annotation violates scene invariants: {problems[:3]}")
            if config.occ_noise > 0.0:
                rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0x0CC, tick]))
                scene = flip_occ_bits(scene, config.occ_noise, rng)
            if config.mode == "network":
                bundle, pout = net.forward(scene, config.feature_seed)
                gamma = config.gamma if config.hef else 0.0
                f_plan = fuse(bundle.f_int, bundle.f_dir, bundle.f_occ, bundle.f_double_edge, gamma)
                plan_out = planner.predict(target, f_plan, use_target_attention=config.tgp)
                scene = binarize(pout, plan_out)
            path = generate_path(scene)
            stop = stop_decision(scene, path) if config.dlf else False
            trajectory = assemble_trajectory(path, scene.speed, stop)
            plan_pose = world.ego
            wall_ms.append((time.perf_counter() - t0) * 1000.0)

        if not trajectory.path and not trajectory.stop:
            command = ControlCommand(steer=0.0, throttle=0.0, brake=1.0)  # no plan: hold
        else:
            command = track(trajectory, _relative_state(world.ego, plan_pose), mpc)
        world = step(world, spec, command, CONTROL_DT)
        ego_xy.append((world.ego.x, world.ego.y))

        events = tracker.check(world)
        for kind in events:
            infractions.append((world.t, kind))
            if kind == "collision":
                collided = True
            if kind == "route_deviation":
                aborted = True  # the ego left the route corridor

        s_ego, dev = project_to_polyline(cache.route, np.array([[world.ego.x, world.ego.y]]))
        if float(s_ego[0]) >= cache.route_s_end - COMPLETION_SLACK and float(dev[0]) <= 2.0:
            completed = True

        trace.append(
            {
                "t": round(world.t, 6),
                "ego": {"x": world.ego.x, "y": world.ego.y, "yaw": world.ego.yaw, "v": world.ego.v},
                "command": {"steer": command.steer, "throttle": command.throttle, "brake": command.brake},
                "stop": bool(trajectory.stop),
                "infractions": events,
            }
        )
        tick += 1

    rc = route_completion(cache.route, np.asarray(ego_xy))
    is_score = infraction_score(infractions)
    ds = rc * is_score
    if abs(ds - rc * is_score) > 1e-9:  # composite law; defensive
        raise InvariantBreach("driving score is not rc * infraction score")
    result = EpisodeResult(
        kind=spec.kind,
        seed=spec.seed,
        mode=config.mode,
        rc=rc,
        infractions=tuple(infractions),
        is_score=is_score,
        ds=ds,
        ticks=tick,
        completed=completed and not (collided or aborted),
        wall_ms_per_tick=tuple(wall_ms),
    )
    return result, trace
