"""Receding-horizon trajectory follower over a kinematic bicycle model.

The optimizer is a deterministic coordinate descent over a discretized control
lattice (7 steer x 5 acceleration candidates per horizon step): sweeping the
horizon in order, each step's command is re-picked by rolling out the full
horizon with the other steps held fixed. Only the first command is applied.
Steer candidates are ordered by magnitude so exact cost ties resolve toward
straight steering, which keeps the controller mirror-symmetric.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

STEER_MAX = math.radians(35.0)
MAX_ACCEL = 3.0  # m/s^2 at full throttle
MAX_DECEL = 8.0  # m/s^2 at full brake
DRAG = 0.05  # velocity decay per second

_STEER_LATTICE = (0.0, -1.0 / 3.0, 1.0 / 3.0, -2.0 / 3.0, 2.0 / 3.0, -1.0, 1.0)
_ACCEL_LATTICE = (-8.0, -4.0, -1.0, 0.0, 3.0)


class NoPathError(ValueError):
    """Raised when asked to track an empty path without a stop flag."""


def _wrap(angle: float) -> float:
    """Wrap to (-pi, pi]; in-range values pass through untouched."""
    if -math.pi < angle <= math.pi:
        return angle
    wrapped = math.fmod(angle + math.pi, 2.0 * math.pi)
    if wrapped <= 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    yaw: float
    v: float

    def __post_init__(self):
        object.__setattr__(self, "yaw", _wrap(self.yaw))
        if self.v < 0:
            raise ValueError(f"speed must be non-negative, got {self.v}")


@dataclass(frozen=True)
class ControlCommand:
    steer: float  # [-1, 1], positive turns left
    throttle: float  # [0, 1]
    brake: float  # [0, 1]

    def __post_init__(self):
        if not -1.0 <= self.steer <= 1.0:
            raise ValueError(f"steer out of range: {self.steer}")
        if not 0.0 <= self.throttle <= 1.0:
            raise ValueError(f"throttle out of range: {self.throttle}")
        if not 0.0 <= self.brake <= 1.0:
            raise ValueError(f"brake out of range: {self.brake}")
        if self.throttle > 0.0 and self.brake > 0.0:
            raise ValueError("throttle and brake may not both be applied")


@dataclass(frozen=True)
class MpcConfig:
    horizon: int = 8
    dt: float = 0.1
    wheelbase: float = 2.8
    w_crosstrack: float = 2.0
    w_heading: float = 1.0
    w_speed: float = 0.5
    w_steer_rate: float = 0.5
    sweeps: int = 2

    def __post_init__(self):
        if self.horizon < 1 or self.dt <= 0:
            raise ValueError("horizon must be >= 1 and dt > 0")


def bicycle_step(state: VehicleState, command: ControlCommand, dt: float, wheelbase: float = 2.8) -> VehicleState:
    """Explicit-Euler kinematic bicycle update; speed is clamped at zero."""
    accel = MAX_ACCEL * command.throttle - MAX_DECEL * command.brake
    nx = state.x + state.v * math.cos(state.yaw) * dt
    ny = state.y + state.v * math.sin(state.yaw) * dt
    nyaw = state.yaw + state.v / wheelbase * math.tan(STEER_MAX * command.steer) * dt
    nv = max(0.0, state.v + (accel - DRAG * state.v) * dt)
    return VehicleState(x=nx, y=ny, yaw=nyaw, v=nv)


def _accel_to_command(steer: float, accel: float) -> ControlCommand:
    if accel >= 0.0:
        return ControlCommand(steer=steer, throttle=min(1.0, accel / MAX_ACCEL), brake=0.0)
    return ControlCommand(steer=steer, throttle=0.0, brake=min(1.0, -accel / MAX_DECEL))


def _step_arrays(x, y, yaw, v, steer, accel, dt, wheelbase):
    """Vectorized bicycle update matching bicycle_step exactly."""
    nx = x + v * np.cos(yaw) * dt
    ny = y + v * np.sin(yaw) * dt
    nyaw = yaw + v / wheelbase * np.tan(STEER_MAX * steer) * dt
    nv = np.maximum(0.0, v + (accel - DRAG * v) * dt)
    return nx, ny, nyaw, nv


class _PathFrame:
    """Crosstrack and heading queries against a path polyline."""

    def __init__(self, path: np.ndarray):
        self.points = path
        if path.shape[0] >= 2:
            deltas = np.diff(path, axis=0)
            keep = np.einsum("ij,ij->i", deltas, deltas) > 1e-12
            if np.any(keep):
                self.a = path[:-1][keep]
                self.d = deltas[keep]
                self.len2 = np.einsum("ij,ij->i", self.d, self.d)
                self.heading = np.arctan2(self.d[:, 1], self.d[:, 0])
                return
        self.a = None

    def errors(self, x, y, yaw):
        """Squared crosstrack distance and wrapped heading error per query."""
        if self.a is None:
            dx = x - self.points[0, 0]
            dy = y - self.points[0, 1]
            return dx * dx + dy * dy, np.zeros_like(np.asarray(yaw, dtype=np.float64))
        qx = np.asarray(x, dtype=np.float64)[..., None] - self.a[:, 0]
        qy = np.asarray(y, dtype=np.float64)[..., None] - self.a[:, 1]
        t = np.clip((qx * self.d[:, 0] + qy * self.d[:, 1]) / self.len2, 0.0, 1.0)
        ex = qx - t * self.d[:, 0]
        ey = qy - t * self.d[:, 1]
        dist2 = ex * ex + ey * ey
        nearest = np.argmin(dist2, axis=-1)
        ct2 = np.take_along_axis(dist2, nearest[..., None], axis=-1)[..., 0]
        diff = np.asarray(yaw, dtype=np.float64) - self.heading[nearest]
        herr = np.arctan2(np.sin(diff), np.cos(diff))
        return ct2, herr


def track(trajectory, state: VehicleState, cfg: MpcConfig = MpcConfig()) -> ControlCommand:
    """Pick the next control command for a trajectory.

    A stop trajectory maps straight to full brake. Otherwise the lattice
    coordinate descent minimizes accumulated crosstrack, heading, speed, and
    steer-rate costs over the horizon, and the first command is returned.
    """
    if trajectory.stop:
        return ControlCommand(steer=0.0, throttle=0.0, brake=1.0)
    path = np.asarray(trajectory.path, dtype=np.float64).reshape(-1, 2)
    if path.shape[0] == 0:
        raise NoPathError("no path to track")
    frame = _PathFrame(path)
    v_ref = float(trajectory.speed)
    horizon, dt, wb = cfg.horizon, cfg.dt, cfg.wheelbase

    steer_grid, accel_grid = np.meshgrid(_STEER_LATTICE, _ACCEL_LATTICE, indexing="ij")
    steer_grid = steer_grid.reshape(-1)
    accel_grid = accel_grid.reshape(-1)

    def state_cost(x, y, yaw, v):
        ct2, herr = frame.errors(x, y, yaw)
        return cfg.w_crosstrack * ct2 + cfg.w_heading * herr * herr + cfg.w_speed * (v - v_ref) ** 2

    plan_steer = np.zeros(horizon)
    plan_accel = np.zeros(horizon)
    for _ in range(cfg.sweeps):
        px, py, pyaw, pv = state.x, state.y, state.yaw, state.v
        prev_steer = 0.0
        for t in range(horizon):
            sx, sy, syaw, sv = _step_arrays(px, py, pyaw, pv, steer_grid, accel_grid, dt, wb)
            cost = state_cost(sx, sy, syaw, sv) + cfg.w_steer_rate * (steer_grid - prev_steer) ** 2
            last_steer = steer_grid
            rx, ry, ryaw, rv = sx, sy, syaw, sv
            for u in range(t + 1, horizon):
                rx, ry, ryaw, rv = _step_arrays(rx, ry, ryaw, rv, plan_steer[u], plan_accel[u], dt, wb)
                cost = cost + state_cost(rx, ry, ryaw, rv) + cfg.w_steer_rate * (plan_steer[u] - last_steer) ** 2
                last_steer = plan_steer[u]
            best = int(np.argmin(cost))
            plan_steer[t] = steer_grid[best]
            plan_accel[t] = accel_grid[best]
            px, py, pyaw, pv = _step_arrays(px, py, pyaw, pv, plan_steer[t], plan_accel[t], dt, wb)
            prev_steer = plan_steer[t]
    return _accel_to_command(float(plan_steer[0]), float(plan_accel[0]))
