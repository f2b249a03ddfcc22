import math

import numpy as np
import pytest

from lanecraft.controller import (
    ControlCommand,
    MpcConfig,
    NoPathError,
    VehicleState,
    bicycle_step,
    track,
)
from lanecraft.interpreter import assemble_trajectory


def straight_trajectory(length=50.0, speed=5.0, step=2.0):
    xs = np.arange(0.0, length + step, step)
    return assemble_trajectory([(float(x), 0.0) for x in xs], speed, False)


class TestVehicleState:
    def test_yaw_wrapped(self):
        s = VehicleState(0, 0, 3 * math.pi, 1.0)
        assert -math.pi < s.yaw <= math.pi

    def test_negative_speed_rejected(self):
        with pytest.raises(ValueError):
            VehicleState(0, 0, 0, -0.1)


class TestControlCommand:
    def test_range_checks(self):
        with pytest.raises(ValueError):
            ControlCommand(steer=1.5, throttle=0, brake=0)
        with pytest.raises(ValueError):
            ControlCommand(steer=0, throttle=-0.1, brake=0)

    def test_throttle_and_brake_exclusive(self):
        with pytest.raises(ValueError):
            ControlCommand(steer=0, throttle=0.5, brake=0.5)


class TestBicycleStep:
    def test_straight_symmetric(self):
        s = VehicleState(0, 0, 0, 5.0)
        out = bicycle_step(s, ControlCommand(0.0, 0.5, 0.0), 0.1)
        assert out.y == 0.0 and out.yaw == 0.0
        assert out.x == pytest.approx(0.5)

    def test_standstill_fixed_point(self):
        s = VehicleState(1.0, 2.0, 0.3, 0.0)
        out = bicycle_step(s, ControlCommand(0.0, 0.0, 0.0), 0.1)
        assert (out.x, out.y, out.yaw, out.v) == (1.0, 2.0, 0.3, 0.0)

    def test_full_brake_matches_continuous_oracle(self):
        # dv/dt = -(b + c v) with b = 8, c = 0.05 integrates to
        # v(t) = (v0 + b/c) exp(-c t) - b/c
        s = VehicleState(0, 0, 0, 10.0)
        for _ in range(10):
            s = bicycle_step(s, ControlCommand(0.0, 0.0, 1.0), 0.1)
        b_over_c = 8.0 / 0.05
        expected = (10.0 + b_over_c) * math.exp(-0.05) - b_over_c
        assert s.v == pytest.approx(expected, abs=0.05)

    def test_speed_clamped_at_zero(self):
        s = VehicleState(0, 0, 0, 0.2)
        out = bicycle_step(s, ControlCommand(0.0, 0.0, 1.0), 0.1)
        assert out.v == 0.0

    def test_left_steer_turns_left(self):
        s = VehicleState(0, 0, 0, 5.0)
        out = bicycle_step(s, ControlCommand(1.0, 0.0, 0.0), 0.1)
        assert out.yaw > 0.0


def mirror_trajectory(traj):
    return assemble_trajectory([(x, -y) for x, y in traj.path], traj.speed, traj.stop)


def mirror_state(s):
    return VehicleState(s.x, -s.y, -s.yaw, s.v)


class TestTrack:
    def test_stop_forces_full_brake(self):
        traj = assemble_trajectory([(10.0, 0.0)], 9.0, True)
        cmd = track(traj, VehicleState(0, 0, 0, 8.0))
        assert cmd == ControlCommand(steer=0.0, throttle=0.0, brake=1.0)

    def test_empty_path_without_stop_raises(self):
        traj = assemble_trajectory([], 5.0, False)
        with pytest.raises(NoPathError, match="no path"):
            track(traj, VehicleState(0, 0, 0, 1.0))

    def test_straight_aligned_at_speed_keeps_straight(self):
        cmd = track(straight_trajectory(speed=5.0), VehicleState(0, 0, 0, 5.0))
        assert abs(cmd.steer) <= 0.05
        assert cmd.brake == 0.0

    def test_mirror_symmetry_exact(self):
        # left-turn path with an offset start: cost minimum is unique
        path = [(x, 0.0) for x in np.arange(0.0, 10.0, 2.0)]
        path += [(10.0 + 8 * math.sin(a), 8 * (1 - math.cos(a))) for a in np.linspace(0.2, math.pi / 2, 8)]
        traj = assemble_trajectory(path, 5.0, False)
        state = VehicleState(6.0, -0.4, 0.12, 4.0)
        cmd = track(traj, state)
        cmd_m = track(mirror_trajectory(traj), mirror_state(state))
        assert cmd_m.steer == -cmd.steer
        assert cmd_m.throttle == cmd.throttle
        assert cmd_m.brake == cmd.brake

    def test_left_turn_steers_left_within_three_commands(self):
        # 90-degree left turn starting at the vehicle position
        path = [(x, 0.0) for x in np.arange(0.0, 8.0, 2.0)]
        path += [(8.0 + 10 * math.sin(a), 10 * (1 - math.cos(a))) for a in np.linspace(0.15, math.pi / 2, 10)]
        traj = assemble_trajectory(path, 5.0, False)
        state = VehicleState(8.0, 0.0, 0.0, 5.0)
        steers = []
        for _ in range(3):
            cmd = track(traj, state)
            steers.append(cmd.steer)
            state = bicycle_step(state, cmd, 0.1)
        assert max(steers) > 0.0

    def test_closed_loop_straight_crosstrack_bound(self):
        traj = straight_trajectory(length=50.0, speed=5.0)
        state = VehicleState(0.0, 0.15, 0.05, 5.0)
        worst = abs(state.y)
        while state.x < 50.0:
            state = bicycle_step(state, track(traj, state), 0.1)
            worst = max(worst, abs(state.y))
        assert worst < 0.3

    def test_accelerates_toward_reference_speed(self):
        cmd = track(straight_trajectory(speed=7.0), VehicleState(0, 0, 0, 0.0))
        assert cmd.throttle > 0.0 and cmd.brake == 0.0

    def test_brakes_when_too_fast(self):
        cmd = track(straight_trajectory(speed=2.0), VehicleState(0, 0, 0, 10.0))
        assert cmd.brake > 0.0 and cmd.throttle == 0.0

    def test_deterministic(self):
        traj = straight_trajectory()
        state = VehicleState(1.0, 0.2, 0.1, 3.0)
        assert track(traj, state) == track(traj, state)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            MpcConfig(horizon=0)
