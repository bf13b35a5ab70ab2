import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtdrive import control as ct
from mtdrive import track as tk


class TestStanley:
    def test_equilibrium_zero(self):
        steer, s = ct.stanley_step(0.0, 0.0, 10.0, 0, 0.0, ct.StanleyParams())
        assert steer == 0.0 and s == 0.0

    def test_worked_example(self):
        params = ct.StanleyParams()
        plant = ct.PlantParams()
        c1 = params.resolved_c1(plant)
        steer, s = ct.stanley_step(0.0, 1.0, 10.0, 0, 0.0, params, c1)
        s_bar = math.atan(0.25)
        assert s_bar == pytest.approx(0.244979, abs=1e-6)
        assert s == pytest.approx(0.122489, abs=1e-6)
        assert steer == pytest.approx(c1 * 0.1224893, abs=1e-6)

    def test_lane_change_offset_equivalence(self):
        params = ct.StanleyParams()
        a = ct.stanley_step(0.0, 0.0, 10.0, 1, 0.0, params)
        b = ct.stanley_step(0.0, 4.0, 10.0, 0, 0.0, params)
        assert a == b  # exact, same arctan argument

    def test_damping_endpoints(self):
        prev = 0.3
        no_damp, _ = ct.stanley_step(0.1, 0.5, 10.0, 0, prev, ct.StanleyParams(c2=0.0), c1=1.0)
        s_bar = 0.1 + math.atan(2.5 * 0.5 / 10.0)
        assert no_damp == pytest.approx(s_bar, abs=1e-15)
        almost, s_new = ct.stanley_step(0.1, 0.5, 10.0, 0, prev, ct.StanleyParams(c2=0.999999), c1=1.0)
        assert s_new == pytest.approx(prev, abs=1e-5)

    @given(st.floats(0.01, 0.99), st.floats(0.02, 0.98))
    @settings(max_examples=30)
    def test_damping_monotone_interpolation(self, c2a, c2b):
        prev, theta, delta, v = -0.2, 0.15, 0.8, 12.0
        s_bar = theta + math.atan(2.5 * delta / v)
        _, sa = ct.stanley_step(theta, delta, v, 0, prev, ct.StanleyParams(c2=c2a), c1=1.0)
        _, sb = ct.stanley_step(theta, delta, v, 0, prev, ct.StanleyParams(c2=c2b), c1=1.0)
        # S interpolates between s_bar (c2=0) and prev (c2=1), monotonically
        for c2, s in ((c2a, sa), (c2b, sb)):
            assert min(prev, s_bar) <= s <= max(prev, s_bar)
        if c2a < c2b:
            assert abs(sa - prev) >= abs(sb - prev)

    @given(
        st.floats(-1.5, 1.5),
        st.floats(-8.0, 8.0),
        st.floats(0.0, 40.0),
        st.sampled_from([-1, 0, 1]),
        st.floats(-2.0, 2.0),
    )
    @settings(max_examples=100)
    def test_steer_cmd_always_in_range(self, theta, delta, v, c, prev):
        steer, _ = ct.stanley_step(theta, delta, v, c, prev, ct.StanleyParams())
        assert -1.0 <= steer <= 1.0

    def test_v_floor_prevents_blowup(self):
        params = ct.StanleyParams(v_floor=1.0)
        steer_zero_v, s0 = ct.stanley_step(0.0, 1.0, 0.0, 0, 0.0, params, c1=1.0)
        steer_floor_v, s1 = ct.stanley_step(0.0, 1.0, 1.0, 0, 0.0, params, c1=1.0)
        assert s0 == s1
        assert math.isfinite(steer_zero_v)

    def test_clamp_inactive_within_actuator_range(self):
        plant = ct.PlantParams()
        params = ct.StanleyParams()
        c1 = params.resolved_c1(plant)
        # |S| <= max_steer implies |c1*S| <= 1
        for s in np.linspace(-plant.max_steer, plant.max_steer, 9):
            assert abs(c1 * s) <= 1.0 + 1e-12

    def test_invalid_lane_change_input(self):
        with pytest.raises(ValueError):
            ct.stanley_step(0.0, 0.0, 10.0, 2, 0.0, ct.StanleyParams())


class TestPI:
    def test_zero_error_zero_command(self):
        acc, state = ct.pi_step(15.0, 15.0, ct.PIState(), ct.PIParams())
        assert acc == 0.0
        assert state.integral == 0.0

    def test_worked_example_first_step(self):
        # e = -1, kp=2, kI=0.5, dtau=0.05 -> u = -2.025, cmd = tanh(u)
        acc, state = ct.pi_step(14.0, 15.0, ct.PIState(), ct.PIParams(kp=2.0, ki=0.5, dtau=0.05))
        u = 2.0 * (-1.0) + 0.5 * (-1.0 * 0.05)
        assert u == -2.025
        assert acc == pytest.approx(math.tanh(-2.025), abs=1e-12)
        assert acc == pytest.approx(-0.965752, abs=1e-6)
        # negative command maps to positive plant acceleration (speeds up)
        plant = ct.PlantParams()
        assert -plant.max_accel * acc > 0

    @given(st.floats(-50.0, 50.0), st.floats(0.0, 40.0), st.floats(0.0, 40.0))
    @settings(max_examples=50)
    def test_ki_zero_is_memoryless(self, integral, v, v_ref):
        params = ct.PIParams(kp=2.0, ki=0.0)
        a1, _ = ct.pi_step(v, v_ref, ct.PIState(integral), params)
        a2, _ = ct.pi_step(v, v_ref, ct.PIState(0.0), params)
        assert a1 == a2

    def test_windup_clamp(self):
        params = ct.PIParams(kp=0.0, ki=0.5, dtau=1.0, windup_limit=1.0)
        state = ct.PIState()
        for _ in range(100):
            _, state = ct.pi_step(20.0, 10.0, state, params)  # persistent +10 error
        assert params.ki * state.integral <= 1.0 + 1e-12

    def test_accel_cmd_in_range(self):
        acc, _ = ct.pi_step(100.0, 0.0, ct.PIState(1000.0), ct.PIParams())
        assert -1.0 <= acc <= 1.0


class TestVehicleStep:
    def test_zero_commands_straight_line(self):
        s0 = ct.VehicleState(x=1.0, y=2.0, psi=0.3, v=8.0)
        s1 = ct.vehicle_step(s0, ct.ControlCommand(0.0, 0.0), 0.05, ct.PlantParams())
        dist = math.hypot(s1.x - s0.x, s1.y - s0.y)
        assert dist == pytest.approx(8.0 * 0.05, abs=1e-12)
        assert s1.psi == s0.psi
        assert s1.v == s0.v

    def test_constant_steer_closes_circle(self):
        plant = ct.PlantParams()
        steer_cmd = 0.5
        delta = plant.max_steer * steer_cmd
        radius = plant.wheelbase / math.tan(delta)
        v = 10.0
        period = 2.0 * math.pi * radius / v
        dt = 0.01
        n = int(round(period / dt))
        state = ct.VehicleState(v=v)
        for _ in range(n):
            state = ct.vehicle_step(state, ct.ControlCommand(steer_cmd, 0.0), dt, plant)
        # land within one leftover partial step of the start
        leftover = (period - n * dt) * v
        assert math.hypot(state.x, state.y) <= abs(leftover) + 1e-4

    def test_zero_speed_freezes_position(self):
        s0 = ct.VehicleState(v=0.0)
        s1 = ct.vehicle_step(s0, ct.ControlCommand(1.0, 0.0), 0.05, ct.PlantParams())
        assert (s1.x, s1.y, s1.psi) == (0.0, 0.0, 0.0)

    def test_speed_clamped_at_zero(self):
        s0 = ct.VehicleState(v=0.05)
        s1 = ct.vehicle_step(s0, ct.ControlCommand(0.0, 1.0), 0.05, ct.PlantParams())  # full braking
        assert s1.v == 0.0

    def test_dt_validation(self):
        with pytest.raises(ValueError):
            ct.vehicle_step(ct.VehicleState(v=1.0), ct.ControlCommand(0, 0), 0.2, ct.PlantParams())
        with pytest.raises(ValueError):
            ct.vehicle_step(ct.VehicleState(v=1.0), ct.ControlCommand(0, 0), 0.0, ct.PlantParams())

    def test_command_clamping(self):
        cmd = ct.ControlCommand(steer_cmd=3.0, accel_cmd=-7.0)
        assert cmd.steer_cmd == 1.0 and cmd.accel_cmd == -1.0

    def test_negative_speed_rejected(self):
        with pytest.raises(ValueError):
            ct.VehicleState(v=-1.0)


class TestClosedLoopConventions:
    """The sign-convention arbiter: Stanley + plant + track must converge."""

    def _run(self, offset, v, n_steps=400, dt=0.05):
        track = tk.make_preset_track("straight")
        cl = track.centerline()
        plant = ct.PlantParams()
        sp = ct.StanleyParams()
        c1 = sp.resolved_c1(plant)
        state = ct.VehicleState(x=0.0, y=-offset, psi=0.0, v=v)  # +offset = right of center
        prev_s, s_hint, dist = 0.0, 0.0, 0.0
        trace = []
        for _ in range(n_steps):
            p = cl.project((state.x, state.y), s_hint)
            s_hint = p.s
            theta = ct.wrap_angle(p.tangent_heading - state.psi)
            steer, prev_s = ct.stanley_step(theta, p.delta, state.v, 0, prev_s, sp, c1)
            state = ct.vehicle_step(state, ct.ControlCommand(steer, 0.0), dt, plant)
            dist += state.v * dt
            trace.append((dist, p.delta))
        return np.array(trace)

    def test_lane_keeping_converges(self):
        trace = self._run(offset=1.0, v=10.0)
        d, delta = trace[:, 0], trace[:, 1]
        within = d[np.abs(delta) < 0.02]
        assert within.size and within[0] < 150.0
        assert np.abs(delta).max() <= 1.2  # never exceeds initial by more than 20%
        assert np.all(np.abs(delta[d >= 150.0]) < 0.02)

    def test_projected_s_monotone_forward(self):
        track = tk.make_preset_track("track7_like")
        cl = track.centerline()
        plant = ct.PlantParams()
        sp = ct.StanleyParams()
        c1 = sp.resolved_c1(plant)
        x, y, psi, _ = cl.frame_at(0.0)
        state = ct.VehicleState(x=x, y=y, psi=psi, v=15.0)
        prev_s, s_hint = 0.0, 0.0
        last_s = 0.0
        for _ in range(500):
            p = cl.project((state.x, state.y), s_hint)
            s_hint = p.s
            gain = (p.s - last_s) % track.length
            assert gain < track.length / 2  # forward (wrap-aware), never backward
            last_s = p.s
            theta = ct.wrap_angle(p.tangent_heading - state.psi)
            steer, prev_s = ct.stanley_step(theta, p.delta, state.v, 0, prev_s, sp, c1)
            state = ct.vehicle_step(state, ct.ControlCommand(steer, 0.0), 0.05, plant)
