"""Stanley lateral steering, PI longitudinal control, and a kinematic plant.

The steering law combines the perceived heading angle theta (lane tangent
direction expressed in the vehicle frame, positive when the lane points left
of the vehicle's nose) with the arctangent of the cross-track term:

    S_bar = theta + arctan(c3 * (delta + C*W) / v)
    S     = S_bar - c2 * (S_bar - S_prev)
    steer = clamp(c1 * S, -1, 1)

delta is positive when the vehicle sits right of the lane centerline and C
shifts the target laterally by whole lane widths (lane-change input; no
planner drives it here).

The speed loop is u = kp*e + kI * sum(e_i * dtau) with e = v - v_ref and
accel_cmd = tanh(u); the actuator maps a positive command to deceleration
(a = -a_max * accel_cmd) so the feedback is negative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

DEFAULT_MAX_STEER = math.radians(30.0)  # 0.5236 rad


@dataclass
class VehicleState:
    x: float = 0.0
    y: float = 0.0
    psi: float = 0.0   # global yaw, CCW positive
    v: float = 0.0     # m/s, never negative

    def __post_init__(self):
        if self.v < 0:
            raise ValueError("speed must be nonnegative (no reverse)")


@dataclass
class StanleyParams:
    c1: float | None = None      # steer normalizer; None -> 1/max_steer of the plant
    c2: float = 0.5              # damping
    c3: float = 2.5              # cross-track gain
    lane_width: float = 4.0      # W, lane-change offset unit
    v_floor: float = 1.0         # lower bound on v inside the arctan division

    def __post_init__(self):
        if not 0.0 <= self.c2 < 1.0:
            raise ValueError("c2 must be in [0,1)")
        if self.c3 <= 0 or self.lane_width <= 0 or self.v_floor <= 0:
            raise ValueError("c3, lane_width, v_floor must be positive")

    def resolved_c1(self, plant: "PlantParams") -> float:
        return self.c1 if self.c1 is not None else 1.0 / plant.max_steer


@dataclass
class PIParams:
    kp: float = 2.0
    ki: float = 0.5
    dtau: float = 0.05           # seconds between samples
    windup_limit: float | None = None  # clamp on |ki * integral|, None = unbounded

    def __post_init__(self):
        if self.kp < 0 or self.ki < 0:
            raise ValueError("gains must be nonnegative")
        if self.dtau <= 0:
            raise ValueError("dtau must be positive")


@dataclass
class PlantParams:
    wheelbase: float = 2.7        # m
    max_steer: float = DEFAULT_MAX_STEER  # rad
    max_accel: float = 4.0        # m/s^2
    grade_accel: float = 0.0      # constant longitudinal disturbance (m/s^2, + decelerates)
    mass: float = 1150.0          # config metadata, unused by the kinematic model
    length: float = 4.52          # config metadata

    def __post_init__(self):
        if self.wheelbase <= 0 or self.max_steer <= 0 or self.max_accel <= 0:
            raise ValueError("wheelbase, max_steer, max_accel must be positive")


@dataclass
class ControlCommand:
    steer_cmd: float  # in [-1, 1]
    accel_cmd: float  # in [-1, 1]

    def __post_init__(self):
        self.steer_cmd = min(max(float(self.steer_cmd), -1.0), 1.0)
        self.accel_cmd = min(max(float(self.accel_cmd), -1.0), 1.0)


def clamp(v: float, lo: float, hi: float) -> float:
    return lo if v < lo else hi if v > hi else v


def stanley_step(
    theta: float,
    delta: float,
    v: float,
    c: int,
    prev_s: float,
    params: StanleyParams,
    c1: float | None = None,
) -> tuple[float, float]:
    """One steering update; returns (steer_cmd, new damped steering state).

    ``c1`` overrides the normalizer when given (the sim resolves it from the
    plant's max steering angle so the clamp stays inactive for |S| within
    the actuator range).
    """
    if c not in (-1, 0, 1):
        raise ValueError("lane-change input C must be -1, 0, or 1")
    v_eff = max(float(v), params.v_floor)
    s_bar = theta + math.atan(params.c3 * (delta + c * params.lane_width) / v_eff)
    s_new = s_bar - params.c2 * (s_bar - prev_s)
    norm = c1 if c1 is not None else (params.c1 if params.c1 is not None else 1.0 / DEFAULT_MAX_STEER)
    steer_cmd = clamp(norm * s_new, -1.0, 1.0)
    return steer_cmd, s_new


@dataclass
class PIState:
    integral: float = 0.0  # running sum of e_i * dtau


def pi_step(v: float, v_ref: float, state: PIState, params: PIParams) -> tuple[float, PIState]:
    """One speed-control update; returns (accel_cmd, new integral state)."""
    e = float(v) - float(v_ref)
    integral = state.integral + e * params.dtau
    if params.windup_limit is not None and params.ki > 0:
        bound = params.windup_limit / params.ki
        integral = clamp(integral, -bound, bound)
    u = params.kp * e + params.ki * integral
    return math.tanh(u), PIState(integral)


def vehicle_step(state: VehicleState, cmd: ControlCommand, dt: float, plant: PlantParams) -> VehicleState:
    """Advance the kinematic bicycle by one RK4 step under constant commands.

    steer_cmd maps to a front wheel angle delta = max_steer * steer_cmd
    (positive = leftward yaw); accel_cmd maps to a = -max_accel * accel_cmd
    minus any constant grade disturbance. Speed is clamped at zero.
    """
    if not 0.0 < dt <= 0.1:
        raise ValueError(f"dt must be in (0, 0.1], got {dt}")
    steer = plant.max_steer * cmd.steer_cmd
    accel = -plant.max_accel * cmd.accel_cmd - plant.grade_accel
    yaw_gain = math.tan(steer) / plant.wheelbase

    def deriv(s):
        x, y, psi, v = s
        return (v * math.cos(psi), v * math.sin(psi), v * yaw_gain, accel)

    s0 = (state.x, state.y, state.psi, state.v)
    k1 = deriv(s0)
    k2 = deriv(tuple(a + dt / 2.0 * b for a, b in zip(s0, k1)))
    k3 = deriv(tuple(a + dt / 2.0 * b for a, b in zip(s0, k2)))
    k4 = deriv(tuple(a + dt * b for a, b in zip(s0, k3)))
    x, y, psi, v = (a + dt / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4) for a, b1, b2, b3, b4 in zip(s0, k1, k2, k3, k4))
    return VehicleState(x=x, y=y, psi=psi, v=max(v, 0.0))


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    return math.pi - (math.pi - a) % (2.0 * math.pi)
