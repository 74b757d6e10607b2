"""Domain value types and coordinate/wind transforms shared by every module.

Conventions: angles are radians everywhere inside the package (degree values
from configuration files are converted at load time), positions are meters in
an earth-fixed north/east frame, and the yaw angle accumulates without
wrapping during integration.  Wrapping to (-pi, pi] happens only at
comparison and output points via :func:`wrap_angle`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi

# Actuator limits of the subject ship, radians / rps.
DELTA_P_MIN, DELTA_P_MAX = math.radians(-105.0), math.radians(35.0)
DELTA_S_MIN, DELTA_S_MAX = math.radians(-35.0), math.radians(105.0)
N_BT_MIN, N_BT_MAX = -30.0, 30.0


@dataclass(frozen=True)
class Pose:
    """Midship position (m, earth-fixed) and yaw angle (rad, unwrapped)."""

    x0: float
    y0: float
    psi: float


@dataclass(frozen=True)
class Velocity:
    """Surge u, sway vm (m/s, body frame) and yaw rate r (rad/s)."""

    u: float
    vm: float
    r: float


@dataclass(frozen=True)
class ShipState:
    pose: Pose
    vel: Velocity

    def as_array(self) -> np.ndarray:
        """State as the 6-vector (x0, y0, psi, u, vm, r)."""
        return np.array(
            [self.pose.x0, self.pose.y0, self.pose.psi,
             self.vel.u, self.vel.vm, self.vel.r],
            dtype=float,
        )

    @staticmethod
    def from_array(x) -> "ShipState":
        x0, y0, psi, u, vm, r = (float(v) for v in x)
        return ShipState(Pose(x0, y0, psi), Velocity(u, vm, r))


@dataclass(frozen=True)
class ActuatorState:
    """Port/starboard rudder angles (rad) and bow thruster revolutions (rps)."""

    delta_p: float
    delta_s: float
    n_bt: float

    def as_array(self) -> np.ndarray:
        return np.array([self.delta_p, self.delta_s, self.n_bt], dtype=float)

    @staticmethod
    def from_array(a) -> "ActuatorState":
        return ActuatorState(float(a[0]), float(a[1]), float(a[2]))

    def clipped(self) -> "ActuatorState":
        """Clip each channel to the subject ship's actuator limits."""
        return ActuatorState(
            min(max(self.delta_p, DELTA_P_MIN), DELTA_P_MAX),
            min(max(self.delta_s, DELTA_S_MIN), DELTA_S_MAX),
            min(max(self.n_bt, N_BT_MIN), N_BT_MAX),
        )


@dataclass(frozen=True)
class TrueWind:
    """True wind speed (m/s, >= 0) and direction (rad, earth-fixed)."""

    speed: float
    direction: float

    def as_array(self) -> np.ndarray:
        return np.array([self.speed, self.direction], dtype=float)


@dataclass(frozen=True)
class ApparentWind:
    """Apparent wind speed (m/s, >= 0) and direction (rad, body frame)."""

    speed: float
    direction: float


def rotation_matrix(pose: Pose) -> np.ndarray:
    """Body-to-earth rotation for the 3-DOF kinematics eta_dot = R(eta) nu."""
    c, s = math.cos(pose.psi), math.sin(pose.psi)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def apparent_wind(true_wind: TrueWind, state: ShipState) -> ApparentWind:
    """Apparent wind seen from the moving ship.

    The true wind vector in the ship-fixed frame minus the ship velocity
    vector gives the apparent wind vector; speed and direction follow from
    its polar form.  A ship at rest sees the true wind rotated into the body
    frame.  When the apparent wind vanishes exactly the direction is defined
    as 0 (the atan2(0, 0) convention), which is the continuous limit along
    the surge axis.
    """
    rel = true_wind.direction - state.pose.psi
    wx = true_wind.speed * math.cos(rel) - state.vel.u
    wy = true_wind.speed * math.sin(rel) - state.vel.vm
    return ApparentWind(math.hypot(wx, wy), math.atan2(wy, wx))


def apparent_wind_vector(aw: ApparentWind) -> np.ndarray:
    """Apparent wind velocity vector (body frame x, y components)."""
    return np.array(
        [aw.speed * math.cos(aw.direction), aw.speed * math.sin(aw.direction)]
    )


def wrap_angle(a: float) -> float:
    """Map an angle to (-pi, pi], preserving its value modulo 2*pi."""
    if not math.isfinite(a):
        raise ValueError(f"non-finite angle: {a!r}")
    return math.pi - (math.pi - a) % TWO_PI
