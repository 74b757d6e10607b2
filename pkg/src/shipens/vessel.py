"""Ground-truth maneuvering simulator.

3-DOF MMG-style equations of motion with force contributions from hull,
propeller, rudders, bow thruster, and wind; first-order actuator response
with a sloped step function; an Ornstein-Uhlenbeck wind process integrated
by Euler-Maruyama; RK4 integration of the rigid-body states; and Gaussian
observation-noise injection.

The hull, propeller, and rudder submodels are a synthetic, configurable
parameterization (polynomial hull forces, constant propeller thrust at the
fixed propeller rate, and a lift-type force per rudder).  The shipped
default coefficient set is a made-up small twin-rudder vessel chosen for
rich, stable low-speed dynamics; it does not describe any real hull.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .core import ActuatorState, ApparentWind, ShipState, TrueWind, Velocity, apparent_wind
from .integrate import rk4_step

TRAJECTORY_HEADER = "t,x0,y0,psi,u,vm,r,delta_p,delta_s,n_bt,U_T,xi_T"


class ConfigError(ValueError):
    """Raised when a configuration violates its invariants."""


class SimulationDiverged(RuntimeError):
    """Raised when the integrated state leaves the finite range."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"simulation diverged at step {step}")


def _parse_hull_terms(table: dict) -> tuple:
    """Normalize a {'uvr-key': coeff} table into (i, j, k, coeff) tuples."""
    terms = []
    for key, coeff in table.items():
        if not (1 <= len(key) <= 3) or set(key) - {"u", "v", "r"}:
            raise ConfigError(f"bad hull term key {key!r}: use 1-3 letters from 'uvr'")
        terms.append((key.count("u"), key.count("v"), key.count("r"), float(coeff)))
    return tuple(terms)


@dataclass(frozen=True)
class VesselConfig:
    """Physical parameters of the simulated vessel (SI units, radians)."""

    m: float                  # ship mass (kg)
    m_x: float                # surge added mass (kg)
    m_y: float                # sway added mass (kg)
    x_g: float                # longitudinal center of gravity (m)
    i_zz: float               # yaw moment of inertia (kg m^2)
    j_zz: float               # added yaw moment of inertia (kg m^2)
    l_pp: float               # length between perpendiculars (m)
    draft: float              # draft (m)
    rho: float                # water density (kg/m^3)
    rho_air: float            # air density (kg/m^3)
    g: float                  # gravity (m/s^2), for the Froude number
    u_ref: float              # reference speed making hull coefficients dimensionless (m/s)
    hull_x: dict              # X-axis hull polynomial, keyed by 'uvr' monomials
    hull_y: dict              # Y-axis hull polynomial
    hull_n: dict              # N-axis hull polynomial
    prop_thrust: float        # constant propeller thrust at the fixed rate (N)
    rudder_coeff: float       # rudder normal-force coefficient (kg/m)
    rudder_u_prop: float      # propeller-race inflow speed at the rudders (m/s)
    rudder_u_factor: float    # share of surge speed reaching the rudders
    rudder_x: float           # longitudinal rudder position (m, negative = astern)
    bt_d: float               # bow thruster diameter (m)
    bt_kt: float              # bow thruster thrust coefficient
    bt_x: float               # longitudinal bow thruster position (m)
    a_ysb: tuple              # (a_YSB1, a_YSB2, a_YSB3) lateral-force speed correction
    a_nsb: tuple              # (a_NSB1, a_NSB2, a_NSB3) moment speed correction
    a_t: float                # transverse projected area (m^2)
    a_l: float                # lateral projected area (m^2)
    l_oa: float               # overall length (m)
    wind_cx: tuple            # (X0, X1, X3, X5) wind pressure coefficients
    wind_cy: tuple            # (Y1, Y3, Y5)
    wind_cn: tuple            # (N1, N2, N3)
    _terms_x: tuple = field(init=False, repr=False, compare=False, default=())
    _terms_y: tuple = field(init=False, repr=False, compare=False, default=())
    _terms_n: tuple = field(init=False, repr=False, compare=False, default=())

    def __post_init__(self):
        object.__setattr__(self, "_terms_x", _parse_hull_terms(self.hull_x))
        object.__setattr__(self, "_terms_y", _parse_hull_terms(self.hull_y))
        object.__setattr__(self, "_terms_n", _parse_hull_terms(self.hull_n))
        self.validate()

    def validate(self):
        if self.m <= 0 or self.m + self.m_x <= 0 or self.m + self.m_y <= 0:
            raise ConfigError("mass and added masses must give positive effective inertia")
        if self.i_zz + self.j_zz + self.x_g**2 * self.m <= 0:
            raise ConfigError("effective yaw inertia must be positive")
        if self.mass_det() <= 0:
            raise ConfigError("sway/yaw mass matrix is not positive definite")
        for name in ("rho", "rho_air", "l_pp", "draft", "a_t", "a_l", "l_oa", "g", "u_ref"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")

    def mass_det(self) -> float:
        """Determinant of the coupled sway/yaw mass matrix."""
        izz = self.i_zz + self.j_zz + self.x_g**2 * self.m
        return (self.m + self.m_y) * izz - (self.x_g * self.m) ** 2


@dataclass(frozen=True)
class ActuatorResponseConfig:
    """First-order rate-limited response per actuator channel.

    ``rate`` is the maximum rate of change (rad/s for rudders, rps/s for the
    thruster); ``eps`` is the error width of the sloped step, in the units of
    the channel.  Monotone, overshoot-free convergence under Euler stepping
    requires rate * dt <= eps.
    """

    rate: tuple = (math.radians(20.0), math.radians(20.0), 20.0)
    eps: tuple = (math.radians(2.0), math.radians(2.0), 2.0)

    def __post_init__(self):
        if any(k <= 0 for k in self.rate) or any(e <= 0 for e in self.eps):
            raise ConfigError("actuator rates and slope widths must be positive")


@dataclass(frozen=True)
class WindProcessConfig:
    """Mean-reverting (OU) wind speed and direction processes."""

    alpha_u: float = -0.1     # speed reversion rate (1/s), < 0
    sigma_u: float = 0.3      # speed diffusion (m/s per sqrt(s))
    mean_speed: float = 1.5   # (m/s)
    alpha_gamma: float = -0.1  # direction reversion rate (1/s), < 0
    sigma_gamma: float = 0.1   # direction diffusion (rad per sqrt(s))
    mean_direction: float = math.radians(120.0)  # (rad)

    def __post_init__(self):
        if self.alpha_u >= 0 or self.alpha_gamma >= 0:
            raise ConfigError("wind process reversion rates must be negative")
        if self.mean_speed < 0:
            raise ConfigError("mean wind speed must be non-negative")


@dataclass(frozen=True)
class NoiseConfig:
    """Observation noise standard deviations per state channel.

    An infinite entry means the channel carries no weight in the training
    likelihood and is left unpolluted.  Entries must be positive or inf.
    """

    sigma_x0: float = math.inf
    sigma_y0: float = math.inf
    sigma_psi: float = math.inf
    sigma_u: float = 0.01
    sigma_vm: float = 0.01
    sigma_r: float = math.radians(0.1)

    def __post_init__(self):
        for s in self.as_array():
            if not (s > 0):
                raise ConfigError("noise sigmas must be positive or infinite")

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.sigma_x0, self.sigma_y0, self.sigma_psi,
             self.sigma_u, self.sigma_vm, self.sigma_r]
        )

    def weights(self) -> np.ndarray:
        """Per-channel likelihood precisions 1/sigma^2; infinite sigma -> 0."""
        s = self.as_array()
        w = np.zeros(6)
        finite = np.isfinite(s)
        w[finite] = 1.0 / s[finite] ** 2
        return w


# ----------------------------------------------------------------------
# Force submodels


def hull_force(state: ShipState, cfg: VesselConfig) -> tuple:
    """Polynomial hull forces and moment (X_H, Y_H, N_H)."""
    u, vm, lr = state.vel.u, state.vel.vm, cfg.l_pp * state.vel.r
    q0 = 0.5 * cfg.rho * cfg.l_pp * cfg.draft
    out = []
    for terms in (cfg._terms_x, cfg._terms_y, cfg._terms_n):
        total = 0.0
        for i, j, k, c in terms:
            total += c * u**i * vm**j * lr**k * cfg.u_ref ** (2 - (i + j + k))
        out.append(q0 * total)
    return out[0], out[1], out[2] * cfg.l_pp


def propeller_force(cfg: VesselConfig) -> tuple:
    """Constant thrust at the fixed propeller rate: (X_P, 0, 0)."""
    return cfg.prop_thrust, 0.0, 0.0


def rudder_force(state: ShipState, act: ActuatorState, cfg: VesselConfig) -> tuple:
    """Lift-type normal force per rudder, resolved onto the ship axes.

    Positive rudder angle on a straight course yields a positive yaw moment
    (the lateral force acts astern, through the negative lever arm), and
    large opposed rudder angles brake the ship.
    """
    u_r = max(cfg.rudder_u_prop + cfg.rudder_u_factor * state.vel.u,
              0.05 * cfg.rudder_u_prop)
    v_r = state.vel.vm + cfg.rudder_x * state.vel.r
    inflow_sq = u_r * u_r + v_r * v_r
    drift = math.atan2(v_r, u_r)
    x = y = n = 0.0
    for delta in (act.delta_p, act.delta_s):
        f_n = cfg.rudder_coeff * inflow_sq * math.sin(delta + drift)
        x += -f_n * math.sin(delta)
        y += -f_n * math.cos(delta)
        n += -cfg.rudder_x * f_n * math.cos(delta)
    return x, y, n


def thruster_force(state: ShipState, act: ActuatorState, cfg: VesselConfig) -> tuple:
    """Bow thruster force with quadratic Froude-number attenuation.

    The thrust is signed with the thruster revolutions so negative commands
    push the opposite way; the quadratic n^2 law keeps its magnitude.
    """
    n = act.n_bt
    t_bt = cfg.rho * cfg.bt_d**4 * n * abs(n) * cfg.bt_kt
    fr = state.vel.u / math.sqrt(cfg.g * cfg.l_pp)
    ay1, ay2, ay3 = cfg.a_ysb
    an1, an2, an3 = cfg.a_nsb
    y = (1.0 + ay1 + ay2 * fr + ay3 * fr * fr) * t_bt
    nm = (1.0 + an1 + an2 * fr + an3 * fr * fr) * t_bt * cfg.bt_x
    return 0.0, y, nm


def wind_coefficients(gamma_a: float, cfg: VesselConfig) -> tuple:
    """Wind pressure coefficients (C_X, C_Y, C_N) from the regression series."""
    x0, x1, x3, x5 = cfg.wind_cx
    y1, y3, y5 = cfg.wind_cy
    n1, n2, n3 = cfg.wind_cn
    a = 2.0 * math.pi - gamma_a
    c_x = x0 + x1 * math.cos(a) + x3 * math.cos(3.0 * a) + x5 * math.cos(5.0 * a)
    c_y = y1 * math.sin(a) + y3 * math.sin(3.0 * a) + y5 * math.sin(5.0 * a)
    c_n = n1 * math.sin(a) + n2 * math.sin(2.0 * a) + n3 * math.sin(3.0 * a)
    return c_x, c_y, c_n


def wind_force(aw: ApparentWind, cfg: VesselConfig) -> tuple:
    """Wind forces and moment (X_A, Y_A, N_A) from the apparent wind."""
    c_x, c_y, c_n = wind_coefficients(aw.direction, cfg)
    q = 0.5 * cfg.rho_air * aw.speed**2
    return q * cfg.a_t * c_x, q * cfg.a_l * c_y, q * cfg.a_l * cfg.l_oa * c_n


def total_force(state: ShipState, act: ActuatorState, aw: ApparentWind,
                cfg: VesselConfig) -> tuple:
    """Sum of hull, propeller, rudder, thruster, and wind contributions."""
    parts = (
        hull_force(state, cfg),
        propeller_force(cfg),
        rudder_force(state, act, cfg),
        thruster_force(state, act, cfg),
        wind_force(aw, cfg),
    )
    return tuple(sum(p[i] for p in parts) for i in range(3))


def mmg_accel(state: ShipState, act: ActuatorState, aw: ApparentWind,
              cfg: VesselConfig) -> Velocity:
    """Velocity derivatives (u_dot, vm_dot, r_dot) from the equations of motion.

    The surge equation decouples; the coupled sway/yaw pair is solved exactly
    as a 2x2 linear system.
    """
    x_f, y_f, n_f = total_force(state, act, aw, cfg)
    u, vm, r = state.vel.u, state.vel.vm, state.vel.r
    mxg = cfg.x_g * cfg.m
    izz = cfg.i_zz + cfg.j_zz + cfg.x_g**2 * cfg.m
    det = cfg.mass_det()
    if abs(det) < 1e-12:
        raise ConfigError("singular sway/yaw mass matrix")
    u_dot = (x_f + (cfg.m + cfg.m_y) * vm * r + mxg * r * r) / (cfg.m + cfg.m_x)
    b1 = y_f - (cfg.m + cfg.m_x) * u * r
    b2 = n_f - mxg * u * r
    vm_dot = (izz * b1 - mxg * b2) / det
    r_dot = ((cfg.m + cfg.m_y) * b2 - mxg * b1) / det
    return Velocity(u_dot, vm_dot, r_dot)


# ----------------------------------------------------------------------
# Actuator response and wind process


def _f_step(e: float, eps: float) -> float:
    if e >= eps:
        return 1.0
    if e <= -eps:
        return -1.0
    return e / eps


def actuator_step(current: ActuatorState, command: ActuatorState, dt: float,
                  cfg: ActuatorResponseConfig) -> ActuatorState:
    """Advance the actuator state one Euler step toward the command."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    cur = current.as_array()
    cmd = command.as_array()
    nxt = [cur[i] + dt * cfg.rate[i] * _f_step(cmd[i] - cur[i], cfg.eps[i])
           for i in range(3)]
    return ActuatorState(nxt[0], nxt[1], nxt[2]).clipped()


def wind_step(w: TrueWind, dt: float, cfg: WindProcessConfig,
              rng: np.random.Generator) -> TrueWind:
    """One Euler-Maruyama step of the wind speed/direction processes."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    z1, z2 = rng.standard_normal(2)
    sq = math.sqrt(dt)
    speed = w.speed + cfg.alpha_u * (w.speed - cfg.mean_speed) * dt + cfg.sigma_u * sq * z1
    direction = (w.direction + cfg.alpha_gamma * (w.direction - cfg.mean_direction) * dt
                 + cfg.sigma_gamma * sq * z2)
    return TrueWind(max(speed, 0.0), direction)


# ----------------------------------------------------------------------
# Simulation

Commander = Callable[[float, ShipState, ActuatorState], ActuatorState]


@dataclass
class SimResult:
    """Dense traces at the simulation step: times, clean states, actuators, wind."""

    t: np.ndarray       # (K,)
    x: np.ndarray       # (K, 6) clean ship states
    act: np.ndarray     # (K, 3) realized actuator states
    wind: np.ndarray    # (K, 2) true wind speed/direction


def _ship_dynamics(act: ActuatorState, true_wind: TrueWind, cfg: VesselConfig):
    """Dynamics closure for one integration interval (inputs held constant)."""

    def f(xv: np.ndarray) -> np.ndarray:
        state = ShipState.from_array(xv)
        psi, u, vm, r = xv[2], xv[3], xv[4], xv[5]
        aw = apparent_wind(true_wind, state)
        acc = mmg_accel(state, act, aw, cfg)
        c, s = math.cos(psi), math.sin(psi)
        return np.array([c * u - s * vm, s * u + c * vm, r, acc.u, acc.vm, acc.r])

    return f


def simulate(initial: ShipState, commander: Commander, wind_init: TrueWind,
             vessel_cfg: VesselConfig, act_cfg: ActuatorResponseConfig,
             wind_cfg: Optional[WindProcessConfig], dt_sim: float, duration: float,
             seed: int, initial_act: Optional[ActuatorState] = None,
             wind_trace: Optional[np.ndarray] = None,
             actuator_direct: bool = False) -> SimResult:
    """Integrate the vessel over ``duration`` seconds at step ``dt_sim``.

    The ship state advances by RK4 with the actuator state and true wind held
    constant over each step; the actuator then advances by its own Euler
    response step, and the wind by Euler-Maruyama.  ``wind_trace`` (shape
    (K, 2)) replaces the stochastic wind process by a recorded one, and
    ``actuator_direct`` applies commands as the realized actuator state
    without response lag (used for exact input replay).  Deterministic for a
    fixed seed.
    """
    n_steps = round(duration / dt_sim)
    if abs(n_steps * dt_sim - duration) > 1e-9 * max(1.0, duration) or n_steps < 1:
        raise ValueError("duration must be a positive multiple of dt_sim")
    rng = np.random.default_rng(seed)
    k_total = n_steps + 1

    ts = np.arange(k_total) * dt_sim
    xs = np.empty((k_total, 6))
    acts = np.empty((k_total, 3))
    winds = np.empty((k_total, 2))

    x = initial.as_array()
    act = initial_act if initial_act is not None else ActuatorState(0.0, 0.0, 0.0)
    wind = TrueWind(wind_trace[0, 0], wind_trace[0, 1]) if wind_trace is not None else wind_init

    for k in range(k_total):
        state = ShipState.from_array(x)
        if actuator_direct:
            act = commander(ts[k], state, act).clipped()
        xs[k] = x
        acts[k] = act.as_array()
        winds[k] = wind.as_array()
        if k == n_steps:
            break
        try:
            x_next = rk4_step(_ship_dynamics(act, wind, vessel_cfg), x, dt_sim)
        except OverflowError as exc:
            raise SimulationDiverged(k + 1, f"force evaluation overflowed at step {k + 1}") from exc
        if not np.all(np.isfinite(x_next)):
            raise SimulationDiverged(k + 1)
        if not actuator_direct:
            cmd = commander(ts[k], state, act).clipped()
            act = actuator_step(act, cmd, dt_sim, act_cfg)
        if wind_trace is not None:
            wind = TrueWind(wind_trace[k + 1, 0], wind_trace[k + 1, 1])
        elif wind_cfg is not None:
            wind = wind_step(wind, dt_sim, wind_cfg, rng)
        x = x_next

    return SimResult(ts, xs, acts, winds)


def pollute(x: np.ndarray, sigma: Sequence[float], seed: int) -> np.ndarray:
    """Add independent Gaussian observation noise per state channel.

    ``sigma`` holds six standard deviations; zero or non-finite entries leave
    the channel clean.  Deterministic for a fixed seed.
    """
    s = np.asarray(sigma, dtype=float).copy()
    s[~np.isfinite(s)] = 0.0
    rng = np.random.default_rng(seed)
    return x + rng.standard_normal(x.shape) * s


# ----------------------------------------------------------------------
# Trajectory CSV schema


def write_trajectory_csv(path, t, x, act, wind) -> None:
    """Write the canonical trajectory CSV (17 significant digits, LF endings)."""
    rows = np.column_stack([t, x, act, wind])
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(TRAJECTORY_HEADER + "\n")
        for row in rows:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def read_trajectory_csv(path) -> dict:
    """Read a trajectory CSV back into (t, x, act, wind) arrays."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != TRAJECTORY_HEADER:
            raise ValueError(f"{path}: unexpected header {header!r}")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.shape[1] != 12:
        raise ValueError(f"{path}: expected 12 columns, found {data.shape[1]}")
    return {"t": data[:, 0], "x": data[:, 1:7], "act": data[:, 7:10], "wind": data[:, 10:12]}


# ----------------------------------------------------------------------
# Default synthetic vessel


def default_vessel_config() -> VesselConfig:
    """Synthetic small twin-rudder vessel used by the shipped experiments.

    The values are an invented, explicitly non-physical coefficient set tuned
    for stable low-speed maneuvering; cruise speed under the constant
    propeller thrust is about 0.6 m/s.
    """
    return VesselConfig(
        m=180.0, m_x=9.0, m_y=90.0, x_g=0.05, i_zz=101.0, j_zz=10.0,
        l_pp=3.0, draft=0.2, rho=1000.0, rho_air=1.225, g=9.81, u_ref=1.0,
        hull_x={"u": -0.02, "uuu": -0.04, "vv": 0.01, "vr": 0.04, "rr": 0.002},
        hull_y={"v": -0.08, "vvv": -0.8, "uv": -0.3, "ur": 0.06, "r": -0.01,
                "rrr": -0.06},
        hull_n={"r": -0.012, "rrr": -0.08, "uv": -0.05, "ur": -0.035,
                "v": -0.002, "vvv": -0.02},
        prop_thrust=6.2,
        rudder_coeff=6.0, rudder_u_prop=0.8, rudder_u_factor=0.4, rudder_x=-1.4,
        bt_d=0.05, bt_kt=0.45, bt_x=1.2,
        a_ysb=(-0.1, -0.4, 0.1), a_nsb=(-0.05, -0.3, 0.05),
        a_t=0.15, a_l=0.6, l_oa=3.1,
        wind_cx=(-0.55, -0.25, 0.10, -0.05),
        wind_cy=(-0.80, -0.10, -0.05),
        wind_cn=(-0.10, 0.05, 0.01),
    )


def default_actuator_config(dt_sim: float = 0.1) -> ActuatorResponseConfig:
    """Rudder/thruster response rates with slope widths at the per-step move."""
    rates = (math.radians(20.0), math.radians(20.0), 20.0)
    return ActuatorResponseConfig(rate=rates, eps=tuple(k * dt_sim for k in rates))


def default_wind_config() -> WindProcessConfig:
    return WindProcessConfig()


def default_noise_config() -> NoiseConfig:
    return NoiseConfig()
