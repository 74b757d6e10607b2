"""Scenario generation, observation processing, and dataset persistence.

Maneuver generators drive the ground-truth simulator and return time-stamped
trajectory records (observations, actuator states, true wind).  Records are
resampled to the observation step, polluted with Gaussian noise, cut into
fixed-length windows for training/evaluation, and serialized through the
canonical trajectory CSV schema plus a JSON manifest.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .core import ActuatorState, Pose, ShipState, TrueWind, Velocity, wrap_angle
from .vessel import (
    ActuatorResponseConfig,
    NoiseConfig,
    SimResult,
    VesselConfig,
    WindProcessConfig,
    default_actuator_config,
    default_vessel_config,
    default_wind_config,
    pollute,
    read_trajectory_csv,
    simulate,
    write_trajectory_csv,
)

GENERATOR_VERSION = "1"

COMMAND_COLUMNS = ("t", "delta_p", "delta_s", "n_bt")
COMMAND_WIND_COLUMNS = COMMAND_COLUMNS + ("U_T", "xi_T")

FEATURE_NAMES = ("u", "vm", "r", "delta_p", "delta_s", "n_bt", "wa_x", "wa_y")
ACCEL_NAMES = ("du", "dvm", "dr")


@dataclass(frozen=True)
class TrajectoryRecord:
    """One maneuver: observed states, actuator inputs, true wind, and truth.

    ``y`` holds the (possibly noisy) observed state sequence; ``truth`` holds
    the clean simulated states when available.  Time steps need not be
    constant.
    """

    t: np.ndarray          # (K,) strictly increasing times (s)
    y: np.ndarray          # (K, 6) observed states
    u: np.ndarray          # (K, 3) actuator states
    w: np.ndarray          # (K, 2) true wind speed/direction
    label: str
    seed: Optional[int] = None
    truth: Optional[np.ndarray] = None  # (K, 6) clean states

    def __post_init__(self):
        k = len(self.t)
        if not (self.y.shape == (k, 6) and self.u.shape == (k, 3) and self.w.shape == (k, 2)):
            raise ValueError(f"{self.label}: channel lengths disagree")
        if self.truth is not None and self.truth.shape != (k, 6):
            raise ValueError(f"{self.label}: truth shape mismatch")
        if np.any(np.diff(self.t) <= 0):
            raise ValueError(f"{self.label}: times must be strictly increasing")

    def __len__(self) -> int:
        return len(self.t)


@dataclass
class Dataset:
    records: list
    split: str = ""
    seed: Optional[int] = None
    version: str = GENERATOR_VERSION

    def __post_init__(self):
        if not self.records:
            raise ValueError("a dataset needs at least one record")

    def __len__(self) -> int:
        return len(self.records)


@dataclass(frozen=True)
class StandardizationStats:
    """Training-set means/stds of the 8 model inputs and 3 accelerations."""

    mu_in: np.ndarray      # (8,)
    sigma_in: np.ndarray   # (8,)
    mu_acc: np.ndarray     # (3,)
    sigma_acc: np.ndarray  # (3,)

    def __post_init__(self):
        if np.any(self.sigma_in <= 0) or np.any(self.sigma_acc <= 0):
            raise ValueError("standardization stds must be positive")


@dataclass(frozen=True)
class SimSetup:
    """Simulator configuration bundle shared by the maneuver generators."""

    vessel: VesselConfig = field(default_factory=default_vessel_config)
    wind: WindProcessConfig = field(default_factory=default_wind_config)
    dt_sim: float = 0.1
    u_cruise: float = 0.6   # run-in surge speed (m/s)
    run_in: float = 20.0    # straight run before the maneuver executes (s)

    @property
    def actuator(self) -> ActuatorResponseConfig:
        return default_actuator_config(self.dt_sim)


def _record_from_sim(res: SimResult, label: str, seed: int) -> TrajectoryRecord:
    return TrajectoryRecord(t=res.t, y=res.x.copy(), u=res.act, w=res.wind,
                            label=label, seed=seed, truth=res.x)


def _cruise_state(setup: SimSetup) -> ShipState:
    return ShipState(Pose(0.0, 0.0, 0.0), Velocity(setup.u_cruise, 0.0, 0.0))


# ----------------------------------------------------------------------
# Maneuver generators


def gen_zigzag(delta: float, psi_switch: float, setup: SimSetup, seed: int,
               duration: float = 200.0) -> TrajectoryRecord:
    """Zigzag maneuver: both rudders at +/-delta, flipped whenever the heading
    deviation from the run-in heading exceeds ``psi_switch``.  No wind, no
    thruster.
    """
    if delta <= 0 or psi_switch <= 0:
        raise ValueError("zigzag angles must be positive")
    state = {"sign": 1.0}

    def commander(t, ship, act):
        if t < setup.run_in:
            return ActuatorState(0.0, 0.0, 0.0)
        err = wrap_angle(ship.pose.psi)
        if state["sign"] > 0 and err > psi_switch:
            state["sign"] = -1.0
        elif state["sign"] < 0 and err < -psi_switch:
            state["sign"] = 1.0
        d = state["sign"] * delta
        return ActuatorState(d, d, 0.0)

    res = simulate(_cruise_state(setup), commander, TrueWind(0.0, 0.0),
                   setup.vessel, setup.actuator, None, setup.dt_sim, duration, seed)
    label = f"Z_{math.degrees(delta):g}_{math.degrees(psi_switch):g}"
    return _record_from_sim(res, label, seed)


def gen_turning(delta: float, setup: SimSetup, seed: int,
                duration: float = 200.0) -> TrajectoryRecord:
    """Turning maneuver: both rudders held at ``delta`` after the run-in."""

    def commander(t, ship, act):
        if t < setup.run_in:
            return ActuatorState(0.0, 0.0, 0.0)
        return ActuatorState(delta, delta, 0.0)

    res = simulate(_cruise_state(setup), commander, TrueWind(0.0, 0.0),
                   setup.vessel, setup.actuator, None, setup.dt_sim, duration, seed)
    return _record_from_sim(res, f"T_{math.degrees(delta):g}", seed)


RANDOM_HOLD = 20.0  # command refresh interval (s)


def sample_random_commands(n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw n random actuator commands from the random-maneuver distributions.

    Port rudder N(-80 deg, 30 deg), starboard N(+80 deg, 30 deg), thruster
    N(0, 15 rps), all clipped to the actuator limits.
    """
    deg = math.radians
    draws = np.empty((n, 3))
    draws[:, 0] = np.clip(rng.normal(deg(-80.0), deg(30.0), n), deg(-105.0), deg(35.0))
    draws[:, 1] = np.clip(rng.normal(deg(80.0), deg(30.0), n), deg(-35.0), deg(105.0))
    draws[:, 2] = np.clip(rng.normal(0.0, 15.0, n), -30.0, 30.0)
    return draws


def gen_random(setup: SimSetup, seed: int, duration: float = 200.0,
               wind_init: Optional[TrueWind] = None) -> TrajectoryRecord:
    """Random-control maneuver: commands redrawn every 20 s, wind active."""
    rng = np.random.default_rng(seed)
    n_cmd = int(math.ceil(duration / RANDOM_HOLD)) + 1
    draws = sample_random_commands(n_cmd, rng)
    sim_seed = int(rng.integers(2**63))

    def commander(t, ship, act):
        i = min(int(t // RANDOM_HOLD), n_cmd - 1)
        return ActuatorState(*draws[i])

    w0 = wind_init if wind_init is not None else TrueWind(setup.wind.mean_speed,
                                                          setup.wind.mean_direction)
    res = simulate(_cruise_state(setup), commander, w0, setup.vessel,
                   setup.actuator, setup.wind, setup.dt_sim, duration, sim_seed,
                   initial_act=ActuatorState(*draws[0]))
    return _record_from_sim(res, "R", seed)


def load_command_script(path) -> dict:
    """Load a command script CSV.

    Two layouts are accepted: a command table with header
    ``t,delta_p,delta_s,n_bt`` (optionally extended with ``U_T,xi_T``), or a
    full trajectory CSV, whose actuator/wind columns (and initial state) are
    replayed.  Rows are zero-order-hold breakpoints.
    """
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        cols = tuple(header.split(","))
        try:
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
        except ValueError as exc:
            raise ValueError(f"{path}: malformed command CSV ({exc})") from exc
    if data.shape[0] == 0:
        raise ValueError(f"{path}: empty command script")
    if cols == COMMAND_COLUMNS or cols == COMMAND_WIND_COLUMNS:
        script = {"t": data[:, 0], "cmd": data[:, 1:4],
                  "wind": data[:, 4:6] if len(cols) == 6 else None,
                  "initial": None}
    elif header == "t,x0,y0,psi,u,vm,r,delta_p,delta_s,n_bt,U_T,xi_T":
        script = {"t": data[:, 0], "cmd": data[:, 7:10], "wind": data[:, 10:12],
                  "initial": data[0, 1:7]}
    else:
        raise ValueError(f"{path}: unrecognized command CSV header {header!r}")
    if np.any(np.diff(script["t"]) <= 0):
        raise ValueError(f"{path}: command times must be strictly increasing")
    return script


def gen_scripted(script, setup: SimSetup, seed: int,
                 duration: Optional[float] = None, label: str = "B",
                 replay_exact: bool = False) -> TrajectoryRecord:
    """Replay a command script through the simulator.

    ``script`` is a path to a command CSV or an already-loaded script dict.
    Scripts without wind columns run under the stochastic wind process; with
    wind columns the recorded wind is replayed.  ``replay_exact`` applies the
    actuator rows directly (no response lag), reproducing a recorded
    trajectory bit-exactly when fed its own dense trace.
    """
    if not isinstance(script, dict):
        script = load_command_script(script)
    t_bp, cmd_bp = script["t"], script["cmd"]
    if duration is None:
        duration = float(t_bp[-1])
    if t_bp[-1] < duration - 1e-9:
        raise ValueError(
            f"command script ends at {t_bp[-1]:g} s, shorter than duration {duration:g} s")

    def commander(t, ship, act):
        i = int(np.searchsorted(t_bp, t + 1e-12, side="right") - 1)
        i = max(i, 0)
        return ActuatorState(*cmd_bp[i])

    n_steps = round(duration / setup.dt_sim)
    wind_trace = None
    wind_cfg: Optional[WindProcessConfig] = setup.wind
    if script["wind"] is not None:
        grid = np.arange(n_steps + 1) * setup.dt_sim
        idx = np.clip(np.searchsorted(t_bp, grid + 1e-12, side="right") - 1, 0, len(t_bp) - 1)
        wind_trace = script["wind"][idx]
        wind_cfg = None

    if script["initial"] is not None:
        init = ShipState.from_array(script["initial"])
    else:
        init = _cruise_state(setup)
    w0 = TrueWind(setup.wind.mean_speed, setup.wind.mean_direction)
    res = simulate(init, commander, w0, setup.vessel, setup.actuator, wind_cfg,
                   setup.dt_sim, duration, seed,
                   initial_act=ActuatorState(*cmd_bp[0]),
                   wind_trace=wind_trace, actuator_direct=replay_exact)
    return _record_from_sim(res, label, seed)


# ----------------------------------------------------------------------
# Observation processing


def pollute_record(record: TrajectoryRecord, noise: NoiseConfig, seed: int) -> TrajectoryRecord:
    """Return a copy with Gaussian observation noise on the finite-sigma channels."""
    base = record.truth if record.truth is not None else record.y
    return replace(record, y=pollute(base, noise.as_array(), seed))


def resample(record: TrajectoryRecord, dt_obs: float) -> TrajectoryRecord:
    """Subsample a uniform-step record to the observation step (no interpolation)."""
    dts = np.diff(record.t)
    dt = dts[0]
    if np.any(np.abs(dts - dt) > 1e-9):
        raise ValueError(f"{record.label}: resample requires a uniform time step")
    factor = dt_obs / dt
    if abs(factor - round(factor)) > 1e-9 or round(factor) < 1:
        raise ValueError(f"dt_obs={dt_obs:g} is not an integer multiple of dt={dt:g}")
    step = int(round(factor))
    sl = slice(None, None, step)
    return replace(record, t=record.t[sl], y=record.y[sl], u=record.u[sl],
                   w=record.w[sl],
                   truth=None if record.truth is None else record.truth[sl])


def window(dataset: Dataset, k_steps: int, stride: int):
    """Cut every record into fixed-length windows of ``k_steps`` samples.

    Returns (windows, n_skipped) where n_skipped counts records shorter than
    one window.  Windows keep their original timestamps.
    """
    if k_steps < 2:
        raise ValueError("windows need at least 2 steps")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    windows = []
    skipped = 0
    for rec in dataset.records:
        n = len(rec)
        if n < k_steps:
            skipped += 1
            continue
        for start in range(0, n - k_steps + 1, stride):
            sl = slice(start, start + k_steps)
            windows.append(replace(
                rec, t=rec.t[sl], y=rec.y[sl], u=rec.u[sl], w=rec.w[sl],
                truth=None if rec.truth is None else rec.truth[sl],
                label=f"{rec.label}[{start}]"))
    return windows, skipped


def feature_matrix(y: np.ndarray, u: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Vectorized model-input features (velocities, actuators, apparent wind
    vector) for every sample of a record; pose enters only through the wind
    transform."""
    psi = y[:, 2]
    rel = w[:, 1] - psi
    wa_x = w[:, 0] * np.cos(rel) - y[:, 3]
    wa_y = w[:, 0] * np.sin(rel) - y[:, 4]
    return np.column_stack([y[:, 3:6], u, wa_x, wa_y])


def finite_diff_accels(t: np.ndarray, vel: np.ndarray) -> np.ndarray:
    """Numerical time derivatives of velocities: central differences inside,
    one-sided at the ends."""
    out = np.empty_like(vel)
    out[1:-1] = (vel[2:] - vel[:-2]) / (t[2:] - t[:-2])[:, None]
    out[0] = (vel[1] - vel[0]) / (t[1] - t[0])
    out[-1] = (vel[-1] - vel[-2]) / (t[-1] - t[-2])
    return out


def compute_stats(train: Dataset) -> StandardizationStats:
    """Standardization statistics of the model inputs and accelerations over
    every training sample."""
    feats, accs = [], []
    for rec in train.records:
        if len(rec) < 2:
            raise ValueError(f"{rec.label}: need at least 2 samples per trajectory")
        feats.append(feature_matrix(rec.y, rec.u, rec.w))
        accs.append(finite_diff_accels(rec.t, rec.y[:, 3:6]))
    f = np.concatenate(feats)
    a = np.concatenate(accs)
    mu_in, sigma_in = f.mean(axis=0), f.std(axis=0)
    mu_acc, sigma_acc = a.mean(axis=0), a.std(axis=0)
    for names, sig in ((FEATURE_NAMES, sigma_in), (ACCEL_NAMES, sigma_acc)):
        for name, s in zip(names, sig):
            if s < 1e-12:
                raise ValueError(f"channel {name!r} has zero variance in the training data")
    return StandardizationStats(mu_in, sigma_in, mu_acc, sigma_acc)


# ----------------------------------------------------------------------
# Persistence


def save_dataset(dataset: Dataset, out_dir) -> None:
    """Write one observed CSV (and clean CSV when truth exists) per record
    plus a JSON manifest."""
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for i, rec in enumerate(dataset.records):
        name = f"{i:03d}_{rec.label.replace('/', '-').replace('[', '_').rstrip(']')}"
        obs = f"{name}.csv"
        write_trajectory_csv(os.path.join(out_dir, obs), rec.t, rec.y, rec.u, rec.w)
        clean = None
        if rec.truth is not None:
            clean = f"{name}.clean.csv"
            write_trajectory_csv(os.path.join(out_dir, clean), rec.t, rec.truth,
                                 rec.u, rec.w)
        entries.append({"name": name, "label": rec.label, "seed": rec.seed,
                        "observed": obs, "clean": clean})
    manifest = {"split": dataset.split, "seed": dataset.seed,
                "generator_version": dataset.version, "records": entries}
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8",
              newline="\n") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_dataset(in_dir) -> Dataset:
    with open(os.path.join(in_dir, "manifest.json"), "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    records = []
    for entry in manifest["records"]:
        obs = read_trajectory_csv(os.path.join(in_dir, entry["observed"]))
        truth = None
        if entry.get("clean"):
            truth = read_trajectory_csv(os.path.join(in_dir, entry["clean"]))["x"]
        records.append(TrajectoryRecord(
            t=obs["t"], y=obs["x"], u=obs["act"], w=obs["wind"],
            label=entry["label"], seed=entry.get("seed"), truth=truth))
    return Dataset(records, split=manifest.get("split", ""),
                   seed=manifest.get("seed"), version=manifest.get("generator_version", "?"))


# ----------------------------------------------------------------------
# Berthing-like command scripts


def synth_berthing_script(idx: int, duration: float = 400.0) -> np.ndarray:
    """Breakpoint table (t, delta_p, delta_s, n_bt) of a berthing-like maneuver.

    Phases: cruise approach, rudder-brake deceleration, steering with offset
    rudders, thruster-assisted rotation, and a final creep with small
    corrections.  Per-index randomness varies timings, magnitudes, and turn
    directions.  These tables are the source of the script assets shipped
    with the package.
    """
    rng = np.random.default_rng(1000 + idx)
    deg = math.radians
    rows = []
    t = 0.0

    def hold(dur, dp, ds, nbt, step=10.0):
        nonlocal t
        end = t + dur
        while t < end - 1e-9:
            rows.append((t, dp, ds, nbt))
            t = min(t + step, end)

    brake_p, brake_s = deg(-75.0), deg(75.0)
    # cruise approach with mild steering
    hold(30.0 + rng.uniform(0, 10), deg(rng.uniform(-8, 8)), deg(rng.uniform(-8, 8)), 0.0)
    # gentle course change onto the berth heading: both rudders the same way
    steer = deg(rng.uniform(8, 18)) * rng.choice([-1.0, 1.0])
    hold(20.0 + rng.uniform(0, 15), steer, steer, 0.0)
    hold(10.0 + rng.uniform(0, 10), -0.4 * steer, -0.4 * steer, 0.0)
    # decelerate with braking rudders
    hold(30.0 + rng.uniform(0, 15), brake_p + deg(rng.uniform(-8, 8)),
         brake_s + deg(rng.uniform(-8, 8)), 0.0)
    # steering segments: swing one rudder off the brake position
    for _ in range(3):
        swing = deg(rng.uniform(20, 50)) * rng.choice([-1.0, 1.0])
        if rng.random() < 0.5:
            hold(20.0 + rng.uniform(0, 15), brake_p + max(swing, 0), brake_s, rng.uniform(-8, 8))
        else:
            hold(20.0 + rng.uniform(0, 15), brake_p, brake_s + min(swing, 0), rng.uniform(-8, 8))
    # thruster-assisted rotation
    spin = rng.choice([-1.0, 1.0]) * rng.uniform(15, 25)
    hold(50.0 + rng.uniform(0, 20), brake_p, brake_s, spin)
    hold(20.0 + rng.uniform(0, 10), brake_p, brake_s, -0.5 * spin)
    # final creep with small corrections and thruster pulses
    while t < duration:
        hold(10.0, brake_p + deg(rng.uniform(-12, 12)), brake_s + deg(rng.uniform(-12, 12)),
             rng.uniform(-10, 10))
    rows.append((duration, rows[-1][1], rows[-1][2], rows[-1][3]))
    return np.array(rows)


def write_command_script(path, table: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(COMMAND_COLUMNS) + "\n")
        for row in table:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def asset_path(name: str) -> str:
    """Path of a packaged script asset, e.g. ``berth_01``."""
    return os.path.join(os.path.dirname(__file__), "assets", f"{name}.csv")
