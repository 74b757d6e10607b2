"""Run configuration for the command-line pipeline.

One JSON file configures every stage; each command reads its own section.
Angle-valued keys carry a ``_deg`` suffix in the file and are converted to
radians at load time.  Unknown keys are rejected so typos fail loudly.  All
randomness flows from the named seeds; nothing reads the wall clock.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Optional

from .dataset import SimSetup
from .sysid import TrainConfig
from .vessel import ConfigError, NoiseConfig, VesselConfig, WindProcessConfig, default_vessel_config


@dataclass
class GenSection:
    dt_sim: float = 0.1
    dt_obs: float = 1.0
    u_cruise: float = 0.6
    run_in: float = 20.0
    duration: float = 200.0          # zigzag/turning/random duration (s)
    sigma_u: float = 0.01            # observation noise (m/s)
    sigma_vm: float = 0.01           # (m/s)
    sigma_r_deg: float = 0.1         # (deg/s)
    wind_mean_speed: float = 1.5     # (m/s)
    wind_mean_direction_deg: float = 120.0
    wind_alpha: float = -0.1         # reversion rate (1/s)
    wind_sigma_u: float = 0.3
    wind_sigma_gamma_deg: float = 6.0
    # maneuver lists per split: scripted names, [delta, psi] zigzag pairs (deg),
    # turning angles (deg), number of random maneuvers
    splits: dict = field(default_factory=lambda: {
        "train": {"scripted": [f"berth_{i:02d}" for i in range(1, 11)]},
        "test_b": {"scripted": [f"berth_{i:02d}" for i in range(11, 15)]},
        "test_zt": {"zigzag": [[20, 20], [25, 25], [30, 30]],
                    "turning": [20, 25, 30]},
        "test_r": {"random": 2},
    })

    def noise(self) -> NoiseConfig:
        return NoiseConfig(sigma_u=self.sigma_u, sigma_vm=self.sigma_vm,
                           sigma_r=math.radians(self.sigma_r_deg))

    def wind(self) -> WindProcessConfig:
        return WindProcessConfig(
            alpha_u=self.wind_alpha, sigma_u=self.wind_sigma_u,
            mean_speed=self.wind_mean_speed, alpha_gamma=self.wind_alpha,
            sigma_gamma=math.radians(self.wind_sigma_gamma_deg),
            mean_direction=math.radians(self.wind_mean_direction_deg))

    def setup(self, vessel: VesselConfig) -> SimSetup:
        return SimSetup(vessel=vessel, wind=self.wind(), dt_sim=self.dt_sim,
                        u_cruise=self.u_cruise, run_in=self.run_in)


@dataclass
class TrainSection:
    m: int = 8                # ensemble size
    k_steps: int = 50
    stride: Optional[int] = None
    k_init: int = 10
    use_init_net: bool = True
    n_hidden: int = 2
    width: int = 32
    lr: float = 3e-3
    batch_size: int = 16
    epochs: int = 400
    integrator: str = "euler"
    grad_clip: float = 10.0
    calib_samples: int = 10_000

    def hyper(self, noise: NoiseConfig) -> TrainConfig:
        return TrainConfig(
            k_steps=self.k_steps, stride=self.stride, k_init=self.k_init,
            use_init_net=self.use_init_net, n_hidden=self.n_hidden,
            width=self.width, lr=self.lr, batch_size=self.batch_size,
            epochs=self.epochs, integrator=self.integrator,
            grad_clip=self.grad_clip, calib_samples=self.calib_samples,
            noise=noise)


@dataclass
class PredictSection:
    p: int = 50
    k: int = 50
    schemes: list = field(default_factory=lambda: ["tsinf", "ts1"])
    ensemble_sizes: list = field(default_factory=lambda: [1, 2, 4, 8])
    splits: list = field(default_factory=lambda: ["test_b", "test_zt", "test_r"])
    integrator: str = "rk4"
    stratified: bool = False
    dump_particles: bool = True      # per-particle CSV at the full ensemble size


@dataclass
class SweepSection:
    kp: list = field(default_factory=lambda: [10.0, 40.0, 70.0, 100.0])
    kd: list = field(default_factory=lambda: [10.0, 40.0, 70.0, 100.0])
    p: Optional[int] = None          # particles per cell; None = ensemble size
    scheme: str = "tsinf"
    u0: float = 0.5
    target_deg: float = 90.0
    duration: float = 100.0
    dt_ctrl: float = 1.0


@dataclass
class RunConfig:
    dataset_dir: str = "runs/data"
    artifact_dir: str = "runs/ensemble"
    output_dir: str = "runs/out"
    seed: int = 2024
    jobs: int = 0                    # 0 = available cores
    figures: bool = True
    gen: GenSection = field(default_factory=GenSection)
    train: TrainSection = field(default_factory=TrainSection)
    predict: PredictSection = field(default_factory=PredictSection)
    pdsweep: SweepSection = field(default_factory=SweepSection)
    vessel_overrides: dict = field(default_factory=dict)

    def vessel(self) -> VesselConfig:
        if not self.vessel_overrides:
            return default_vessel_config()
        base = default_vessel_config().__dict__.copy()
        for key in ("_terms_x", "_terms_y", "_terms_n"):
            base.pop(key)
        for key, value in self.vessel_overrides.items():
            if key not in base:
                raise ConfigError(f"unknown vessel parameter {key!r}")
            if isinstance(value, list):
                value = tuple(value)
            base[key] = value
        return VesselConfig(**base)

    def effective_jobs(self) -> int:
        return self.jobs if self.jobs > 0 else (os.cpu_count() or 1)


_SECTIONS = {"gen": GenSection, "train": TrainSection, "predict": PredictSection,
             "pdsweep": SweepSection}


def _apply(obj, values: dict, context: str):
    for key, value in values.items():
        if not hasattr(obj, key):
            raise ConfigError(f"unknown config key {context}{key!r}")
        setattr(obj, key, value)
    return obj


def load_config(path: Optional[str] = None, overrides: Optional[dict] = None) -> RunConfig:
    """Build the run configuration from defaults, an optional JSON file, and
    flag overrides (applied last)."""
    cfg = RunConfig()
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be an object")
        for key, value in raw.items():
            if key in _SECTIONS:
                if not isinstance(value, dict):
                    raise ConfigError(f"{path}: section {key!r} must be an object")
                _apply(getattr(cfg, key), value, f"{key}.")
            elif hasattr(cfg, key):
                setattr(cfg, key, value)
            else:
                raise ConfigError(f"{path}: unknown config key {key!r}")
    for key, value in (overrides or {}).items():
        if value is not None:
            setattr(cfg, key, value)
    return cfg


def resolved_dict(cfg: RunConfig) -> dict:
    """JSON-serializable view of the full configuration (for run summaries)."""
    out = {}
    for key, value in cfg.__dict__.items():
        out[key] = dict(value.__dict__) if key in _SECTIONS else value
    return out
