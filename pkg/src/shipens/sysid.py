"""Learned maneuvering models and ensemble training.

A maneuvering model wraps an 8->3 feedforward net with input standardization
(training-data statistics of the velocity/actuator/apparent-wind features),
output whitening against the net's own response to standard-normal inputs,
and inverse standardization by the training accelerations.  An optional
initial-state net corrects the first observation of each window.  Training
minimizes the rollout negative log-likelihood: windows are integrated from
their (corrected) initial state under the recorded inputs, and the weighted
squared error against the observations is backpropagated through every
integration step into both parameter vectors.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import fnn
from .core import ActuatorState, ShipState, TrueWind, Velocity, apparent_wind, apparent_wind_vector
from .dataset import Dataset, StandardizationStats, TrajectoryRecord, compute_stats, window
from .fnn import AdamState, NetShape
from .vessel import NoiseConfig

N_FEATURES = 8
N_STATE = 6


class RolloutDiverged(RuntimeError):
    def __init__(self, step: int):
        self.step = step
        super().__init__(f"rollout diverged at step {step}")


class TrainingFailed(RuntimeError):
    pass


@dataclass(frozen=True)
class LikelihoodWeights:
    """Per-channel precisions 1/sigma^2 over (x0, y0, psi, u, vm, r)."""

    w: np.ndarray

    def __post_init__(self):
        if self.w.shape != (N_STATE,) or np.any(self.w < 0) or not np.any(self.w > 0):
            raise ValueError("need 6 non-negative weights with at least one positive")

    @staticmethod
    def from_noise(noise: NoiseConfig) -> "LikelihoodWeights":
        return LikelihoodWeights(noise.weights())


@dataclass(frozen=True)
class DynamicsModel:
    """FNN maneuvering model plus its standardization constants."""

    shape: NetShape
    params: np.ndarray
    stats: StandardizationStats
    out_mu: np.ndarray      # (3,) net-output mean under standard-normal inputs
    out_sigma: np.ndarray   # (3,) net-output std under standard-normal inputs

    def __post_init__(self):
        if self.shape.in_dim != N_FEATURES or self.shape.out_dim != 3:
            raise ValueError("dynamics net must map 8 features to 3 accelerations")
        if np.any(self.out_sigma <= 0):
            raise ValueError("output-normalization stds must be positive")


@dataclass(frozen=True)
class InitStateNet:
    """Initial-state correction net over the first k_init observations."""

    shape: NetShape
    params: np.ndarray
    k_init: int
    enc_mu: np.ndarray      # (6,) encoding standardization
    enc_sigma: np.ndarray   # (6,)

    def __post_init__(self):
        if self.shape.in_dim != N_STATE * self.k_init or self.shape.out_dim != N_STATE:
            raise ValueError("initial-state net must map 6*k_init inputs to 6 outputs")


@dataclass(frozen=True)
class TrainConfig:
    """Training hyperparameters (defaults follow the model-scale experiments)."""

    k_steps: int = 100          # window length (samples)
    stride: Optional[int] = None  # window stride; defaults to k_steps
    k_init: int = 30            # observations fed to the initial-state net
    use_init_net: bool = True
    n_hidden: int = 3
    width: int = 256
    lr: float = 1e-4
    batch_size: int = 32
    epochs: int = 20_000
    integrator: str = "euler"   # training integrator; prediction uses rk4
    grad_clip: float = 10.0     # global-norm clip; <= 0 disables
    calib_samples: int = 10_000
    noise: NoiseConfig = field(default_factory=NoiseConfig)

    def weights(self) -> LikelihoodWeights:
        return LikelihoodWeights.from_noise(self.noise)


@dataclass
class TrainedMember:
    model: DynamicsModel
    init_net: Optional[InitStateNet]
    loss_history: np.ndarray
    seed: int
    hyper: TrainConfig


@dataclass
class EnsembleModel:
    members: list
    stats: StandardizationStats
    hyper: TrainConfig
    seeds: list

    def __post_init__(self):
        if not self.members:
            raise ValueError("an ensemble needs at least one member")
        for m in self.members:
            if m.model.shape != self.members[0].model.shape:
                raise ValueError("ensemble members must share one net shape")
            if not np.array_equal(m.model.stats.mu_in, self.stats.mu_in):
                raise ValueError("ensemble members must share the training stats")

    def __len__(self) -> int:
        return len(self.members)

    def prefix(self, m: int) -> "EnsembleModel":
        """The sub-ensemble of the first m members (for ensemble-size studies)."""
        if not 1 <= m <= len(self.members):
            raise ValueError(f"prefix size {m} out of range")
        return EnsembleModel(self.members[:m], self.stats, self.hyper, self.seeds[:m])


# ----------------------------------------------------------------------
# Featurization and the model acceleration chain


def featurize(state: ShipState, act: ActuatorState, true_wind: TrueWind) -> np.ndarray:
    """Model input features: velocities, actuator states, and the apparent
    wind velocity vector.  Pose enters only through the wind transform, so
    the features are position-independent."""
    wa = apparent_wind_vector(apparent_wind(true_wind, state))
    return np.array([state.vel.u, state.vel.vm, state.vel.r,
                     act.delta_p, act.delta_s, act.n_bt, wa[0], wa[1]])


def _features_batch(x: np.ndarray, u: np.ndarray, w: np.ndarray) -> np.ndarray:
    rel = w[:, 1] - x[:, 2]
    wa_x = w[:, 0] * np.cos(rel) - x[:, 3]
    wa_y = w[:, 0] * np.sin(rel) - x[:, 4]
    return np.column_stack([x[:, 3:6], u, wa_x, wa_y])


def accel_batch(model: DynamicsModel, x: np.ndarray, u: np.ndarray,
                w: np.ndarray) -> np.ndarray:
    """Predicted accelerations (B, 3) for a batch of states/inputs."""
    st = model.stats
    feats = (_features_batch(x, u, w) - st.mu_in) / st.sigma_in
    y, _ = fnn.forward(model.params, model.shape, feats)
    return (y - model.out_mu) / model.out_sigma * st.sigma_acc + st.mu_acc


def dyn_batch(model: DynamicsModel, x: np.ndarray, u: np.ndarray,
              w: np.ndarray) -> np.ndarray:
    """Full state derivative (B, 6): kinematics rows plus model accelerations."""
    acc = accel_batch(model, x, u, w)
    c, s = np.cos(x[:, 2]), np.sin(x[:, 2])
    out = np.empty_like(x)
    out[:, 0] = c * x[:, 3] - s * x[:, 4]
    out[:, 1] = s * x[:, 3] + c * x[:, 4]
    out[:, 2] = x[:, 5]
    out[:, 3:6] = acc
    return out


def model_accel(model: DynamicsModel, state: ShipState, act: ActuatorState,
                true_wind: TrueWind) -> Velocity:
    """Predicted velocity derivative for a single state."""
    acc = accel_batch(model, state.as_array()[None, :], act.as_array()[None, :],
                      true_wind.as_array()[None, :])[0]
    return Velocity(acc[0], acc[1], acc[2])


def calibrate_output_norm(params: np.ndarray, shape: NetShape,
                          rng: np.random.Generator, n_samples: int = 10_000):
    """Empirical mean/std of the raw net outputs under standard-normal inputs.

    Computed once from the untrained net and frozen for the member's lifetime.
    """
    samples = rng.standard_normal((n_samples, shape.in_dim))
    y, _ = fnn.forward(params, shape, samples)
    mu, sigma = y.mean(axis=0), y.std(axis=0)
    if np.any(sigma < 1e-12):
        raise ValueError("degenerate output-normalization std (constant net output)")
    return mu, sigma


# ----------------------------------------------------------------------
# Initial-state estimation


def encode_init_windows(y: np.ndarray, k_init: int) -> np.ndarray:
    """Relative encoding of the first k_init observations of each window.

    Position residuals are rotated into the initial body frame, the heading
    residual is a plain difference, and velocities pass through raw.  The
    encoding is invariant to translating the whole window, which is what lets
    one net generalize across locations.  Input (B, K, 6) -> (B, k_init, 6).
    """
    ref = y[:, 0, :]
    dp = y[:, :k_init, 0:2] - ref[:, None, 0:2]
    c0, s0 = np.cos(ref[:, 2]), np.sin(ref[:, 2])
    enc = np.empty((y.shape[0], k_init, N_STATE))
    enc[:, :, 0] = c0[:, None] * dp[:, :, 0] + s0[:, None] * dp[:, :, 1]
    enc[:, :, 1] = -s0[:, None] * dp[:, :, 0] + c0[:, None] * dp[:, :, 1]
    enc[:, :, 2] = y[:, :k_init, 2] - ref[:, None, 2]
    enc[:, :, 3:6] = y[:, :k_init, 3:6]
    return enc


def _encoding_stats(enc: np.ndarray):
    """Per-channel standardization of the init-net encoding, floored to keep
    near-constant channels harmless."""
    flat = enc.reshape(-1, N_STATE)
    mu = flat.mean(axis=0)
    sigma = np.maximum(flat.std(axis=0), 1e-8)
    return mu, sigma


def _init_net_input(init_net: InitStateNet, y: np.ndarray) -> np.ndarray:
    enc = encode_init_windows(y, init_net.k_init)
    enc = (enc - init_net.enc_mu) / init_net.enc_sigma
    return enc.reshape(y.shape[0], -1)


def estimate_initial_state(init_net: InitStateNet, win: TrajectoryRecord) -> ShipState:
    """Corrected initial state: the first observation plus the net's output."""
    if len(win) < init_net.k_init:
        raise ValueError(f"window has {len(win)} samples, need >= {init_net.k_init}")
    inp = _init_net_input(init_net, win.y[None])
    corr, _ = fnn.forward(init_net.params, init_net.shape, inp)
    return ShipState.from_array(win.y[0] + corr[0])


# ----------------------------------------------------------------------
# Rollout (forward only)


def rollout(model: DynamicsModel, init_state, u_seq: np.ndarray, w_seq: np.ndarray,
            times: np.ndarray, integrator: str = "euler") -> np.ndarray:
    """Integrate the learned dynamics from ``init_state`` under recorded
    inputs (zero-order hold per step); returns all K states."""
    x0 = init_state.as_array() if isinstance(init_state, ShipState) else np.asarray(init_state, dtype=float)
    k = len(times)
    if u_seq.shape != (k, 3) or w_seq.shape != (k, 2):
        raise ValueError("input sequences must align with the time grid")
    out = np.empty((k, N_STATE))
    out[0] = x0
    x = x0[None, :].copy()
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(k - 1):
            dt = times[i + 1] - times[i]
            u_i, w_i = u_seq[i][None, :], w_seq[i][None, :]
            f = lambda xv: dyn_batch(model, xv, u_i, w_i)
            if integrator == "euler":
                x = x + dt * f(x)
            elif integrator == "rk4":
                k1 = f(x)
                k2 = f(x + 0.5 * dt * k1)
                k3 = f(x + 0.5 * dt * k2)
                k4 = f(x + dt * k3)
                x = x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            else:
                raise ValueError(f"unknown integrator {integrator!r}")
            if not np.all(np.isfinite(x)):
                raise RolloutDiverged(i + 1)
            out[i + 1] = x[0]
    return out


# ----------------------------------------------------------------------
# Training engine: batched rollout with backpropagation through time


class _Engine:
    """Batched differentiable rollout for one member's parameter pair."""

    def __init__(self, shape: NetShape, stats: StandardizationStats,
                 out_mu: np.ndarray, out_sigma: np.ndarray, integrator: str):
        self.shape = shape
        self.stats = stats
        self.out_mu = out_mu
        self.out_sigma = out_sigma
        if integrator not in ("euler", "rk4"):
            raise ValueError(f"unknown integrator {integrator!r}")
        self.integrator = integrator

    def _f(self, theta, x, u, w):
        """Dynamics evaluation with everything the VJP needs retained."""
        st = self.stats
        rel = w[:, 1] - x[:, 2]
        cr, sr = np.cos(rel), np.sin(rel)
        feats = np.column_stack([x[:, 3:6], u,
                                 w[:, 0] * cr - x[:, 3],
                                 w[:, 0] * sr - x[:, 4]])
        xf = (feats - st.mu_in) / st.sigma_in
        y, tape = fnn.forward(theta, self.shape, xf)
        acc = (y - self.out_mu) / self.out_sigma * st.sigma_acc + st.mu_acc
        c, s = np.cos(x[:, 2]), np.sin(x[:, 2])
        xdot = np.empty_like(x)
        xdot[:, 0] = c * x[:, 3] - s * x[:, 4]
        xdot[:, 1] = s * x[:, 3] + c * x[:, 4]
        xdot[:, 2] = x[:, 5]
        xdot[:, 3:6] = acc
        stage = (tape, c, s, x[:, 3].copy(), x[:, 4].copy(),
                 w[:, 0] * sr, -w[:, 0] * cr)
        return xdot, stage

    def _vjp(self, stage, lam, grad_theta):
        """Pull a cotangent of xdot back to the state; accumulate grad_theta."""
        tape, c, s, u_v, vm_v, dwax_dpsi, dway_dpsi = stage
        st = self.stats
        g_y = lam[:, 3:6] * (st.sigma_acc / self.out_sigma)
        g_th, g_xf = fnn.backward(tape, g_y)
        grad_theta += g_th
        g_feat = g_xf / st.sigma_in
        gx = np.zeros_like(lam)
        gx[:, 3] = g_feat[:, 0] - g_feat[:, 6]
        gx[:, 4] = g_feat[:, 1] - g_feat[:, 7]
        gx[:, 5] = g_feat[:, 2]
        gx[:, 2] = g_feat[:, 6] * dwax_dpsi + g_feat[:, 7] * dway_dpsi
        ge = lam[:, 0:3]
        gx[:, 2] += ge[:, 0] * (-s * u_v - c * vm_v) + ge[:, 1] * (c * u_v - s * vm_v)
        gx[:, 3] += ge[:, 0] * c + ge[:, 1] * s
        gx[:, 4] += -ge[:, 0] * s + ge[:, 1] * c
        gx[:, 5] += ge[:, 2]
        return gx

    def forward(self, theta, x0, u_seq, w_seq, dts):
        """Roll a batch forward; returns (states (B, K, 6), step tapes)."""
        b, k = u_seq.shape[0], u_seq.shape[1]
        states = np.empty((b, k, N_STATE))
        states[:, 0] = x0
        x = x0
        tapes = []
        for i in range(k - 1):
            dt = dts[:, i][:, None]
            u_i, w_i = u_seq[:, i], w_seq[:, i]
            if self.integrator == "euler":
                xdot, stage = self._f(theta, x, u_i, w_i)
                x = x + dt * xdot
                tapes.append((stage,))
            else:
                k1, s1 = self._f(theta, x, u_i, w_i)
                k2, s2 = self._f(theta, x + 0.5 * dt * k1, u_i, w_i)
                k3, s3 = self._f(theta, x + 0.5 * dt * k2, u_i, w_i)
                k4, s4 = self._f(theta, x + dt * k3, u_i, w_i)
                x = x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
                tapes.append((s1, s2, s3, s4))
            if not np.all(np.isfinite(x)):
                raise RolloutDiverged(i + 1)
            states[:, i + 1] = x
        return states, tapes

    def backward(self, theta, states, tapes, dts, dloss_dx):
        """Adjoint sweep; returns (grad_theta, grad_x0) for the batch loss."""
        b, k = states.shape[0], states.shape[1]
        grad_theta = np.zeros_like(theta)
        lam = dloss_dx[:, k - 1].copy()
        for i in range(k - 2, -1, -1):
            dt = dts[:, i][:, None]
            if self.integrator == "euler":
                (stage,) = tapes[i]
                gx = self._vjp(stage, dt * lam, grad_theta)
                lam = lam + gx + dloss_dx[:, i]
            else:
                s1, s2, s3, s4 = tapes[i]
                g4 = (dt / 6.0) * lam
                gx4 = self._vjp(s4, g4, grad_theta)
                g3 = (dt / 3.0) * lam + dt * gx4
                gx3 = self._vjp(s3, g3, grad_theta)
                g2 = (dt / 3.0) * lam + 0.5 * dt * gx3
                gx2 = self._vjp(s2, g2, grad_theta)
                g1 = (dt / 6.0) * lam + 0.5 * dt * gx2
                gx1 = self._vjp(s1, g1, grad_theta)
                lam = lam + gx1 + gx2 + gx3 + gx4 + dloss_dx[:, i]
        return grad_theta, lam


def _stack_windows(windows):
    """Stack equal-length windows into batch arrays (Y, U, W, dts)."""
    y = np.stack([w.y for w in windows])
    u = np.stack([w.u for w in windows])
    w_ = np.stack([w.w for w in windows])
    dts = np.stack([np.diff(w.t) for w in windows])
    return y, u, w_, dts


def nll_loss(model: DynamicsModel, init_net: Optional[InitStateNet], windows,
             weights: LikelihoodWeights, integrator: str = "euler"):
    """Rollout negative log-likelihood over a batch of windows.

    The loss is the precision-weighted squared error between the observed and
    rolled-out states, summed over windows, steps, and channels (additive
    constants dropped).  Returns (loss, grad_theta, grad_theta_prime);
    grad_theta_prime is None without an initial-state net.
    """
    if not windows:
        raise ValueError("empty window batch")
    y, u, w, dts = _stack_windows(windows)
    engine = _Engine(model.shape, model.stats, model.out_mu, model.out_sigma,
                     integrator)
    x0 = y[:, 0].copy()
    init_tape = None
    if init_net is not None:
        inp = _init_net_input(init_net, y)
        corr, init_tape = fnn.forward(init_net.params, init_net.shape, inp)
        x0 = x0 + corr
    states, tapes = engine.forward(model.params, x0, u, w, dts)
    resid = y - states
    loss = float(np.sum(weights.w * resid**2))
    dloss_dx = -2.0 * weights.w * resid
    grad_theta, grad_x0 = engine.backward(model.params, states, tapes, dts, dloss_dx)
    grad_theta_prime = None
    if init_net is not None:
        grad_theta_prime, _ = fnn.backward(init_tape, grad_x0)
    return loss, grad_theta, grad_theta_prime


# ----------------------------------------------------------------------
# Member / ensemble training


def _clip_global(grad: np.ndarray, max_norm: float) -> np.ndarray:
    if max_norm <= 0:
        return grad
    norm = float(np.linalg.norm(grad))
    if norm > max_norm:
        return grad * (max_norm / norm)
    return grad


def _prepare(train: Dataset, hyper: TrainConfig):
    stats = compute_stats(train)
    stride = hyper.stride if hyper.stride is not None else hyper.k_steps
    windows, _ = window(train, hyper.k_steps, stride)
    if not windows:
        raise TrainingFailed("no training windows: records shorter than k_steps")
    if hyper.use_init_net and hyper.k_init > hyper.k_steps:
        raise TrainingFailed("k_init cannot exceed k_steps")
    return stats, windows


def train_member(train: Dataset, hyper: TrainConfig, seed: int,
                 _prepared=None) -> TrainedMember:
    """Train one (dynamics net, initial-state net) pair.

    Windows are reshuffled every epoch with the member's own generator; both
    parameter vectors are updated jointly by one Adam instance; no
    regularization and no early stopping, so ensemble diversity comes from
    the random initialization and shuffling alone.
    """
    stats, windows = _prepared if _prepared is not None else _prepare(train, hyper)
    rng = np.random.default_rng(seed)
    weights = hyper.weights()

    dyn_shape = NetShape(N_FEATURES, hyper.n_hidden, hyper.width, 3)
    theta = fnn.init_params(dyn_shape, rng)
    out_mu, out_sigma = calibrate_output_norm(theta, dyn_shape, rng,
                                              hyper.calib_samples)
    model = DynamicsModel(dyn_shape, theta, stats, out_mu, out_sigma)

    # The theta' draw happens whether or not the correction net is enabled so
    # that the with/without variants consume identical generator streams and
    # see identical shuffles: the pair then differs only by the net itself.
    init_shape = NetShape(N_STATE * hyper.k_init, hyper.n_hidden, hyper.width,
                          N_STATE)
    theta_p = fnn.init_params(init_shape, rng)
    init_net = None
    if hyper.use_init_net:
        # zero the output layer so the correction starts at exactly zero and
        # training departs from the uncorrected baseline
        w_sl, b_sl, _ = fnn.layer_slices(init_shape)[-1]
        theta_p[w_sl] = 0.0
        theta_p[b_sl] = 0.0
        enc_mu, enc_sigma = _encoding_stats(
            encode_init_windows(np.stack([w.y for w in windows]), hyper.k_init))
        init_net = InitStateNet(init_shape, theta_p, hyper.k_init, enc_mu, enc_sigma)

    joint = np.concatenate([model.params, init_net.params]) if init_net is not None \
        else model.params.copy()
    adam = AdamState.fresh(len(joint), lr=hyper.lr)
    history = np.empty(hyper.epochs)

    for epoch in range(hyper.epochs):
        order = rng.permutation(len(windows))
        epoch_loss = 0.0
        for start in range(0, len(order), hyper.batch_size):
            batch = [windows[i] for i in order[start:start + hyper.batch_size]]
            try:
                loss, g_theta, g_theta_p = nll_loss(model, init_net, batch, weights,
                                                    hyper.integrator)
            except RolloutDiverged as exc:
                raise TrainingFailed(
                    f"seed {seed}: rollout diverged at step {exc.step} "
                    f"in epoch {epoch}") from exc
            if not math.isfinite(loss):
                raise TrainingFailed(f"seed {seed}: non-finite loss in epoch {epoch}")
            epoch_loss += loss
            grad = np.concatenate([g_theta, g_theta_p]) if init_net is not None else g_theta
            grad = _clip_global(grad, hyper.grad_clip)
            adam, joint = fnn.adam_step(adam, joint, grad)
            model = replace(model, params=joint[:dyn_shape.n_params])
            if init_net is not None:
                init_net = replace(init_net, params=joint[dyn_shape.n_params:])
        history[epoch] = epoch_loss / len(windows)

    return TrainedMember(model, init_net, history, seed, hyper)


def member_seeds(base_seed: int, m: int) -> list:
    """Independent member seeds derived from one base seed."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(base_seed).spawn(m)]


def train_ensemble(train: Dataset, m: int, hyper: TrainConfig, base_seed: int,
                   jobs: int = 1) -> EnsembleModel:
    """Train M members on the same dataset with independent seeds.

    Member results do not depend on ``jobs``; parallel workers each train a
    self-contained member.
    """
    if m < 1:
        raise ValueError("ensemble size must be >= 1")
    prepared = _prepare(train, hyper)
    seeds = member_seeds(base_seed, m)
    members = [None] * m
    if jobs > 1 and m > 1:
        import concurrent.futures as cf
        with cf.ProcessPoolExecutor(max_workers=min(jobs, m)) as pool:
            futures = {pool.submit(train_member, train, hyper, seeds[i]): i
                       for i in range(m)}
            for fut in cf.as_completed(futures):
                i = futures[fut]
                try:
                    members[i] = fut.result()
                except TrainingFailed as exc:
                    raise TrainingFailed(f"member {i}: {exc}") from exc
    else:
        for i in range(m):
            try:
                members[i] = train_member(train, hyper, seeds[i], _prepared=prepared)
            except TrainingFailed as exc:
                raise TrainingFailed(f"member {i}: {exc}") from exc
    return EnsembleModel(members, prepared[0], hyper, seeds)


def fitting_metric(member: TrainedMember, train: Dataset,
                   weights: LikelihoodWeights) -> float:
    """Mean weighted squared rollout error against the clean states.

    Uses the member's own windowing and training integrator; falls back to
    the observations where no clean states are stored.
    """
    hyper = member.hyper
    stride = hyper.stride if hyper.stride is not None else hyper.k_steps
    windows, _ = window(train, hyper.k_steps, stride)
    total = 0.0
    count = 0
    for win in windows:
        x0 = win.y[0]
        if member.init_net is not None:
            x0 = estimate_initial_state(member.init_net, win).as_array()
        pred = rollout(member.model, x0, win.u, win.w, win.t, hyper.integrator)
        ref = win.truth if win.truth is not None else win.y
        total += float(np.sum(weights.w * (ref - pred) ** 2))
        count += len(win)
    return total / count


# ----------------------------------------------------------------------
# Ensemble artifact persistence


def save_ensemble(ensemble: EnsembleModel, out_dir) -> None:
    """Write the artifact directory: a JSON manifest plus one checkpoint per
    member (exact round-trip)."""
    os.makedirs(out_dir, exist_ok=True)
    st = ensemble.stats
    hyper = ensemble.hyper
    manifest = {
        "m": len(ensemble),
        "seeds": ensemble.seeds,
        "stats": {"mu_in": st.mu_in.tolist(), "sigma_in": st.sigma_in.tolist(),
                  "mu_acc": st.mu_acc.tolist(), "sigma_acc": st.sigma_acc.tolist()},
        "hyper": {
            "k_steps": hyper.k_steps, "stride": hyper.stride, "k_init": hyper.k_init,
            "use_init_net": hyper.use_init_net, "n_hidden": hyper.n_hidden,
            "width": hyper.width, "lr": hyper.lr, "batch_size": hyper.batch_size,
            "epochs": hyper.epochs, "integrator": hyper.integrator,
            "grad_clip": hyper.grad_clip, "calib_samples": hyper.calib_samples,
            "noise_sigma": [None if not math.isfinite(s) else s
                            for s in hyper.noise.as_array()],
        },
        "members": [f"member_{i:03d}.npz" for i in range(len(ensemble))],
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8",
              newline="\n") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    for i, member in enumerate(ensemble.members):
        extra = {"out_mu": member.model.out_mu, "out_sigma": member.model.out_sigma,
                 "loss_history": member.loss_history}
        if member.init_net is not None:
            extra.update({
                "init_dims": np.array(member.init_net.shape.dims),
                "init_params": member.init_net.params,
                "init_k": member.init_net.k_init,
                "enc_mu": member.init_net.enc_mu,
                "enc_sigma": member.init_net.enc_sigma,
            })
        fnn.save_params(os.path.join(out_dir, manifest["members"][i]),
                        member.model.shape, member.model.params, extra)


def load_ensemble(in_dir) -> EnsembleModel:
    with open(os.path.join(in_dir, "manifest.json"), "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    s = manifest["stats"]
    stats = StandardizationStats(np.array(s["mu_in"]), np.array(s["sigma_in"]),
                                 np.array(s["mu_acc"]), np.array(s["sigma_acc"]))
    h = manifest["hyper"]
    sig = [math.inf if v is None else v for v in h["noise_sigma"]]
    hyper = TrainConfig(
        k_steps=h["k_steps"], stride=h["stride"], k_init=h["k_init"],
        use_init_net=h["use_init_net"], n_hidden=h["n_hidden"], width=h["width"],
        lr=h["lr"], batch_size=h["batch_size"], epochs=h["epochs"],
        integrator=h["integrator"], grad_clip=h["grad_clip"],
        calib_samples=h["calib_samples"],
        noise=NoiseConfig(*sig))
    members = []
    for i, fname in enumerate(manifest["members"]):
        shape, params, extra = fnn.load_params(os.path.join(in_dir, fname))
        model = DynamicsModel(shape, params, stats, extra["out_mu"], extra["out_sigma"])
        init_net = None
        if "init_params" in extra:
            dims = extra["init_dims"]
            init_shape = NetShape(int(dims[0]), len(dims) - 2, int(dims[1]),
                                  int(dims[-1]))
            init_net = InitStateNet(init_shape, extra["init_params"],
                                    int(extra["init_k"]), extra["enc_mu"],
                                    extra["enc_sigma"])
        members.append(TrainedMember(model, init_net, extra["loss_history"],
                                     manifest["seeds"][i], hyper))
    return EnsembleModel(members, stats, hyper, manifest["seeds"])
