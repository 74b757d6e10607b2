"""Minimal feedforward network on a flat float64 parameter vector.

Affine layers with tanh hidden activations and a linear final layer, exact
reverse-mode gradients through a forward tape, fan-in uniform initialization,
and a bias-corrected Adam optimizer.  All operations accept a single input
vector or a batch (rows = samples); parameter gradients are summed over the
batch.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

ACTIVATIONS = ("tanh",)


@dataclass(frozen=True)
class NetShape:
    in_dim: int
    n_hidden: int       # number of hidden layers
    width: int          # hidden layer width
    out_dim: int
    activation: str = "tanh"

    def __post_init__(self):
        if self.n_hidden < 1 or self.width < 1 or self.in_dim < 1 or self.out_dim < 1:
            raise ValueError("network dimensions must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def dims(self) -> tuple:
        return (self.in_dim,) + (self.width,) * self.n_hidden + (self.out_dim,)

    @property
    def n_params(self) -> int:
        d = self.dims
        return sum((d[i] + 1) * d[i + 1] for i in range(len(d) - 1))


def layer_slices(shape: NetShape):
    """Flat-vector slices ((w_slice, b_slice, (n_out, n_in)), ...) per layer."""
    out = []
    pos = 0
    d = shape.dims
    for i in range(len(d) - 1):
        n_in, n_out = d[i], d[i + 1]
        w = slice(pos, pos + n_in * n_out)
        pos += n_in * n_out
        b = slice(pos, pos + n_out)
        pos += n_out
        out.append((w, b, (n_out, n_in)))
    return out


def init_params(shape: NetShape, rng: np.random.Generator) -> np.ndarray:
    """Uniform fan-in initialization, U(-1/sqrt(n_in), 1/sqrt(n_in)) per layer."""
    theta = np.empty(shape.n_params)
    for w, b, (n_out, n_in) in layer_slices(shape):
        bound = 1.0 / np.sqrt(n_in)
        theta[w] = rng.uniform(-bound, bound, n_out * n_in)
        theta[b] = rng.uniform(-bound, bound, n_out)
    return theta


@dataclass
class Tape:
    """Per-layer inputs retained by a forward pass for the backward pass."""

    shape: NetShape
    params: np.ndarray
    inputs: list          # activations entering each layer, (B, n_in) each
    single: bool          # input was a 1-D vector


def forward(params: np.ndarray, shape: NetShape, x: np.ndarray):
    """Network output and tape.  Hidden layers apply tanh; the final layer is
    affine with no activation."""
    if params.shape != (shape.n_params,):
        raise ValueError(f"parameter vector has length {len(params)}, "
                         f"expected {shape.n_params}")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    a = x[None, :] if single else x
    if a.shape[1] != shape.in_dim:
        raise ValueError(f"input dim {a.shape[1]} != {shape.in_dim}")
    slices = layer_slices(shape)
    inputs = []
    for i, (w, b, (n_out, n_in)) in enumerate(slices):
        inputs.append(a)
        z = a @ params[w].reshape(n_out, n_in).T + params[b]
        a = np.tanh(z) if i < len(slices) - 1 else z
    y = a[0] if single else a
    return y, Tape(shape, params, inputs, single)


def backward(tape: Tape, g: np.ndarray):
    """Gradients of sum(g * output) w.r.t. the parameters and the input.

    ``g`` must match the forward output's shape.  Returns (grad_params,
    grad_x) with grad_params summed over the batch.
    """
    shape, params = tape.shape, tape.params
    if params.shape != (shape.n_params,):
        raise ValueError("tape does not match its parameter vector")
    g = np.asarray(g, dtype=float)
    g2 = g[None, :] if tape.single else g
    slices = layer_slices(shape)
    if len(tape.inputs) != len(slices) or g2.shape != (tape.inputs[0].shape[0], shape.out_dim):
        raise ValueError("upstream gradient does not match the tape")
    grad = np.zeros_like(params)
    for i in range(len(slices) - 1, -1, -1):
        w, b, (n_out, n_in) = slices[i]
        a_in = tape.inputs[i]
        grad[w] = (g2.T @ a_in).ravel()
        grad[b] = g2.sum(axis=0)
        g2 = g2 @ params[w].reshape(n_out, n_in)
        if i > 0:
            # tanh' = 1 - tanh^2; this layer's stored input is tanh of the
            # previous pre-activation.
            g2 = g2 * (1.0 - a_in**2)
    grad_x = g2[0] if tape.single else g2
    return grad, grad_x


@dataclass
class AdamState:
    """Adam optimizer state: first/second moments, step counter, and settings."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @staticmethod
    def fresh(n_params: int, lr: float = 1e-4, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return AdamState(np.zeros(n_params), np.zeros(n_params), 0, lr, beta1, beta2, eps)


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray):
    """One bias-corrected Adam update; returns (new_state, new_params)."""
    if grad.shape != params.shape or state.m.shape != params.shape:
        raise ValueError("parameter/gradient/state lengths disagree")
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite gradient passed to adam_step")
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad**2
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return replace(state, m=m, v=v, step=t), new_params


def save_params(path, shape: NetShape, params: np.ndarray,
                extra: Optional[dict] = None) -> None:
    """Checkpoint a parameter vector with its shape header (exact round-trip)."""
    payload = {"dims": np.array(shape.dims), "activation": shape.activation,
               "params": params}
    if extra:
        payload.update(extra)
    np.savez(path, **payload)


def load_params(path):
    """Load a checkpoint; returns (shape, params, extras)."""
    with np.load(path, allow_pickle=False) as data:
        dims = data["dims"]
        shape = NetShape(int(dims[0]), len(dims) - 2, int(dims[1]), int(dims[-1]),
                         str(data["activation"]))
        params = data["params"]
        extras = {k: data[k] for k in data.files
                  if k not in ("dims", "activation", "params")}
    if params.shape != (shape.n_params,):
        raise ValueError(f"{path}: parameter length does not match shape header")
    return shape, params, extras
