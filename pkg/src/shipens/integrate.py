"""Fixed-step explicit integrators used across simulation, training, and prediction.

Both steppers advance an autonomous-looking ODE ``xdot = f(x)`` over one
interval; time dependence is handled by the callers, which hold inputs
constant over each step (zero-order hold).  ``f`` may operate on vectors or
on batches of states, as long as it maps arrays of one shape to arrays of
the same shape.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

Dynamics = Callable[[np.ndarray], np.ndarray]

INTEGRATORS = ("euler", "rk4")


def euler_step(f: Dynamics, x: np.ndarray, dt) -> np.ndarray:
    return x + dt * f(x)


def rk4_step(f: Dynamics, x: np.ndarray, dt) -> np.ndarray:
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def get_stepper(name: str):
    if name == "euler":
        return euler_step
    if name == "rk4":
        return rk4_step
    raise ValueError(f"unknown integrator {name!r}; expected one of {INTEGRATORS}")
