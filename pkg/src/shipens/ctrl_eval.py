"""Heading-keeping PD control evaluation.

Closed-loop episodes run either on an ensemble member (the rudder command
feeds the learned dynamics directly, one RK4 step per control interval) or
on the truth simulator (substepped MMG dynamics with actuator-response lag).
A gain-grid sweep scores every (K_P, K_D) pair on P member-driven particles
and on the truth system, aggregating per-particle scores into mean and
worst-case values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .core import ActuatorState, Pose, ShipState, TrueWind, Velocity, wrap_angle
from .dataset import SimSetup
from .integrate import rk4_step
from .sysid import EnsembleModel, dyn_batch
from .vessel import SimulationDiverged, simulate

RUDDER_CLIP = math.radians(35.0)  # intersection of the port/starboard ranges

SWEEP_HEADER = "kp,kd,score_truth,score_mean,score_worst,score_best,diverged"


@dataclass(frozen=True)
class PDGains:
    kp: float   # rudder (rad) per heading error (rad)
    kd: float   # rudder (rad) per yaw rate (rad/s)

    def __post_init__(self):
        if not (math.isfinite(self.kp) and math.isfinite(self.kd)):
            raise ValueError("gains must be finite")


@dataclass(frozen=True)
class PDScenario:
    """Heading-keeping evaluation protocol: a step command to the target
    heading from a straight run, no wind, no thruster."""

    u0: float = 0.5                       # initial surge speed (m/s)
    target: float = math.pi / 2           # commanded heading (rad)
    duration: float = 100.0               # episode length (s)
    dt_ctrl: float = 1.0                  # control/zero-order-hold step (s)

    def initial_state(self) -> ShipState:
        return ShipState(Pose(0.0, 0.0, 0.0), Velocity(self.u0, 0.0, 0.0))


@dataclass
class SweepCell:
    kp: float
    kd: float
    score_truth: float
    score_mean: float
    score_worst: float
    score_best: float
    diverged: int
    particle_scores: np.ndarray


@dataclass
class SweepReport:
    cells: list
    p: int
    scheme: str


def pd_command(state: ShipState, gains: PDGains, target: float) -> ActuatorState:
    """PD rudder command: both rudders equal, clipped to +/-35 deg, thruster off."""
    delta = -gains.kp * wrap_angle(state.pose.psi - target) - gains.kd * state.vel.r
    delta = min(max(delta, -RUDDER_CLIP), RUDDER_CLIP)
    return ActuatorState(delta, delta, 0.0)


def _pd_delta_batch(x: np.ndarray, gains: PDGains, target: float) -> np.ndarray:
    err = np.array([wrap_angle(p - target) for p in x[:, 2]])
    return np.clip(-gains.kp * err - gains.kd * x[:, 5], -RUDDER_CLIP, RUDDER_CLIP)


StepFn = Callable[[np.ndarray, ActuatorState], np.ndarray]


def closed_loop_run(step_fn: StepFn, gains: PDGains, scenario: PDScenario):
    """One closed-loop episode on an arbitrary stepper.

    ``step_fn(x, cmd)`` advances the 6-state over one control interval under
    the held command.  Returns (trajectory, score, diverged); the score is
    the rectangle-rule integral of |heading error| + |yaw rate|, set to +inf
    when the state leaves the finite range.
    """
    n = round(scenario.duration / scenario.dt_ctrl)
    x = scenario.initial_state().as_array()
    traj = np.empty((n + 1, 6))
    score = 0.0
    for k in range(n):
        traj[k] = x
        score += (abs(wrap_angle(x[2] - scenario.target)) + abs(x[5])) * scenario.dt_ctrl
        cmd = pd_command(ShipState.from_array(x), gains, scenario.target)
        x = step_fn(x, cmd)
        if not np.all(np.isfinite(x)):
            traj[k + 1:] = np.nan
            return traj, math.inf, True
    traj[n] = x
    return traj, score, False


def truth_step_fn(setup: SimSetup, dt_ctrl: float) -> StepFn:
    """Stepper over the truth simulator: MMG dynamics at the simulation step
    with actuator-response lag, wind disabled.  Keeps the actuator state
    across control intervals."""
    act_holder = {"act": ActuatorState(0.0, 0.0, 0.0)}

    def step(x: np.ndarray, cmd: ActuatorState) -> np.ndarray:
        def commander(t, ship, act):
            return cmd
        try:
            res = simulate(ShipState.from_array(x), commander, TrueWind(0.0, 0.0),
                           setup.vessel, setup.actuator, None, setup.dt_sim,
                           dt_ctrl, seed=0, initial_act=act_holder["act"])
        except SimulationDiverged:
            return np.full(6, np.nan)
        act_holder["act"] = ActuatorState(*res.act[-1])
        return res.x[-1]

    return step


def closed_loop_truth(gains: PDGains, scenario: PDScenario, setup: SimSetup):
    """Closed-loop episode on the truth system; returns (trajectory, score,
    diverged)."""
    return closed_loop_run(truth_step_fn(setup, scenario.dt_ctrl), gains, scenario)


def closed_loop_particles(ensemble: EnsembleModel, assign: np.ndarray,
                          gains: PDGains, scenario: PDScenario,
                          rng: Optional[np.random.Generator] = None):
    """Closed-loop episodes for P particles under their assigned members.

    Feedback uses each particle's own predicted state; commands feed the
    learned dynamics directly (no actuator-response lag -- trained models
    absorb the actuator behavior seen in the data), one RK4 step per control
    interval, wind zero.  With ``rng`` set, the member is redrawn per step
    (TS1 closed loop); otherwise the given assignment holds for the episode.

    Returns (scores, diverged) arrays of length P.
    """
    p = len(assign)
    n = round(scenario.duration / scenario.dt_ctrl)
    dt = scenario.dt_ctrl
    x = np.repeat(scenario.initial_state().as_array()[None, :], p, axis=0)
    scores = np.zeros(p)
    alive = np.ones(p, dtype=bool)
    w_zero = np.zeros((p, 2))
    for k in range(n):
        err = np.array([wrap_angle(v) for v in x[:, 2] - scenario.target])
        scores[alive] += (np.abs(err[alive]) + np.abs(x[alive, 5])) * dt
        delta = np.clip(-gains.kp * err - gains.kd * x[:, 5], -RUDDER_CLIP, RUDDER_CLIP)
        u_cmd = np.column_stack([delta, delta, np.zeros(p)])
        step_assign = rng.integers(0, len(ensemble), size=p) if rng is not None else assign
        x_next = x.copy()
        for mi in np.unique(step_assign[alive]):
            rows = alive & (step_assign == mi)
            model = ensemble.members[mi].model
            f = lambda xv: dyn_batch(model, xv, u_cmd[rows], w_zero[rows])
            x_next[rows] = rk4_step(f, x[rows], dt)
        bad = ~np.all(np.isfinite(x_next), axis=1)
        if np.any(bad):
            x_next[bad] = x[bad]
            scores[bad & alive] = math.inf
            alive &= ~bad
        x = x_next
    return scores, ~alive


def aggregate_scores(scores: np.ndarray):
    """(mean, worst, best) with the mean clamped into [best, worst] so the
    order-statistic invariant survives floating-point rounding."""
    worst = float(np.max(scores))
    best = float(np.min(scores))
    if math.isinf(worst):
        finite = scores[np.isfinite(scores)]
        mean = math.inf if len(finite) < len(scores) else float(np.mean(scores))
    else:
        mean = float(np.mean(scores))
    return min(max(mean, best), worst), worst, best


# Worker context for parallel sweeps; populated before forking.
_SWEEP_CTX: dict = {}


def _eval_cell(task):
    kp, kd, cell_seed = task
    ctx = _SWEEP_CTX
    gains = PDGains(float(kp), float(kd))
    _, truth_score, _ = closed_loop_truth(gains, ctx["scenario"], ctx["setup"])
    if ctx["factories"] is not None:
        scores = np.empty(ctx["p"])
        for j, factory in enumerate(ctx["factories"]):
            _, scores[j], _ = closed_loop_run(factory(), gains, ctx["scenario"])
        diverged = int(np.sum(~np.isfinite(scores)))
    else:
        ensemble = ctx["ensemble"]
        assign = np.arange(ctx["p"]) % len(ensemble)
        rng = np.random.default_rng(cell_seed) if ctx["scheme"] == "ts1" else None
        scores, div = closed_loop_particles(ensemble, assign, gains,
                                            ctx["scenario"], rng)
        diverged = int(div.sum())
    mean, worst, best = aggregate_scores(scores)
    return SweepCell(float(kp), float(kd), truth_score, mean, worst, best,
                     diverged, scores)


def sweep(ensemble: Optional[EnsembleModel], kp_values: Sequence[float],
          kd_values: Sequence[float], scenario: PDScenario, setup: SimSetup,
          p: Optional[int] = None, seed: int = 0, scheme: str = "tsinf",
          particle_factories: Optional[Sequence] = None,
          jobs: int = 1) -> SweepReport:
    """Score every gain pair on P ensemble-driven particles and on the truth
    system.

    Member assignment is a fixed round-robin over the ensemble (every member
    covered once when P = M, the default), so the worst-case aggregate
    dominates any single member's score cell by cell.  ``scheme='ts1'``
    instead redraws the member each control step from a seeded generator.
    ``particle_factories`` substitutes arbitrary stepper factories for the
    particles (e.g. the truth system itself), overriding the ensemble path;
    each factory is called once per cell so steppers start fresh.  Cells
    evaluate in parallel for jobs > 1 (fork platforms); results do not
    depend on jobs.
    """
    if not len(kp_values) or not len(kd_values):
        raise ValueError("empty gain grid")
    if scheme not in ("tsinf", "ts1"):
        raise ValueError(f"unknown scheme {scheme!r}")
    if particle_factories is None and ensemble is None:
        raise ValueError("need an ensemble or explicit particle steppers")
    if p is None:
        p = len(particle_factories) if particle_factories is not None else len(ensemble)

    cell_seeds = [int(s.generate_state(1)[0]) for s in
                  np.random.SeedSequence(seed).spawn(len(kp_values) * len(kd_values))]
    tasks = [(kp, kd, cell_seeds[i * len(kd_values) + j])
             for i, kp in enumerate(kp_values) for j, kd in enumerate(kd_values)]
    _SWEEP_CTX.update(ensemble=ensemble, scenario=scenario, setup=setup, p=p,
                      scheme=scheme, factories=particle_factories)
    try:
        import multiprocessing as mp
        if jobs > 1 and particle_factories is None and mp.get_start_method() == "fork":
            import concurrent.futures as cf
            with cf.ProcessPoolExecutor(max_workers=jobs) as pool:
                cells = list(pool.map(_eval_cell, tasks))
        else:
            cells = [_eval_cell(t) for t in tasks]
    finally:
        _SWEEP_CTX.clear()
    return SweepReport(cells, p, scheme)


def write_sweep_csv(path, report: SweepReport) -> None:
    """One row per grid cell; scores in rad*s, +inf marks diverged episodes."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(SWEEP_HEADER + "\n")
        for c in report.cells:
            fh.write(f"{c.kp:.17g},{c.kd:.17g},{c.score_truth:.17g},"
                     f"{c.score_mean:.17g},{c.score_worst:.17g},"
                     f"{c.score_best:.17g},{c.diverged}\n")
