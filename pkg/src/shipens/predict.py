"""Probabilistic motion prediction with a trained ensemble.

P particles start from one initial state and are propagated under the
recorded inputs by RK4, each step driven by an ensemble member: TS-inf
assigns one member per particle for the whole rollout, TS1 redraws the
member every step.  Per-step particle statistics (velocity mean/covariance
in population form) feed the squared Euclidean and Mahalanobis metrics
against the ground truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
import numpy as np

from .dataset import Dataset, window
from .sysid import EnsembleModel, dyn_batch

TS1 = "ts1"
TSINF = "tsinf"
SCHEMES = (TS1, TSINF)

MAHA_JITTER = 1e-9
# Covariance trace below which the Mahalanobis term is jitter-dominated.
DEGENERATE_TRACE = 1e3 * MAHA_JITTER

PARTICLES_HEADER = "window,step,t,particle,member,x0,y0,psi,u,vm,r"
SUMMARY_HEADER = "window,t0,l_eucl,l_maha,diverged,degenerate_steps"


@dataclass
class ParticleCloud:
    """P particle trajectories with per-step velocity statistics."""

    t: np.ndarray            # (K,)
    states: np.ndarray       # (P, K, 6)
    members: np.ndarray      # (P,) for tsinf, (P, K-1) for ts1
    mu: np.ndarray           # (K, 3) velocity means
    cov: np.ndarray          # (K, 3, 3) velocity covariances
    diverged: np.ndarray     # (P,) particles frozen after leaving finite range
    scheme: str
    seed: int

    @property
    def n_particles(self) -> int:
        return self.states.shape[0]

    def member_into_step(self, k: int) -> np.ndarray:
        """Member that drove each particle into step k (k >= 1)."""
        return self.members if self.members.ndim == 1 else self.members[:, k - 1]


@dataclass
class WindowMetrics:
    label: str
    t0: float
    eucl: float
    maha: float
    diverged: int
    degenerate_steps: int


@dataclass
class MetricReport:
    """Aggregate and per-window prediction metrics.

    ``degenerate_windows`` counts windows whose Mahalanobis term was
    jitter-dominated at some step (near-zero particle covariance, e.g. a
    single-member ensemble); their ``maha`` values measure the jitter floor,
    not the prediction, and must not be read as model quality.
    """

    l_eucl: float
    l_maha: float
    rows: list
    excluded: int = 0

    @property
    def degenerate_windows(self) -> int:
        return sum(1 for r in self.rows if r.degenerate_steps > 0)


def _advance(model, x: np.ndarray, u_k: np.ndarray, w_k: np.ndarray, dt: float,
             integrator: str) -> np.ndarray:
    f = lambda xv: dyn_batch(model, xv, u_k, w_k)
    if integrator == "euler":
        return x + dt * f(x)
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def propagate(ensemble: EnsembleModel, scheme: str, init_state, u_seq: np.ndarray,
              w_seq: np.ndarray, times: np.ndarray, p: int, seed: int,
              stratified: bool = False, integrator: str = "rk4") -> ParticleCloud:
    """Propagate P particles from one initial state under recorded inputs.

    Member assignment is uniform from a dedicated generator (``stratified``
    instead deals members round-robin so each appears at least floor(P/M)
    times; TS-inf only).  Particles whose state leaves the finite range are
    frozen at their last finite state and flagged rather than aborting the
    cloud.  Deterministic for a fixed seed.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown sampling scheme {scheme!r}; expected {SCHEMES}")
    if p < 1:
        raise ValueError("need at least one particle")
    k = len(times)
    m = len(ensemble)
    rng = np.random.default_rng(seed)
    x0 = np.asarray(init_state, dtype=float).reshape(6)

    states = np.empty((p, k, 6))
    states[:, 0] = x0
    alive = np.ones(p, dtype=bool)

    if scheme == TSINF:
        assign = (np.arange(p) % m if stratified
                  else rng.integers(0, m, size=p))
        members_log = assign
    else:
        members_log = rng.integers(0, m, size=(p, k - 1))

    x = np.repeat(x0[None, :], p, axis=0)
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(k - 1):
            dt = times[i + 1] - times[i]
            u_k = np.repeat(u_seq[i][None, :], p, axis=0)
            w_k = np.repeat(w_seq[i][None, :], p, axis=0)
            step_assign = members_log if scheme == TSINF else members_log[:, i]
            x_next = x.copy()
            for mi in np.unique(step_assign[alive]):
                rows = alive & (step_assign == mi)
                x_next[rows] = _advance(ensemble.members[mi].model, x[rows],
                                        u_k[rows], w_k[rows], dt, integrator)
            bad = ~np.all(np.isfinite(x_next), axis=1)
            if np.any(bad):
                x_next[bad] = x[bad]
                alive &= ~bad
            x = x_next
            states[:, i + 1] = x

    mu, cov = cloud_stats(states)
    return ParticleCloud(times.copy(), states, members_log, mu, cov,
                         ~alive, scheme, seed)


def cloud_stats(states: np.ndarray):
    """Per-step velocity mean and population covariance of the particles.

    Divide-by-P outer-product form: cov = E[nu nu^T] - mu mu^T.
    """
    nu = states[:, :, 3:6]
    p = nu.shape[0]
    mu = nu.mean(axis=0)
    second = np.einsum("pki,pkj->kij", nu, nu) / p
    cov = second - mu[:, :, None] * mu[:, None, :]
    return mu, cov


def metrics(cloud: ParticleCloud, truth: np.ndarray,
            jitter: float = MAHA_JITTER) -> WindowMetrics:
    """Mean squared Euclidean and Mahalanobis distances against the truth.

    ``truth`` is the (K, 6) reference state sequence; velocities are compared
    for k = 1..K-1 (the initial step is the shared starting point).  The
    covariance is inverted after adding jitter*I, which keeps rank-deficient
    clouds finite; steps whose covariance trace sits at the jitter scale are
    counted as degenerate.
    """
    k = len(cloud.t)
    if truth.shape[0] != k:
        raise ValueError("truth length does not match the cloud")
    d = truth[:, 3:6] - cloud.mu
    eucl = maha = 0.0
    degenerate = 0
    eye = np.eye(3)
    for i in range(1, k):
        eucl += float(d[i] @ d[i])
        cov = cloud.cov[i]
        if np.trace(cov) < DEGENERATE_TRACE:
            degenerate += 1
        maha += float(d[i] @ np.linalg.solve(cov + jitter * eye, d[i]))
    n = k - 1
    return WindowMetrics(label="", t0=float(cloud.t[0]), eucl=eucl / n,
                         maha=maha / n, diverged=int(cloud.diverged.sum()),
                         degenerate_steps=degenerate)


def predict_windows(ensemble: EnsembleModel, scheme: str, test: Dataset, p: int,
                    k: int, seed: int, stratified: bool = False,
                    integrator: str = "rk4", keep_clouds: bool = False):
    """Windowed prediction protocol over a test dataset.

    The dataset is cut into non-overlapping K-step windows; each window's
    cloud starts from its first true state (observed where no truth is
    stored) and is driven by the recorded inputs and winds.  Returns
    (MetricReport, clouds) where clouds is None unless ``keep_clouds``.
    Windows with non-finite metrics are excluded from the aggregates and
    counted.
    """
    windows, _ = window(test, k, k)
    if not windows:
        raise ValueError(f"no {k}-step windows in dataset {test.split!r}")
    seeds = [int(s.generate_state(1)[0]) for s in
             np.random.SeedSequence(seed).spawn(len(windows))]
    rows = []
    clouds = [] if keep_clouds else None
    excluded = 0
    eucl_sum = maha_sum = 0.0
    for i, win in enumerate(windows):
        ref = win.truth if win.truth is not None else win.y
        cloud = propagate(ensemble, scheme, ref[0], win.u, win.w, win.t, p,
                          seeds[i], stratified=stratified, integrator=integrator)
        wm = metrics(cloud, ref)
        wm.label = win.label
        if math.isfinite(wm.eucl) and math.isfinite(wm.maha):
            rows.append(wm)
            eucl_sum += wm.eucl
            maha_sum += wm.maha
        else:
            excluded += 1
        if keep_clouds:
            clouds.append(cloud)
    n = max(len(rows), 1)
    report = MetricReport(eucl_sum / n, maha_sum / n, rows, excluded)
    return report, clouds


# ----------------------------------------------------------------------
# CSV emission


def write_summary_csv(path, report: MetricReport) -> None:
    """Per-window metric rows: window id, metrics, diverged particle count."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(SUMMARY_HEADER + "\n")
        for r in report.rows:
            fh.write(f"{r.label},{r.t0:.17g},{r.eucl:.17g},{r.maha:.17g},"
                     f"{r.diverged},{r.degenerate_steps}\n")


def write_particles_csv(path, clouds: list, labels: list) -> None:
    """Per-window, per-step, per-particle state rows.

    ``member`` is the member index that drove the particle into the row's
    step (-1 for the shared initial step)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(PARTICLES_HEADER + "\n")
        for label, cloud in zip(labels, clouds):
            for step in range(len(cloud.t)):
                mem = (np.full(cloud.n_particles, -1) if step == 0
                       else cloud.member_into_step(step))
                t = cloud.t[step]
                for pi in range(cloud.n_particles):
                    s = cloud.states[pi, step]
                    fh.write(f"{label},{step},{t:.17g},{pi},{mem[pi]},"
                             + ",".join(f"{v:.17g}" for v in s) + "\n")
