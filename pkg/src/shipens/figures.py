"""Report figures rendered next to the delimited outputs.

Every CLI report path drops PNG figures beside its CSV files: dataset
overviews, training loss curves, prediction metric scatters and
ensemble-size trends, and gain-sweep heatmaps.  Rendering is deterministic
(fixed dpi, fixed metadata) so repeated runs produce identical bytes.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

DPI = 150
_METADATA = {"Software": "shipens"}


def _save(fig, path) -> None:
    fig.savefig(path, dpi=DPI, metadata=_METADATA)
    plt.close(fig)


def dataset_figure(records, path, title: str = "") -> None:
    """Top-down tracks and velocity traces of a dataset split."""
    fig, axes = plt.subplots(1, 2, figsize=(11, 4.5))
    cmap = plt.get_cmap("tab20")
    for i, rec in enumerate(records):
        color = cmap(i % 20)
        axes[0].plot(rec.y[:, 1], rec.y[:, 0], color=color, lw=0.9, label=rec.label)
        axes[1].plot(rec.t, rec.y[:, 3], color=color, lw=0.8)
    axes[0].set_xlabel("y0 east (m)")
    axes[0].set_ylabel("x0 north (m)")
    axes[0].set_title(f"tracks {title}")
    axes[0].set_aspect("equal", adjustable="datalim")
    if len(records) <= 12:
        axes[0].legend(fontsize=6, loc="best")
    axes[1].set_xlabel("t (s)")
    axes[1].set_ylabel("u (m/s)")
    axes[1].set_title("surge velocity")
    axes[1].grid(alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def loss_figure(histories, seeds, path) -> None:
    """Per-member mean training loss per epoch, log scale."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for hist, seed in zip(histories, seeds):
        ax.semilogy(np.arange(1, len(hist) + 1), hist, lw=0.9, label=f"seed {seed}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean window loss")
    ax.set_title("rollout likelihood training")
    ax.grid(alpha=0.3, which="both")
    if len(histories) <= 16:
        ax.legend(fontsize=6)
    fig.tight_layout()
    _save(fig, path)


def scatter_figure(rows_by_scheme: dict, path, title: str = "") -> None:
    """Per-window Euclidean vs Mahalanobis distances, one marker set per
    sampling scheme."""
    fig, ax = plt.subplots(figsize=(6, 5))
    markers = {"tsinf": "o", "ts1": "^"}
    for scheme, rows in rows_by_scheme.items():
        if not rows:
            continue
        eucl = [r.eucl for r in rows]
        maha = [r.maha for r in rows]
        ax.scatter(eucl, maha, s=18, alpha=0.7, marker=markers.get(scheme, "s"),
                   label=scheme)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("squared Euclidean distance")
    ax.set_ylabel("squared Mahalanobis distance")
    ax.set_title(f"per-window prediction metrics {title}")
    ax.grid(alpha=0.3, which="both")
    ax.legend()
    fig.tight_layout()
    _save(fig, path)


def trend_figure(trend: dict, path, title: str = "") -> None:
    """Aggregate metrics against ensemble size, one line per scheme.

    ``trend`` maps scheme -> (sizes, l_eucl list, l_maha list).
    """
    fig, axes = plt.subplots(1, 2, figsize=(10, 4.2))
    for scheme, (sizes, eucl, maha) in trend.items():
        axes[0].plot(sizes, eucl, "o-", label=scheme)
        axes[1].semilogy(sizes, maha, "o-", label=scheme)
    for ax, name in zip(axes, ("L_Eucl", "L_Maha")):
        ax.set_xlabel("ensemble size M")
        ax.set_ylabel(name)
        ax.grid(alpha=0.3)
        ax.legend()
    fig.suptitle(f"metrics vs ensemble size {title}")
    fig.tight_layout()
    _save(fig, path)


def sweep_figure(report, path) -> None:
    """Heatmaps of the gain sweep: truth, mean, worst-case, and the
    worst-minus-truth margin (negative cells overestimate performance)."""
    kp = sorted({c.kp for c in report.cells})
    kd = sorted({c.kd for c in report.cells})
    idx = {(c.kp, c.kd): c for c in report.cells}

    def grid(attr):
        g = np.full((len(kd), len(kp)), np.nan)
        for i, d in enumerate(kd):
            for j, p_ in enumerate(kp):
                g[i, j] = getattr(idx[(p_, d)], attr)
        return g

    truth = grid("score_truth")
    mean = grid("score_mean")
    worst = grid("score_worst")
    margin = np.where(np.isfinite(worst), worst - truth, np.nan)
    panels = [("truth score", truth), ("mean score", mean),
              ("worst-case score", worst), ("worst - truth", margin)]

    fig, axes = plt.subplots(2, 2, figsize=(10, 8))
    extent = (min(kp) - 0.5, max(kp) + 0.5, min(kd) - 0.5, max(kd) + 0.5)
    for ax, (name, g) in zip(axes.ravel(), panels):
        masked = np.ma.masked_invalid(g)
        cmap = "RdBu" if name.startswith("worst -") else "viridis"
        im = ax.imshow(masked, origin="lower", aspect="auto", extent=extent,
                       cmap=cmap)
        ax.set_title(name)
        ax.set_xlabel("K_P")
        ax.set_ylabel("K_D")
        fig.colorbar(im, ax=ax, shrink=0.85)
    fig.suptitle(f"PD gain sweep ({report.scheme}, P={report.p})")
    fig.tight_layout()
    _save(fig, path)
