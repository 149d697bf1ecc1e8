"""Figure rendering for the CLI report path. Every figure lands next to its CSV."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_DOT = dict(s=4, alpha=0.5, linewidths=0)


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_scatter_fig(points: np.ndarray, path, title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.scatter(points[:, 0], points[:, 1], **_DOT)
    ax.set_aspect("equal")
    ax.set_title(title)
    _finish(fig, path)


def save_run_fig(states: np.ndarray, t_query: list[float], path, title: str = "") -> None:
    """One panel per queried time for a (n, |t|, 2) sample run."""
    k = len(t_query)
    fig, axes = plt.subplots(1, k, figsize=(4 * k, 4), squeeze=False)
    for j, t in enumerate(t_query):
        ax = axes[0, j]
        ax.scatter(states[:, j, 0], states[:, j, 1], **_DOT)
        ax.set_aspect("equal")
        ax.set_title(f"t = {t:g}")
    fig.suptitle(title)
    _finish(fig, path)


def save_pair_fig(a: np.ndarray, b: np.ndarray, labels: tuple[str, str], path,
                  title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.scatter(a[:, 0], a[:, 1], label=labels[0], **_DOT)
    ax.scatter(b[:, 0], b[:, 1], label=labels[1], **_DOT)
    ax.set_aspect("equal")
    ax.legend(markerscale=3)
    ax.set_title(title)
    _finish(fig, path)


def save_traj_overlay_fig(cfm_states: np.ndarray, koop_states: np.ndarray,
                          path, title: str = "") -> None:
    """Reference rollouts as solid lines, linear-evolution rollouts dashed."""
    fig, ax = plt.subplots(figsize=(6, 6))
    for i in range(cfm_states.shape[0]):
        ax.plot(cfm_states[i, :, 0], cfm_states[i, :, 1], "-", color="C0", lw=1, alpha=0.8)
        ax.plot(koop_states[i, :, 0], koop_states[i, :, 1], "--", color="C1", lw=1, alpha=0.8)
    ax.plot([], [], "-", color="C0", label="ODE rollout")
    ax.plot([], [], "--", color="C1", label="linear evolution")
    ax.set_aspect("equal")
    ax.legend()
    ax.set_title(title)
    _finish(fig, path)


def save_spectrum_fig(values: np.ndarray, alphas: np.ndarray, path, title: str = "") -> None:
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    ax1.scatter(values.real, values.imag, s=14)
    ax1.axvline(0.0, color="grey", lw=0.5)
    ax1.set_xlabel("Re(lambda)")
    ax1.set_ylabel("Im(lambda)")
    ax1.set_title("generator spectrum")
    ax2.bar(np.arange(alphas.size), np.abs(alphas), width=0.8)
    ax2.set_xlabel("mode (sorted by Re)")
    ax2.set_ylabel("|alpha|")
    ax2.set_title("projection coefficients")
    fig.suptitle(title)
    _finish(fig, path)


def save_bench_fig(rows, path, title: str = "") -> None:
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    methods = sorted({r.method for r in rows})
    for m in methods:
        sub = sorted((r for r in rows if r.method == m), key=lambda r: r.steps)
        steps = [r.steps for r in sub]
        ax1.plot(steps, [r.samples_per_sec for r in sub], "o-", label=m)
        ax2.plot(steps, [r.mmd for r in sub], "o-", label=m)
    for ax, ylab in ((ax1, "samples / s"), (ax2, "MMD^2 vs target")):
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("steps")
        ax.set_ylabel(ylab)
        ax.legend()
    fig.suptitle(title)
    _finish(fig, path)


def save_loss_fig(curves: dict[str, list[float]], path, title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, values in curves.items():
        if values:
            ax.plot(values, label=name, lw=0.8)
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend()
    ax.set_title(title)
    _finish(fig, path)
