"""Figure rendering for the report-producing CLI paths.

Every function writes one PNG next to the delimited output it illustrates.
Matplotlib runs on the Agg backend so rendering works headless.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .fits import LineFit, ScalingReport
from .timelapse import AlphaProfile, OnsetTable
from .twotimescale import SimTrajectory

__all__ = [
    "plot_wave",
    "plot_profile",
    "plot_gradient_series",
    "plot_trajectory",
    "plot_scaling",
]


def _save(fig, path: str | Path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_wave(onsets: OnsetTable, fit: LineFit | None, path: str | Path) -> None:
    layers = sorted(l for l, t in onsets.onsets.items() if t is not None)
    steps = [onsets.onsets[l] for l in layers]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(layers, steps, "o", color="tab:blue", label="onset")
    if fit is not None and layers:
        xs = np.array([layers[0], layers[-1]], dtype=float)
        ax.plot(xs, fit.slope * xs + fit.intercept, "--", color="tab:red",
                label=f"fit: {fit.slope:.1f} steps/layer (R²={fit.r2:.2f})")
    ax.set_xlabel("layer")
    ax.set_ylabel("compression onset step")
    ax.set_title("Compression wave front")
    ax.legend()
    _save(fig, path)


def plot_profile(profile: AlphaProfile, path: str | Path) -> None:
    layers = list(range(profile.layer_count))
    vals = profile.as_sequence()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(layers, vals, "o-", color="tab:blue")
    peak = int(np.argmax(vals))
    ax.plot([peak], [vals[peak]], "r*", markersize=12, label=f"peak L{peak}")
    ax.set_xlabel("layer")
    ax.set_ylabel("alpha")
    ax.set_title(f"{profile.matrix_type} alpha profile, step {profile.step}")
    ax.legend()
    _save(fig, path)


def plot_gradient_series(series, reversal, path: str | Path) -> None:
    pairs = list(series)
    steps = [s for s, _ in pairs]
    grads = [g for _, g in pairs]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(steps, grads, "o-", color="tab:blue")
    ax.axhline(0.0, color="gray", lw=0.8)
    if reversal is not None:
        ax.axvspan(reversal[0], reversal[1], color="tab:orange", alpha=0.25,
                   label=f"reversal {reversal[0]}→{reversal[1]}")
        ax.legend()
    ax.set_xlabel("step")
    ax.set_ylabel("first − last layer mean SR")
    ax.set_title("Compression gradient evolution")
    _save(fig, path)


def plot_trajectory(traj: SimTrajectory, path: str | Path) -> None:
    L = traj.R.shape[1]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    cmap = plt.get_cmap("viridis")
    for l in range(L):
        c = cmap(l / max(L - 1, 1))
        ax1.plot(traj.times, traj.R[:, l], color=c, lw=1)
        ax2.plot(traj.times, traj.alpha[:, l], color=c, lw=1)
    ax1.set_xlabel("time")
    ax1.set_ylabel("stable rank")
    ax1.set_title("Fast relaxation (wave-gated)")
    ax2.set_xlabel("time")
    ax2.set_ylabel("alpha")
    ax2.set_title("Slow relaxation (per-layer targets)")
    _save(fig, path)


def plot_scaling(rows, report: ScalingReport, path: str | Path) -> None:
    L = np.array([r[0] for r in rows], dtype=float)
    dalpha = [r[1] for r in rows]
    amax = [r[2] for r in rows]
    peak = [r[3] for r in rows]
    xs = np.linspace(L.min(), L.max(), 50)
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.2))
    for ax, y, fit, label in (
        (axes[0], dalpha, report.delta_alpha_fit, "alpha spread"),
        (axes[1], amax, report.alpha_max_fit, "alpha max"),
    ):
        ax.plot(L, y, "o", color="tab:blue")
        ax.plot(xs, fit.prefactor * xs**fit.exponent, "--", color="tab:red",
                label=f"∝ L^{fit.exponent:.2f} (R²={fit.r2:.2f})")
        ax.set_xlabel("depth L")
        ax.set_ylabel(label)
        ax.legend()
    lf = report.peak_position_fit
    axes[2].plot(L, peak, "o", color="tab:blue")
    axes[2].plot(xs, lf.slope * xs + lf.intercept, "--", color="tab:red",
                 label=f"{lf.slope:.4f}·L + {lf.intercept:.2f} (R²={lf.r2:.2f})")
    axes[2].set_xlabel("depth L")
    axes[2].set_ylabel("peak position / L")
    axes[2].legend()
    _save(fig, path)
