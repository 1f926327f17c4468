"""Matplotlib figure rendering for simulation runs and horizon sweeps.

Figures land next to the delimited output; they are diagnostic artifacts and
are excluded from the determinism guarantees.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def plot_run(records, path, title: str = "") -> Path:
    """Four-panel run overview: velocity, SOC, source powers, cumulative H2."""
    path = Path(path)
    t = np.array([r.t for r in records])
    fig, axes = plt.subplots(4, 1, figsize=(9, 10), sharex=True)

    axes[0].plot(t, [r.v for r in records], lw=0.8, color="tab:blue")
    axes[0].set_ylabel("velocity (m/s)")

    axes[1].plot(t, [r.soc for r in records], lw=0.9, color="tab:green")
    axes[1].set_ylabel("SOC")
    hev = np.array([r.mode == "hev" for r in records])
    if hev.any():
        axes[1].fill_between(t, 0, 1, where=hev, transform=axes[1].get_xaxis_transform(),
                             alpha=0.08, color="tab:red", label="HEV mode")
        axes[1].legend(loc="upper right", fontsize=8)

    axes[2].plot(t, [r.p_fc / 1000 for r in records], lw=0.8, label="fuel cell")
    axes[2].plot(t, [r.p_batt / 1000 for r in records], lw=0.8, label="battery")
    axes[2].set_ylabel("power (kW)")
    axes[2].legend(loc="upper right", fontsize=8)

    axes[3].plot(t, [r.h2_fc_cum for r in records], lw=0.9, label="stack H2")
    axes[3].plot(t, [r.h2_equiv_cum for r in records], lw=0.9, label="equivalent H2")
    axes[3].set_ylabel("hydrogen (g)")
    axes[3].set_xlabel("time (s)")
    axes[3].legend(loc="upper left", fontsize=8)

    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def plot_sweep(report, path) -> Path:
    """Two panels over the horizon axis: equivalent hydrogen and wall time."""
    path = Path(path)
    strategies = sorted({e.strategy.split("@")[0] for e in report.entries})
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    for strat in strategies:
        rows = sorted([e for e in report.entries if e.strategy.split("@")[0] == strat],
                      key=lambda e: e.horizon)
        h = [e.horizon for e in rows]
        ax1.plot(h, [e.h2_equiv_g for e in rows], marker="o", label=strat)
        ax2.plot(h, [e.total_sim_time_s for e in rows], marker="s", label=strat)
    ax1.set_xlabel("prediction steps")
    ax1.set_ylabel("equivalent hydrogen (g)")
    ax2.set_xlabel("prediction steps")
    ax2.set_ylabel("total wall time (s)")
    ax1.legend(fontsize=8)
    ax2.legend(fontsize=8)
    fig.suptitle(f"horizon sweep on {report.cycle}")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def plot_velocity_prediction(times, predicted, path, v0=None) -> Path:
    """Predicted velocity marks from the current state."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(7, 3.5))
    if v0 is not None:
        ax.plot([0.0], [v0], "ko", label="current")
    ax.plot(times, predicted, "o-", color="tab:red", label="predicted")
    ax.set_xlabel("seconds ahead")
    ax.set_ylabel("velocity (m/s)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path
