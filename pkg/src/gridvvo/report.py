"""Matplotlib figure output for the CLI report paths (headless backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaluate import MetricsReport  # noqa: E402

__all__ = [
    "save_voltage_profile_figure",
    "save_hourly_metrics_figure",
]


def save_voltage_profile_figure(path, profiles: dict[str, np.ndarray], title: str) -> None:
    """Nodal voltage magnitude curves, one line per labelled case."""
    fig, ax = plt.subplots(figsize=(7.0, 4.2))
    for label, v in profiles.items():
        nodes = np.arange(1, len(v) + 1)
        ax.plot(nodes, v, marker="o", markersize=3, linewidth=1.2, label=label)
    ax.set_xlabel("node")
    ax.set_ylabel("voltage magnitude (p.u.)")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_hourly_metrics_figure(path, report: MetricsReport) -> None:
    """Per-hour mean loss and voltage envelope over the evaluated days."""
    hours = sorted({r.hour for r in report.hours})
    loss = []
    vmin = []
    vmax = []
    for h in hours:
        recs = [r for r in report.hours if r.hour == h and r.converged]
        loss.append(np.mean([r.loss_kw for r in recs]) if recs else np.nan)
        vmin.append(np.mean([r.v_min for r in recs]) if recs else np.nan)
        vmax.append(np.mean([r.v_max for r in recs]) if recs else np.nan)

    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7.0, 5.6), sharex=True)
    ax1.plot(hours, loss, marker="o", color="tab:red")
    ax1.set_ylabel("mean loss (kW)")
    ax1.grid(True, alpha=0.3)
    ax2.plot(hours, vmin, marker="v", label="min voltage")
    ax2.plot(hours, vmax, marker="^", label="max voltage")
    ax2.set_ylabel("voltage (p.u.)")
    ax2.set_xlabel("hour")
    ax2.grid(True, alpha=0.3)
    ax2.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
