"""Report figures rendered to PNG with the non-interactive Agg backend."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_eval_report(report, path, title="SI-SDR by input SNR"):
    """Mean SI-SDR per system against input SNR, with 95% CI error bars."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0), dpi=100)
    for system in report.systems():
        rows = [r for r in report.rows if r.system == system]
        x = [r.snr_level_db for r in rows]
        y = [r.si_sdr_mean for r in rows]
        e = [r.si_sdr_ci95 for r in rows]
        style = "k--" if system == "identity" else "-o"
        ax.errorbar(x, y, yerr=e, fmt=style, capsize=3, label=system, markersize=4)
    ax.set_xlabel("input SNR [dB]")
    ax.set_ylabel("SI-SDR [dB]")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_loss_curve(losses, path, title="training loss", window=25):
    losses = np.asarray(losses, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(6.0, 3.5), dpi=100)
    steps = np.arange(1, losses.size + 1)
    ax.plot(steps, losses, alpha=0.35, lw=0.8, label="per step")
    if losses.size >= window:
        smooth = np.convolve(losses, np.ones(window) / window, mode="valid")
        ax.plot(steps[window - 1 :], smooth, lw=1.5, label=f"{window}-step mean")
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_title(title)
    ax.grid(alpha=0.3, which="both")
    ax.legend()
    fig.tight_layout()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_rtf(rows, path):
    """RTF against NFE from ``[(nfe, rtf), ...]``."""
    rows = sorted(rows)
    fig, ax = plt.subplots(figsize=(5.0, 3.5), dpi=100)
    ax.plot([r[0] for r in rows], [r[1] for r in rows], "-o")
    ax.set_xscale("log")
    ax.set_xlabel("NFE")
    ax.set_ylabel("RTF")
    ax.grid(alpha=0.3, which="both")
    fig.tight_layout()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    return path
