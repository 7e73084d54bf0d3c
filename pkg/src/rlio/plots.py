"""Deterministic SVG plots for trajectories and error series."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

matplotlib.rcParams["svg.hashsalt"] = "rlio"

_SAVE_KW = dict(format="svg", metadata={"Date": None})


def plot_trajectory(est_nodes, gt_nodes, path):
    """Top-down view plus height profile, estimate vs reference."""
    est = np.array([n.p for n in est_nodes])
    gt = np.array([n.p for n in gt_nodes])
    t_est = [n.t for n in est_nodes]
    t_gt = [n.t for n in gt_nodes]

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4.2))
    ax1.plot(gt[:, 0], gt[:, 1], "k-", label="reference", lw=1.0)
    ax1.plot(est[:, 0], est[:, 1], "r--", label="estimate", lw=1.0)
    ax1.set_xlabel("x [m]")
    ax1.set_ylabel("y [m]")
    ax1.set_aspect("equal", adjustable="datalim")
    ax1.legend()
    ax1.set_title("top-down")

    ax2.plot(t_gt, gt[:, 2], "k-", lw=1.0)
    ax2.plot(t_est, est[:, 2], "r--", lw=1.0)
    ax2.set_xlabel("t [s]")
    ax2.set_ylabel("z [m]")
    ax2.set_title("height")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return Path(path)


def plot_errors(report, path):
    """Per-axis position error and rotation error over time."""
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(8, 5.5), sharex=True)
    for i, lbl in enumerate("xyz"):
        ax1.plot(report.t, report.err_xyz[:, i], lw=1.0, label=lbl)
    ax1.set_ylabel("position error [m]")
    ax1.legend()
    ax1.set_title(f"alignment: {report.alignment}, "
                  f"rmse {report.rmse_pos:.3f} m")
    ax2.plot(report.t, report.err_rot_deg, "k-", lw=1.0)
    ax2.set_ylabel("rotation error [deg]")
    ax2.set_xlabel("t [s]")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return Path(path)
