"""Trajectory figures: one panel per image axis, position versus frame."""

from __future__ import annotations

import os
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .pipeline import Trajectory  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 3.2),
    "figure.dpi": 100,
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "legend.frameon": False,
    "lines.linewidth": 1.0,
    "savefig.bbox": "tight",
}


def plot_axis(traj: Trajectory, axis: int, path: str | os.PathLike) -> Path:
    """Plot truth / detection / tracked positions along one axis.

    With ground truth, a second panel shows each estimate minus the truth,
    since subpixel errors are invisible at trajectory scale.
    """
    name = "xy"[axis]
    frames = [r.frame for r in traj.records]
    det = traj.column("det")[:, axis]
    trk = traj.column("trk")[:, axis] if traj.tracked else None
    with plt.rc_context(STYLE):
        if traj.has_truth:
            fig, (ax, err) = plt.subplots(2, 1, sharex=True, figsize=(6.4, 4.4),
                                          gridspec_kw={"height_ratios": [2, 1]})
            gt = traj.column("gt")[:, axis]
            ax.plot(frames, gt, color="0.2", ls="--", label="ground truth")
        else:
            fig, ax = plt.subplots()
            err = None
        ax.plot(frames, det, ".", ms=2.5, color="tab:orange", label="detection")
        if trk is not None:
            ax.plot(frames, trk, color="tab:blue", label="EKF tracking")
        ax.set_ylabel(f"{name} (pixels)")
        ax.legend(loc="best")
        if err is not None:
            err.axhline(0.0, color="0.6", lw=0.6)
            err.plot(frames, det - gt, ".", ms=2.5, color="tab:orange")
            if trk is not None:
                err.plot(frames, trk - gt, color="tab:blue")
            err.set_ylabel("error (pixels)")
            err.set_xlabel("frame")
        else:
            ax.set_xlabel("frame")
        fig.savefig(path)
        plt.close(fig)
    return Path(path)


def plot_trajectory(traj: Trajectory, out_dir: str | os.PathLike,
                    stem: str = "trajectory") -> list[Path]:
    """Write ``<stem>_x.png`` and ``<stem>_y.png`` into ``out_dir``."""
    out = Path(out_dir)
    return [plot_axis(traj, i, out / f"{stem}_{n}.png") for i, n in enumerate("xy")]
