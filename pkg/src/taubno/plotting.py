"""Report figures (matplotlib, headless Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rc("figure", figsize=(5, 3.2), dpi=120)
plt.rc("font", size=9)
plt.rc("axes", linewidth=0.6)


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path).name


def report_figures(report, out_dir, pred, truth, coarse_truth, coarse_pred):
    """Per-time error, per-time R^2, parity scatter and coarse-atlas trajectories."""
    out = Path(out_dir)
    t = np.asarray(report.times)
    files = []

    fig, ax = plt.subplots()
    ax.plot(t, report.per_time_abs_err, "k.-", lw=1, label="mean |error|")
    ax.plot(t, report.per_time_rmse, "C0.-", lw=1, label="RMSE")
    ax.set_xlabel("time (months)")
    ax.set_ylabel("error")
    ax.legend(frameon=False)
    files.append(_finish(fig, out / "per_time_error.png"))

    fig, ax = plt.subplots()
    ax.plot(t, report.per_time_r2, "C1o-", ms=3, lw=1)
    ax.set_xlabel("time (months)")
    ax.set_ylabel(r"$R^2$ across regions")
    ax.set_ylim(min(0.0, np.nanmin(report.per_time_r2)), 1.02)
    files.append(_finish(fig, out / "r2_per_time.png"))

    fig, ax = plt.subplots(figsize=(3.4, 3.2))
    tr, pr = np.ravel(truth), np.ravel(pred)
    ax.plot(tr, pr, ".", ms=1.5, alpha=0.4, color="C0")
    lim = [min(tr.min(), pr.min()), max(tr.max(), pr.max())]
    ax.plot(lim, lim, "k-", lw=0.6)
    ax.set_xlabel("simulated N")
    ax.set_ylabel("predicted N")
    ax.set_title(f"pooled $R^2$ = {report.pooled_r2:.3f}", fontsize=9)
    files.append(_finish(fig, out / "parity.png"))

    fig, ax = plt.subplots()
    for k in range(coarse_truth.shape[0]):
        ax.plot(t, coarse_truth[k], "-", color=f"C{k % 10}", lw=1)
        ax.plot(t, coarse_pred[k], "--", color=f"C{k % 10}", lw=1)
    ax.set_xlabel("time (months)")
    ax.set_ylabel("mean coarse-region N")
    ax.set_title("solid: simulated, dashed: predicted", fontsize=8)
    files.append(_finish(fig, out / "coarse_trajectories.png"))
    return files


def trajectory_figure(times, values, names, path, title=None):
    """Regional trajectories of one simulation or prediction."""
    fig, ax = plt.subplots()
    for i, row in enumerate(values):
        ax.plot(times, row, lw=0.9, label=names[i] if len(values) <= 8 else None)
    ax.set_xlabel("time (months)")
    ax.set_ylabel("soluble N")
    if title:
        ax.set_title(title, fontsize=9)
    if len(values) <= 8:
        ax.legend(frameon=False, fontsize=7)
    return _finish(fig, path)


def training_curve(rows, path):
    rows = np.asarray([(r[0], r[2], r[3]) for r in rows], dtype=float)
    fig, ax = plt.subplots()
    ax.semilogy(rows[:, 0], rows[:, 1], "k-", lw=1, label="train")
    ax.semilogy(rows[:, 0], rows[:, 2], "C3-", lw=1, label="validation")
    ax.set_xlabel("epoch")
    ax.set_ylabel("relative L2")
    ax.legend(frameon=False)
    return _finish(fig, path)
