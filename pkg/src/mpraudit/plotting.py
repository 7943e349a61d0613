"""Figures for experiment tables, tuning trajectories and prompt reports.

Each function takes the same row dictionaries that are written to CSV and
saves one figure file; nothing is shown interactively.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

FIGSIZE = (5.5, 4.0)


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    # fixed metadata keeps repeated renders byte-identical
    fig.savefig(path, dpi=120, metadata={"Software": None} if path.suffix == ".png" else None)
    plt.close(fig)
    return path


def plot_gap(rows, path):
    """Max deviation from the true MPR against sample size, one line per depth."""
    fig, ax = plt.subplots(figsize=FIGSIZE)
    for depth in sorted({r["depth"] for r in rows}):
        sub = sorted((r for r in rows if r["depth"] == depth), key=lambda r: r["sample_size"])
        ax.plot([r["sample_size"] for r in sub], [r["max_deviation"] for r in sub], marker="o", label=f"DT{depth}")
    ax.set_xscale("log")
    ax.set_xlabel("number of generated samples")
    ax.set_ylabel("max |empirical - true MPR|")
    ax.legend(frameon=False)
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_std_heatmap(rows, path):
    """Bootstrap standard deviation on the (k, m) grid."""
    ks = sorted({r["k"] for r in rows})
    ms = sorted({r["m"] for r in rows})
    grid = np.full((len(ks), len(ms)), np.nan)
    for r in rows:
        grid[ks.index(r["k"]), ms.index(r["m"])] = r["std"]
    fig, ax = plt.subplots(figsize=FIGSIZE)
    im = ax.imshow(grid, origin="lower", cmap="viridis", aspect="auto")
    for i in range(len(ks)):
        for j in range(len(ms)):
            ax.text(j, i, f"{grid[i, j]:.3f}", ha="center", va="center", color="w", fontsize=8)
    ax.set_xticks(range(len(ms)), [str(m) for m in ms])
    ax.set_yticks(range(len(ks)), [str(k) for k in ks])
    ax.set_xlabel("reference samples m")
    ax.set_ylabel("generated samples k")
    fig.colorbar(im, ax=ax, label="bootstrap std of MPR")
    return _save(fig, path)


def plot_trajectory(rows, path):
    """Evaluated MPR and drift over fine-tuning iterations."""
    it = [r["iteration"] for r in rows]
    fig, ax = plt.subplots(figsize=FIGSIZE)
    ax.plot(it, [r["mpr"] for r in rows], label="MPR (fresh samples)")
    ax.plot(it, [r["mpr_exact"] for r in rows], label="MPR (exact)", linestyle="--")
    ax.plot(it, [r["loss_drift"] for r in rows], label="drift (TV to initial)")
    ax.set_xlabel("iteration")
    ax.legend(frameon=False)
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_prompt_report(rows, mean, path):
    """Per-prompt MPR bars with the cross-prompt mean."""
    fig, ax = plt.subplots(figsize=(max(FIGSIZE[0], 0.6 * len(rows) + 2), FIGSIZE[1]))
    labels = [r["label"] for r in rows]
    ax.bar(range(len(rows)), [r["value"] for r in rows], color="0.6")
    ax.axhline(mean, color="k", linestyle="--", label=f"mean = {mean:.3f}")
    ax.set_xticks(range(len(rows)), labels, rotation=45, ha="right")
    ax.set_ylabel("MPR")
    ax.legend(frameon=False)
    return _save(fig, path)
