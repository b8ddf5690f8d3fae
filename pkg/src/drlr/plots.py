"""Figure rendering for run summaries (headless matplotlib backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def plot_learning_curves(summary, env: str, out_path) -> str:
    """Mean evaluation return vs training step, one line per algorithm."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for (e, algo), (steps, rets) in sorted(summary.curves.items()):
        if e != env:
            continue
        ax.plot(steps, rets, marker="o", markersize=3, label=algo)
    ax.set_xlabel("training step")
    ax.set_ylabel("mean evaluation return")
    ax.set_title(env)
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return str(out_path)


def plot_final_returns(summary, out_path) -> str:
    """Grouped bars of final returns (mean over seeds, std as error bars)."""
    envs_ = sorted({e for e, _ in summary.cells})
    algos = sorted({a for _, a in summary.cells})
    fig, ax = plt.subplots(figsize=(max(6, 1.6 * len(envs_) * len(algos) / 2), 4))
    width = 0.8 / max(1, len(algos))
    x = np.arange(len(envs_))
    for i, algo in enumerate(algos):
        means, stds = [], []
        for env in envs_:
            c = summary.cells.get((env, algo))
            r = np.array(c["returns"]) if c else np.array([np.nan])
            means.append(r.mean())
            stds.append(r.std())
        ax.bar(x + (i - (len(algos) - 1) / 2) * width, means, width,
               yerr=stds, capsize=3, label=algo)
    ax.set_xticks(x)
    ax.set_xticklabels(envs_, rotation=15, fontsize=8)
    ax.set_ylabel("final return (mean over seeds)")
    ax.legend(fontsize=8)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return str(out_path)


def render_summary_figures(summary, out_dir) -> list[str]:
    out = Path(out_dir)
    written = []
    for env in sorted({e for e, _ in summary.curves}):
        safe = env.replace(":", "-")
        written.append(plot_learning_curves(summary, env, out / f"curves_{safe}.png"))
    if summary.cells:
        written.append(plot_final_returns(summary, out / "final_returns.png"))
    return written
