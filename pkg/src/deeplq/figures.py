"""Figure rendering for report paths (file output only, Agg backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from deeplq.deep_riccati import DeepRiccatiSolution
from deeplq.simulator import ExperimentReport, Trajectory

__all__ = ["trajectory_figure", "sweep_figure", "gains_figure"]

_PNG_META = {"Software": "deeplq"}


def trajectory_figure(trajectory: Trajectory, path, title: str | None = None) -> None:
    """Plot per-agent state paths (first component) with deep states overlaid."""
    model = trajectory.model
    fig, ax = plt.subplots(figsize=(8, 4.5))
    t = trajectory.times
    palette = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    for s, sp in enumerate(model.sub_populations, start=1):
        color = palette[(s - 1) % len(palette)]
        for i in range(sp.n):
            ax.plot(
                t,
                trajectory.agent_states(s, i)[:, 0],
                color=color,
                alpha=0.35,
                linewidth=0.8,
            )
        for j in range(sp.f):
            ax.plot(
                t,
                trajectory.deep_path(s, j)[:, 0],
                color=color,
                linestyle="--",
                linewidth=2.0,
                label=f"deep state {j + 1} of sub-population {s}",
            )
    ax.set_xlabel("t")
    ax.set_ylabel("state (first component)")
    ax.legend(loc="best", fontsize=8)
    ax.set_title(title or f"{trajectory.kind} closed loop")
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)


def sweep_figure(report: ExperimentReport, path) -> None:
    """Errorbar plot of a premium/gap sweep report against population size."""
    fig, ax = plt.subplots(figsize=(6.5, 4))
    rows = [r for r in report.rows if r.get("ok")]
    if report.kind == "price_of_robustness":
        ns = [r["n"] for r in rows]
        vals = [r["premium"] for r in rows]
        errs = [r["premium_stderr"] for r in rows]
        ax.errorbar(ns, vals, yerr=[2 * e for e in errs], marker="o", capsize=3)
        ax.set_ylabel("risk premium")
        ax.set_xlabel("population size n")
    else:
        for kind, marker in (("finite", "o"), ("infinite", "s")):
            sub = [r for r in rows if r.get("filter") == kind]
            if not sub:
                continue
            ax.errorbar(
                [r["n_star"] for r in sub],
                [r["gap"] for r in sub],
                yerr=[2 * r["gap_stderr"] for r in sub],
                marker=marker,
                capsize=3,
                label=f"{kind}-population filter",
            )
        ax.set_ylabel("cost gap to full sharing")
        ax.set_xlabel("unobserved population size n*")
        ax.legend(loc="best", fontsize=8)
    ax.axhline(0.0, color="k", linewidth=0.6)
    ax.set_title(f"{report.kind.replace('_', ' ')} (M={report.replicates})")
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)


def gains_figure(solution: DeepRiccatiSolution, path) -> None:
    """Plot the local gain entries and the deep gain entries over time."""
    model = solution.model
    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    t = solution.grid
    for s in range(1, model.S + 1):
        g = solution.gain_local[s - 1]
        flat = g.reshape(len(t), -1)
        for c in range(flat.shape[1]):
            axes[0].plot(t, flat[:, c], label=f"sub-population {s}" if c == 0 else None)
    axes[0].set_title("local gains")
    axes[0].set_xlabel("t")
    axes[0].legend(loc="best", fontsize=8)
    flat = solution.gain_deep.reshape(len(t), -1)
    step = max(1, flat.shape[1] // 16)  # avoid unreadable clutter on big deep dims
    for c in range(0, flat.shape[1], step):
        axes[1].plot(t, flat[:, c])
    axes[1].set_title("deep-level gain entries")
    axes[1].set_xlabel("t")
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)
