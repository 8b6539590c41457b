"""Figure rendering for summarized sweep results (written next to the CSVs)."""
from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

AXIS_LABELS = {
    "rho": "privacy budget rho",
    "horizon": "horizon H",
    "zones": "zones M",
    "dims": "state-action dimension w+d",
    "lam": "boundary level |lambda|",
}


def varying_axes(summary_rows) -> list[str]:
    axes = []
    for axis in AXIS_LABELS:
        if len({entry[axis] for entry in summary_rows}) > 1:
            axes.append(axis)
    return axes


def render_summary_figures(summary_rows, out_dir, stem: str = "gap") -> list[str]:
    """One errorbar figure per varying axis: mean gap ± sd, one line per method."""
    os.makedirs(out_dir, exist_ok=True)
    axes = varying_axes(summary_rows) or ["rho"]
    methods = sorted({entry["method"] for entry in summary_rows})
    paths = []
    for axis in axes:
        fig, ax = plt.subplots(figsize=(5.0, 3.4))
        for method in methods:
            pts = sorted((entry[axis], entry["mean_gap"], entry["sd_gap"])
                         for entry in summary_rows if entry["method"] == method)
            if not pts:
                continue
            xs = [p[0] for p in pts]
            ys = [p[1] for p in pts]
            es = [p[2] for p in pts]
            ax.errorbar(xs, ys, yerr=es, marker="o", capsize=3, label=method)
        if axis == "rho":
            ax.set_xscale("log")
        ax.set_xlabel(AXIS_LABELS[axis])
        ax.set_ylabel("relative optimality gap (%)")
        ax.legend()
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        path = os.path.join(out_dir, f"fig_{stem}_vs_{axis}.png")
        fig.savefig(path, dpi=150)
        plt.close(fig)
        paths.append(path)
    return paths
