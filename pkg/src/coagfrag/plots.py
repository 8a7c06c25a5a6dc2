"""Report figures rendered from recorded runs.

matplotlib enters the package only through this module, and only with the
Agg backend, so rendering works headless and nothing else pays the import.
The CSV stays the machine-readable contract; these are companion pictures.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from coagfrag.integrator import TimeSeries

__all__ = ["render_run_report"]


def _moments_figure(ts: TimeSeries, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    marker = "o" if ts.n_records < 3 else None
    for k, m in enumerate(ts.exponents):
        ax.plot(ts.times, ts.moments[:, k], marker=marker, label=f"$M_{{{m:g}}}$")
    ax.set_yscale("log")
    ax.set_xlabel("t")
    ax.set_ylabel("moment")
    ax.legend(loc="best", fontsize=8)
    ax.set_title("tracked moments")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def _mass_budget_figure(ts: TimeSeries, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    marker = "o" if ts.n_records < 3 else None
    ax.plot(ts.times, ts.mass, marker=marker, label="mass on grid")
    ax.plot(ts.times, ts.mass + ts.cum_loss, marker=marker, linestyle="--",
            label="mass + cumulative truncation loss")
    ax.set_xlabel("t")
    ax.set_ylabel("mass")
    ax.legend(loc="best", fontsize=8)
    ax.set_title("mass budget")
    if np.any(ts.cum_loss > 0.0):
        twin = ax.twinx()
        twin.plot(ts.times, ts.cum_loss, color="crimson", alpha=0.6,
                  marker=marker, label="loss")
        twin.set_yscale("log")
        twin.set_ylabel("cumulative loss", color="crimson")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def _snapshots_figure(ts: TimeSeries, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    cmap = plt.get_cmap("viridis")
    t0, t1 = ts.snapshots[0].t, ts.snapshots[-1].t
    span = (t1 - t0) or 1.0
    for snap in ts.snapshots:
        mask = snap.values > 0.0
        if not np.any(mask):
            continue
        ax.plot(snap.grid.centers[mask], snap.values[mask],
                color=cmap((snap.t - t0) / span), label=f"t = {snap.t:g}")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("x")
    ax.set_ylabel("f(x)")
    if len(ts.snapshots) <= 8:
        ax.legend(loc="best", fontsize=8)
    ax.set_title("density snapshots")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_run_report(ts: TimeSeries, out_dir) -> list[Path]:
    """Render the three standard figures into out_dir; returns their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return [_moments_figure(ts, out / "moments.png"),
            _mass_budget_figure(ts, out / "mass_budget.png"),
            _snapshots_figure(ts, out / "snapshots.png")]
