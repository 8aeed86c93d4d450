"""Figures written next to the key=value reports (loss curves, sweeps, contingency)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .training import moving_average  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 4.0),
    "figure.dpi": 110,
    "font.size": 10,
    "axes.labelsize": 10,
    "axes.titlesize": 11,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "savefig.bbox": "tight",
}


def new_figure(nrows=1, ncols=1, **kw):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(nrows, ncols, **kw)
    return fig, ax


def save(fig, path):
    with plt.rc_context(STYLE):
        fig.savefig(path)
    plt.close(fig)
    return path


def plot_loss_traces(traces: dict, path, window: int = 10, title: str = "RML training loss"):
    """One smoothed curve per labelled trace; raw values drawn faintly underneath."""
    fig, ax = new_figure()
    for label, trace in traces.items():
        raw = np.asarray(trace.rml if not trace.task else trace.total)
        line, = ax.plot(moving_average(raw, window), lw=1.5, label=label)
        ax.plot(raw, lw=0.5, alpha=0.25, color=line.get_color())
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_title(title)
    if len(traces) > 1:
        ax.legend(frameon=False)
    return save(fig, path)


def plot_sweep(param: str, values, metrics: dict, path):
    """Metric curves against one hyperparameter; log x-axis for lambda."""
    fig, ax = new_figure()
    for name, ys in metrics.items():
        ax.plot(values, ys, marker="o", lw=1.2, label=name)
    if param == "lambda" and min(values) > 0:
        ax.set_xscale("log")
    ax.set_xlabel(param)
    ax.set_ylim(0.0, 1.02)
    ax.legend(frameon=False)
    return save(fig, path)


def plot_contingency(table: np.ndarray, path, xlabel="class", ylabel="cluster"):
    fig, ax = new_figure()
    im = ax.imshow(table, cmap="Blues")
    ax.grid(False)
    for (i, j), v in np.ndenumerate(table):
        ax.text(j, i, str(v), ha="center", va="center", fontsize=7,
                color="white" if v > table.max() / 2 else "black")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    fig.colorbar(im, ax=ax, fraction=0.046)
    return save(fig, path)
