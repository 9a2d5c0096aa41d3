"""SVG line plots of per-seed curves: mean line plus a bootstrap CI band."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import MetricError  # noqa: E402


def curve_band(runs, resamples: int = 2000, level: float = 0.95, seed: int = 0):
    """Mean curve and a per-point percentile-bootstrap band over runs (rows)."""
    runs = np.atleast_2d(np.asarray(runs, dtype=np.float64))
    mean = runs.mean(axis=0)
    if runs.shape[0] == 1:
        return mean, mean.copy(), mean.copy()
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, runs.shape[0], size=(resamples, runs.shape[0]))
    boot = runs[idx].mean(axis=1)
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(boot, [alpha, 1.0 - alpha], axis=0)
    return mean, lo, hi


def plot_curves(
    path,
    series: Mapping[str, tuple],
    title: str,
    xlabel: str,
    ylabel: str,
    level: float = 0.95,
) -> Path:
    """Write one SVG with a line and shaded band per entry of ``series``.

    Each value is ``(x, runs)`` with ``runs`` shaped (seeds, len(x)). The
    output bytes depend only on the data.
    """
    if not series:
        raise MetricError("nothing to plot")
    path = Path(path)
    with matplotlib.rc_context({"svg.hashsalt": "splreg", "svg.fonttype": "path"}):
        fig, ax = plt.subplots(figsize=(6.4, 4.0))
        for name, (x, runs) in series.items():
            x = np.asarray(x, dtype=np.float64)
            mean, lo, hi = curve_band(runs, level=level)
            (line,) = ax.plot(x, mean, label=f"{name} (n={np.atleast_2d(runs).shape[0]})", linewidth=1.5)
            ax.fill_between(x, lo, hi, color=line.get_color(), alpha=0.2, linewidth=0)
        ax.set_title(title)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.grid(alpha=0.3)
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return path
