"""SVG figures for forecasts and PCA diagnostics (headless Agg backend)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .selection import PcaResult  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.2,
    "legend.frameon": False,
    "svg.hashsalt": "outagecast",
    "svg.fonttype": "none",
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def forecast_figure(
    path,
    timestamps,
    forecast: Sequence[float],
    actual: Sequence[float] | None = None,
    history_times=None,
    history: Sequence[float] | None = None,
    title: str = "",
) -> Path:
    """Forecast line, optional actuals over the same hours and a history tail."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(7, 3))
        if history is not None:
            ax.plot(history_times, history, color="0.55", label="history")
        if actual is not None:
            ax.plot(timestamps, actual, color="k", label="actual")
        ax.plot(timestamps, forecast, color="tab:red", label="forecast")
        ax.set_ylabel("customers out")
        ax.set_title(title)
        ax.legend(loc="upper left")
        fig.autofmt_xdate()
        fig.tight_layout()
        return _save(fig, path)


def explained_variance_figure(path, pca: PcaResult) -> Path:
    ratio = np.asarray(pca.explained_variance_ratio)
    k = np.arange(1, len(ratio) + 1)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3))
        ax.bar(k, ratio, color="tab:blue", alpha=0.7, label="component")
        ax.plot(k, np.cumsum(ratio), color="k", marker="o", ms=3, label="cumulative")
        ax.set_xlabel("principal component")
        ax.set_ylabel("explained variance ratio")
        ax.set_ylim(0, 1.02)
        ax.legend(loc="center right")
        fig.tight_layout()
        return _save(fig, path)


def loadings_figure(path, pca: PcaResult, n_components: int = 3) -> Path:
    """Heatmap of the leading loadings (features on rows)."""
    n = min(n_components, pca.n_components)
    L = np.asarray(pca.loadings[:n]).T
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(1.2 * n + 3, 0.22 * len(pca.feature_names) + 1.2))
        im = ax.imshow(L, cmap="coolwarm", vmin=-1, vmax=1, aspect="auto")
        ax.set_xticks(range(n), [f"PC{i + 1}" for i in range(n)])
        ax.set_yticks(range(len(pca.feature_names)), pca.feature_names, fontsize=7)
        ax.grid(False)
        fig.colorbar(im, ax=ax, label="loading")
        fig.tight_layout()
        return _save(fig, path)
