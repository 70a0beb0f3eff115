"""PNG figures for the CLI; results only, no interactive display."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def series_plot(dates, values, path: Path, title: str = "Close") -> Path:
    fig, ax = plt.subplots(figsize=(9, 3.5))
    ax.plot(dates, values, lw=0.8)
    ax.set_title(title)
    ax.set_ylabel("index points")
    return _save(fig, path)


def histogram(values, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(values, bins=60, color="tab:blue", alpha=0.8)
    ax.set_xlabel("close")
    ax.set_ylabel("count")
    return _save(fig, path)


def boxplot(values, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 2.8))
    ax.boxplot(values, orientation="horizontal", widths=0.6)
    ax.set_xlabel("close")
    return _save(fig, path)


def correlogram(values, path: Path, n: int, title: str) -> Path:
    lags = np.arange(len(values))
    band = 1.96 / np.sqrt(n)
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.vlines(lags, 0, values, color="tab:blue")
    ax.scatter(lags, values, s=12, color="tab:blue")
    ax.axhline(0, color="black", lw=0.8)
    ax.fill_between(lags, -band, band, color="tab:blue", alpha=0.15)
    ax.set_xlabel("lag")
    ax.set_title(title)
    return _save(fig, path)


def prediction_plot(x, y_true, mean, std, path: Path, title: str = "Prediction") -> Path:
    fig, ax = plt.subplots(figsize=(9, 4))
    ax.plot(x, y_true, color="black", lw=1.0, label="actual")
    ax.plot(x, mean, color="tab:red", lw=1.0, label="predicted mean")
    for k, alpha in ((1, 0.30), (2, 0.15)):
        ax.fill_between(x, mean - k * std, mean + k * std, color="tab:red", alpha=alpha, lw=0,
                        label=f"+/- {k} std")
    ax.legend(loc="upper right")
    ax.set_title(title)
    return _save(fig, path)


def calibration_diagram(levels, observed_before, observed_after, scale_factor: float, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot([0, 1], [0, 1], "k--", lw=1, label="perfect calibration")
    ax.plot(levels, observed_before, "o-", label="uncalibrated")
    ax.plot(levels, observed_after, "s-", label=f"calibrated (c = {scale_factor:.4f})")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.set_xlabel("expected proportion")
    ax.set_ylabel("observed proportion")
    ax.legend(loc="upper left")
    return _save(fig, path)
