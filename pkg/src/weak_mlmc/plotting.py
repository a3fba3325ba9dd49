"""Figure rendering for the study outputs (log2 axes, one curve per estimator)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .engine import EstimatorVariant, fit_slope  # noqa: E402

COLORS = {
    EstimatorVariant.EULER_BINOMIAL: "black",
    EstimatorVariant.ANTITHETIC_MILSTEIN_GAUSSIAN: "tab:blue",
    EstimatorVariant.ANTITHETIC_MILSTEIN_BINOMIAL_ENUM: "tab:red",
}


def _fit_label(x, y, log_x=False):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = y > 0
    if ok.sum() < 3:
        return None, None
    xs = np.log2(x[ok]) if log_x else x[ok]
    rate = fit_slope(xs, y[ok])
    coef = np.polyfit(xs, np.log2(y[ok]), 1)
    line = 2 ** np.polyval(coef, np.log2(x) if log_x else x)
    return rate, line


def _panel(ax, data, title, xlabel, ylabel, symbol, log_x=False, fit=True):
    for variant, rows in data.items():
        if not rows:
            continue
        x, y, err = (np.asarray(c, dtype=float) for c in zip(*rows))
        color = COLORS.get(variant, None)
        label = variant.label
        if fit:
            rate, line = _fit_label(x, y, log_x)
            if rate is not None:
                # decay rates are reported positive; slopes against RMSE keep their sign
                shown = -rate if log_x else rate
                ax.plot(x, line, color=color, lw=1)
                label = f"{label}, {symbol}={shown:.2f}"
        ax.errorbar(x, y, yerr=err, fmt="o", ms=4, color=color, capsize=2, label=label)
    ax.set_yscale("log", base=2)
    if log_x:
        ax.set_xscale("log", base=2)
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend(fontsize="small")


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_variance(rows_by_variant, path):
    fig, ax = plt.subplots(figsize=(5, 3.6))
    _panel(ax, rows_by_variant, "Variance Reduction", "Level", "variance", "β")
    return _save(fig, path)


def plot_convergence(rows_by_variant, path):
    fig, ax = plt.subplots(figsize=(5, 3.6))
    _panel(ax, rows_by_variant, "Convergence", "Level", "mean", "p")
    return _save(fig, path)


def plot_paths(rows_by_variant, path):
    fig, ax = plt.subplots(figsize=(5, 3.6))
    _panel(ax, rows_by_variant, "Paths on level l=0", "RMSE", "paths", "slope", log_x=True)
    return _save(fig, path)


def plot_complexity(rows_by_variant, path):
    fig, ax = plt.subplots(figsize=(5, 3.6))
    _panel(ax, rows_by_variant, "Computational Complexity", "RMSE", "RMSE² cost", "", log_x=True, fit=False)
    return _save(fig, path)


def plot_report(variance, convergence, paths, cost, path):
    """Four panels: variance and mean decay per level, level-0 paths and RMSE²·cost per RMSE."""
    fig, axes = plt.subplots(2, 2, figsize=(10, 7.2))
    _panel(axes[0, 0], variance, "Variance Reduction", "Level", "variance", "β")
    _panel(axes[0, 1], convergence, "Convergence", "Level", "mean", "p")
    _panel(axes[1, 0], paths, "Paths on level l=0", "RMSE", "paths", "slope", log_x=True)
    _panel(axes[1, 1], cost, "Computational Complexity", "RMSE", "RMSE² cost", "", log_x=True, fit=False)
    return _save(fig, path)
