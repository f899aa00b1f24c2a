"""Deterministic SVG figures (ROC, calibration, SHAP beeswarm, ablation,
RFECV curve).  Identical inputs give byte-identical files."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ._rng import rng_for  # noqa: E402

_STYLE = {
    "svg.hashsalt": "panc-risk",
    "svg.fonttype": "path",
    "font.family": "DejaVu Sans",
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "figure.dpi": 100,
    "path.simplify": False,
}


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)


def _styled(fn):
    def wrapper(*args, **kwargs):
        with plt.rc_context(_STYLE):
            return fn(*args, **kwargs)

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@_styled
def plot_roc(curves, path, aurocs=None):
    """``curves``: model name -> RocCurve."""
    fig, ax = plt.subplots(figsize=(5.0, 4.5))
    for name, c in curves.items():
        label = name if aurocs is None else f"{name} (AUROC {aurocs[name]:.3f})"
        ax.plot(c.fpr, c.tpr, lw=1.4, label=label)
    ax.plot([0, 1], [0, 1], color="0.6", ls="--", lw=0.8)
    ax.set(xlim=(0, 1), ylim=(0, 1.01), xlabel="False positive rate", ylabel="True positive rate")
    ax.legend(loc="lower right", fontsize=7)
    fig.tight_layout()
    _save(fig, path)


@_styled
def plot_calibration(curves, path):
    """``curves``: model name -> CalibrationCurve; empty bins are skipped."""
    fig, ax = plt.subplots(figsize=(5.0, 4.5))
    for name, c in curves.items():
        pts = [(m, o) for m, o in zip(c.mean_predicted, c.observed) if m is not None]
        if pts:
            xs, ys = zip(*pts)
            ax.plot(xs, ys, marker="o", ms=3, lw=1.2, label=name)
    ax.plot([0, 1], [0, 1], color="0.6", ls="--", lw=0.8)
    ax.set(xlim=(0, 1), ylim=(0, 1), xlabel="Mean predicted probability", ylabel="Observed fraction")
    ax.legend(loc="upper left", fontsize=7)
    fig.tight_layout()
    _save(fig, path)


@_styled
def plot_shap_beeswarm(phi, values, feature_names, order, path, max_display=20):
    """One row per feature (most important on top), points coloured by the
    scaled feature value."""
    phi = np.asarray(phi, float)
    values = np.asarray(values, float)
    shown = list(order)[:max_display]
    idx = [list(feature_names).index(f) for f in shown]
    fig, ax = plt.subplots(figsize=(6.0, 0.32 * len(shown) + 1.2))
    rng = rng_for(0, "beeswarm")
    sc = None
    for row, j in enumerate(idx):
        y = len(shown) - 1 - row + rng.uniform(-0.3, 0.3, size=phi.shape[0])
        sc = ax.scatter(phi[:, j], y, c=values[:, j], cmap="coolwarm", vmin=0.0, vmax=1.0, s=5, lw=0)
    ax.set_yticks(range(len(shown)))
    ax.set_yticklabels(list(reversed(shown)))
    ax.axvline(0.0, color="0.5", lw=0.8)
    ax.set_xlabel("SHAP value (log-odds)")
    if sc is not None:
        cb = fig.colorbar(sc, ax=ax, pad=0.01)
        cb.set_label("Scaled feature value")
    fig.tight_layout()
    _save(fig, path)


@_styled
def plot_ablation(result, path):
    """Box plot of per-repeat AUROC deltas, largest median on top."""
    summary = result.summary()
    feats = [f for f in result.features if summary[f]["n"] > 0]
    feats.sort(key=lambda f: summary[f]["median"])
    data = [[d for d in result.deltas[f] if d is not None] for f in feats]
    fig, ax = plt.subplots(figsize=(6.0, 0.3 * max(len(feats), 1) + 1.2))
    if data:
        ax.boxplot(data, orientation="horizontal", widths=0.6)
        ax.set_yticks(range(1, len(feats) + 1))
        ax.set_yticklabels(feats)
    ax.axvline(0.0, color="0.5", lw=0.8)
    ax.set_xlabel("AUROC(full) - AUROC(without feature)")
    fig.tight_layout()
    _save(fig, path)


@_styled
def plot_rfecv(curve, path, chosen=None):
    ks = sorted(curve)
    fig, ax = plt.subplots(figsize=(5.0, 3.5))
    ax.plot(ks, [curve[k] for k in ks], marker="o", ms=3, lw=1.2)
    if chosen is not None:
        ax.axvline(chosen, color="C3", ls="--", lw=0.8)
    ax.set(xlabel="Number of features", ylabel="Mean CV AUROC")
    fig.tight_layout()
    _save(fig, path)
