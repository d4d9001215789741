"""Figures written next to the text reports.

Figures are drawn on the Agg canvas without pyplot, so no global state or
display is involved, and the PNG metadata is stripped so reruns produce
identical files.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

_PNG_META = {"Software": None}


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    FigureCanvasAgg(fig)
    fig.savefig(path, dpi=120, bbox_inches="tight", metadata=_PNG_META)
    return path


def _stat(bundle, key):
    s = bundle.aggregates.get(key) or {}
    if s.get("mean") is None:
        return np.nan, 0.0
    return 100 * s["mean"], 100 * s["std"]


def plot_report(bundles, path) -> Path:
    """Post-unlearn accuracy/ΔSP/ΔEO per variant, and forget-set MIA AUC before and after."""
    bundles = list(bundles)
    fig = Figure(figsize=(10, 4))
    ax_fair, ax_mia = fig.subplots(1, 2, gridspec_kw={"width_ratios": [3, 2]})

    metrics = (("post_accuracy", "ACC"), ("post_delta_sp", "ΔSP"), ("post_delta_eo", "ΔEO"))
    x = np.arange(len(metrics))
    width = 0.8 / max(len(bundles), 1)
    for i, b in enumerate(bundles):
        stats = [_stat(b, k) for k, _ in metrics]
        ax_fair.bar(x + i * width, [m for m, _ in stats], width, yerr=[s for _, s in stats],
                    capsize=3, label=b.variant)
    ax_fair.set_xticks(x + width * (len(bundles) - 1) / 2)
    ax_fair.set_xticklabels([name for _, name in metrics])
    ax_fair.set_ylabel("%")
    ax_fair.set_title("after unlearning")
    ax_fair.legend(frameon=False)

    xm = np.arange(len(bundles))
    for j, (key, name) in enumerate((("mia_forget_pre", "before"), ("mia_forget_post", "after"))):
        stats = [_stat(b, key) for b in bundles]
        ax_mia.bar(xm + j * 0.4, [m for m, _ in stats], 0.4, yerr=[s for _, s in stats], capsize=3, label=name)
    ax_mia.axhline(50, color="k", lw=0.8, ls="--")
    ax_mia.set_xticks(xm + 0.2)
    ax_mia.set_xticklabels([b.variant for b in bundles])
    ax_mia.set_ylabel("attack AUC on forget set (%)")
    ax_mia.legend(frameon=False)
    fig.tight_layout()
    return _save(fig, path)


def plot_training_curves(records, path) -> Path:
    """Loss terms per epoch from a training log (list of ``EpochRecord``)."""
    fig = Figure(figsize=(8, 5))
    axes = fig.subplots(2, 2, sharex=True).ravel()
    epochs = [r.epoch for r in records]
    for ax, key in zip(axes, ("L_C", "L_E", "L_R", "L_A")):
        ax.plot(epochs, [getattr(r, key) for r in records], lw=1)
        ax.set_title(key)
    for ax in axes[2:]:
        ax.set_xlabel("epoch")
    fig.tight_layout()
    return _save(fig, path)


def plot_importance(i_train, i_forget, selected, gamma: float, path) -> Path:
    """Forget vs train importance per classifier parameter; dampened ones highlighted."""
    tiny = 1e-30
    a = np.maximum(i_train.values, tiny)
    b = np.maximum(i_forget.values, tiny)
    mask = np.zeros(a.size, dtype=bool)
    mask[np.asarray(selected, dtype=np.int64)] = True
    fig = Figure(figsize=(5, 5))
    ax = fig.subplots()
    ax.loglog(a[~mask], b[~mask], ".", ms=2, color="0.6", label="kept")
    ax.loglog(a[mask], b[mask], ".", ms=2, color="C3", label="dampened")
    lo, hi = min(a.min(), b.min()), max(a.max(), b.max())
    ax.plot([lo, hi], [gamma * lo, gamma * hi], "k--", lw=0.8, label=f"I_f = {gamma:g}·I_train")
    ax.set_xlabel("importance over training nodes")
    ax.set_ylabel("importance over forget nodes")
    ax.legend(frameon=False, markerscale=4)
    fig.tight_layout()
    return _save(fig, path)
