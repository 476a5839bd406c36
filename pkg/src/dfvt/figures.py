"""Matplotlib figures rendered next to the delimited report/history files."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .learning import History
from .metrics import MetricsReport, ScoredPrediction

# golden-mean single-column figure, readable at report size
_WIDTH_IN = 6.4
_GOLDEN = (math.sqrt(5) - 1.0) / 2.0
_FIG_SIZE = (_WIDTH_IN, _WIDTH_IN * _GOLDEN)

plt.rcParams.update(
    {
        "figure.figsize": _FIG_SIZE,
        "font.size": 9,
        "axes.spines.top": False,
        "axes.spines.right": False,
        "axes.grid": True,
        "grid.alpha": 0.3,
    }
)


def save_history_figure(history: History, path: str) -> None:
    """Loss and train-accuracy curves over epochs."""
    fig, ax_loss = plt.subplots()
    epochs = [h.epoch for h in history]
    ax_loss.plot(epochs, [h.mean_loss for h in history], color="tab:red", label="mean loss")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("mean loss", color="tab:red")
    ax_acc = ax_loss.twinx()
    ax_acc.plot(epochs, [h.accuracy for h in history], color="tab:blue", label="train accuracy")
    ax_acc.set_ylabel("train accuracy", color="tab:blue")
    ax_acc.set_ylim(0.0, 1.05)
    ax_acc.grid(False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_report_figure(
    window_preds: list[ScoredPrediction],
    reports: dict[str, MetricsReport],
    path: str,
) -> None:
    """Score distribution by class plus a metric summary, one panel each."""
    fig, (ax_hist, ax_bar) = plt.subplots(1, 2, figsize=(_FIG_SIZE[0] * 1.6, _FIG_SIZE[1]))

    real = [p.prob_fake for p in window_preds if p.label == 0]
    fake = [p.prob_fake for p in window_preds if p.label == 1]
    bins = [i / 20 for i in range(21)]
    ax_hist.hist(real, bins=bins, alpha=0.6, label="real", color="tab:green")
    ax_hist.hist(fake, bins=bins, alpha=0.6, label="fake", color="tab:orange")
    ax_hist.axvline(0.5, color="black", linestyle="--", linewidth=0.8)
    ax_hist.set_xlabel("fake probability")
    ax_hist.set_ylabel("windows")
    ax_hist.legend()

    scopes = list(reports)
    metrics = ("accuracy", "f1", "auc")
    width = 0.8 / len(scopes)
    for i, scope in enumerate(scopes):
        values = [getattr(reports[scope], m) for m in metrics]
        xs = [j + i * width for j in range(len(metrics))]
        ax_bar.bar(xs, values, width=width, label=scope)
    ax_bar.set_xticks([j + width * (len(scopes) - 1) / 2 for j in range(len(metrics))])
    ax_bar.set_xticklabels(metrics)
    ax_bar.set_ylim(0.0, 1.05)
    ax_bar.legend()

    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
