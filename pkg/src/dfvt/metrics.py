"""Classification metrics, probability fusion, and cumulative accuracy.

AUC is the exact rank statistic (probability a random positive outranks a
random negative, ties counted one half), not a sampled ROC curve. The fake
class (label 1) is the positive class throughout and the decision threshold
is 0.5 unless stated otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class MetricError(ValueError):
    """Empty input or a metric undefined for the given labels."""


class FusionError(ValueError):
    """Predictions being fused do not describe the same sample."""


@dataclass(frozen=True)
class ScoredPrediction:
    sample_id: str
    label: int
    prob_fake: float

    def __post_init__(self):
        if self.label not in (0, 1):
            raise MetricError(f"label must be 0 or 1, got {self.label}")
        if not math.isfinite(self.prob_fake) or not 0.0 <= self.prob_fake <= 1.0:
            raise MetricError(f"prob_fake must be a finite value in [0, 1], got {self.prob_fake}")


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    f1: float
    auc: float
    tp: int
    fp: int
    tn: int
    fn: int
    n: int


def confusion(preds: Sequence[ScoredPrediction], threshold: float = 0.5) -> tuple[int, int, int, int]:
    if not preds:
        raise MetricError("confusion counts need at least one prediction")
    tp = fp = tn = fn = 0
    for p in preds:
        predicted_fake = p.prob_fake >= threshold
        if predicted_fake and p.label == 1:
            tp += 1
        elif predicted_fake and p.label == 0:
            fp += 1
        elif not predicted_fake and p.label == 0:
            tn += 1
        else:
            fn += 1
    return tp, fp, tn, fn


def accuracy(preds: Sequence[ScoredPrediction], threshold: float = 0.5) -> float:
    tp, fp, tn, fn = confusion(preds, threshold)
    return (tp + tn) / len(preds)


def f1(preds: Sequence[ScoredPrediction], threshold: float = 0.5) -> float:
    """Harmonic mean of precision and recall; 0 when precision + recall is 0."""
    tp, fp, tn, fn = confusion(preds, threshold)
    denom = 2 * tp + fp + fn
    if denom == 0:
        return 0.0
    return 2 * tp / denom


def auc(preds: Sequence[ScoredPrediction]) -> float:
    if not preds:
        raise MetricError("auc needs at least one prediction")
    scores = np.array([p.prob_fake for p in preds], dtype=np.float64)
    labels = np.array([p.label for p in preds])
    n_pos = int((labels == 1).sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("auc undefined: need at least one positive and one negative label")
    # average ranks, ties sharing the mean rank of their run
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j < len(scores) and sorted_scores[j] == sorted_scores[i]:
            j += 1
        ranks[order[i:j]] = (i + j + 1) / 2.0  # 1-based average rank
        i = j
    rank_sum_pos = float(ranks[labels == 1].sum())
    return (rank_sum_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def report(preds: Sequence[ScoredPrediction], threshold: float = 0.5) -> MetricsReport:
    tp, fp, tn, fn = confusion(preds, threshold)
    return MetricsReport(
        accuracy=accuracy(preds, threshold),
        f1=f1(preds, threshold),
        auc=auc(preds),
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
        n=len(preds),
    )


def fuse(a: ScoredPrediction, b: ScoredPrediction) -> ScoredPrediction:
    """Average the two fake probabilities for the same sample."""
    if a.sample_id != b.sample_id:
        raise FusionError(f"cannot fuse predictions for {a.sample_id!r} and {b.sample_id!r}")
    if a.label != b.label:
        raise FusionError(f"label disagreement for {a.sample_id!r}: {a.label} vs {b.label}")
    return ScoredPrediction(
        sample_id=a.sample_id, label=a.label, prob_fake=(a.prob_fake + b.prob_fake) / 2.0
    )


def fuse_all(
    a: Sequence[ScoredPrediction], b: Sequence[ScoredPrediction]
) -> list[ScoredPrediction]:
    by_id = {p.sample_id: p for p in b}
    if len(by_id) != len(b) or len(a) != len(b):
        raise FusionError("prediction sets do not align one-to-one")
    out = []
    for p in a:
        if p.sample_id not in by_id:
            raise FusionError(f"no matching prediction for sample {p.sample_id!r}")
        out.append(fuse(p, by_id[p.sample_id]))
    return out


def cumulative_mean(accuracies: Sequence[float]) -> float:
    """Unweighted mean of per-dataset accuracies (the cumulative column)."""
    if not accuracies:
        raise MetricError("cumulative mean of an empty row")
    return float(sum(accuracies) / len(accuracies))


@dataclass(frozen=True)
class CumulativeRow:
    per_dataset: tuple[float, ...]
    cumulative: float


def cumulative_table(accuracy_fn: Callable, datasets: Sequence) -> CumulativeRow:
    """Accuracy per dataset in order, plus their unweighted mean."""
    if not datasets:
        raise MetricError("cumulative table needs at least one dataset")
    accs = tuple(float(accuracy_fn(ds)) for ds in datasets)
    return CumulativeRow(per_dataset=accs, cumulative=cumulative_mean(accs))


# ---------------------------------------------------------------------------
# report text format: one "metric<TAB>value" pair per line, metrics prefixed
# by their scope (window-level vs video-level)
# ---------------------------------------------------------------------------

_FLOAT_FIELDS = ("accuracy", "f1", "auc")
_INT_FIELDS = ("tp", "fp", "tn", "fn", "n")


def reports_to_text(reports: dict[str, MetricsReport]) -> str:
    lines = []
    for scope, rep in reports.items():
        for field in _FLOAT_FIELDS:
            lines.append(f"{scope}.{field}\t{getattr(rep, field)!r}")
        for field in _INT_FIELDS:
            lines.append(f"{scope}.{field}\t{getattr(rep, field)}")
    return "\n".join(lines) + "\n"


def reports_from_text(text: str) -> dict[str, MetricsReport]:
    values: dict[str, dict[str, float | int]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            key, raw = line.split("\t")
            scope, field = key.split(".", 1)
        except ValueError:
            raise MetricError(f"report line {lineno}: expected 'scope.metric<TAB>value'") from None
        if field in _FLOAT_FIELDS:
            value: float | int = float(raw)
        elif field in _INT_FIELDS:
            value = int(raw)
        else:
            raise MetricError(f"report line {lineno}: unknown metric {key!r}")
        values.setdefault(scope, {})[field] = value
    out = {}
    for scope, kv in values.items():
        missing = [f for f in (*_FLOAT_FIELDS, *_INT_FIELDS) if f not in kv]
        if missing:
            raise MetricError(f"report scope {scope!r} missing fields: {missing}")
        out[scope] = MetricsReport(**kv)  # type: ignore[arg-type]
    return out
