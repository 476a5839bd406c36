"""Task-solvability oracles for the synthetic datasets.

Each oracle is a one-feature threshold classifier fit on a training split
and scored on a test split. They establish, independently of the model,
which cues a task does and does not expose: the stream-aware oracle must
crack the stream-identity task while the pooled one must not, and the
adjacent-frame oracle must crack the flicker task while the single-frame
one must not.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .data import (
    Dataset,
    FlickerTaskConfig,
    SpatialTaskConfig,
    StreamTaskConfig,
    VideoSample,
)


def fit_threshold(scores: np.ndarray, labels: np.ndarray) -> tuple[float, int]:
    """Best (cut, polarity) on the given scores; polarity +1 means score >= cut -> 1."""
    order = np.argsort(scores, kind="stable")
    s = scores[order]
    y = labels[order]
    candidates = np.concatenate(([s[0] - 1.0], (s[:-1] + s[1:]) / 2.0, [s[-1] + 1.0]))
    best = (0.5, 1)
    best_acc = -1.0
    for cut in candidates:
        pred = (s >= cut).astype(int)
        acc = float((pred == y).mean())
        if acc > best_acc:
            best_acc, best = acc, (float(cut), 1)
        acc_flip = 1.0 - acc
        if acc_flip > best_acc:
            best_acc, best = acc_flip, (float(cut), -1)
    return best


def apply_threshold(scores: np.ndarray, labels: np.ndarray, rule: tuple[float, int]) -> float:
    cut, polarity = rule
    pred = (scores >= cut).astype(int)
    if polarity < 0:
        pred = 1 - pred
    return float((pred == labels).mean())


def _threshold_accuracy(
    train: Dataset, test: Dataset, score_fn: Callable[[VideoSample], float]
) -> float:
    tr_scores = np.array([score_fn(v) for v in train])
    tr_labels = np.array([v.label for v in train])
    te_scores = np.array([score_fn(v) for v in test])
    te_labels = np.array([v.label for v in test])
    rule = fit_threshold(tr_scores, tr_labels)
    return apply_threshold(te_scores, te_labels, rule)


def spatial_region_oracle(
    train: Dataset, test: Dataset, cfg: SpatialTaskConfig = SpatialTaskConfig()
) -> float:
    """Mean intensity of the patterned face region."""

    def score(v: VideoSample) -> float:
        face = v.frames[0].face
        r0, r1, c0, c1 = cfg.region(face.shape[1], face.shape[2])
        return float(face[:, r0:r1, c0:c1].mean())

    return _threshold_accuracy(train, test, score)


def stream_aware_oracle(
    train: Dataset, test: Dataset, cfg: StreamTaskConfig = StreamTaskConfig()
) -> float:
    """UV-minus-face region contrast; uses stream identity."""

    def score(v: VideoSample) -> float:
        f = v.frames[0]
        r0, r1, c0, c1 = cfg.region(f.face.shape[1], f.face.shape[2])
        return float(f.uv[:, r0:r1, c0:c1].mean() - f.face[:, r0:r1, c0:c1].mean())

    return _threshold_accuracy(train, test, score)


def pooled_stream_oracle(
    train: Dataset, test: Dataset, cfg: StreamTaskConfig = StreamTaskConfig()
) -> float:
    """Strongest stream-symmetric statistic: absolute region contrast.

    Invariant under swapping face and uv, so it cannot beat chance on the
    stream-identity task by construction.
    """

    def score(v: VideoSample) -> float:
        f = v.frames[0]
        r0, r1, c0, c1 = cfg.region(f.face.shape[1], f.face.shape[2])
        return abs(float(f.uv[:, r0:r1, c0:c1].mean() - f.face[:, r0:r1, c0:c1].mean()))

    return _threshold_accuracy(train, test, score)


def single_frame_oracle(train: Dataset, test: Dataset) -> float:
    """Mean intensity of the first frame only; blind to temporal structure."""

    def score(v: VideoSample) -> float:
        return float(v.frames[0].face.mean())

    return _threshold_accuracy(train, test, score)


def frame_difference_oracle(train: Dataset, test: Dataset) -> float:
    """Mean absolute change of per-frame means between adjacent frames."""

    def score(v: VideoSample) -> float:
        means = np.array([f.face.mean() for f in v.frames])
        return float(np.abs(np.diff(means)).mean())

    return _threshold_accuracy(train, test, score)


def logistic_separability_oracle(
    dataset: Dataset, epochs: int = 200, lr: float = 0.5, seed: int = 0
) -> float:
    """Train accuracy of plain logistic regression on flattened face pixels.

    Used to confirm a toy set is linearly separable before asking the full
    model to fit it.
    """
    x = np.stack([v.frames[0].face.reshape(-1) for v in dataset]).astype(np.float64)
    x = x - x.mean(axis=0)
    y = np.array([v.label for v in dataset], dtype=np.float64)
    rng = np.random.default_rng(seed)
    w = rng.normal(0.0, 0.01, size=x.shape[1])
    b = 0.0
    for _ in range(epochs):
        p = 1.0 / (1.0 + np.exp(-(x @ w + b)))
        grad_w = x.T @ (p - y) / len(y)
        grad_b = float((p - y).mean())
        w -= lr * grad_w
        b -= lr * grad_b
    pred = (x @ w + b) >= 0
    return float((pred == (y == 1)).mean())
