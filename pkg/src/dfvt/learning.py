"""Losses, plain SGD, the training loop, and anchored incremental fine-tuning.

The incremental objective adds a squared-L2 pull towards a frozen snapshot
of the pre-fine-tune weights (the anchor), scaled by a single global
``anchor_weight``; with weight 0 the fine-tune loop is bit-identical to
plain training. Training is a pure function of (initial parameters, dataset
order, seed, config): repeated runs are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .config import TrainConfig
from .data import DataError, Dataset
from .model import ModelParams, model_forward
from .tensor import Tensor, add, backward, log_softmax, narrow, neg, scale, sub, tensor, tsum, mul


class TrainingError(RuntimeError):
    """Optimizer misuse (e.g. stepping with missing gradients)."""


AnchorSnapshot = dict[str, np.ndarray]


def snapshot(params: ModelParams) -> AnchorSnapshot:
    """Frozen copy of every learnable parameter, keyed by name."""
    return {name: t.data.copy() for name, t in params.named()}


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    mean_loss: float
    accuracy: float


History = list[EpochStats]


def cross_entropy(logits: Tensor, label: int) -> Tensor:
    """-log softmax(logits)[label], computed in log space."""
    if label not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {label}")
    if not np.all(np.isfinite(logits.data)):
        raise ValueError("cross_entropy: non-finite logits")
    picked = narrow(log_softmax(logits), 0, label, 1)
    return neg(tsum(picked))


def anchor_penalty(params: ModelParams, anchor: AnchorSnapshot, weight: float) -> Tensor:
    """weight * sum over parameters of squared elementwise distance to the anchor."""
    names = [n for n, _ in params.named()]
    if set(names) != set(anchor):
        raise TrainingError(
            f"anchor keys do not match parameters "
            f"(missing {sorted(set(names) - set(anchor))}, "
            f"extra {sorted(set(anchor) - set(names))})"
        )
    total: Optional[Tensor] = None
    for name, t in params.named():
        ref = anchor[name]
        if ref.shape != t.shape:
            raise TrainingError(f"anchor shape mismatch for {name}: {ref.shape} vs {t.shape}")
        diff = sub(t, tensor(ref, dtype=t.dtype))
        term = tsum(mul(diff, diff))
        total = term if total is None else add(total, term)
    return scale(total, weight)


def incremental_loss(
    logits: Tensor,
    label: int,
    params: ModelParams,
    anchor: AnchorSnapshot,
    weight: float,
) -> Tensor:
    loss = cross_entropy(logits, label)
    if weight != 0.0:
        loss = add(loss, anchor_penalty(params, anchor, weight))
    return loss


def sgd_step(params: ModelParams, learning_rate: float) -> None:
    """theta <- theta - lr * grad for every trainable parameter, then clear grads.

    A missing gradient is a hard error, never a silent skip.
    """
    for name, t in params.trainable():
        if t.grad is None:
            raise TrainingError(f"sgd_step: parameter {name!r} has no gradient")
    for _, t in params.trainable():
        t.data -= t.grad * np.asarray(learning_rate, dtype=t.dtype)
        t.grad = None


def _check_dataset(params: ModelParams, dataset: Dataset) -> None:
    cfg = params.config
    if not dataset:
        raise DataError("training dataset is empty")
    want_geometry = (cfg.channels, cfg.image_size, cfg.image_size)
    for sample in dataset:
        if len(sample.frames) != cfg.t:
            raise DataError(
                f"sample {sample.video_id} has {len(sample.frames)} frames, config has t={cfg.t}"
            )
        if cfg.hybrid and sample.frames[0].face.shape != want_geometry:
            raise DataError(
                f"sample {sample.video_id} geometry {sample.frames[0].face.shape} "
                f"does not match configured {want_geometry}"
            )


def _fit(
    params: ModelParams,
    dataset: Dataset,
    cfg: TrainConfig,
    anchor: Optional[AnchorSnapshot],
    weight: float,
) -> History:
    cfg.validate()
    _check_dataset(params, dataset)  # abort before mutating params
    rng = np.random.default_rng(cfg.seed)
    history: History = []
    n = len(dataset)
    use_penalty = anchor is not None and weight != 0.0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        loss_sum = 0.0
        correct = 0
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            inv_b = 1.0 / len(batch)
            for idx in batch:
                sample = dataset[int(idx)]
                logits, probs = model_forward(sample, params)
                ce = cross_entropy(logits, sample.label)
                loss_sum += ce.item()
                pred = 1 if float(probs.data[1]) >= 0.5 else 0
                correct += int(pred == sample.label)
                backward(scale(ce, inv_b))
            if use_penalty:
                pen = anchor_penalty(params, anchor, weight)
                loss_sum += pen.item() * len(batch)
                backward(pen)
            sgd_step(params, cfg.learning_rate)
        history.append(EpochStats(epoch=epoch, mean_loss=loss_sum / n, accuracy=correct / n))
    return history


def train(params: ModelParams, dataset: Dataset, cfg: TrainConfig) -> History:
    """Seeded shuffled epochs of forward / loss / backward / SGD step."""
    return _fit(params, dataset, cfg, anchor=None, weight=0.0)


def finetune_incremental(
    params: ModelParams,
    dataset: Dataset,
    anchor: AnchorSnapshot,
    cfg: TrainConfig,
) -> History:
    """Same loop as ``train`` but optimizing the anchored incremental loss.

    The anchor is never mutated; with anchor_weight 0 this is bit-identical
    to ``train`` under the same seed.
    """
    return _fit(params, dataset, cfg, anchor=anchor, weight=cfg.anchor_weight)


# ---------------------------------------------------------------------------
# history serialization (tab-separated text, one record per epoch)
# ---------------------------------------------------------------------------

HISTORY_HEADER = "epoch\tmean_loss\taccuracy"


def history_to_text(history: History) -> str:
    lines = [HISTORY_HEADER]
    for h in history:
        lines.append(f"{h.epoch}\t{h.mean_loss!r}\t{h.accuracy!r}")
    return "\n".join(lines) + "\n"


def history_from_text(text: str) -> History:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != HISTORY_HEADER:
        raise DataError("history file missing header")
    out: History = []
    for ln in lines[1:]:
        epoch_s, loss_s, acc_s = ln.split("\t")
        out.append(EpochStats(epoch=int(epoch_s), mean_loss=float(loss_s), accuracy=float(acc_s)))
    return out
