"""Scoring datasets with a model: per-window and per-video predictions.

Videos are cut into consecutive T-frame windows (T from the model config).
An image model (T=1) scores a longer window as the mean of its per-frame
probabilities, which is also how fusion aligns an image model with a video
model. Video-level scores are the mean over a video's windows. Iteration
order is the dataset order, so merged outputs are deterministic.
"""

from __future__ import annotations

from .data import Dataset, DataError, VideoSample, sample_windows
from .metrics import FusionError, MetricsReport, ScoredPrediction, report
from .model import ModelParams, model_forward
from .tensor import no_grad


def _window_id(video_id: str, index: int) -> str:
    return f"{video_id}#w{index}"


def _score_sample(params: ModelParams, sample: VideoSample) -> float:
    _, probs = model_forward(sample, params)
    return float(probs.data[1])


def _score_window(params: ModelParams, window: VideoSample) -> float:
    t = params.config.t
    if len(window.frames) == t:
        return _score_sample(params, window)
    if t == 1:
        frame_scores = [
            _score_sample(params, VideoSample([f], window.label, window.video_id))
            for f in window.frames
        ]
        return float(sum(frame_scores) / len(frame_scores))
    raise FusionError(
        f"model with t={t} cannot score a {len(window.frames)}-frame window"
    )


def predict_windows(
    params: ModelParams, dataset: Dataset, stride: int = 1, window_t: int | None = None
) -> list[ScoredPrediction]:
    """One prediction per window; ``window_t`` defaults to the model's own T."""
    if not dataset:
        raise DataError("evaluation dataset is empty")
    t = window_t if window_t is not None else params.config.t
    out: list[ScoredPrediction] = []
    with no_grad():
        for video in dataset:
            for j, window in enumerate(sample_windows(video, t, stride)):
                out.append(
                    ScoredPrediction(
                        sample_id=_window_id(video.video_id, j),
                        label=video.label,
                        prob_fake=_score_window(params, window),
                    )
                )
    return out


def video_level(preds: list[ScoredPrediction]) -> list[ScoredPrediction]:
    """Mean fake probability per source video, in first-seen order."""
    sums: dict[str, list] = {}
    order: list[str] = []
    for p in preds:
        vid = p.sample_id.rsplit("#w", 1)[0]
        if vid not in sums:
            sums[vid] = [0.0, 0, p.label]
            order.append(vid)
        entry = sums[vid]
        if entry[2] != p.label:
            raise DataError(f"video {vid!r} has windows with conflicting labels")
        entry[0] += p.prob_fake
        entry[1] += 1
    return [
        ScoredPrediction(sample_id=vid, label=sums[vid][2], prob_fake=sums[vid][0] / sums[vid][1])
        for vid in order
    ]


def evaluate(
    params: ModelParams, dataset: Dataset, stride: int = 1
) -> tuple[dict[str, MetricsReport], list[ScoredPrediction], list[ScoredPrediction]]:
    """Window- and video-level reports plus the underlying predictions."""
    window_preds = predict_windows(params, dataset, stride)
    vid_preds = video_level(window_preds)
    reports = {"window": report(window_preds), "video": report(vid_preds)}
    return reports, window_preds, vid_preds
