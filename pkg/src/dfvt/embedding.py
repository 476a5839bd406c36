"""Input assembly: tokenization, segment/positional embeddings, sequence build.

Raw face/UV image pairs become the encoder's input sequence in four steps:
tokenize each image (raw patches or backbone features), concatenate the two
streams per frame and add segment embeddings, concatenate frames in temporal
order, then prepend the classification token and add positional embeddings.
Everything here is a pure function over inputs and read-only parameters, and
every step stays on the gradient tape.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

from .config import BackboneConfig, ModelConfig
from .tensor import (
    ShapeError,
    Tensor,
    add,
    concat,
    conv2d,
    extract_patches,
    gelu,
    matmul,
    narrow,
    relu,
    reshape,
    transpose2d,
)

FACE = "face"
UV = "uv"

_ACTIVATION_FNS = {"gelu": gelu, "relu": relu}


@dataclass
class TokenMatrix:
    """Per-image token block: ``(n_tok, D)`` plus stream and frame provenance."""

    tokens: Tensor
    stream: str          # FACE or UV
    frame_index: int


@dataclass
class EmbeddingTable:
    """Learnable segment rows, positional rows, and the classification token."""

    cls: Tensor                      # (1, D)
    pos: Optional[Tensor] = None     # (N+1, D)
    seg: Optional[Tensor] = None     # (S, D)


def patchify(
    image: Tensor,
    patch_size: int,
    weight: Tensor,
    bias: Tensor,
    stream: str = FACE,
    frame_index: int = 0,
) -> TokenMatrix:
    """Non-overlapping patches, flattened and linearly projected to D.

    Token order is row-major over the patch grid; token count is
    (H / p) * (W / p).
    """
    patches = extract_patches(image, patch_size)
    tokens = add(matmul(patches, weight), bias)
    return TokenMatrix(tokens=tokens, stream=stream, frame_index=frame_index)


def backbone_features(
    image: Tensor,
    cfg: BackboneConfig,
    stage_params: Sequence[tuple[Tensor, Tensor]],
    activation: str = "gelu",
) -> Tensor:
    """Stacked conv + nonlinearity stages; the feature-extractor stub."""
    if len(stage_params) != len(cfg.stages):
        raise ShapeError(
            f"backbone: {len(stage_params)} parameter stages for {len(cfg.stages)} configured stages"
        )
    act = _ACTIVATION_FNS[activation]
    x = image
    for (_, _, stride), (w, b) in zip(cfg.stages, stage_params):
        x = act(conv2d(x, w, stride=stride, bias=b))
    return x


def tokens_from_features(
    feat: Tensor,
    proj_weight: Tensor,
    proj_bias: Tensor,
    mix_weight: Tensor,
    stream: str = FACE,
    frame_index: int = 0,
) -> TokenMatrix:
    """Feature map to token block: channel projection to D, then token mixing.

    A 1x1 convolution over channels is a matrix product over the channel
    axis, so the projection is expressed that way; the learned mixing map
    then reduces the h*w feature positions to the configured token count.
    """
    c_f, h, w = feat.shape
    if proj_weight.shape[0] != c_f:
        raise ShapeError(
            f"tokens_from_features: projector expects {proj_weight.shape[0]} channels, "
            f"feature map has {c_f}"
        )
    if mix_weight.shape[1] != h * w:
        raise ShapeError(
            f"tokens_from_features: mixer expects {mix_weight.shape[1]} positions, "
            f"feature map has {h * w}"
        )
    positions = transpose2d(reshape(feat, (c_f, h * w)))      # (h*w, C_f)
    projected = add(matmul(positions, proj_weight), proj_bias)  # (h*w, D)
    tokens = matmul(mix_weight, projected)                      # (n_tok, D)
    return TokenMatrix(tokens=tokens, stream=stream, frame_index=frame_index)


def _segment_row(table: EmbeddingTable, cfg: ModelConfig, stream: str, frame_index: int) -> Tensor:
    if table.seg is None:
        raise ShapeError("segment embeddings requested but table has none")
    if cfg.segment_mode == "per_frame":
        row = frame_index if stream == FACE else cfg.t + frame_index
    else:
        row = 0 if stream == FACE else 1
    return narrow(table.seg, 0, row, 1)


def assemble_frame(
    face: TokenMatrix,
    uv: Optional[TokenMatrix],
    table: EmbeddingTable,
    frame_index: int,
    cfg: ModelConfig,
) -> Tensor:
    """One frame's token rows: [face; uv] with per-stream segment rows added."""
    parts = [face] if uv is None else [face, uv]
    if (uv is None) == cfg.use_uv:
        raise ShapeError(
            f"assemble_frame: config expects {cfg.streams} stream(s), got {len(parts)}"
        )
    expected = (FACE, UV)
    for tm, want in zip(parts, expected):
        if tm.stream != want:
            raise ShapeError(f"assemble_frame: expected {want} stream, got {tm.stream}")
        if tm.frame_index != frame_index:
            raise ShapeError(
                f"assemble_frame: token block from frame {tm.frame_index}, assembling frame {frame_index}"
            )
        if tm.tokens.shape[0] != cfg.tokens_per_image:
            raise ShapeError(
                f"assemble_frame: {tm.stream} block has {tm.tokens.shape[0]} tokens, "
                f"config requires {cfg.tokens_per_image} per image"
            )
    blocks = []
    for tm in parts:
        block = tm.tokens
        if cfg.use_segment:
            block = add(block, _segment_row(table, cfg, tm.stream, frame_index))
        blocks.append(block)
    return blocks[0] if len(blocks) == 1 else concat(blocks, axis=0)


def assemble_sequence(frames: Sequence[Tensor], table: EmbeddingTable, cfg: ModelConfig) -> Tensor:
    """Frames in temporal order -> (N, D), prepend cls -> (N+1, D), add positions."""
    if len(frames) != cfg.t:
        raise ShapeError(f"assemble_sequence: got {len(frames)} frames, config has t={cfg.t}")
    for i, f in enumerate(frames):
        if f.shape != (cfg.tokens_per_frame, cfg.d):
            raise ShapeError(
                f"assemble_sequence: frame {i} has shape {f.shape}, "
                f"expected ({cfg.tokens_per_frame}, {cfg.d})"
            )
    x = concat([table.cls, *frames], axis=0)
    if cfg.use_pos:
        if table.pos is None:
            raise ShapeError("positional embeddings requested but table has none")
        x = add(x, table.pos)
    return x
