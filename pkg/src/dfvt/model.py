"""Transformer encoder stack, classification head, and parameter management.

Blocks are pre-norm residual: ``x + attn(norm(x))`` then ``+ mlp(norm(.))``.
Attention projections carry no biases; the MLP does. A final norm precedes
the class-token readout. Parameter names are unique and stable: they define
checkpoint layout, anchor keys, and the rng consumption order at init.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from .config import ModelConfig
from .data import DataError, VideoSample, resize_nearest
from .embedding import (
    FACE,
    UV,
    EmbeddingTable,
    TokenMatrix,
    assemble_frame,
    assemble_sequence,
    backbone_features,
    patchify,
    tokens_from_features,
)
from .tensor import (
    Precision,
    ShapeError,
    Tensor,
    add,
    concat,
    gelu,
    layer_norm,
    matmul,
    narrow,
    relu,
    reshape,
    scale,
    softmax,
    tensor,
    transpose2d,
)

LAYER_NORM_EPS = 1e-5
INIT_STD = 0.02


@dataclass
class EncoderBlockParams:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    ln1_g: Tensor
    ln1_b: Tensor
    ln2_g: Tensor
    ln2_b: Tensor
    mlp_w1: Tensor
    mlp_b1: Tensor
    mlp_w2: Tensor
    mlp_b2: Tensor


def parameter_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Name -> shape for every learnable tensor the config implies (ordered)."""
    d = cfg.d
    shapes: dict[str, tuple[int, ...]] = {}
    if cfg.hybrid:
        bb = cfg.backbone_config()
        in_c = cfg.channels
        for i, (out_c, k, _) in enumerate(bb.stages):
            shapes[f"backbone.s{i}.w"] = (out_c, in_c, k, k)
            shapes[f"backbone.s{i}.b"] = (out_c,)
            in_c = out_c
        c_f, h, w = bb.out_geometry(cfg.channels, cfg.image_size, cfg.image_size)
        shapes["proj.w"] = (c_f, d)
        shapes["proj.b"] = (d,)
        shapes["mix.w"] = (cfg.tokens_per_image, h * w)
    else:
        shapes["patch.w"] = (cfg.channels * cfg.patch_size**2, d)
        shapes["patch.b"] = (d,)
    shapes["embed.cls"] = (1, d)
    if cfg.use_pos:
        shapes["embed.pos"] = (cfg.seq_len, d)
    if cfg.use_segment:
        shapes["embed.seg"] = (cfg.seg_rows, d)
    for i in range(cfg.n_blocks):
        p = f"block{i}"
        shapes[f"{p}.attn.wq"] = (d, d)
        shapes[f"{p}.attn.wk"] = (d, d)
        shapes[f"{p}.attn.wv"] = (d, d)
        shapes[f"{p}.attn.wo"] = (d, d)
        shapes[f"{p}.ln1.g"] = (d,)
        shapes[f"{p}.ln1.b"] = (d,)
        shapes[f"{p}.ln2.g"] = (d,)
        shapes[f"{p}.ln2.b"] = (d,)
        shapes[f"{p}.mlp.w1"] = (d, cfg.mlp_dim)
        shapes[f"{p}.mlp.b1"] = (cfg.mlp_dim,)
        shapes[f"{p}.mlp.w2"] = (cfg.mlp_dim, d)
        shapes[f"{p}.mlp.b2"] = (d,)
    shapes["final_ln.g"] = (d,)
    shapes["final_ln.b"] = (d,)
    shapes["head.w"] = (d, 2)
    shapes["head.b"] = (2,)
    return shapes


class ModelParams:
    """Named parameter tensors plus typed views used by the forward pass."""

    def __init__(self, config: ModelConfig, tensors: dict[str, Tensor]):
        self.config = config
        self.tensors = tensors
        expected = parameter_shapes(config)
        if list(tensors) != list(expected):
            missing = [k for k in expected if k not in tensors]
            extra = [k for k in tensors if k not in expected]
            raise ShapeError(
                f"parameter set does not match config (missing {missing}, unexpected {extra})"
            )
        for name, shape in expected.items():
            if tensors[name].shape != shape:
                raise ShapeError(
                    f"parameter {name} has shape {tensors[name].shape}, expected {shape}"
                )
        if config.freeze_backbone:
            for name, t in tensors.items():
                if name.startswith("backbone."):
                    t.requires_grad = False

        self.blocks = [
            EncoderBlockParams(
                wq=tensors[f"block{i}.attn.wq"],
                wk=tensors[f"block{i}.attn.wk"],
                wv=tensors[f"block{i}.attn.wv"],
                wo=tensors[f"block{i}.attn.wo"],
                ln1_g=tensors[f"block{i}.ln1.g"],
                ln1_b=tensors[f"block{i}.ln1.b"],
                ln2_g=tensors[f"block{i}.ln2.g"],
                ln2_b=tensors[f"block{i}.ln2.b"],
                mlp_w1=tensors[f"block{i}.mlp.w1"],
                mlp_b1=tensors[f"block{i}.mlp.b1"],
                mlp_w2=tensors[f"block{i}.mlp.w2"],
                mlp_b2=tensors[f"block{i}.mlp.b2"],
            )
            for i in range(config.n_blocks)
        ]
        self.table = EmbeddingTable(
            cls=tensors["embed.cls"],
            pos=tensors.get("embed.pos"),
            seg=tensors.get("embed.seg"),
        )

    @property
    def dtype(self) -> np.dtype:
        return self.tensors["head.w"].dtype

    def named(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self.tensors.items())

    def trainable(self) -> Iterator[tuple[str, Tensor]]:
        return ((n, t) for n, t in self.tensors.items() if t.requires_grad)

    def backbone_stages(self) -> list[tuple[Tensor, Tensor]]:
        bb = self.config.backbone_config()
        return [
            (self.tensors[f"backbone.s{i}.w"], self.tensors[f"backbone.s{i}.b"])
            for i in range(len(bb.stages))
        ]


# fan-in axis of the scale-preserving tokenizer weights
_FAN_IN_AXIS = {"patch.w": 0, "proj.w": 0, "mix.w": 1}


def init_params(cfg: ModelConfig, seed: int, precision: Precision = Precision.TRAIN) -> ModelParams:
    """Seeded initialization.

    Encoder projections, head and embedding tables draw from normal(0, 0.02);
    biases are zero and norm gains one. Tokenizer weights (patch projection,
    channel projector, token mixer) and backbone kernels are fan-in scaled so
    tokens enter the encoder at unit scale; with 0.02 there the class-token
    readout is constant-dominated and training stalls at the uniform-output
    plateau.
    """
    cfg.validate()
    rng = np.random.default_rng(seed)
    dtype = precision.dtype

    def normal(shape, std):
        return Tensor((rng.standard_normal(shape) * std).astype(dtype), requires_grad=True)

    def zeros(shape):
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)

    def ones(shape):
        return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)

    tensors: dict[str, Tensor] = {}
    for name, shape in parameter_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[1]
        if leaf in ("b", "b1", "b2"):
            tensors[name] = zeros(shape)
        elif leaf == "g":
            tensors[name] = ones(shape)
        elif name.startswith("backbone."):
            fan_in = int(np.prod(shape[1:]))
            tensors[name] = normal(shape, math.sqrt(2.0 / fan_in))
        elif name in _FAN_IN_AXIS:
            tensors[name] = normal(shape, 1.0 / math.sqrt(shape[_FAN_IN_AXIS[name]]))
        else:
            tensors[name] = normal(shape, INIT_STD)
    return ModelParams(cfg, tensors)


# ---------------------------------------------------------------------------
# forward pass
# ---------------------------------------------------------------------------


def attention(
    x: Tensor, p: EncoderBlockParams, n_heads: int, return_weights: bool = False
):
    """Multi-head self-attention: softmax(QK^T / sqrt(d_h)) V per head, then W_o.

    Full bidirectional, no mask.
    """
    seq_len, d = x.shape
    if d % n_heads != 0:
        raise ShapeError(f"attention: dim {d} not divisible by {n_heads} heads")
    dh = d // n_heads
    inv_sqrt_dh = 1.0 / math.sqrt(dh)
    q = matmul(x, p.wq)
    k = matmul(x, p.wk)
    v = matmul(x, p.wv)
    heads = []
    weights = []
    for h in range(n_heads):
        qs = narrow(q, 1, h * dh, dh)
        ks = narrow(k, 1, h * dh, dh)
        vs = narrow(v, 1, h * dh, dh)
        attn = softmax(scale(matmul(qs, transpose2d(ks)), inv_sqrt_dh))
        heads.append(matmul(attn, vs))
        if return_weights:
            weights.append(attn)
    out = matmul(concat(heads, axis=1), p.wo)
    if return_weights:
        return out, weights
    return out


def _mlp(x: Tensor, p: EncoderBlockParams, activation: str) -> Tensor:
    act = gelu if activation == "gelu" else relu
    hidden = act(add(matmul(x, p.mlp_w1), p.mlp_b1))
    return add(matmul(hidden, p.mlp_w2), p.mlp_b2)


def encoder_block(x: Tensor, p: EncoderBlockParams, n_heads: int, activation: str = "gelu") -> Tensor:
    h = add(x, attention(layer_norm(x, p.ln1_g, p.ln1_b, LAYER_NORM_EPS), p, n_heads))
    return add(h, _mlp(layer_norm(h, p.ln2_g, p.ln2_b, LAYER_NORM_EPS), p, activation))


def _tokenize_image(
    image: np.ndarray, params: ModelParams, stream: str, frame_index: int
) -> TokenMatrix:
    cfg = params.config
    if cfg.hybrid:
        if image.shape != (cfg.channels, cfg.image_size, cfg.image_size):
            raise DataError(
                f"sample image geometry {image.shape} does not match configured "
                f"({cfg.channels}, {cfg.image_size}, {cfg.image_size})"
            )
        x = tensor(image, dtype=params.dtype)
        feat = backbone_features(
            x, cfg.backbone_config(), params.backbone_stages(), cfg.activation
        )
        return tokens_from_features(
            feat,
            params.tensors["proj.w"],
            params.tensors["proj.b"],
            params.tensors["mix.w"],
            stream=stream,
            frame_index=frame_index,
        )
    # patch path: resize so the image divides into the configured grid
    side = cfg.patch_input_size
    x = tensor(resize_nearest(image, side), dtype=params.dtype)
    return patchify(
        x,
        cfg.patch_size,
        params.tensors["patch.w"],
        params.tensors["patch.b"],
        stream=stream,
        frame_index=frame_index,
    )


def assemble_input(sample: VideoSample, params: ModelParams) -> Tensor:
    """Tokenize and assemble one sample into the (N+1, D) encoder input."""
    cfg = params.config
    if len(sample.frames) != cfg.t:
        raise DataError(
            f"sample {sample.video_id} has {len(sample.frames)} frames, config has t={cfg.t}"
        )
    frame_rows = []
    for idx, frame in enumerate(sample.frames):
        face_tm = _tokenize_image(frame.face, params, FACE, idx)
        uv_tm = _tokenize_image(frame.uv, params, UV, idx) if cfg.use_uv else None
        frame_rows.append(assemble_frame(face_tm, uv_tm, params.table, idx, cfg))
    return assemble_sequence(frame_rows, params.table, cfg)


def encode_sequence(x: Tensor, params: ModelParams) -> Tensor:
    """Encoder stack over an assembled sequence, down to the two class logits."""
    cfg = params.config
    for block in params.blocks:
        x = encoder_block(x, block, cfg.n_heads, cfg.activation)
    x = layer_norm(x, params.tensors["final_ln.g"], params.tensors["final_ln.b"], LAYER_NORM_EPS)
    cls_row = narrow(x, 0, 0, 1)
    logits = add(matmul(cls_row, params.tensors["head.w"]), params.tensors["head.b"])
    return reshape(logits, (2,))


def model_forward(sample: VideoSample, params: ModelParams) -> tuple[Tensor, Tensor]:
    """Full forward pass: (logits, probs) for one sample."""
    logits = encode_sequence(assemble_input(sample, params), params)
    return logits, softmax(logits)
