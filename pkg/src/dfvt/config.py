"""Architecture, training and run configuration, plus the key=value codec.

Run configs are UTF-8 text files of ``key=value`` lines. Unknown keys are
rejected and every value is validated against its type and range before a
command touches any data.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from typing import Optional


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


@dataclass(frozen=True)
class BackboneConfig:
    """Conv stage stack of the feature extractor stub: (out_channels, kernel, stride) per stage."""

    stages: tuple[tuple[int, int, int], ...]

    def out_geometry(self, channels: int, height: int, width: int) -> tuple[int, int, int]:
        c, h, w = channels, height, width
        for i, (out_c, k, s) in enumerate(self.stages):
            if k > h or k > w:
                raise ConfigError(
                    f"backbone stage {i}: kernel {k} larger than {h}x{w} input"
                )
            h = (h - k) // s + 1
            w = (w - k) // s + 1
            c = out_c
        return c, h, w


# Presets pin the stage arithmetic. "paper" reproduces the published hybrid
# geometry (3x299x299 -> 2048x10x10); "desk" is the small-experiment preset
# (3x32x32 -> 64x4x4); "tiny" exists for gradient checks (3x8x8 -> 4x3x3).
BACKBONE_PRESETS: dict[str, BackboneConfig] = {
    "tiny": BackboneConfig(stages=((4, 3, 2),)),
    "desk": BackboneConfig(stages=((8, 3, 2), (16, 3, 2), (64, 4, 1))),
    "paper": BackboneConfig(
        stages=((32, 3, 2), (64, 3, 2), (128, 3, 2), (128, 3, 2), (2048, 8, 1))
    ),
}

SEGMENT_MODES = ("two", "per_frame")
ACTIVATIONS = ("gelu", "relu")


@dataclass(frozen=True)
class ModelConfig:
    """All architecture dimensions and ablation switches."""

    d: int = 32                      # token dimension
    t: int = 1                       # frames per sample (1 = image model)
    n: int = 8                       # total token count across frames and streams
    patch_size: int = 16             # pixels per patch side (patch models)
    n_heads: int = 4
    n_blocks: int = 2
    use_uv: bool = True              # dual-stream when true
    use_segment: bool = True
    use_pos: bool = True
    hybrid: bool = True              # backbone features vs raw patches
    segment_mode: str = "per_frame"  # "two" or "per_frame"
    backbone: str = "desk"
    image_size: int = 32             # square input side expected by the tokenizer
    channels: int = 3
    mlp_ratio: int = 4
    activation: str = "gelu"
    freeze_backbone: bool = False

    @property
    def streams(self) -> int:
        return 2 if self.use_uv else 1

    @property
    def tokens_per_image(self) -> int:
        return self.n // (self.streams * self.t)

    @property
    def tokens_per_frame(self) -> int:
        return self.n // self.t

    @property
    def seq_len(self) -> int:
        return self.n + 1

    @property
    def head_dim(self) -> int:
        return self.d // self.n_heads

    @property
    def seg_rows(self) -> int:
        if self.segment_mode == "per_frame":
            return self.streams * self.t
        return self.streams

    @property
    def mlp_dim(self) -> int:
        return self.d * self.mlp_ratio

    @property
    def patch_grid(self) -> int:
        g = int(round(self.tokens_per_image ** 0.5))
        return g

    @property
    def patch_input_size(self) -> int:
        """Square image side the patch tokenizer expects (grid * patch size)."""
        return self.patch_grid * self.patch_size

    def backbone_config(self) -> BackboneConfig:
        try:
            return BACKBONE_PRESETS[self.backbone]
        except KeyError:
            raise ConfigError(
                f"unknown backbone preset {self.backbone!r}; "
                f"known: {', '.join(sorted(BACKBONE_PRESETS))}"
            ) from None

    def validate(self) -> "ModelConfig":
        problems = []
        for name in ("d", "t", "n", "patch_size", "n_heads", "n_blocks",
                     "image_size", "channels", "mlp_ratio"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1")
        if self.d % max(self.n_heads, 1) != 0:
            problems.append(f"d={self.d} not divisible by n_heads={self.n_heads}")
        per = self.streams * self.t
        if self.n % per != 0:
            kind = "2T" if self.use_uv else "T"
            problems.append(f"n={self.n} not divisible by {kind}={per}")
        if self.segment_mode not in SEGMENT_MODES:
            problems.append(f"segment_mode must be one of {SEGMENT_MODES}")
        if self.activation not in ACTIVATIONS:
            problems.append(f"activation must be one of {ACTIVATIONS}")
        if not problems and not self.hybrid:
            g = self.patch_grid
            if g * g != self.tokens_per_image:
                problems.append(
                    f"patch model needs a square token grid per image; "
                    f"{self.tokens_per_image} tokens is not a perfect square"
                )
        if not problems and self.hybrid:
            try:
                self.backbone_config().out_geometry(
                    self.channels, self.image_size, self.image_size
                )
            except ConfigError as e:
                problems.append(str(e))
        if problems:
            raise ConfigError("invalid model config: " + "; ".join(problems))
        return self


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 5
    learning_rate: float = 3e-3
    batch_size: int = 8
    seed: int = 0
    anchor_weight: float = 0.0
    shuffle: bool = True

    def validate(self) -> "TrainConfig":
        problems = []
        if self.epochs < 0:
            problems.append("epochs must be >= 0")
        if not self.learning_rate > 0:
            problems.append("learning_rate must be > 0")
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        if self.anchor_weight < 0:
            problems.append("anchor_weight must be >= 0")
        if problems:
            raise ConfigError("invalid train config: " + "; ".join(problems))
        return self


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig
    train: TrainConfig
    data: Optional[str] = None
    out: Optional[str] = None
    history: Optional[str] = None
    report: Optional[str] = None
    stride: int = 1

    def validate(self) -> "RunConfig":
        self.model.validate()
        self.train.validate()
        if self.stride < 1:
            raise ConfigError("stride must be >= 1")
        return self


# ---------------------------------------------------------------------------
# key=value codec
# ---------------------------------------------------------------------------

_MODEL_FIELDS = {f.name: f.type for f in fields(ModelConfig)}
_TRAIN_FIELDS = {f.name: f.type for f in fields(TrainConfig)}
_PATH_KEYS = ("data", "out", "history", "report")

_BOOL_WORDS = {
    "true": True, "1": True, "yes": True, "on": True,
    "false": False, "0": False, "no": False, "off": False,
}


def _parse_value(key: str, raw: str, target_type: str):
    raw = raw.strip()
    try:
        if target_type == "int":
            return int(raw)
        if target_type == "float":
            return float(raw)
        if target_type == "bool":
            word = raw.lower()
            if word not in _BOOL_WORDS:
                raise ValueError(f"not a boolean: {raw!r}")
            return _BOOL_WORDS[word]
        return raw
    except ValueError as e:
        raise ConfigError(f"bad value for {key!r}: {e}") from None


def parse_kv_lines(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse ``key=value`` lines; blank lines and ``#`` comments are skipped."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def run_config_from_mapping(raw: dict[str, str], source: str = "<config>") -> RunConfig:
    model_kw: dict = {}
    train_kw: dict = {}
    extra_kw: dict = {}
    for key, value in raw.items():
        if key in _MODEL_FIELDS:
            model_kw[key] = _parse_value(key, value, _MODEL_FIELDS[key])
        elif key in _TRAIN_FIELDS:
            train_kw[key] = _parse_value(key, value, _TRAIN_FIELDS[key])
        elif key in _PATH_KEYS:
            extra_kw[key] = value
        elif key == "stride":
            extra_kw[key] = _parse_value(key, value, "int")
        else:
            raise ConfigError(f"{source}: unknown key {key!r}")
    cfg = RunConfig(model=ModelConfig(**model_kw), train=TrainConfig(**train_kw), **extra_kw)
    return cfg.validate()


def run_config_from_text(text: str, source: str = "<config>") -> RunConfig:
    return run_config_from_mapping(parse_kv_lines(text, source), source)


def load_run_config(path: str) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return run_config_from_text(fh.read(), source=path)


def model_config_to_text(cfg: ModelConfig) -> str:
    lines = [f"{f.name}={getattr(cfg, f.name)}" for f in fields(ModelConfig)]
    return "\n".join(lines) + "\n"


def model_config_from_text(text: str, source: str = "<checkpoint>") -> ModelConfig:
    raw = parse_kv_lines(text, source)
    kw = {}
    for key, value in raw.items():
        if key not in _MODEL_FIELDS:
            raise ConfigError(f"{source}: unknown model key {key!r}")
        kw[key] = _parse_value(key, value, _MODEL_FIELDS[key])
    return ModelConfig(**kw).validate()


def with_overrides(cfg: RunConfig, **overrides) -> RunConfig:
    """Apply non-None CLI flag overrides on top of a parsed run config."""
    model_kw = {k: v for k, v in overrides.items() if k in _MODEL_FIELDS and v is not None}
    train_kw = {k: v for k, v in overrides.items() if k in _TRAIN_FIELDS and v is not None}
    rest = {
        k: v
        for k, v in overrides.items()
        if k in (*_PATH_KEYS, "stride") and v is not None
    }
    out = replace(
        cfg,
        model=replace(cfg.model, **model_kw),
        train=replace(cfg.train, **train_kw),
        **rest,
    )
    return out.validate()
