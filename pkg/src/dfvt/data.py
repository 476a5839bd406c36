"""Datasets: synthetic task generators, manifest/PPM ingestion, frame windows.

Samples are videos; an image model just consumes length-1 videos. Pixels are
float32 in [0, 1] and always exact multiples of 1/255 so that a round trip
through 8-bit binary pixmaps is bit-identical.

Manifest format (UTF-8 text):

    dfvt-manifest v1
    <video id>\t<label>\t<T>\t<face1,face2,...>\t<uv1,uv2,...>

Frame paths are comma-separated in temporal order and resolved relative to
the manifest's directory.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

MANIFEST_HEADER = "dfvt-manifest v1"


class DataError(ValueError):
    """Malformed manifest, missing file, or sample/geometry mismatch."""


@dataclass
class FrameSample:
    face: np.ndarray            # (C, H, W) float32 in [0, 1]
    uv: np.ndarray              # same geometry as face
    label: int                  # 0 real, 1 fake

    def __post_init__(self):
        if self.face.shape != self.uv.shape:
            raise DataError(
                f"face {self.face.shape} and uv {self.uv.shape} geometry differ"
            )
        if self.label not in (0, 1):
            raise DataError(f"label must be 0 or 1, got {self.label}")


@dataclass
class VideoSample:
    frames: list[FrameSample]
    label: int
    video_id: str

    def __len__(self) -> int:
        return len(self.frames)


Dataset = list[VideoSample]


# ---------------------------------------------------------------------------
# portable pixmap I/O (binary P6, 8-bit)
# ---------------------------------------------------------------------------


def write_ppm(path: str, image: np.ndarray) -> None:
    """Write a (C, H, W) float image in [0, 1] as binary P6."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise DataError(f"write_ppm: expected (3, H, W), got {image.shape}")
    u8 = np.rint(np.asarray(image, dtype=np.float64) * 255.0)
    if u8.min() < 0 or u8.max() > 255:
        raise DataError("write_ppm: pixel values outside [0, 1]")
    raster = u8.astype(np.uint8).transpose(1, 2, 0)  # (H, W, C) interleaved
    _, h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(raster.tobytes())


def _read_ppm_token(fh) -> bytes:
    # whitespace-separated token, skipping '#' comment lines
    token = b""
    while True:
        ch = fh.read(1)
        if not ch:
            raise DataError("truncated pixmap header")
        if ch == b"#":
            while ch and ch != b"\n":
                ch = fh.read(1)
            continue
        if ch.isspace():
            if token:
                return token
            continue
        token += ch


def read_ppm(path: str) -> np.ndarray:
    """Read a binary P6 pixmap into a (3, H, W) float32 array in [0, 1]."""
    with open(path, "rb") as fh:
        magic = _read_ppm_token(fh)
        if magic != b"P6":
            raise DataError(f"{path}: not a binary pixmap (magic {magic!r})")
        try:
            w = int(_read_ppm_token(fh))
            h = int(_read_ppm_token(fh))
            maxval = int(_read_ppm_token(fh))
        except ValueError as e:
            raise DataError(f"{path}: bad pixmap header: {e}") from None
        if maxval != 255:
            raise DataError(f"{path}: only 8-bit pixmaps supported, maxval={maxval}")
        raw = fh.read(w * h * 3)
        if len(raw) != w * h * 3:
            raise DataError(f"{path}: truncated raster ({len(raw)} of {w * h * 3} bytes)")
    raster = np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3)
    return (raster.transpose(2, 0, 1).astype(np.float32)) / np.float32(255.0)


# ---------------------------------------------------------------------------
# synthetic tasks
# ---------------------------------------------------------------------------
#
# All generators draw 8-bit pixel values directly, so regeneration under a
# fixed seed and manifest round trips are both bit-exact. Amplitudes and
# noise ranges live in the task configs below, tuned so the companion
# oracles in dfvt.oracles hit their documented accuracy targets.


@dataclass(frozen=True)
class SpatialTaskConfig:
    noise_low: int = 96          # background: uniform 8-bit values in [low, high)
    noise_high: int = 160
    amplitude: int = 80          # added to the patterned region

    def region(self, h: int, w: int) -> tuple[int, int, int, int]:
        side = max(2, h // 4)
        r0 = (h - side) // 2
        c0 = (w - side) // 2
        return r0, r0 + side, c0, c0 + side


@dataclass(frozen=True)
class StreamTaskConfig:
    noise_low: int = 96
    noise_high: int = 160
    amplitude: int = 80          # stripe intensity inside the corner region

    def region(self, h: int, w: int) -> tuple[int, int, int, int]:
        side = max(2, h // 4)
        return 1, 1 + side, 1, 1 + side


@dataclass(frozen=True)
class FlickerTaskConfig:
    noise_low: int = 96
    noise_high: int = 160
    delta: int = 40              # global intensity offset magnitude


def _check_geometry(geometry: tuple[int, int, int]) -> tuple[int, int, int]:
    c, h, w = geometry
    if c != 3 or h < 8 or w < 8:
        raise DataError(f"degenerate geometry {geometry}; need (3, >=8, >=8)")
    return c, h, w


def _noise_u8(rng: np.random.Generator, geometry, low: int, high: int) -> np.ndarray:
    return rng.integers(low, high, size=geometry, dtype=np.int16)


def _to_unit(u8: np.ndarray) -> np.ndarray:
    if u8.min() < 0 or u8.max() > 255:
        raise DataError("internal: synthetic pixel values escaped [0, 255]")
    return u8.astype(np.uint8).astype(np.float32) / np.float32(255.0)


def gen_spatial_task(
    seed: int,
    n: int,
    geometry: tuple[int, int, int] = (3, 32, 32),
    cfg: SpatialTaskConfig = SpatialTaskConfig(),
) -> Dataset:
    """Per-frame separable task: fakes carry a bright block in the face image."""
    if n < 2:
        raise DataError(f"gen_spatial_task: need n >= 2, got {n}")
    c, h, w = _check_geometry(geometry)
    r0, r1, c0, c1 = cfg.region(h, w)
    rng = np.random.default_rng(seed)
    out: Dataset = []
    for i in range(n):
        label = i % 2
        face = _noise_u8(rng, geometry, cfg.noise_low, cfg.noise_high)
        uv = _noise_u8(rng, geometry, cfg.noise_low, cfg.noise_high)
        if label == 1:
            face[:, r0:r1, c0:c1] += cfg.amplitude
        frame = FrameSample(face=_to_unit(face), uv=_to_unit(uv), label=label)
        out.append(VideoSample(frames=[frame], label=label, video_id=f"spatial-{i:04d}"))
    return out


def _stripe_pattern(img: np.ndarray, region, amplitude: int) -> None:
    r0, r1, c0, c1 = region
    img[:, r0:r1:2, c0:c1] += amplitude


def gen_stream_identity_task(
    seed: int,
    n: int,
    geometry: tuple[int, int, int] = (3, 32, 32),
    cfg: StreamTaskConfig = StreamTaskConfig(),
) -> Dataset:
    """Label is 1 iff the stripe pattern sits in the UV image instead of the face.

    Every sample has exactly one patterned and one clean image, so the
    unordered pair of images carries no class signal; only stream identity
    does. Swapping a sample's face and uv tensors flips its correct label.
    """
    if n < 2:
        raise DataError(f"gen_stream_identity_task: need n >= 2, got {n}")
    c, h, w = _check_geometry(geometry)
    region = cfg.region(h, w)
    rng = np.random.default_rng(seed)
    out: Dataset = []
    for i in range(n):
        label = i % 2
        patterned = _noise_u8(rng, geometry, cfg.noise_low, cfg.noise_high)
        _stripe_pattern(patterned, region, cfg.amplitude)
        clean = _noise_u8(rng, geometry, cfg.noise_low, cfg.noise_high)
        if label == 1:
            face, uv = clean, patterned
        else:
            face, uv = patterned, clean
        frame = FrameSample(face=_to_unit(face), uv=_to_unit(uv), label=label)
        out.append(VideoSample(frames=[frame], label=label, video_id=f"stream-{i:04d}"))
    return out


def gen_temporal_flicker_task(
    seed: int,
    n: int,
    t: int = 9,
    geometry: tuple[int, int, int] = (3, 32, 32),
    cfg: FlickerTaskConfig = FlickerTaskConfig(),
) -> Dataset:
    """Fakes alternate a global +/- delta intensity offset frame to frame.

    Reals hold the offset constant at +delta or -delta (fair coin), so any
    single frame is distributed identically across classes; only comparing
    frames separates them.
    """
    if t < 2:
        raise DataError(f"gen_temporal_flicker_task: need t >= 2, got {t}")
    if n < 2:
        raise DataError(f"gen_temporal_flicker_task: need n >= 2, got {n}")
    _check_geometry(geometry)
    rng = np.random.default_rng(seed)
    out: Dataset = []
    for i in range(n):
        label = i % 2
        start = int(rng.integers(0, 2)) * 2 - 1  # +1 or -1
        frames = []
        for k in range(t):
            sign = start * (-1) ** k if label == 1 else start
            offset = sign * cfg.delta
            face = _noise_u8(rng, geometry, cfg.noise_low, cfg.noise_high) + offset
            uv = _noise_u8(rng, geometry, cfg.noise_low, cfg.noise_high) + offset
            frames.append(FrameSample(face=_to_unit(face), uv=_to_unit(uv), label=label))
        out.append(VideoSample(frames=frames, label=label, video_id=f"flicker-{i:04d}"))
    return out


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------


def save_dataset(dataset: Dataset, out_dir: str) -> str:
    """Write a dataset as manifest + PPM frames under ``out_dir``; returns the manifest path."""
    images_dir = os.path.join(out_dir, "images")
    os.makedirs(images_dir, exist_ok=True)
    lines = [MANIFEST_HEADER]
    for video in dataset:
        face_paths = []
        uv_paths = []
        for k, frame in enumerate(video.frames):
            face_rel = os.path.join("images", f"{video.video_id}_face_{k:03d}.ppm")
            uv_rel = os.path.join("images", f"{video.video_id}_uv_{k:03d}.ppm")
            write_ppm(os.path.join(out_dir, face_rel), frame.face)
            write_ppm(os.path.join(out_dir, uv_rel), frame.uv)
            face_paths.append(face_rel)
            uv_paths.append(uv_rel)
        lines.append(
            "\t".join(
                [
                    video.video_id,
                    str(video.label),
                    str(len(video.frames)),
                    ",".join(face_paths),
                    ",".join(uv_paths),
                ]
            )
        )
    manifest_path = os.path.join(out_dir, "manifest.txt")
    with open(manifest_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return manifest_path


def load_manifest(path: str) -> Dataset:
    """Load a dataset from a manifest file (or a directory containing manifest.txt)."""
    if os.path.isdir(path):
        path = os.path.join(path, "manifest.txt")
    if not os.path.exists(path):
        raise DataError(f"manifest not found: {path}")
    base = os.path.dirname(os.path.abspath(path))
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != MANIFEST_HEADER:
        raise DataError(f"{path}:1: missing header {MANIFEST_HEADER!r}")

    dataset: Dataset = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise DataError(f"{path}:{lineno}: expected 5 tab-separated fields, got {len(parts)}")
        video_id, label_s, t_s, face_s, uv_s = parts
        try:
            label = int(label_s)
            t = int(t_s)
        except ValueError:
            raise DataError(f"{path}:{lineno}: label and frame count must be integers") from None
        if label not in (0, 1):
            raise DataError(f"{path}:{lineno}: label must be 0 or 1, got {label}")
        face_paths = face_s.split(",") if face_s else []
        uv_paths = uv_s.split(",") if uv_s else []
        if len(face_paths) != t or len(uv_paths) != t or t < 1:
            raise DataError(
                f"{path}:{lineno}: frame count {t} does not match "
                f"{len(face_paths)} face / {len(uv_paths)} uv paths"
            )
        frames = []
        for face_rel, uv_rel in zip(face_paths, uv_paths):
            face_path = os.path.join(base, face_rel)
            uv_path = os.path.join(base, uv_rel)
            for p in (face_path, uv_path):
                if not os.path.exists(p):
                    raise DataError(f"{path}:{lineno}: referenced file missing: {p}")
            frames.append(FrameSample(face=read_ppm(face_path), uv=read_ppm(uv_path), label=label))
        dataset.append(VideoSample(frames=frames, label=label, video_id=video_id))
    return dataset


# ---------------------------------------------------------------------------
# frame sampling
# ---------------------------------------------------------------------------


def sample_windows(video: VideoSample, t: int, stride: int = 1) -> Dataset:
    """Consecutive ``t``-frame windows at the given stride, temporal order kept."""
    if t < 1 or stride < 1:
        raise DataError(f"sample_windows: t={t} and stride={stride} must be >= 1")
    if len(video) < t:
        raise DataError(
            f"sample_windows: video {video.video_id} has {len(video)} frames, needs >= {t}"
        )
    windows = []
    for j, start in enumerate(range(0, len(video) - t + 1, stride)):
        windows.append(
            VideoSample(
                frames=video.frames[start : start + t],
                label=video.label,
                video_id=f"{video.video_id}#w{j}",
            )
        )
    return windows


def windowed(dataset: Dataset, t: int, stride: int = 1) -> Dataset:
    out: Dataset = []
    for video in dataset:
        out.extend(sample_windows(video, t, stride))
    return out


def frames_as_images(dataset: Dataset) -> Dataset:
    """Explode videos into length-1 videos, one per frame (image-model training)."""
    out: Dataset = []
    for video in dataset:
        for i, frame in enumerate(video.frames):
            out.append(
                VideoSample(frames=[frame], label=video.label, video_id=f"{video.video_id}#f{i}")
            )
    return out


def resize_nearest(image: np.ndarray, size: int) -> np.ndarray:
    """Nearest-neighbour resize of a (C, H, W) image to (C, size, size)."""
    c, h, w = image.shape
    if h == size and w == size:
        return image
    rows = np.minimum((np.arange(size) * h) // size, h - 1)
    cols = np.minimum((np.arange(size) * w) // size, w - 1)
    return np.ascontiguousarray(image[:, rows[:, None], cols[None, :]])
