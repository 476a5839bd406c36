"""Central finite-difference verification of every gradient rule.

``grad_check`` compares reverse-mode gradients against
``(f(theta + h) - f(theta - h)) / 2h`` per coordinate, with the step scaled
by coordinate magnitude. Checks always run in 64-bit precision. The
standard suite covers each registered op plus a tiny end-to-end model and
is what ``dfvt gradcheck`` executes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .data import FrameSample, VideoSample
from .learning import anchor_penalty, cross_entropy, snapshot
from .model import init_params, model_forward
from .tensor import Precision, Tensor, no_grad

DEFAULT_TOL = 1e-4
DEFAULT_STEP = 1e-5
DEFAULT_MAX_COORDS = 32


@dataclass
class GradCheckResult:
    name: str
    max_rel_err: float = 0.0
    worst_param: str = ""
    worst_index: int = -1
    worst_analytic: float = 0.0
    worst_numeric: float = 0.0
    notes: list[str] = field(default_factory=list)

    def passed(self, tol: float = DEFAULT_TOL) -> bool:
        return not self.notes and self.max_rel_err < tol

    def describe(self, tol: float = DEFAULT_TOL) -> str:
        status = "ok" if self.passed(tol) else "FAIL"
        line = f"{self.name:<18} max_rel_err={self.max_rel_err:.3e}  {status}"
        if not self.passed(tol):
            line += (
                f"  worst={self.worst_param}[{self.worst_index}]"
                f" analytic={self.worst_analytic!r} numeric={self.worst_numeric!r}"
            )
        for note in self.notes:
            line += f"\n    {note}"
        return line


def _rel_err(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a) + abs(n), 1.0)


def grad_check(
    f: Callable[[], Tensor],
    params: dict[str, Tensor],
    h: float = DEFAULT_STEP,
    rng: Optional[np.random.Generator] = None,
    max_coords: Optional[int] = DEFAULT_MAX_COORDS,
    name: str = "grad_check",
) -> GradCheckResult:
    """Compare ``backward`` gradients of the scalar ``f()`` against central differences.

    ``f`` must be deterministic and rebuild its graph on every call. Large
    parameters are subsampled (seeded) down to ``max_coords`` coordinates.
    """
    for pname, p in params.items():
        if p.dtype != np.float64:
            raise ValueError(f"grad_check requires 64-bit parameters; {pname} is {p.dtype}")
    result = GradCheckResult(name=name)
    rng = rng or np.random.default_rng(0)

    for p in params.values():
        p.grad = None
    loss = f()
    T.backward(loss)
    analytic = {
        pname: (p.grad.copy() if p.grad is not None else np.zeros(p.shape))
        for pname, p in params.items()
    }
    for p in params.values():
        p.grad = None

    for pname, p in params.items():
        if not p.requires_grad:
            continue
        flat = p.data.reshape(-1)
        size = flat.size
        if max_coords is not None and size > max_coords:
            coords = np.sort(rng.choice(size, size=max_coords, replace=False))
        else:
            coords = np.arange(size)
        a_flat = analytic[pname].reshape(-1)
        for i in coords:
            orig = flat[i]
            step = h * max(1.0, abs(orig))
            with no_grad():
                flat[i] = orig + step
                f_plus = f().item()
                flat[i] = orig - step
                f_minus = f().item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = float(a_flat[i])
            if not (math.isfinite(numeric) and math.isfinite(a)):
                result.notes.append(
                    f"non-finite value at {pname}[{i}]: analytic={a!r} numeric={numeric!r}"
                )
                continue
            err = _rel_err(a, numeric)
            if err > result.max_rel_err:
                result.max_rel_err = err
                result.worst_param = pname
                result.worst_index = int(i)
                result.worst_analytic = a
                result.worst_numeric = numeric
    return result


# ---------------------------------------------------------------------------
# standard suite
# ---------------------------------------------------------------------------


def _p(rng, *shape) -> Tensor:
    return Tensor(rng.standard_normal(shape), requires_grad=True)


TINY_CONFIG = ModelConfig(
    d=16,
    t=2,
    n=8,
    n_heads=2,
    n_blocks=2,
    use_uv=True,
    use_segment=True,
    use_pos=True,
    hybrid=True,
    backbone="tiny",
    image_size=8,
    channels=3,
    mlp_ratio=4,
)


def _model_sample(rng: np.random.Generator, cfg: ModelConfig) -> VideoSample:
    geometry = (cfg.channels, cfg.image_size, cfg.image_size)
    frames = [
        FrameSample(
            face=rng.random(geometry).astype(np.float32),
            uv=rng.random(geometry).astype(np.float32),
            label=1,
        )
        for _ in range(cfg.t)
    ]
    return VideoSample(frames=frames, label=1, video_id="gradcheck")


def standard_checks(
    seed: int = 0, model_config: Optional[ModelConfig] = None
) -> list[tuple[str, Callable[[], tuple[dict, Callable]]]]:
    """Named builders; each returns (params, f) with f a scalar-valued closure."""
    cfg = model_config or TINY_CONFIG

    def build(maker):
        def _build():
            rng = np.random.default_rng(seed)
            return maker(rng)

        return _build

    def mk_matmul(rng):
        a, b = _p(rng, 4, 5), _p(rng, 5, 3)
        w = rng.standard_normal((4, 3))
        return {"a": a, "b": b}, lambda: T.tsum(T.mul(T.matmul(a, b), T.tensor(w, np.float64)))

    def mk_conv2d(rng):
        x = _p(rng, 3, 8, 8)
        k = _p(rng, 4, 3, 3, 3)
        b = _p(rng, 4)
        w = rng.standard_normal((4, 3, 3))
        return (
            {"x": x, "k": k, "b": b},
            lambda: T.tsum(T.mul(T.conv2d(x, k, stride=2, bias=b), T.tensor(w, np.float64))),
        )

    def mk_layer_norm(rng):
        x, g, b = _p(rng, 5, 6), _p(rng, 6), _p(rng, 6)
        w = rng.standard_normal((5, 6))
        return (
            {"x": x, "g": g, "b": b},
            lambda: T.tsum(T.mul(T.layer_norm(x, g, b), T.tensor(w, np.float64))),
        )

    def mk_softmax(rng):
        x = _p(rng, 4, 5)
        w = rng.standard_normal((4, 5))
        return {"x": x}, lambda: T.tsum(T.mul(T.softmax(x), T.tensor(w, np.float64)))

    def mk_log_softmax(rng):
        x = _p(rng, 4, 5)
        w = rng.standard_normal((4, 5))
        return {"x": x}, lambda: T.tsum(T.mul(T.log_softmax(x), T.tensor(w, np.float64)))

    def mk_gelu(rng):
        x = _p(rng, 5, 7)
        w = rng.standard_normal((5, 7))
        return {"x": x}, lambda: T.tsum(T.mul(T.gelu(x), T.tensor(w, np.float64)))

    def mk_relu(rng):
        # keep values away from the kink so central differences are valid
        x = Tensor(rng.standard_normal((5, 7)) + np.sign(rng.standard_normal((5, 7))) * 0.5,
                   requires_grad=True)
        w = rng.standard_normal((5, 7))
        return {"x": x}, lambda: T.tsum(T.mul(T.relu(x), T.tensor(w, np.float64)))

    def mk_add(rng):
        a, b, bias = _p(rng, 4, 6), _p(rng, 4, 6), _p(rng, 6)
        w = rng.standard_normal((4, 6))
        return (
            {"a": a, "b": b, "bias": bias},
            lambda: T.tsum(T.mul(T.add(T.add(a, b), bias), T.tensor(w, np.float64))),
        )

    def mk_mul_sub(rng):
        a, b = _p(rng, 3, 4), _p(rng, 3, 4)
        w = rng.standard_normal((3, 4))
        return (
            {"a": a, "b": b},
            lambda: T.tsum(T.mul(T.mul(a, T.sub(a, b)), T.tensor(w, np.float64))),
        )

    def mk_structural(rng):
        # exercises reshape, transpose, narrow, concat, scale, neg in one graph
        a, b = _p(rng, 4, 6), _p(rng, 4, 6)
        w = rng.standard_normal((6, 6))

        def f():
            joined = T.concat([a, T.neg(b)], axis=0)          # (8, 6)
            left = T.narrow(joined, 0, 1, 6)                  # (6, 6)
            flipped = T.transpose2d(T.reshape(left, (6, 6)))  # (6, 6)
            return T.tsum(T.mul(T.scale(flipped, 0.7), T.tensor(w, np.float64)))

        return {"a": a, "b": b}, f

    def mk_patches(rng):
        img = _p(rng, 3, 8, 8)
        proj = _p(rng, 3 * 4 * 4, 6)
        w = rng.standard_normal((4, 6))
        return (
            {"img": img, "proj": proj},
            lambda: T.tsum(
                T.mul(T.matmul(T.extract_patches(img, 4), proj), T.tensor(w, np.float64))
            ),
        )

    def mk_attention(rng):
        from .model import EncoderBlockParams, attention

        d = 8
        names = ["wq", "wk", "wv", "wo"]
        ps = {n: _p(rng, d, d) for n in names}
        filler = {
            k: Tensor(np.zeros(1), requires_grad=False)
            for k in ("ln1_g", "ln1_b", "ln2_g", "ln2_b", "mlp_w1", "mlp_b1", "mlp_w2", "mlp_b2")
        }
        block = EncoderBlockParams(**ps, **filler)
        x = _p(rng, 5, d)
        w = rng.standard_normal((5, d))
        params = dict(ps)
        params["x"] = x
        return params, lambda: T.tsum(T.mul(attention(x, block, 2), T.tensor(w, np.float64)))

    def mk_encoder_block(rng):
        from .model import EncoderBlockParams, encoder_block

        d, mlp = 8, 16
        block = EncoderBlockParams(
            wq=_p(rng, d, d), wk=_p(rng, d, d), wv=_p(rng, d, d), wo=_p(rng, d, d),
            ln1_g=_p(rng, d), ln1_b=_p(rng, d), ln2_g=_p(rng, d), ln2_b=_p(rng, d),
            mlp_w1=_p(rng, d, mlp), mlp_b1=_p(rng, mlp), mlp_w2=_p(rng, mlp, d), mlp_b2=_p(rng, d),
        )
        x = _p(rng, 4, d)
        w = rng.standard_normal((4, d))
        params = {k: getattr(block, k) for k in (
            "wq", "wk", "wv", "wo", "ln1_g", "ln1_b", "ln2_g", "ln2_b",
            "mlp_w1", "mlp_b1", "mlp_w2", "mlp_b2")}
        params["x"] = x
        return params, lambda: T.tsum(
            T.mul(encoder_block(x, block, 2), T.tensor(w, np.float64))
        )

    def mk_cross_entropy(rng):
        x = _p(rng, 1, 3)
        w = _p(rng, 3, 2)
        return {"x": x, "w": w}, lambda: cross_entropy(T.reshape(T.matmul(x, w), (2,)), 1)

    def mk_anchor_penalty(rng):
        params = init_params(cfg, seed=seed, precision=Precision.CHECK)
        anchor = snapshot(params)
        for arr in anchor.values():
            arr += rng.standard_normal(arr.shape) * 0.05
        return dict(params.named()), lambda: anchor_penalty(params, anchor, 0.5)

    def mk_full_model(rng):
        params = init_params(cfg, seed=seed, precision=Precision.CHECK)
        sample = _model_sample(rng, cfg)

        def f():
            logits, _ = model_forward(sample, params)
            return cross_entropy(logits, sample.label)

        return dict(params.named()), f

    return [
        ("matmul", build(mk_matmul)),
        ("conv2d", build(mk_conv2d)),
        ("layer_norm", build(mk_layer_norm)),
        ("softmax", build(mk_softmax)),
        ("log_softmax", build(mk_log_softmax)),
        ("gelu", build(mk_gelu)),
        ("relu", build(mk_relu)),
        ("add", build(mk_add)),
        ("mul_sub", build(mk_mul_sub)),
        ("structural", build(mk_structural)),
        ("patchify", build(mk_patches)),
        ("attention", build(mk_attention)),
        ("encoder_block", build(mk_encoder_block)),
        ("cross_entropy", build(mk_cross_entropy)),
        ("anchor_penalty", build(mk_anchor_penalty)),
        ("full_model", build(mk_full_model)),
    ]


def run_standard_checks(
    seed: int = 0,
    tol: float = DEFAULT_TOL,
    only: Optional[Sequence[str]] = None,
    corrupt: Optional[str] = None,
    model_config: Optional[ModelConfig] = None,
) -> list[GradCheckResult]:
    """Run the suite; ``corrupt`` perturbs one analytic gradient of the named
    check (negative-control fixture: the oracle must flag it)."""
    results = []
    for name, builder in standard_checks(seed, model_config):
        if only and name not in only:
            continue
        params, f = builder()
        rng = np.random.default_rng(seed + 1)
        if corrupt == name:
            result = _run_corrupted(name, params, f, rng)
        else:
            result = grad_check(f, params, rng=rng, name=name)
        results.append(result)
    return results


def _run_corrupted(name, params, f, rng) -> GradCheckResult:
    # simulate a broken gradient rule by biasing one leaf's analytic gradient
    first = next(iter(params.values()))
    result = grad_check(f, params, rng=rng, name=name)
    # recompute one coordinate with a deliberately wrong analytic value
    for p in params.values():
        p.grad = None
    loss = f()
    T.backward(loss)
    bad = float(first.grad.reshape(-1)[0]) * 3.0 + 1.0
    flat = first.data.reshape(-1)
    orig = flat[0]
    step = DEFAULT_STEP * max(1.0, abs(orig))
    with no_grad():
        flat[0] = orig + step
        f_plus = f().item()
        flat[0] = orig - step
        f_minus = f().item()
    flat[0] = orig
    numeric = (f_plus - f_minus) / (2.0 * step)
    err = _rel_err(bad, numeric)
    if err > result.max_rel_err:
        result.max_rel_err = err
        result.worst_param = next(iter(params))
        result.worst_index = 0
        result.worst_analytic = bad
        result.worst_numeric = numeric
    for p in params.values():
        p.grad = None
    return result
