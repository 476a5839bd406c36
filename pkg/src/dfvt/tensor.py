"""Dense n-d tensors with a reverse-mode gradient tape.

Storage is a row-major numpy array per tensor. Every differentiable
operation validates shapes up front, computes with numpy, and (when grad
mode is on and an input requires gradients) records a vector-Jacobian
closure so ``backward`` can push gradients to the leaves. Broadcasting is
deliberately limited to the cases the model needs: same-shape elementwise
ops and a row-bias add of a ``(D,)`` / ``(1, D)`` vector over an
``(L, D)`` matrix.

Two run-level precisions exist: ``train`` (float32) and ``check``
(float64). Gradient checking always runs in ``check`` precision.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from enum import Enum
from typing import Callable, Iterable, Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible with an operation."""


class Precision(Enum):
    TRAIN = "train"
    CHECK = "check"

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(np.float32 if self is Precision.TRAIN else np.float64)


_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (forward-only evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A numpy-backed array plus optional links into the gradient tape.

    ``grad`` is populated only on leaves (tensors created with
    ``requires_grad=True``); it accumulates across ``backward`` calls and
    is cleared explicitly by the optimizer, never implicitly.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(
        self,
        data: np.ndarray,
        requires_grad: bool = False,
        _parents: tuple["Tensor", ...] = (),
        _vjp: Optional[Callable[[np.ndarray], tuple]] = None,
    ):
        self.data = data
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._vjp = _vjp

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() requires a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(())[()])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"


def tensor(values, dtype=np.float32) -> Tensor:
    """Wrap raw values as a non-differentiable constant tensor."""
    return Tensor(np.ascontiguousarray(values, dtype=dtype))


def parameter(values, dtype=None) -> Tensor:
    """Wrap values as a trainable leaf."""
    arr = np.array(values, dtype=dtype, copy=True, order="C")
    return Tensor(arr, requires_grad=True)


def _result(data: np.ndarray, parents: tuple[Tensor, ...], vjp) -> Tensor:
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _vjp=vjp)
    return Tensor(data)


# ---------------------------------------------------------------------------
# elementwise / structural ops
# ---------------------------------------------------------------------------


def _is_row_bias(a_shape, b_shape) -> bool:
    # (L, D) + (D,) or (L, D) + (1, D)
    if len(a_shape) != 2:
        return False
    if b_shape == (a_shape[1],):
        return True
    return b_shape == (1, a_shape[1])


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape == b.shape:
        def vjp(g):
            return g, g
    elif _is_row_bias(a.shape, b.shape):
        b_shape = b.shape

        def vjp(g):
            return g, g.sum(axis=0).reshape(b_shape)
    else:
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")
    return _result(a.data + b.data, (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"sub: incompatible shapes {a.shape} and {b.shape}")

    def vjp(g):
        return g, -g

    return _result(a.data - b.data, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of same-shape tensors."""
    if a.shape != b.shape:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")
    a_data, b_data = a.data, b.data

    def vjp(g):
        return g * b_data, g * a_data

    return _result(a_data * b_data, (a, b), vjp)


def scale(a: Tensor, s: float) -> Tensor:
    """Multiply by a python scalar (keeps the tensor dtype)."""
    s = float(s)

    def vjp(g):
        return (g * s,)

    return _result(a.data * s, (a,), vjp)


def neg(a: Tensor) -> Tensor:
    def vjp(g):
        return (-g,)

    return _result(-a.data, (a,), vjp)


def tsum(a: Tensor) -> Tensor:
    """Sum of all elements, as a 0-d scalar tensor."""
    shape = a.shape
    dtype = a.dtype

    def vjp(g):
        return (np.full(shape, g[()], dtype=dtype),)

    return _result(a.data.sum(dtype=dtype).reshape(()), (a,), vjp)


def reshape(a: Tensor, new_shape: Sequence[int]) -> Tensor:
    new_shape = tuple(int(s) for s in new_shape)
    if math.prod(new_shape) != a.size:
        raise ShapeError(f"reshape: cannot view {a.shape} as {new_shape}")
    old_shape = a.shape

    def vjp(g):
        return (g.reshape(old_shape),)

    return _result(a.data.reshape(new_shape), (a,), vjp)


def transpose2d(a: Tensor) -> Tensor:
    if len(a.shape) != 2:
        raise ShapeError(f"transpose2d: expected a matrix, got shape {a.shape}")

    def vjp(g):
        return (np.ascontiguousarray(g.T),)

    return _result(np.ascontiguousarray(a.data.T), (a,), vjp)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice ``[start, start+length)`` along one axis."""
    if axis < 0 or axis >= len(a.shape):
        raise ShapeError(f"narrow: axis {axis} out of range for shape {a.shape}")
    if start < 0 or length < 1 or start + length > a.shape[axis]:
        raise ShapeError(
            f"narrow: slice [{start}, {start + length}) out of range "
            f"for extent {a.shape[axis]} on axis {axis}"
        )
    index = tuple(
        slice(start, start + length) if ax == axis else slice(None)
        for ax in range(len(a.shape))
    )
    full_shape = a.shape
    dtype = a.dtype

    def vjp(g):
        out = np.zeros(full_shape, dtype=dtype)
        out[index] = g
        return (out,)

    return _result(np.ascontiguousarray(a.data[index]), (a,), vjp)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise ShapeError("concat: empty input list")
    rank = len(parts[0].shape)
    if axis < 0 or axis >= rank:
        raise ShapeError(f"concat: axis {axis} out of range for rank {rank}")
    for p in parts[1:]:
        if len(p.shape) != rank or any(
            p.shape[ax] != parts[0].shape[ax] for ax in range(rank) if ax != axis
        ):
            raise ShapeError(
                f"concat: shape {p.shape} incompatible with {parts[0].shape} on axis {axis}"
            )
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(
            np.ascontiguousarray(np.take(g, range(offsets[i], offsets[i + 1]), axis=axis))
            for i in range(len(sizes))
        )

    return _result(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), vjp)


# ---------------------------------------------------------------------------
# linear algebra / neural ops
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if len(a.shape) != 2 or len(b.shape) != 2:
        raise ShapeError(f"matmul: expected matrices, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner extents disagree: {a.shape} x {b.shape}")
    a_data, b_data = a.data, b.data

    def vjp(g):
        return g @ b_data.T, a_data.T @ g

    return _result(a_data @ b_data, (a, b), vjp)


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int):
    c, h, w = x.shape
    ho = (h - kh) // stride + 1
    wo = (w - kw) // stride + 1
    s0, s1, s2 = x.strides
    view = np.lib.stride_tricks.as_strided(
        x,
        shape=(c, kh, kw, ho, wo),
        strides=(s0, s1, s2, s1 * stride, s2 * stride),
    )
    # reshape forces a copy, detaching from the unsafe strided view
    return view.reshape(c * kh * kw, ho * wo), ho, wo


def conv2d(x: Tensor, w: Tensor, stride: int = 1, bias: Optional[Tensor] = None) -> Tensor:
    """Valid cross-correlation of a ``(C, H, W)`` input with ``(C', C, kh, kw)`` kernels.

    No padding, no kernel flip. ``bias`` (shape ``(C',)``) is added per output
    channel when given.
    """
    if len(x.shape) != 3 or len(w.shape) != 4:
        raise ShapeError(f"conv2d: expected (C,H,W) input and (C',C,kh,kw) kernel, got {x.shape} and {w.shape}")
    c, h, wd = x.shape
    co, ci, kh, kw = w.shape
    if ci != c:
        raise ShapeError(f"conv2d: channel mismatch: input {x.shape} vs kernel {w.shape}")
    if kh > h or kw > wd:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than input {h}x{wd}")
    if stride < 1:
        raise ShapeError(f"conv2d: stride must be positive, got {stride}")
    if bias is not None and bias.shape != (co,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} does not match {co} output channels")

    cols, ho, wo = _im2col(x.data, kh, kw, stride)
    w_flat = w.data.reshape(co, c * kh * kw)
    out = (w_flat @ cols).reshape(co, ho, wo)
    if bias is not None:
        out = out + bias.data[:, None, None]

    x_needs = x.requires_grad
    dtype = x.dtype
    x_shape = x.shape

    def vjp(g):
        g2 = g.reshape(co, ho * wo)
        dw = (g2 @ cols.T).reshape(w.shape)
        dx = None
        if x_needs:
            dcols = (w_flat.T @ g2).reshape(c, kh, kw, ho, wo)
            dx = np.zeros(x_shape, dtype=dtype)
            for i in range(kh):
                for j in range(kw):
                    dx[:, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[:, i, j]
        if bias is None:
            return dx, dw
        return dx, dw, g.sum(axis=(1, 2))

    parents = (x, w) if bias is None else (x, w, bias)
    return _result(out, parents, vjp)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to mean 0 / variance 1, then apply gain and bias."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layer_norm: gain {gain.shape} / bias {bias.shape} do not match feature dim {d}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * gain.data + bias.data
    gain_data = gain.data

    def vjp(g):
        dxhat = g * gain_data
        # d/dx of (x - mu) / sqrt(var + eps), all reductions over the last axis
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        axes = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return _result(out, (x, gain, bias), vjp)


def softmax(x: Tensor) -> Tensor:
    """Softmax along the last axis, max-subtracted for stability."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _result(out, (x,), vjp)


def log_softmax(x: Tensor) -> Tensor:
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

    def vjp(g):
        return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)

    return _result(out, (x,), vjp)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """Gaussian-error-linear unit, tanh approximation."""
    xd = x.data
    inner = _GELU_C * (xd + 0.044715 * xd**3)
    t = np.tanh(inner)
    out = 0.5 * xd * (1.0 + t)

    def vjp(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * xd**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t**2) * d_inner),)

    return _result(out, (x,), vjp)


def relu(x: Tensor) -> Tensor:
    xd = x.data
    mask = xd > 0

    def vjp(g):
        return (g * mask,)

    return _result(np.where(mask, xd, 0.0).astype(xd.dtype), (x,), vjp)


def extract_patches(image: Tensor, patch_size: int) -> Tensor:
    """Split a ``(C, H, W)`` image into flattened non-overlapping patches.

    Output is ``(n_patches, C * p * p)`` with patches ordered row-major over
    the patch grid.
    """
    if len(image.shape) != 3:
        raise ShapeError(f"extract_patches: expected (C,H,W), got {image.shape}")
    c, h, w = image.shape
    p = patch_size
    if p < 1 or h % p != 0 or w % p != 0:
        raise ShapeError(f"extract_patches: image {h}x{w} not divisible by patch size {p}")
    gh, gw = h // p, w // p
    # (C,H,W) -> (gh, gw, C, p, p) -> (gh*gw, C*p*p)
    blocks = image.data.reshape(c, gh, p, gw, p).transpose(1, 3, 0, 2, 4)
    out = np.ascontiguousarray(blocks.reshape(gh * gw, c * p * p))

    def vjp(g):
        back = g.reshape(gh, gw, c, p, p).transpose(2, 0, 3, 1, 4)
        return (np.ascontiguousarray(back.reshape(c, h, w)),)

    return _result(out, (image,), vjp)


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into each reachable leaf's ``grad``.

    ``loss`` must be a 0-d scalar. Repeated calls without clearing grads
    accumulate (two identical backward passes double every leaf gradient);
    the optimizer step is the one place grads get reset.
    """
    if loss.shape != ():
        raise ShapeError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.dtype)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._vjp is None:
            node.grad = np.array(g, copy=True) if node.grad is None else node.grad + g
            continue
        for p, pg in zip(node._parents, node._vjp(g)):
            if pg is None or not p.requires_grad:
                continue
            k = id(p)
            # out-of-place accumulation: vjp outputs may be views
            grads[k] = pg if k not in grads else grads[k] + pg
