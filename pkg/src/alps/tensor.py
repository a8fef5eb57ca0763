"""Dense NCHW tensors with reverse-mode automatic differentiation.

Every operation that touches a tensor with ``requires_grad`` records a node
holding its parents and a closure that maps the upstream gradient to parent
gradients.  :func:`backward` walks the recorded graph once in reverse
topological order.  Leaf gradients accumulate until explicitly zeroed.
"""

from __future__ import annotations

import contextlib
import contextvars
from typing import Callable, Iterator, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

_grad_enabled: contextvars.ContextVar[bool] = contextvars.ContextVar("grad_enabled", default=True)


class ShapeError(ValueError):
    """Raised when operand shapes violate an operation's contract."""


class GradientError(RuntimeError):
    """Raised on misuse of backward (non-scalar loss, detached loss)."""


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Evaluate operations without recording a graph."""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


def grad_enabled() -> bool:
    return _grad_enabled.get()


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "op", "parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data: np.ndarray = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.op = "leaf"
        self.parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self.parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise GradientError(f"expected a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> Tensor:
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op!r}, requires_grad={self.requires_grad})"

    # arithmetic sugar; operands must share a shape or be python scalars
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other, self)))

    def __rsub__(self, other):
        return add(neg(self), other)

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__


def _as_tensor(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.full(like.shape, value, dtype=like.dtype))


def _make(data: np.ndarray, parents: tuple[Tensor, ...], op: str, backward_fn) -> Tensor:
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.op = op
        out.parents = parents
        out._backward = backward_fn
    return out


def graph(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root`` in topological order (inputs first)."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if loss.data.size != 1 or loss.data.ndim > 1:
        raise GradientError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GradientError("loss is not connected to any tensor that requires grad")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(graph(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg


# ---------------------------------------------------------------- elementwise


def add(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    return _make(a.data + b.data, (a, b), "add", lambda g: (g, g))


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), "neg", lambda g: (-g,))


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = np.asarray(b, dtype=a.dtype)
        return _make(a.data * c, (a,), "scale", lambda g: (g * c,))
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")
    return _make(a.data * b.data, (a, b), "mul", lambda g: (g * b.data, g * a.data))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0).astype(x.dtype), (x,), "relu", lambda g: (g * mask,))


def leaky_relu(x: Tensor, alpha: float = 0.2) -> Tensor:
    if not 0 <= alpha <= 1:
        raise ValueError("leaky_relu slope must lie in [0, 1]")
    a = x.dtype.type(alpha)
    out = np.maximum(x.data, a * x.data)
    return _make(out, (x,), "leaky_relu", lambda g: (np.where(x.data > 0, g, a * g),))


def sigmoid(x: Tensor) -> Tensor:
    s = np.exp(-np.logaddexp(0, -x.data)).astype(x.dtype)
    return _make(s, (x,), "sigmoid", lambda g: (g * s * (1 - s),))


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return _make(t, (x,), "tanh", lambda g: (g * (1 - t * t),))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp into [lo, hi]; the gradient passes where the input was inside the range."""
    inside = (x.data >= lo) & (x.data <= hi)
    return _make(np.clip(x.data, lo, hi).astype(x.dtype, copy=False), (x,), "clip",
                 lambda g: (np.where(inside, g, 0).astype(x.dtype),))


def elementwise(x: Tensor, kind: str, alpha: float = 0.2) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "leaky_relu":
        return leaky_relu(x, alpha)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return tanh(x)
    raise ValueError(f"unknown activation {kind!r}")


# ------------------------------------------------------------------ reductions


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    return _make(np.asarray(x.data.sum(), dtype=x.dtype), (x,), "sum",
                 lambda g: (np.full(x.shape, g, dtype=x.dtype),))


def mean(x: Tensor) -> Tensor:
    n = x.size
    return _make(np.asarray(x.data.mean(), dtype=x.dtype), (x,), "mean",
                 lambda g: (np.full(x.shape, g / n, dtype=x.dtype),))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape
    return _make(x.data.reshape(shape), (x,), "reshape", lambda g: (g.reshape(old),))


def mse_loss(prediction: Tensor, target: Tensor) -> Tensor:
    if prediction.shape != target.shape:
        raise ShapeError(f"mse_loss: shapes {prediction.shape} and {target.shape} differ")
    if target.requires_grad:
        raise GradientError("mse_loss target must not require grad")
    diff = prediction.data - target.data
    n = diff.size
    value = np.asarray(np.mean(diff * diff), dtype=prediction.dtype)
    return _make(value, (prediction,), "mse_loss", lambda g: (g * (2.0 / n) * diff,))


def global_avg_pool(x: Tensor) -> Tensor:
    if x.data.ndim != 4:
        raise ShapeError(f"global_avg_pool expects NCHW, got {x.shape}")
    n, c, h, w = x.shape
    scale = 1.0 / (h * w)
    out = x.data.mean(axis=(2, 3))
    return _make(out, (x,), "global_avg_pool",
                 lambda g: (np.broadcast_to((g * scale)[:, :, None, None], x.shape).astype(x.dtype),))


# --------------------------------------------------------------- linear layers


def dense(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeError(f"dense: input {x.shape} incompatible with weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[1],):
        raise ShapeError(f"dense: bias {bias.shape} does not match weight {weight.shape}")
    out = x.data @ weight.data
    if bias is not None:
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def back(g):
        grads = [g @ weight.data.T if x.requires_grad else None,
                 x.data.T @ g if weight.requires_grad else None]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return grads

    return _make(out, parents, "dense", back)


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Gather kernel-sized patches of padded NCHW ``xp`` into a (C, kh, kw, N, ho, wo) array."""
    n, c = xp.shape[:2]
    src = xp.transpose(1, 0, 2, 3)
    cols = np.empty((c, kh, kw, n, ho, wo), dtype=xp.dtype)
    hs, ws = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = src[:, :, i:i + hs:stride, j:j + ws:stride]
    return cols


def _col2im(cols: np.ndarray, hp: int, wp: int, stride: int) -> np.ndarray:
    """Adjoint of :func:`_im2col`: sum (C, kh, kw, N, ho, wo) columns into a (C, N, hp, wp) array."""
    c, kh, kw, n, ho, wo = cols.shape
    out = np.zeros((c, n, hp, wp), dtype=cols.dtype)
    hs, ws = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + hs:stride, j:j + ws:stride] += cols[:, i, j]
    return out


def _to_cn(x: np.ndarray) -> np.ndarray:
    """NCHW -> contiguous (C, N*H*W)."""
    return np.ascontiguousarray(x.transpose(1, 0, 2, 3)).reshape(x.shape[1], -1)


def _from_cn(m: np.ndarray, n: int, h: int, w: int) -> np.ndarray:
    """(C, N*H*W) -> contiguous NCHW."""
    return np.ascontiguousarray(m.reshape(-1, n, h, w).transpose(1, 0, 2, 3))


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def conv_transpose_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size - 1) * stride - 2 * padding + k


def _check_conv_args(x: Tensor, kernel: Tensor, bias: Tensor | None, stride: int, padding: int,
                     name: str, out_channels: int) -> None:
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ShapeError(f"{name} expects 4-d input and kernel, got {x.shape} and {kernel.shape}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"{name}: invalid stride {stride} / padding {padding}")
    if bias is not None and bias.shape != (out_channels,):
        raise ShapeError(f"{name}: bias {bias.shape} does not match {out_channels} output channels")


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of NCHW input with an (F, C, kh, kw) kernel."""
    _check_conv_args(x, kernel, bias, stride, padding, "conv2d", kernel.shape[0])
    n, c, h, w = x.shape
    f, kc, kh, kw = kernel.shape
    if kc != c:
        raise ShapeError(f"conv2d: kernel expects {kc} channels, input has {c}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {h + 2 * padding}x{w + 2 * padding}")
    ho, wo = conv_output_size(h, kh, stride, padding), conv_output_size(w, kw, stride, padding)
    cols = _im2col(_pad(x.data, padding), kh, kw, stride, ho, wo).reshape(c * kh * kw, -1)
    kmat = kernel.data.reshape(f, -1)
    out = kmat @ cols
    if bias is not None:
        out += bias.data[:, None]
    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def back(g):
        gm = _to_cn(g)
        gx = gk = None
        if x.requires_grad:
            gcols = (kmat.T @ gm).reshape(c, kh, kw, n, ho, wo)
            gxp = _col2im(gcols, h + 2 * padding, w + 2 * padding, stride)
            gx = np.ascontiguousarray(gxp[:, :, padding:padding + h, padding:padding + w].transpose(1, 0, 2, 3))
        if kernel.requires_grad:
            gk = (gm @ cols.T).reshape(kernel.shape)
        grads = [gx, gk]
        if bias is not None:
            grads.append(gm.sum(axis=1))
        return grads

    return _make(_from_cn(out, n, ho, wo), parents, "conv2d", back)


def conv2d_transpose(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1,
                     padding: int = 0) -> Tensor:
    """Transposed convolution with a (C_in, F, kh, kw) kernel; the adjoint of :func:`conv2d`."""
    _check_conv_args(x, kernel, bias, stride, padding, "conv2d_transpose", kernel.shape[1])
    n, c, h, w = x.shape
    kc, f, kh, kw = kernel.shape
    if kc != c:
        raise ShapeError(f"conv2d_transpose: kernel expects {kc} channels, input has {c}")
    ho = conv_transpose_output_size(h, kh, stride, padding)
    wo = conv_transpose_output_size(w, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d_transpose: padding {padding} leaves an empty output")
    kmat = kernel.data.reshape(c, -1)
    xm = _to_cn(x.data)
    cols = (kmat.T @ xm).reshape(f, kh, kw, n, h, w)
    full = _col2im(cols, ho + 2 * padding, wo + 2 * padding, stride)
    out = full[:, :, padding:padding + ho, padding:padding + wo]
    if bias is not None:
        out = out + bias.data[:, None, None, None]
    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def back(g):
        gcols = _im2col(_pad(g, padding), kh, kw, stride, h, w).reshape(f * kh * kw, -1)
        gx = gk = None
        if x.requires_grad:
            gx = _from_cn(kmat @ gcols, n, h, w)
        if kernel.requires_grad:
            gk = (xm @ gcols.T).reshape(kernel.shape)
        grads = [gx, gk]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return _make(np.ascontiguousarray(out.transpose(1, 0, 2, 3)), parents, "conv2d_transpose", back)
