"""Dense tensors with reverse-mode automatic differentiation.

Every op returns a new :class:`Tensor`. When any input requires a gradient
and recording is enabled, the output keeps references to its inputs plus a
closure mapping the output gradient to input gradients. :func:`backward`
replays those closures in exact reverse execution order.

Layout convention for image activations is NCHW. Convolution is
cross-correlation (no kernel flip) with zero padding.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import GraphError, NumericalError, ShapeError

_counter = itertools.count()
_recording = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    global _recording
    prev = _recording
    _recording = False
    try:
        yield
    finally:
        _recording = prev


def is_recording() -> bool:
    return _recording


class Tensor:
    """N-dimensional real array with an optional gradient slot.

    ``data`` is a numpy array of float32 or float64. Integer or Python
    inputs are promoted to float64.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self._seq = next(_counter)

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad}{tag})"

    # -- operators --------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype)
    return Tensor(arr)


def _check_finite(arr: np.ndarray, op: str) -> None:
    # a single non-finite element makes the sum non-finite
    if arr.size and not np.isfinite(arr.sum()):
        if not np.all(np.isfinite(arr)):
            raise NumericalError(f"{op}: non-finite value in output")


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    _check_finite(data, op)
    out = Tensor(data)
    if _recording and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _pair(a, b) -> tuple:
    """Coerce scalar/array operands to tensors of the other operand's dtype."""
    if not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    return a, b


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- tape replay ------------------------------------------------------------
class GradTape:
    """Ops reachable from a root, ordered by execution sequence."""

    def __init__(self, root: Tensor):
        seen = {id(root)}
        stack = [root]
        nodes = []
        while stack:
            node = stack.pop()
            nodes.append(node)
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    seen.add(id(p))
                    stack.append(p)
        nodes.sort(key=lambda t: t._seq)
        self.nodes: list[Tensor] = nodes

    def reversed(self) -> Iterable[Tensor]:
        return reversed(self.nodes)


def backward(loss: Tensor, inputs: Optional[Sequence[Tensor]] = None) -> None:
    """Populate ``.grad`` on leaves reachable from the scalar ``loss``.

    Gradients accumulate into existing ``.grad`` buffers. With ``inputs``,
    only those tensors receive gradients, and ones the loss does not depend
    on get zeros.
    """
    if loss.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GraphError("loss is not on the tape (no input requires grad)")
    targets = None if inputs is None else {id(t) for t in inputs}
    grads = {id(loss): np.ones_like(loss.data)}
    tape = GradTape(loss)
    for node in tape.reversed():
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if targets is None or id(node) in targets:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            k = id(p)
            if k in grads:
                grads[k] = grads[k] + pg
            else:
                grads[k] = pg
    if inputs is not None:
        for t in inputs:
            if t.grad is None:
                t.grad = np.zeros_like(t.data)


# -- elementwise ----------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.shape) if b.requires_grad else None,
        ),
        "mul",
    )


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data
    return _make(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None,
        ),
        "div",
    )


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):  # _make reports non-finite output
        out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x.data)
    return _make(out, (x,), lambda g: (g / x.data,), "log")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    d = x.data
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(d.dtype)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax axis {axis} invalid for rank {x.ndim}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)
    return _make(
        out,
        (x,),
        lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),),
        "softmax",
    )


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    sm = np.exp(out)
    return _make(
        out,
        (x,),
        lambda g: (g - sm * g.sum(axis=axis, keepdims=True),),
        "log_softmax",
    )


def activation(x: Tensor, kind: str, axis: int = -1) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "softmax":
        return softmax(x, axis)
    if kind == "identity":
        return x
    raise ValueError(f"unknown activation {kind!r}")


# -- reductions and reshaping -------------------------------------------------
def _norm_axes(axis, ndim) -> tuple:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def sum_(x: Tensor, axis=None, keepdims=False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(np.asarray(out), (x,), bw, "sum")


def mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    out = x.data.mean(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return _make(np.asarray(out), (x,), bw, "mean")


def reduce_max(x: Tensor, axis=None, keepdims=False) -> Tensor:
    """Max over ``axis``; gradient goes to the first maximum in row-major order."""
    axes = _norm_axes(axis, x.ndim)
    keep = tuple(a for a in range(x.ndim) if a not in axes)
    perm = keep + axes
    moved = x.data.transpose(perm)
    lead = moved.shape[: len(keep)]
    flat = moved.reshape(lead + (-1,))
    arg = flat.argmax(axis=-1)
    vals = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    kept_shape = tuple(1 if a in axes else n for a, n in enumerate(x.shape))
    out = vals.reshape(kept_shape) if keepdims else vals

    def bw(g):
        gf = np.zeros_like(flat)
        np.put_along_axis(gf, arg[..., None], np.asarray(g).reshape(lead + (1,)), axis=-1)
        inv = np.argsort(perm)
        return (gf.reshape(moved.shape).transpose(inv),)

    return _make(np.asarray(out), (x,), bw, "max")


def reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)
    return _make(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),), "transpose")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, tensors, bw, "concat")


def take_along_last(x: Tensor, index: np.ndarray) -> Tensor:
    """``out[..., i, j] = x[..., i, index[i, j]]`` with ``index`` broadcast over leading dims."""
    idx = np.broadcast_to(index, x.shape[:-1] + (index.shape[-1],))
    out = np.take_along_axis(x.data, idx, axis=-1)

    def bw(g):
        gx = np.zeros_like(x.data)
        g2 = gx.reshape(-1, x.shape[-1])
        rows = np.arange(g2.shape[0])[:, None]
        np.add.at(g2, (rows, idx.reshape(g2.shape[0], -1)), g.reshape(g2.shape[0], -1))
        return (gx,)

    return _make(out, (x,), bw, "take_along_last")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul operands need rank >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def bw(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), bw, "matmul")


# -- layers -------------------------------------------------------------------
def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight.T + bias`` for x of shape [N, D] and weight [K, D]."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"linear: bias shape {bias.shape} != ({weight.shape[0]},)")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def bw(g):
        gx = g @ weight.data if x.requires_grad else None
        gw = g.T @ x.data if weight.requires_grad else None
        gb = g.sum(axis=0) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, bw, "linear")


def _out_extent(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weight, got {x.shape}, {weight.shape}")
    n, cin, h, w = x.shape
    cout, wcin, kh, kw = weight.shape
    if wcin != cin:
        raise ShapeError(f"conv2d: input has {cin} channels, weight expects {wcin}")
    if stride < 1 or padding < 0:
        raise ShapeError("conv2d: stride must be positive and padding nonnegative")
    ho = _out_extent(h, kh, stride, padding)
    wo = _out_extent(w, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: nonpositive output extent ({ho}, {wo})")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({cout},)")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    # rows: (n, ho, wo); cols: (cin, kh, kw)
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, cin * kh * kw)
    w2 = weight.data.reshape(cout, -1)
    out = cols @ w2.T
    if bias is not None:
        out = out + bias.data
    out = out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)

    def bw(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, cout)
        gw = (g2.T @ cols).reshape(weight.shape) if weight.requires_grad else None
        gb = g2.sum(axis=0) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (g2 @ w2).reshape(n, ho, wo, cin, kh, kw)
            gxp = np.zeros(xp.shape, dtype=xp.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[
                        :, :, :, :, i, j
                    ].transpose(0, 3, 1, 2)
            gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(np.ascontiguousarray(out), parents, bw, "conv2d")


def pool2d(x: Tensor, mode: str, k: int, stride: Optional[int] = None, padding: int = 0) -> Tensor:
    """Max or average pooling over k x k windows.

    Average pooling divides by the number of in-bounds cells of each window.
    """
    if x.ndim != 4:
        raise ShapeError(f"pool2d expects 4-D input, got {x.shape}")
    if mode not in ("max", "avg"):
        raise ValueError(f"unknown pool mode {mode!r}")
    stride = k if stride is None else stride
    if k < 1 or stride < 1 or not 0 <= padding <= k // 2:
        raise ShapeError("pool2d: invalid window/stride/padding")
    n, c, h, w = x.shape
    ho = _out_extent(h, k, stride, padding)
    wo = _out_extent(w, k, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"pool2d: nonpositive output extent ({ho}, {wo})")
    pad = ((0, 0), (0, 0), (padding, padding), (padding, padding))
    fill = -np.inf if mode == "max" else 0.0
    xp = np.pad(x.data, pad, constant_values=fill) if padding else x.data
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    flat = win.reshape(n, c, ho, wo, k * k)

    def scatter(contrib):
        # contrib: (n, c, ho, wo, k*k) -> gradient w.r.t. padded input
        gxp = np.zeros(xp.shape, dtype=x.dtype)
        for i in range(k):
            for j in range(k):
                gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += contrib[..., i * k + j]
        return gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp

    if mode == "max":
        arg = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
        if not np.all(np.isfinite(out)):
            raise ShapeError("pool2d: a window lies entirely in the padding")

        def bw(g):
            onehot = arg[..., None] == np.arange(k * k)
            return (scatter(onehot * g[..., None]),)

    else:
        ones = np.pad(np.ones((h, w), dtype=x.dtype), pad[2:]) if padding else np.ones((h, w), dtype=x.dtype)
        count = sliding_window_view(ones, (k, k))[::stride, ::stride][:ho, :wo].sum(axis=(-1, -2))
        out = flat.sum(axis=-1) / count

        def bw(g):
            share = (g / count)[..., None]
            return (scatter(np.broadcast_to(share, flat.shape)),)

    return _make(np.ascontiguousarray(out), (x,), bw, "pool2d")


def global_pool(x: Tensor, mode: str) -> Tensor:
    """Per-channel spatial reduction to shape [N, C, 1, 1]."""
    if x.ndim != 4:
        raise ShapeError(f"global_pool expects 4-D input, got {x.shape}")
    if mode == "avg":
        return mean(x, axis=(2, 3), keepdims=True)
    if mode == "max":
        return reduce_max(x, axis=(2, 3), keepdims=True)
    raise ValueError(f"unknown pool mode {mode!r}")


def batch_norm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalization.

    In training mode the batch statistics are used and the running buffers
    are updated in place (unbiased variance, exponential average).
    """
    if x.ndim != 4:
        raise ShapeError(f"batch_norm2d expects 4-D input, got {x.shape}")
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm2d: affine params must have shape ({c},)")
    bshape = (1, c, 1, 1)
    g_ = gamma.data.reshape(bshape)
    if training:
        m = n * h * w
        if m < 2:
            raise ShapeError("batch_norm2d: training mode needs more than one value per channel")
        mu = x.data.mean(axis=(0, 2, 3), keepdims=True)
        var = x.data.var(axis=(0, 2, 3), keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mu) * inv
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.reshape(c)
        running_var *= 1.0 - momentum
        running_var += momentum * var.reshape(c) * (m / (m - 1))

        def bw(g):
            gxh = g * g_
            gx = None
            if x.requires_grad:
                s1 = gxh.sum(axis=(0, 2, 3), keepdims=True)
                s2 = (gxh * xhat).sum(axis=(0, 2, 3), keepdims=True)
                gx = inv / m * (m * gxh - s1 - xhat * s2)
            return gx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    else:
        inv = 1.0 / np.sqrt(running_var.reshape(bshape) + eps)
        xhat = (x.data - running_mean.reshape(bshape)) * inv

        def bw(g):
            gx = g * g_ * inv if x.requires_grad else None
            return gx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    out = (xhat * g_ + beta.data.reshape(bshape)).astype(x.dtype, copy=False)
    return _make(out, (x, gamma, beta), bw, "batch_norm2d")


# -- gradient oracle ------------------------------------------------------------
def finite_diff_grad(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    h: float = 1e-5,
    indices: Optional[Iterable[tuple]] = None,
) -> np.ndarray:
    """Central-difference estimate of d f(x) / d x.

    ``x.data`` is perturbed in place and restored bit-exactly after each
    probe, so ``f`` may read ``x`` through a closure (e.g. a model
    parameter) or through its argument. With ``indices`` only those
    elements are probed and a 1-D array of estimates is returned.
    """

    def scalar(val) -> float:
        arr = val.data if isinstance(val, Tensor) else np.asarray(val)
        if arr.size != 1:
            raise GraphError(f"finite_diff_grad needs a scalar function, got shape {arr.shape}")
        return float(arr.reshape(-1)[0])

    data = x.data
    probe = list(np.ndindex(data.shape)) if indices is None else [tuple(i) for i in indices]
    est = np.empty(len(probe), dtype=np.float64)
    with no_grad():
        for k, idx in enumerate(probe):
            orig = data[idx]
            data[idx] = orig + h
            fp = scalar(f(x))
            data[idx] = orig - h
            fm = scalar(f(x))
            data[idx] = orig
            est[k] = (fp - fm) / (2.0 * h)
    return est.reshape(data.shape) if indices is None else est
