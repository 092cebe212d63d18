"""Residual block, CBAM attention, and the bottleneck-transformer (BoT) block."""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .nn import BatchNorm2d, Conv2d, Linear, Module, Sequential
from .tensor import Tensor


class ChannelAttention(Module):
    """Shared two-layer MLP over global avg- and max-pooled channel descriptors.

    Returns per-channel weights of shape [N, C, 1, 1]; the hidden width is
    ``max(C // reduction, 1)``.
    """

    def __init__(self, channels: int, rng, reduction: int = 16, dtype=np.float64):
        super().__init__()
        hidden = max(channels // min(reduction, channels), 1)
        self.channels = channels
        self.fc1 = Linear(channels, hidden, rng, dtype)
        self.fc2 = Linear(hidden, channels, rng, dtype)

    def mlp(self, d: Tensor) -> Tensor:
        return self.fc2(T.relu(self.fc1(d)))

    def forward(self, m: Tensor) -> Tensor:
        n, c = m.shape[:2]
        if c != self.channels:
            raise ShapeError(f"channel attention built for {self.channels} channels, got {c}")
        avg = T.global_pool(m, "avg").reshape(n, c)
        mx = T.global_pool(m, "max").reshape(n, c)
        return T.sigmoid(self.mlp(avg) + self.mlp(mx)).reshape(n, c, 1, 1)


class SpatialAttention(Module):
    """7x7 conv over the channel-wise mean and max maps; weights [N, 1, H, W]."""

    def __init__(self, rng, kernel: int = 7, dtype=np.float64):
        super().__init__()
        self.conv = Conv2d(2, 1, kernel, rng, padding=kernel // 2, bias=True, dtype=dtype)

    def forward(self, m: Tensor) -> Tensor:
        avg = T.mean(m, axis=1, keepdims=True)
        mx = T.reduce_max(m, axis=1, keepdims=True)
        return T.sigmoid(self.conv(T.concat([avg, mx], axis=1)))


class CBAM(Module):
    """Channel attention followed by spatial attention, both multiplied in."""

    def __init__(self, channels: int, rng, reduction: int = 16, dtype=np.float64):
        super().__init__()
        self.channel = ChannelAttention(channels, rng, reduction, dtype)
        self.spatial = SpatialAttention(rng, dtype=dtype)

    def forward(self, m: Tensor) -> Tensor:
        m1 = m * self.channel(m)
        return m1 * self.spatial(m1)


class ResidualBlock(Module):
    """Basic block: ``act(shortcut(x) + f(x))`` with f = conv-bn-relu-conv-bn[-cbam].

    ``activation="identity"`` drops the outer relu, which makes a stack of
    blocks telescope exactly (used by :func:`stacked_residual_identity_check`).
    """

    def __init__(
        self,
        cin: int,
        cout: int,
        rng,
        stride: int = 1,
        cbam: bool = False,
        reduction: int = 16,
        activation: str = "relu",
        dtype=np.float64,
    ):
        super().__init__()
        self.cin, self.cout, self.stride = cin, cout, stride
        self.activation = activation
        self.conv1 = Conv2d(cin, cout, 3, rng, stride=stride, padding=1, dtype=dtype)
        self.bn1 = BatchNorm2d(cout, dtype)
        self.conv2 = Conv2d(cout, cout, 3, rng, padding=1, dtype=dtype)
        self.bn2 = BatchNorm2d(cout, dtype)
        if cbam:
            self.cbam = CBAM(cout, rng, reduction, dtype)
        else:
            object.__setattr__(self, "cbam", None)
        if stride != 1 or cin != cout:
            self.downsample = Sequential(Conv2d(cin, cout, 1, rng, stride=stride, dtype=dtype),
                                         BatchNorm2d(cout, dtype))
        else:
            object.__setattr__(self, "downsample", None)

    @property
    def identity_shortcut(self) -> bool:
        return self.downsample is None

    def branch(self, x: Tensor) -> Tensor:
        out = T.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        if self.cbam is not None:
            out = self.cbam(out)
        return out

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.cin:
            raise ShapeError(f"residual block expects {self.cin} input channels, got shape {x.shape}")
        shortcut = x if self.downsample is None else self.downsample(x)
        return T.activation(shortcut + self.branch(x), self.activation)


class MultiHeadSelfAttention(Module):
    """Multi-head self-attention over spatial positions with 2-D relative positions.

    Per head, the logit between query position i=(yi, xi) and key position
    j=(yj, xj) is ``q_i.k_j + q_i.(R_h[yj-yi+Hm-1] + R_w[xj-xi+Wm-1])``,
    optionally scaled by 1/sqrt(d_head), where Hm x Wm is the largest grid the
    tables cover. Offset zero therefore maps to the same row for any input size. The row and column tables are
    shared by all heads. Heads are concatenated with no output projection.
    """

    def __init__(
        self,
        width: int,
        rng,
        heads: int = 4,
        feat_size: tuple = (1, 1),
        scale_logits: bool = True,
        dtype=np.float64,
    ):
        super().__init__()
        if width % heads:
            raise ConfigError(f"attention width {width} not divisible by {heads} heads")
        self.width, self.heads = width, heads
        self.d_head = width // heads
        self.h_max, self.w_max = feat_size
        self.scale_logits = scale_logits
        self.q = Conv2d(width, width, 1, rng, dtype=dtype)
        self.k = Conv2d(width, width, 1, rng, dtype=dtype)
        self.v = Conv2d(width, width, 1, rng, dtype=dtype)
        self.rel_h = Tensor(rng.normal(0.0, 0.02, size=(2 * self.h_max - 1, self.d_head)).astype(dtype),
                            requires_grad=True)
        self.rel_w = Tensor(rng.normal(0.0, 0.02, size=(2 * self.w_max - 1, self.d_head)).astype(dtype),
                            requires_grad=True)
        self.last_weights: Optional[np.ndarray] = None

    @staticmethod
    def offset_index(h: int, w: int, h_max: Optional[int] = None, w_max: Optional[int] = None):
        """Table rows for every (query, key) pair of an h x w grid, row-major positions."""
        h_max = h if h_max is None else h_max
        w_max = w if w_max is None else w_max
        ys, xs = np.divmod(np.arange(h * w), w)
        dy = ys[None, :] - ys[:, None] + (h_max - 1)
        dx = xs[None, :] - xs[:, None] + (w_max - 1)
        return dy, dx

    def attend(self, x: Tensor) -> tuple[Tensor, Tensor]:
        n, c, h, w = x.shape
        if c != self.width:
            raise ShapeError(f"attention built for width {self.width}, got {c} channels")
        if h > self.h_max or w > self.w_max:
            raise ShapeError(f"spatial extent {h}x{w} exceeds position tables {self.h_max}x{self.w_max}")
        hw, nh, d = h * w, self.heads, self.d_head

        def split(t: Tensor) -> Tensor:
            # (n, c, h, w) -> (n, heads, hw, d)
            return t.reshape(n, nh, d, hw).transpose(0, 1, 3, 2)

        q, k, v = split(self.q(x)), split(self.k(x)), split(self.v(x))
        dy, dx = self.offset_index(h, w, self.h_max, self.w_max)
        rel_rows = T.take_along_last(q @ self.rel_h.transpose(1, 0), dy)
        rel_cols = T.take_along_last(q @ self.rel_w.transpose(1, 0), dx)
        logits = q @ k.transpose(0, 1, 3, 2) + rel_rows + rel_cols
        if self.scale_logits:
            logits = logits * (1.0 / math.sqrt(d))
        weights = T.softmax(logits, axis=-1)
        out = (weights @ v).transpose(0, 1, 3, 2).reshape(n, c, h, w)
        return out, weights

    def forward(self, x: Tensor) -> Tensor:
        out, weights = self.attend(x)
        self.last_weights = weights.data
        return out


class BoTBlock(Module):
    """1x1 conv-bn-relu, MHSA-bn-relu, 1x1 conv-bn, identity shortcut, relu."""

    def __init__(
        self,
        channels: int,
        rng,
        width: Optional[int] = None,
        heads: int = 4,
        feat_size: tuple = (1, 1),
        scale_logits: bool = True,
        dtype=np.float64,
    ):
        super().__init__()
        width = channels if width is None else width
        self.channels = channels
        self.conv_in = Conv2d(channels, width, 1, rng, dtype=dtype)
        self.bn_in = BatchNorm2d(width, dtype)
        self.mhsa = MultiHeadSelfAttention(width, rng, heads, feat_size, scale_logits, dtype)
        self.bn_mid = BatchNorm2d(width, dtype)
        self.conv_out = Conv2d(width, channels, 1, rng, dtype=dtype)
        self.bn_out = BatchNorm2d(channels, dtype)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeError(f"BoT block expects {self.channels} channels, got shape {x.shape}")
        out = T.relu(self.bn_in(self.conv_in(x)))
        out = T.relu(self.bn_mid(self.mhsa(out)))
        out = self.bn_out(self.conv_out(out))
        return T.relu(x + out)


def stacked_residual_identity_check(blocks: Sequence[ResidualBlock], x: Tensor) -> tuple[np.ndarray, np.ndarray]:
    """Run linearized blocks and return (stack output, x + sum of branch outputs).

    Each branch output is recorded on the actual trajectory, so the two
    arrays agree up to rounding when every block has an identity shortcut
    and identity outer activation.
    """
    for i, blk in enumerate(blocks):
        if not blk.identity_shortcut:
            raise ConfigError(f"block {i} has a projection shortcut")
        if blk.activation != "identity":
            raise ConfigError(f"block {i} uses activation {blk.activation!r}, expected identity")
    with T.no_grad():
        total = x.data.copy()
        cur = x
        for blk in blocks:
            total = total + blk.branch(cur).data
            cur = blk(cur)
    return cur.data, total
