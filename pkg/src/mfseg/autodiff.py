"""Minimal reverse-mode automatic differentiation over NumPy arrays.

Implements exactly the operations the segmentation networks need: 2-D
(dilated/strided) convolution, transposed convolution, pooling, nearest
upsampling, batch normalization, dropout, ReLU/sigmoid and elementwise
arithmetic. Convolutions use im2col/col2im so the heavy lifting is a
single BLAS matmul per layer.

Every backward rule here is validated against central finite differences
in tests/test_autodiff.py.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

# Sigmoid outputs are clamped into [SIGMOID_CLIP, 1 - SIGMOID_CLIP] so the
# probability-map contract (values strictly inside (0, 1)) holds in float32.
SIGMOID_CLIP = 1e-6


class Tensor:
    """A node in a dynamically built computation graph.

    ``data`` is an ndarray, ``grad`` accumulates the gradient of some
    downstream scalar (or supplied output gradient) with respect to it.
    Graphs are rebuilt on every forward pass; only parameter tensors
    persist across passes.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bw")

    def __init__(self, data, requires_grad=False, parents=(), bw=None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = tuple(parents) if self.requires_grad else ()
        self._bw = bw if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    def backward(self, grad=None):
        """Backpropagate ``grad`` (defaults to ones) from this tensor."""
        if grad is None:
            grad = np.ones_like(self.data)
        self.grad = np.asarray(grad, dtype=self.data.dtype)
        for node in reversed(_toposort(self)):
            if node._bw is not None and node.grad is not None:
                node._bw(node.grad)


def _toposort(root):
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _accum(t: Tensor, g: np.ndarray) -> None:
    # Callers hand over ownership of g (never a view into live storage).
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g
    else:
        t.grad += g


# ---------------------------------------------------------------------------
# elementwise ops


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0), parents=(x,))
    if out.requires_grad:
        mask = x.data > 0

        def bw(g):
            _accum(x, g * mask)

        out._bw = bw
    return out


def sigmoid(x: Tensor) -> Tensor:
    z = x.data
    s = np.empty_like(z)
    pos = z >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    s[~pos] = ez / (1.0 + ez)
    np.clip(s, SIGMOID_CLIP, 1.0 - SIGMOID_CLIP, out=s)
    out = Tensor(s, parents=(x,))
    if out.requires_grad:

        def bw(g):
            _accum(x, g * s * (1.0 - s))

        out._bw = bw
    return out


def add(x: Tensor, y: Tensor) -> Tensor:
    if x.data.shape != y.data.shape:
        raise ValueError(f"add shape mismatch: {x.data.shape} vs {y.data.shape}")
    out = Tensor(x.data + y.data, parents=(x, y))
    if out.requires_grad:

        def bw(g):
            _accum(x, g.copy())
            _accum(y, g.copy())

        out._bw = bw
    return out


def mul(x: Tensor, y: Tensor) -> Tensor:
    """Elementwise product with NumPy broadcasting (used by SE and attention gates)."""
    out = Tensor(x.data * y.data, parents=(x, y))
    if out.requires_grad:

        def bw(g):
            _accum(x, _unbroadcast(g * y.data, x.data.shape))
            _accum(y, _unbroadcast(g * x.data, y.data.shape))

        out._bw = bw
    return out


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, size in enumerate(shape):
        if size == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return np.ascontiguousarray(g)


def concat(tensors, axis=1) -> Tensor:
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), parents=tuple(tensors))
    if out.requires_grad:
        sizes = [t.data.shape[axis] for t in tensors]
        offsets = np.cumsum([0] + sizes)

        def bw(g):
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                _accum(t, np.ascontiguousarray(g[tuple(idx)]))

        out._bw = bw
    return out


# ---------------------------------------------------------------------------
# convolution machinery (NCHW layout)


def _gather_cols(xp, kh, kw, stride, dilation):
    """Padded (B,C,Hp,Wp) -> contiguous columns (B, C*kh*kw, Ho*Wo).

    The K-major layout keeps spatial positions innermost, so the single
    gather copy reads long contiguous runs and matmul outputs need no
    transposition.
    """
    keh = (kh - 1) * dilation + 1
    kew = (kw - 1) * dilation + 1
    win = sliding_window_view(xp, (keh, kew), axis=(2, 3))
    win = win[:, :, :: stride, :: stride, :: dilation, :: dilation]
    B, C, Ho, Wo = win.shape[:4]
    cols = np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3))
    return cols.reshape(B, C * kh * kw, Ho * Wo), (Ho, Wo)


def _scatter_cols(cols, x_shape, out_hw, kh, kw, stride, dilation, pad):
    """Adjoint of _gather_cols: scatter-add (B, C*kh*kw, Ho*Wo) onto the grid."""
    B, C, H, W = x_shape
    Ho, Wo = out_hw
    Hp, Wp = H + 2 * pad, W + 2 * pad
    d6 = cols.reshape(B, C, kh, kw, Ho, Wo)
    dxp = np.zeros((B, C, Hp, Wp), dtype=cols.dtype)
    for r in range(kh):
        for c in range(kw):
            dxp[:, :, r * dilation : r * dilation + Ho * stride : stride,
                c * dilation : c * dilation + Wo * stride : stride] += d6[:, :, r, c]
    if pad:
        return np.ascontiguousarray(dxp[:, :, pad : pad + H, pad : pad + W])
    return dxp


def conv2d(x: Tensor, w: Tensor, b: Tensor | None, stride=1, padding=0, dilation=1) -> Tensor:
    """Cross-correlation with weight (Cout, Cin, kh, kw)."""
    B, Ci, H, W = x.data.shape
    Co, Ci2, kh, kw = w.data.shape
    if Ci != Ci2:
        raise ValueError(f"conv2d channel mismatch: input {Ci}, weight expects {Ci2}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols, (Ho, Wo) = _gather_cols(xp, kh, kw, stride, dilation)
    wmat = w.data.reshape(Co, Ci * kh * kw)
    y = np.matmul(wmat, cols).reshape(B, Co, Ho, Wo)
    if b is not None:
        y += b.data[None, :, None, None]
    out = Tensor(y, parents=(x, w, b) if b is not None else (x, w))
    if out.requires_grad:

        def bw(g):
            g3 = np.ascontiguousarray(g).reshape(B, Co, Ho * Wo)
            dw = np.matmul(g3, cols.transpose(0, 2, 1)).sum(axis=0)
            _accum(w, dw.reshape(w.data.shape))
            if b is not None:
                _accum(b, g.sum(axis=(0, 2, 3)))
            if x.requires_grad:
                dcols = np.matmul(wmat.T, g3)
                _accum(x, _scatter_cols(dcols, x.data.shape, (Ho, Wo),
                                        kh, kw, stride, dilation, padding))

        out._bw = bw
    return out


def conv_transpose2d(x: Tensor, w: Tensor, b: Tensor | None, stride=2, padding=1) -> Tensor:
    """Transposed convolution with weight (Cin, Cout, kh, kw).

    Output spatial size is (H-1)*stride - 2*padding + k; the networks only
    use 4x4/stride-2/padding-1 (exact 2x upsampling).
    """
    B, Ci, H, W = x.data.shape
    Ci2, Co, kh, kw = w.data.shape
    if Ci != Ci2:
        raise ValueError(f"conv_transpose2d channel mismatch: input {Ci}, weight expects {Ci2}")
    Ho = (H - 1) * stride - 2 * padding + kh
    Wo = (W - 1) * stride - 2 * padding + kw
    wmat = w.data.reshape(Ci, Co * kh * kw)
    x3 = x.data.reshape(B, Ci, H * W)
    y = _scatter_cols(np.matmul(wmat.T, x3), (B, Co, Ho, Wo), (H, W), kh, kw, stride, 1, padding)
    if b is not None:
        y += b.data[None, :, None, None]
    out = Tensor(y, parents=(x, w, b) if b is not None else (x, w))
    if out.requires_grad:

        def bw(g):
            gp = np.pad(g, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else g
            gcols, _ = _gather_cols(gp, kh, kw, stride, 1)
            dw = np.matmul(x3, gcols.transpose(0, 2, 1)).sum(axis=0)
            _accum(w, dw.reshape(w.data.shape))
            if b is not None:
                _accum(b, g.sum(axis=(0, 2, 3)))
            if x.requires_grad:
                _accum(x, np.matmul(wmat, gcols).reshape(B, Ci, H, W))

        out._bw = bw
    return out


# ---------------------------------------------------------------------------
# pooling / resampling


def max_pool2x2(x: Tensor) -> Tensor:
    B, C, H, W = x.data.shape
    if H % 2 or W % 2:
        raise ValueError(f"max_pool2x2 needs even spatial dims, got {H}x{W}")
    v = x.data.reshape(B, C, H // 2, 2, W // 2, 2)
    flat = np.ascontiguousarray(v.transpose(0, 1, 2, 4, 3, 5)).reshape(B, C, H // 2, W // 2, 4)
    idx = flat.argmax(axis=-1)
    out = Tensor(np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0], parents=(x,))
    if out.requires_grad:

        def bw(g):
            dflat = np.zeros_like(flat)
            np.put_along_axis(dflat, idx[..., None], g[..., None], axis=-1)
            dx = dflat.reshape(B, C, H // 2, W // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
            _accum(x, np.ascontiguousarray(dx).reshape(B, C, H, W))

        out._bw = bw
    return out


def avg_pool3x3_same(x: Tensor) -> Tensor:
    """3x3 mean filter with zero padding (inception pooling branch)."""
    B, C, H, W = x.data.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
    y = np.zeros_like(x.data)
    for r in range(3):
        for c in range(3):
            y += xp[:, :, r : r + H, c : c + W]
    y /= 9.0
    out = Tensor(y, parents=(x,))
    if out.requires_grad:

        def bw(g):
            gp = np.pad(g, ((0, 0), (0, 0), (1, 1), (1, 1)))
            dx = np.zeros_like(g)
            for r in range(3):
                for c in range(3):
                    dx += gp[:, :, r : r + H, c : c + W]
            _accum(x, dx / 9.0)

        out._bw = bw
    return out


def upsample_nearest2x(x: Tensor) -> Tensor:
    B, C, H, W = x.data.shape
    out = Tensor(x.data.repeat(2, axis=2).repeat(2, axis=3), parents=(x,))
    if out.requires_grad:

        def bw(g):
            _accum(x, g.reshape(B, C, H, 2, W, 2).sum(axis=(3, 5)))

        out._bw = bw
    return out


def global_avg_pool(x: Tensor) -> Tensor:
    B, C, H, W = x.data.shape
    out = Tensor(x.data.mean(axis=(2, 3), keepdims=True), parents=(x,))
    if out.requires_grad:
        scale = 1.0 / (H * W)

        def bw(g):
            _accum(x, np.broadcast_to(g * scale, x.data.shape).copy())

        out._bw = bw
    return out


# ---------------------------------------------------------------------------
# normalization / regularization


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean, running_var,
               training: bool, momentum=0.1, eps=1e-5) -> Tensor:
    """Per-channel batch normalization; running stats are updated in place in train mode."""
    B, C, H, W = x.data.shape
    if training:
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mu, var = running_mean, running_var
    ivar = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[None, :, None, None]) * ivar[None, :, None, None]
    y = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]
    out = Tensor(y, parents=(x, gamma, beta))
    if out.requires_grad:
        m = B * H * W

        def bw(g):
            _accum(gamma, (g * xhat).sum(axis=(0, 2, 3)))
            _accum(beta, g.sum(axis=(0, 2, 3)))
            if not x.requires_grad:
                return
            gx = g * gamma.data[None, :, None, None]
            if training:
                s1 = gx.sum(axis=(0, 2, 3), keepdims=True)
                s2 = (gx * xhat).sum(axis=(0, 2, 3), keepdims=True)
                dx = (gx - s1 / m - xhat * s2 / m) * ivar[None, :, None, None]
                _accum(x, np.ascontiguousarray(dx))
            else:
                _accum(x, np.ascontiguousarray(gx * ivar[None, :, None, None]))

        out._bw = bw
    return out


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout. rate=0 is the identity and consumes no randomness."""
    if rate == 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    mask = (rng.random(x.data.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)
    out = Tensor(x.data * mask, parents=(x,))
    if out.requires_grad:

        def bw(g):
            _accum(x, g * mask)

        out._bw = bw
    return out
