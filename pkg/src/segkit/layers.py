"""Layer primitives: same-padded convolution, ReLU, 2x2 max-pool with
argmax memorisation, index-driven unpooling and a bias-free per-pixel
soft-max. Every op has an analytic backward pass.

Convolution is cross-correlation (no kernel flip) with zero same-padding, so
spatial dims are preserved and only pooling changes resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError
from .tensor import check_rank4


@dataclass
class ConvLayer:
    kernels: np.ndarray  # (out, in, k, k)
    biases: np.ndarray  # (out,)
    trainable: bool = True

    @property
    def in_channels(self):
        return self.kernels.shape[1]

    @property
    def out_channels(self):
        return self.kernels.shape[0]

    @property
    def kernel_size(self):
        return self.kernels.shape[2]


@dataclass
class SoftmaxLayer:
    weights: np.ndarray  # (K, in, 1, 1); no bias by construction
    trainable: bool = True

    @property
    def in_channels(self):
        return self.weights.shape[1]

    @property
    def num_classes(self):
        return self.weights.shape[0]


@dataclass
class PoolIndices:
    """Window-local argmax offsets (0..3, row-major) for each pooled element."""

    offsets: np.ndarray  # uint8, shape == pooled dims

    @property
    def pooled_shape(self):
        return self.offsets.shape

    @property
    def input_shape(self):
        n, c, h, w = self.offsets.shape
        return (n, c, 2 * h, 2 * w)


# -- convolution -------------------------------------------------------------

def _columns(xp_item, k, h, w):
    # (c, h+k-1, w+k-1) -> (c*k*k, h*w), ordering matches kernels.reshape(o, -1)
    win = sliding_window_view(xp_item, (k, k), axis=(1, 2))  # c, h, w, k, k
    c = xp_item.shape[0]
    return np.ascontiguousarray(win.transpose(0, 3, 4, 1, 2)).reshape(c * k * k, h * w)


def _correlate(x, kernels):
    n, c, h, w = x.shape
    o, _, k, _ = kernels.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    wm = kernels.reshape(o, -1)
    out = np.empty((n, o, h, w), dtype=np.result_type(x, kernels))
    for b in range(n):
        out[b] = (wm @ _columns(xp[b], k, h, w)).reshape(o, h, w)
    return out


def _check_conv(x, layer):
    check_rank4(x, "conv input")
    k = layer.kernels.shape[2]
    if layer.kernels.shape[3] != k or k % 2 == 0:
        raise ShapeError(f"kernel must be square with odd size, got {layer.kernels.shape[2:]}")
    if x.shape[1] != layer.in_channels:
        raise ShapeError(
            f"conv expects {layer.in_channels} input channels, got input shape {x.shape}"
        )


def conv_forward(x: np.ndarray, layer: ConvLayer) -> np.ndarray:
    _check_conv(x, layer)
    out = _correlate(x, layer.kernels)
    out += layer.biases.reshape(1, -1, 1, 1)
    return out


def conv_backward(x, layer: ConvLayer, grad_out, need_input_grad=True, need_param_grad=True):
    """Return ``(grad_x, grad_kernels, grad_biases)``.

    Either half may be skipped (returned as ``None``) to save work when a
    layer is frozen or sits at the bottom of the graph.
    """
    _check_conv(x, layer)
    n, _, h, w = x.shape
    expected = (n, layer.out_channels, h, w)
    if grad_out.shape != expected:
        raise ShapeError(f"grad_out shape {grad_out.shape} does not match output shape {expected}")
    k = layer.kernel_size
    p = k // 2
    grad_x = grad_k = grad_b = None
    if need_param_grad:
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        o = layer.out_channels
        gk = np.zeros((o, layer.in_channels * k * k))
        for b in range(n):
            gk += grad_out[b].reshape(o, h * w) @ _columns(xp[b], k, h, w).T
        grad_k = gk.reshape(layer.kernels.shape)
        grad_b = grad_out.sum(axis=(0, 2, 3))
    if need_input_grad:
        # adjoint of a same-padded correlation: correlate with the flipped,
        # channel-transposed bank
        flipped = np.ascontiguousarray(layer.kernels[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        grad_x = _correlate(grad_out, flipped)
    return grad_x, grad_k, grad_b


# -- relu --------------------------------------------------------------------

def relu_forward(x):
    return np.maximum(x, 0.0)


def relu_backward(x, grad_out):
    if x.shape != grad_out.shape:
        raise ShapeError(f"relu grad shape {grad_out.shape} vs input {x.shape}")
    # subgradient at exactly 0 is 0
    return np.where(x > 0, grad_out, 0.0)


# -- pooling -----------------------------------------------------------------

def _windows(x):
    n, c, h, w = x.shape
    return x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(
        n, c, h // 2, w // 2, 4
    )


def _unwindows(win):
    n, c, h2, w2, _ = win.shape
    return win.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * h2, 2 * w2)


def maxpool_forward(x):
    """2x2 stride-2 max-pool; ties go to the first position in row-major order."""
    check_rank4(x, "pool input")
    if x.shape[2] % 2 or x.shape[3] % 2:
        raise ShapeError(
            f"max-pool needs even height and width, got {x.shape[2:]}; pad the input first"
        )
    win = _windows(x)
    arg = np.argmax(win, axis=-1)
    vals = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return vals, PoolIndices(arg.astype(np.uint8))


def _scatter(y, indices):
    win = np.zeros(y.shape + (4,), dtype=y.dtype)
    np.put_along_axis(win, indices.offsets[..., None].astype(np.intp), y[..., None], axis=-1)
    return _unwindows(win)


def _gather(g, indices):
    win = _windows(g)
    return np.take_along_axis(win, indices.offsets[..., None].astype(np.intp), axis=-1)[..., 0]


def maxpool_backward(indices: PoolIndices, grad_out):
    if grad_out.shape != indices.pooled_shape:
        raise ShapeError(
            f"pool grad shape {grad_out.shape} vs recorded pooled shape {indices.pooled_shape}"
        )
    return _scatter(grad_out, indices)


def unpool_forward(y, indices: PoolIndices):
    if y.shape != indices.pooled_shape:
        raise ShapeError(f"unpool input {y.shape} vs recorded pooled shape {indices.pooled_shape}")
    return _scatter(y, indices)


def unpool_backward(indices: PoolIndices, grad_out):
    if grad_out.shape != indices.input_shape:
        raise ShapeError(
            f"unpool grad shape {grad_out.shape} vs unpooled shape {indices.input_shape}"
        )
    return _gather(grad_out, indices)


# -- soft-max ----------------------------------------------------------------

def logits_forward(x, layer: SoftmaxLayer):
    check_rank4(x, "soft-max input")
    if x.shape[1] != layer.in_channels:
        raise ShapeError(
            f"soft-max expects {layer.in_channels} input channels, got input shape {x.shape}"
        )
    return np.einsum("kc,nchw->nkhw", layer.weights[:, :, 0, 0], x)


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_forward(x, layer: SoftmaxLayer):
    """Per-pixel 1x1 projection to K logits followed by a channel soft-max."""
    return softmax(logits_forward(x, layer))


def logits_backward(x, layer: SoftmaxLayer, grad_logits):
    """Backward through the 1x1 projection: ``(grad_x, grad_weights)``."""
    w = layer.weights[:, :, 0, 0]
    grad_x = np.einsum("kc,nkhw->nchw", w, grad_logits)
    grad_w = np.einsum("nkhw,nchw->kc", grad_logits, x)[:, :, None, None]
    return grad_x, grad_w


def softmax_backward(x, layer: SoftmaxLayer, probs, grad_probs):
    """Backward through projection and soft-max given dL/dprobs."""
    if grad_probs.shape != probs.shape:
        raise ShapeError(f"grad shape {grad_probs.shape} vs probability shape {probs.shape}")
    grad_logits = probs * (grad_probs - (grad_probs * probs).sum(axis=1, keepdims=True))
    return logits_backward(x, layer, grad_logits)
