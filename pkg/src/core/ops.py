"""
Differentiable operations on `Tensor`

Each op computes its forward result with numpy and registers a backward rule
on the active tape. Backward rules skip work for inputs that do not require
gradients (frozen classifier weights still pass gradients through to their
inputs).
"""

import threading
from contextlib import contextmanager
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..utils.errors import ShapeError
from .tensor import Tensor, make_result

BN_MOMENTUM = 0.1
BN_EPS = 1e-5


def _windows(x: np.ndarray, k: int, stride: int, h_out: int, w_out: int) -> np.ndarray:
    """View of all k×k patches at the given stride: (N, C, h_out, w_out, k, k)"""
    view = sliding_window_view(x, (k, k), axis=(2, 3))
    return view[:, :, ::stride, ::stride][:, :, :h_out, :w_out]


def _scatter_windows(
    patches: np.ndarray, stride: int, out_shape: Tuple[int, int, int, int]
) -> np.ndarray:
    """Sum (N, C, H, W, k, k) patches back onto an (N, C, Hf, Wf) canvas"""
    _, _, h, w, k, _ = patches.shape
    canvas = np.zeros(out_shape, dtype=patches.dtype)
    for i in range(k):
        for j in range(k):
            canvas[:, :, i:i + h * stride:stride, j:j + w * stride:stride] += patches[:, :, :, :, i, j]
    return canvas


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def deconv_padding(k: int, stride: int) -> Tuple[int, int]:
    """
    Symmetric padding and output padding giving an output of exactly stride·H

    For the 5×5 stride-2 decoder stages this is padding 2, output padding 1.
    """
    padding = (k - stride + 1) // 2
    output_padding = 2 * padding - (k - stride)
    if padding < 0 or not 0 <= output_padding < stride:
        raise ShapeError(f"No exact stride-multiple padding for kernel {k}, stride {stride}")
    return padding, output_padding


def conv2d(
    x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0
) -> Tensor:
    """2-D convolution of an NCHW input with an OIKK kernel"""
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ShapeError(f"conv2d expects NCHW input and OIKK kernel, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    o, i_ch, k, k2 = weight.shape
    if k != k2:
        raise ShapeError(f"conv2d kernel must be square, got {k}×{k2}")
    if c != i_ch:
        raise ShapeError(f"conv2d input has {c} channels but kernel expects {i_ch}")
    if bias.shape != (o,):
        raise ShapeError(f"conv2d bias shape {bias.shape} does not match {o} output channels")
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d needs stride ≥ 1 and padding ≥ 0, got {stride}, {padding}")
    if h + 2 * padding < k or w + 2 * padding < k:
        raise ShapeError(f"conv2d input {h}×{w} with padding {padding} is smaller than kernel {k}")

    h_out = conv_output_size(h, k, stride, padding)
    w_out = conv_output_size(w, k, stride, padding)
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = _windows(xp, k, stride, h_out, w_out)
    out = np.tensordot(cols, weight.data, axes=([1, 4, 5], [1, 2, 3]))
    out = out.transpose(0, 3, 1, 2) + bias.data.reshape(1, o, 1, 1)

    def rule(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        grad_x = grad_w = grad_b = None
        if weight.requires_grad:
            grad_w = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))
        if bias.requires_grad:
            grad_b = g.sum(axis=(0, 2, 3))
        if x.requires_grad:
            dcols = np.tensordot(g, weight.data, axes=([1], [0]))  # N, Ho, Wo, C, K, K
            dcols = dcols.transpose(0, 3, 1, 2, 4, 5)
            grad_xp = _scatter_windows(dcols, stride, xp.shape)
            grad_x = grad_xp[:, :, padding:padding + h, padding:padding + w]
        return grad_x, grad_w, grad_b

    return make_result("conv2d", np.ascontiguousarray(out), (x, weight, bias), rule)


def deconv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 2) -> Tensor:
    """
    Transposed convolution with output spatial size exactly stride·H

    The kernel is laid out (C_in, C_out, K, K). The op is the adjoint of
    `conv2d(·, weight, stride, padding)` with padding from `deconv_padding`.
    """
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ShapeError(f"deconv2d expects NCHW input and (Cin, Cout, K, K) kernel, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    c_in, c_out, k, k2 = weight.shape
    if k != k2:
        raise ShapeError(f"deconv2d kernel must be square, got {k}×{k2}")
    if c != c_in:
        raise ShapeError(f"deconv2d input has {c} channels but kernel expects {c_in}")
    if bias.shape != (c_out,):
        raise ShapeError(f"deconv2d bias shape {bias.shape} does not match {c_out} output channels")
    if stride < 1:
        raise ShapeError(f"deconv2d needs stride ≥ 1, got {stride}")

    padding, _ = deconv_padding(k, stride)
    h_out, w_out = stride * h, stride * w
    h_full, w_full = (h - 1) * stride + k, (w - 1) * stride + k
    # canvas large enough for both the full scatter and the cropped window
    h_canvas = max(h_full, padding + h_out)
    w_canvas = max(w_full, padding + w_out)

    patches = np.tensordot(x.data, weight.data, axes=([1], [0]))  # N, H, W, Cout, K, K
    patches = patches.transpose(0, 3, 1, 2, 4, 5)
    canvas = _scatter_windows(patches, stride, (n, c_out, h_canvas, w_canvas))
    out = canvas[:, :, padding:padding + h_out, padding:padding + w_out]
    out = out + bias.data.reshape(1, c_out, 1, 1)

    def rule(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        grad_x = grad_w = grad_b = None
        if bias.requires_grad:
            grad_b = g.sum(axis=(0, 2, 3))
        if x.requires_grad or weight.requires_grad:
            g_canvas = np.zeros((n, c_out, h_canvas, w_canvas), dtype=g.dtype)
            g_canvas[:, :, padding:padding + h_out, padding:padding + w_out] = g
            g_win = _windows(g_canvas, k, stride, h, w)  # N, Cout, H, W, K, K
            if x.requires_grad:
                grad_x = np.tensordot(g_win, weight.data, axes=([1, 4, 5], [1, 2, 3]))
                grad_x = grad_x.transpose(0, 3, 1, 2)
            if weight.requires_grad:
                grad_w = np.tensordot(x.data, g_win, axes=([0, 2, 3], [0, 2, 3]))
        return grad_x, grad_w, grad_b

    return make_result("deconv2d", np.ascontiguousarray(out), (x, weight, bias), rule)


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Row-wise affine map: (N, D) @ (D, M) + (M,)"""
    if x.data.ndim != 2 or weight.data.ndim != 2:
        raise ShapeError(f"dense expects (N, D) input and (D, M) weight, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[0]:
        raise ShapeError(f"dense inner dimensions differ: {x.shape[1]} vs {weight.shape[0]}")
    if bias.shape != (weight.shape[1],):
        raise ShapeError(f"dense bias shape {bias.shape} does not match {weight.shape[1]} outputs")

    out = x.data @ weight.data + bias.data

    def rule(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        grad_x = g @ weight.data.T if x.requires_grad else None
        grad_w = x.data.T @ g if weight.requires_grad else None
        grad_b = g.sum(axis=0) if bias.requires_grad else None
        return grad_x, grad_w, grad_b

    return make_result("dense", out, (x, weight, bias), rule)


def relu(x: Tensor) -> Tensor:
    """Clamp negatives to zero; the subgradient at 0 is 0"""
    mask = x.data > 0
    _trace_relu(x.data)

    def rule(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        return (g * mask,)

    return make_result("relu", x.data * mask, (x,), rule)


def sigmoid(x: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))

    def rule(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        return (g * out * (1.0 - out),)

    return make_result("sigmoid", out.astype(x.dtype, copy=False), (x,), rule)


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
) -> Tensor:
    """
    Per-channel batch normalization of an NCHW tensor

    In training mode the batch statistics normalize the input and the running
    statistics (updated in place) follow an exponential moving average with the
    unbiased batch variance. Eval mode uses the running statistics only.
    """
    if x.data.ndim != 4:
        raise ShapeError(f"batchnorm2d expects NCHW input, got {x.shape}")
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batchnorm2d scale/shift must have shape ({c},)")
    shape = (1, c, 1, 1)

    if training:
        if n < 2:
            raise ShapeError("batchnorm2d in train mode needs a batch of at least 2")
        m = n * h * w
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var * m / max(m - 1, 1)
    else:
        mean, var = running_mean, running_var

    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x.data - mean.reshape(shape)) * inv_std.reshape(shape)
    out = (x_hat * gamma.data.reshape(shape) + beta.data.reshape(shape)).astype(x.dtype, copy=False)

    def rule(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        grad_gamma = (g * x_hat).sum(axis=(0, 2, 3)) if gamma.requires_grad else None
        grad_beta = g.sum(axis=(0, 2, 3)) if beta.requires_grad else None
        grad_x = None
        if x.requires_grad:
            g_hat = g * gamma.data.reshape(shape)
            if training:
                count = n * h * w
                sum_g = g_hat.sum(axis=(0, 2, 3)).reshape(shape)
                sum_gx = (g_hat * x_hat).sum(axis=(0, 2, 3)).reshape(shape)
                grad_x = inv_std.reshape(shape) / count * (count * g_hat - sum_g - x_hat * sum_gx)
            else:
                grad_x = g_hat * inv_std.reshape(shape)
        return grad_x, grad_gamma, grad_beta

    return make_result("batchnorm2d", out, (x, gamma, beta), rule)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Batch mean of -log softmax(logits)[label], stabilized by max-subtraction"""
    if logits.data.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy expects (N, K) logits, got {logits.shape}")
    n, k = logits.shape
    labels = np.asarray(labels).astype(np.int64).reshape(-1)
    if labels.shape[0] != n:
        raise ShapeError(f"{labels.shape[0]} labels for {n} rows of logits")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ShapeError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    rows = np.arange(n)
    loss = -log_probs[rows, labels].mean()

    def rule(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        probs = np.exp(log_probs)
        probs[rows, labels] -= 1.0
        return (probs * (g / n),)

    return make_result("softmax_cross_entropy", np.asarray(loss, dtype=logits.dtype), (logits,), rule)


def mse_loss(a: Tensor, b: Tensor) -> Tensor:
    """Per-sample sum of squared differences, averaged over the batch (axis 0)"""
    if a.shape != b.shape:
        raise ShapeError(f"mse_loss shapes differ: {a.shape} vs {b.shape}")
    n = a.shape[0] if a.data.ndim > 0 else 1
    diff = a.data - b.data
    loss = np.asarray((diff * diff).sum() / n, dtype=a.dtype)

    def rule(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        grad = (2.0 / n) * g * diff
        return (grad if a.requires_grad else None, -grad if b.requires_grad else None)

    return make_result("mse_loss", loss, (a, b), rule)


def reshape(x: Tensor, shape: Tuple[int, ...]) -> Tensor:
    original = x.shape
    out = x.data.reshape(shape)

    def rule(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        return (g.reshape(original),)

    return make_result("reshape", out, (x,), rule)


def flatten(x: Tensor) -> Tensor:
    """Collapse all but the batch axis"""
    return reshape(x, (x.shape[0], -1))


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add shapes differ: {a.shape} vs {b.shape}")

    def rule(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        return g, g

    return make_result("add", a.data + b.data, (a, b), rule)


def scale(x: Tensor, factor: float) -> Tensor:
    def rule(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        return (g * factor,)

    return make_result("scale", (x.data * factor).astype(x.dtype, copy=False), (x,), rule)


def tensor_sum(x: Tensor) -> Tensor:
    """Sum of all elements as a scalar tensor"""

    def rule(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        return (np.broadcast_to(g, x.shape).astype(x.dtype),)

    return make_result("sum", np.asarray(x.data.sum(), dtype=x.dtype), (x,), rule)


class _ReluTraces(threading.local):
    def __init__(self) -> None:
        self.stack: List[List[np.ndarray]] = []


_relu_traces = _ReluTraces()


def _trace_relu(values: np.ndarray) -> None:
    if _relu_traces.stack:
        _relu_traces.stack[-1].append(values > 0)


@contextmanager
def relu_trace() -> Iterator[List[np.ndarray]]:
    """Collect the activation pattern of every relu evaluated in the block"""
    patterns: List[np.ndarray] = []
    _relu_traces.stack.append(patterns)
    try:
        yield patterns
    finally:
        _relu_traces.stack.pop()
