"""Differentiable primitives for the classifier and its smoothness losses.

Each function takes Tensors, computes the forward value with numpy, and wires
a closed-form backward closure into the graph. The op set is exactly what the
CNN/MLP stack and the adversarial-smoothness objective need: 3x3 stride-1
pad-1 convolution, 2x2 max pooling, global average pooling, affine, batch
norm, leaky ReLU, log-softmax, cross-entropy, KL divergence against a fixed
distribution, per-sample L2 normalization, and a scalar sum. No broadcasting,
no strides, no other geometries.
"""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, accumulate, make_node


class DegenerateDirectionError(ValueError):
    """Per-sample vector too close to zero to define a direction."""


class Distribution:
    """Rows of class probabilities, each summing to 1.

    Holds the predictions p(y|x) used as targets of the KL term; treated as a
    constant during differentiation.
    """

    def __init__(self, probs: Tensor):
        p = probs.data
        if p.ndim != 2:
            raise ShapeError(f"Distribution expects (B, C) probabilities, got {p.shape}")
        if np.any(p < -1e-12) or np.any(p > 1 + 1e-12):
            raise ValueError("Distribution entries must lie in [0, 1]")
        rowsum = p.sum(axis=1)
        if np.any(np.abs(rowsum - 1.0) > 1e-9):
            raise ValueError("Distribution rows must sum to 1 within 1e-9")
        self.probs = probs

    @property
    def shape(self) -> tuple[int, ...]:
        return self.probs.shape


def conv2d(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """3x3 convolution, stride 1, zero padding 1 (spatial dims preserved)."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d input must be (B, C, H, W), got {x.shape}")
    if weight.ndim != 4 or weight.shape[2:] != (3, 3):
        raise ShapeError(f"conv2d weight must be (Cout, Cin, 3, 3), got {weight.shape}")
    B, cin, H, W = x.shape
    cout = weight.shape[0]
    if weight.shape[1] != cin:
        raise ShapeError(f"conv2d channel mismatch: input has {cin}, weight expects {weight.shape[1]}")
    if bias.shape != (cout,):
        raise ShapeError(f"conv2d bias must be ({cout},), got {bias.shape}")

    # Channel-first im2col: one large contiguous matmul per pass keeps the
    # work inside BLAS. The unfold buffer is transient; backward rebuilds it
    # from the retained padded input instead of keeping it alive.
    HW = H * W
    xpad = np.zeros((cin, B, H + 2, W + 2))
    xpad[:, :, 1:-1, 1:-1] = x.data.transpose(1, 0, 2, 3)

    def unfold() -> np.ndarray:
        cols = np.empty((cin, 9, B, H, W))
        for di in range(3):
            for dj in range(3):
                cols[:, 3 * di + dj] = xpad[:, :, di:di + H, dj:dj + W]
        return cols.reshape(cin * 9, B * HW)

    wmat = weight.data.reshape(cout, cin * 9)
    out_flat = wmat @ unfold() + bias.data[:, None]
    out_data = np.ascontiguousarray(out_flat.reshape(cout, B, H, W).transpose(1, 0, 2, 3))

    out = make_node(out_data, (x, weight, bias))
    if out.requires_grad:
        def bwd():
            g = out.grad
            gflat = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(cout, B * HW)
            accumulate(bias, g.sum(axis=(0, 2, 3)))
            if weight.requires_grad:
                dw = gflat @ unfold().T
                accumulate(weight, dw.reshape(weight.shape))
            if x.requires_grad:
                dcols = (wmat.T @ gflat).reshape(cin, 3, 3, B, H, W)
                dxpad = np.zeros_like(xpad)
                for di in range(3):
                    for dj in range(3):
                        dxpad[:, :, di:di + H, dj:dj + W] += dcols[:, di, dj]
                accumulate(x, dxpad[:, :, 1:-1, 1:-1].transpose(1, 0, 2, 3))
        out._backward = bwd
    return out


def max_pool2(x: Tensor) -> Tensor:
    """2x2 max pooling, stride 2. Ties route gradient to the first cell in
    row-major window scan order."""
    if x.ndim != 4:
        raise ShapeError(f"max_pool2 input must be (B, C, H, W), got {x.shape}")
    B, C, H, W = x.shape
    if H % 2 or W % 2:
        raise ShapeError(f"max_pool2 needs even spatial dims, got {H}x{W}")
    h2, w2 = H // 2, W // 2
    win = x.data.reshape(B, C, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, h2, w2, 4)
    idx = win.argmax(axis=-1)  # argmax picks the first maximum: the tie rule
    out_data = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    out = make_node(out_data, (x,))
    if out.requires_grad:
        def bwd():
            gwin = np.zeros((B, C, h2, w2, 4))
            np.put_along_axis(gwin, idx[..., None], out.grad[..., None], axis=-1)
            dx = gwin.reshape(B, C, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, H, W)
            accumulate(x, dx)
        out._backward = bwd
    return out


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the spatial window, output (B, C, 1, 1)."""
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool input must be (B, C, H, W), got {x.shape}")
    B, C, H, W = x.shape
    out = make_node(x.data.mean(axis=(2, 3), keepdims=True), (x,))
    if out.requires_grad:
        def bwd():
            accumulate(x, np.broadcast_to(out.grad / (H * W), x.shape))
        out._backward = bwd
    return out


def affine(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """x @ weight.T + bias for x of shape (B, Din), weight (Dout, Din)."""
    if x.ndim != 2 or weight.ndim != 2:
        raise ShapeError(f"affine expects 2-D input/weight, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(f"affine: input dim {x.shape[1]} vs weight dim {weight.shape[1]}")
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"affine bias must be ({weight.shape[0]},), got {bias.shape}")
    out = make_node(x.data @ weight.data.T + bias.data, (x, weight, bias))
    if out.requires_grad:
        def bwd():
            g = out.grad
            accumulate(bias, g.sum(axis=0))
            if weight.requires_grad:
                accumulate(weight, g.T @ x.data)
            if x.requires_grad:
                accumulate(x, g @ weight.data)
        out._backward = bwd
    return out


class BatchNormState:
    """Per-channel running statistics for one batch-norm layer."""

    def __init__(self, channels: int):
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.updates = 0

    def copy(self) -> "BatchNormState":
        c = BatchNormState(len(self.running_mean))
        c.running_mean = self.running_mean.copy()
        c.running_var = self.running_var.copy()
        c.updates = self.updates
        return c


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    mode: str,
    state: BatchNormState,
    update_running_stats: bool = False,
    eps: float = 1e-5,
    momentum: float = 0.1,
) -> Tensor:
    """Per-channel normalization over (B, H, W).

    Train mode normalizes by batch mean and 1/N variance and, when asked,
    folds them into the running statistics at rate `momentum`. Eval mode uses
    the running statistics and fails if they were never updated. Gradients
    flow through the batch mean and variance.
    """
    if x.ndim != 4:
        raise ShapeError(f"batch_norm input must be (B, C, H, W), got {x.shape}")
    B, C, H, W = x.shape
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeError(f"batch_norm gamma/beta must be ({C},)")
    if mode not in ("train", "eval"):
        raise ValueError(f"batch_norm mode must be 'train' or 'eval', got {mode!r}")

    if mode == "train":
        n = B * H * W
        if n < 2:
            raise ShapeError("batch_norm train mode needs at least 2 values per channel")
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))  # biased, 1/N
        if update_running_stats:
            state.running_mean = (1 - momentum) * state.running_mean + momentum * mu
            state.running_var = (1 - momentum) * state.running_var + momentum * var
            state.updates += 1
    else:
        if state.updates == 0:
            raise ValueError("batch_norm eval mode before any running-statistics update")
        mu = state.running_mean
        var = state.running_var

    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[None, :, None, None]) * inv[None, :, None, None]
    out_data = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    out = make_node(out_data, (x, gamma, beta))
    if out.requires_grad:
        def bwd():
            g = out.grad
            accumulate(beta, g.sum(axis=(0, 2, 3)))
            accumulate(gamma, (g * xhat).sum(axis=(0, 2, 3)))
            if x.requires_grad:
                dxhat = g * gamma.data[None, :, None, None]
                if mode == "train":
                    m1 = dxhat.mean(axis=(0, 2, 3), keepdims=True)
                    m2 = (dxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
                    dx = inv[None, :, None, None] * (dxhat - m1 - xhat * m2)
                else:
                    dx = inv[None, :, None, None] * dxhat
                accumulate(x, dx)
        out._backward = bwd
    return out


def leaky_relu(x: Tensor, slope: float = 0.1) -> Tensor:
    """max(x, slope*x); derivative is `slope` at exactly zero."""
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    out = make_node(np.maximum(x.data, slope * x.data), (x,))
    if out.requires_grad:
        def bwd():
            accumulate(x, out.grad * np.where(x.data > 0, 1.0, slope))
        out._backward = bwd
    return out


def log_softmax(logits: Tensor) -> Tensor:
    """Row-wise log softmax, stable for logit magnitudes up to 1e6."""
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise ShapeError(f"log_softmax expects (B, C) with C >= 2, got {logits.shape}")
    out = make_node(_log_softmax(logits.data), (logits,))
    if out.requires_grad:
        def bwd():
            g = out.grad
            accumulate(logits, g - np.exp(out.data) * g.sum(axis=1, keepdims=True))
        out._backward = bwd
    return out


def _log_softmax(z: np.ndarray) -> np.ndarray:
    s = z - z.max(axis=1, keepdims=True)
    return s - np.log(np.exp(s).sum(axis=1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    """Plain-array softmax helper (no graph)."""
    return np.exp(_log_softmax(z))


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer labels under the logits."""
    y = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects (B, C) logits, got {logits.shape}")
    B, C = logits.shape
    if y.shape != (B,):
        raise ShapeError(f"cross_entropy expects {B} labels, got shape {y.shape}")
    if y.size and (y.min() < 0 or y.max() >= C):
        raise ValueError(f"cross_entropy label out of range [0, {C})")

    ls = _log_softmax(logits.data)
    out = make_node(-ls[np.arange(B), y].mean(), (logits,))
    if out.requires_grad:
        def bwd():
            p = np.exp(ls)
            p[np.arange(B), y] -= 1.0
            accumulate(logits, p * (out.grad / B))
        out._backward = bwd
    return out


def kl_divergence(p: Distribution, q_logits: Tensor) -> Tensor:
    """Batch-mean KL(p || softmax(q_logits)), constant in p.

    0*log 0 is taken as 0. The gradient flows only into q_logits and equals
    (softmax(q) - p) / B.
    """
    pd = p.probs.data
    if q_logits.shape != pd.shape:
        raise ShapeError(f"kl_divergence: p is {pd.shape} but q_logits is {q_logits.shape}")
    B = pd.shape[0]
    ls = _log_softmax(q_logits.data)
    plogp = np.where(pd > 0, pd * np.log(np.where(pd > 0, pd, 1.0)), 0.0)
    value = (plogp - pd * ls).sum(axis=1).mean()

    out = make_node(value, (q_logits,))
    if out.requires_grad:
        def bwd():
            accumulate(q_logits, (np.exp(ls) - pd) * (out.grad / B))
        out._backward = bwd
    return out


def l2_normalize(v: Tensor) -> Tensor:
    """Scale each sample (axis 0) of v to unit L2 norm over its remaining axes."""
    if v.ndim < 2:
        raise ShapeError(f"l2_normalize expects a batched tensor, got {v.shape}")
    axes = tuple(range(1, v.ndim))
    norms = np.sqrt((v.data ** 2).sum(axis=axes, keepdims=True))
    if np.any(norms <= 1e-12):
        raise DegenerateDirectionError("degenerate direction: per-sample L2 norm <= 1e-12")
    out = make_node(v.data / norms, (v,))
    if out.requires_grad:
        def bwd():
            g = out.grad
            y = out.data
            proj = (g * y).sum(axis=axes, keepdims=True)
            accumulate(v, (g - y * proj) / norms)
        out._backward = bwd
    return out


def unit_directions(v: np.ndarray) -> np.ndarray:
    """Array-level per-sample normalization with the same degeneracy rule."""
    axes = tuple(range(1, v.ndim))
    norms = np.sqrt((v ** 2).sum(axis=axes, keepdims=True))
    if np.any(norms <= 1e-12):
        raise DegenerateDirectionError("degenerate direction: per-sample L2 norm <= 1e-12")
    return v / norms


def flatten_pooled(x: Tensor) -> Tensor:
    """(B, C, 1, 1) -> (B, C), the bridge from pooling to the linear head."""
    if x.ndim != 4 or x.shape[2:] != (1, 1):
        raise ShapeError(f"flatten_pooled expects (B, C, 1, 1), got {x.shape}")
    B, C = x.shape[:2]
    out = make_node(x.data.reshape(B, C), (x,))
    if out.requires_grad:
        def bwd():
            accumulate(x, out.grad.reshape(x.shape))
        out._backward = bwd
    return out


def sum_all(x: Tensor) -> Tensor:
    """Sum of every entry, as a scalar node."""
    out = make_node(x.data.sum(), (x,))
    if out.requires_grad:
        def bwd():
            accumulate(x, np.broadcast_to(out.grad, x.shape))
        out._backward = bwd
    return out
