"""Plain network building blocks as pure forward/backward functions.

Gradient convention: backward functions return gradients of a scalar
objective whose gradient w.r.t. the layer output is ``grad_out``. Parameter
gradients therefore *sum* over the batch; the 1/m of the empirical risk is
already inside ``grad_out`` (``softmax_xent`` divides by m).
"""
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .exceptions import DimensionError
from .tensor import rng

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass
class FcParams:
    W: np.ndarray  # (n_in, n_out)
    b: np.ndarray  # (n_out,)

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[1],):
            raise DimensionError(f"bad fc params: W {self.W.shape}, b {self.b.shape}")


@dataclass
class ConvParams:
    filters: np.ndarray  # (c_out, c_in, kh, kw)
    bias: np.ndarray  # (c_out,)
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        self.filters = np.asarray(self.filters, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.filters.ndim != 4 or self.bias.shape != (self.filters.shape[0],):
            raise DimensionError(f"bad conv params: filters {self.filters.shape}, bias {self.bias.shape}")
        if self.stride < 1 or self.padding < 0:
            raise DimensionError(f"bad stride/padding {self.stride}/{self.padding}")

    def out_size(self, h, w):
        kh, kw = self.filters.shape[2:]
        oh = (h + 2 * self.padding - kh) // self.stride + 1
        ow = (w + 2 * self.padding - kw) // self.stride + 1
        if oh < 1 or ow < 1:
            raise DimensionError(f"kernel {kh}x{kw} does not fit input {h}x{w} with padding {self.padding}")
        return oh, ow


@dataclass
class BatchNormState:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray = None
    running_var: np.ndarray = None
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPS

    def __post_init__(self):
        c = len(self.gamma)
        if self.running_mean is None:
            self.running_mean = np.zeros(c)
        if self.running_var is None:
            self.running_var = np.ones(c)

    @classmethod
    def fresh(cls, c):
        return cls(np.ones(c), np.zeros(c))


@dataclass(frozen=True)
class DropoutSpec:
    rate: float
    mode: str = "train"

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {self.rate}")
        if self.mode not in ("train", "eval"):
            raise ValueError(f"dropout mode must be train or eval, got {self.mode!r}")


# -- fully connected ---------------------------------------------------------

def fc_forward(x, p):
    if x.ndim != 2 or x.shape[1] != p.W.shape[0]:
        raise DimensionError(f"fc input {x.shape} does not match W {p.W.shape}")
    return x @ p.W + p.b


def fc_backward(x, p, grad_out):
    if x.ndim != 2 or x.shape[1] != p.W.shape[0] or grad_out.shape != (x.shape[0], p.W.shape[1]):
        raise DimensionError(f"fc backward shapes: x {x.shape}, W {p.W.shape}, grad {grad_out.shape}")
    return grad_out @ p.W.T, x.T @ grad_out, grad_out.sum(axis=0)


# -- convolution ---------------------------------------------------------------

def _pad(x, p):
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def conv2d_forward(x, p, return_cols=False):
    """Cross-correlation with zero padding; ``x`` is (m, c_in, H, W)."""
    if x.ndim != 4 or x.shape[1] != p.filters.shape[1]:
        raise DimensionError(f"conv input {x.shape} does not match filters {p.filters.shape}")
    m, _, h, w = x.shape
    c_out, _, kh, kw = p.filters.shape
    oh, ow = p.out_size(h, w)
    cols = _kernels.im2col(_pad(x, p.padding), kh, kw, p.stride, oh, ow)
    out = cols @ p.filters.reshape(c_out, -1).T + p.bias
    out = np.ascontiguousarray(out.reshape(m, oh, ow, c_out).transpose(0, 3, 1, 2))
    return (out, cols) if return_cols else out


def conv2d_backward(x, p, grad_out, cols=None):
    m, c_in, h, w = x.shape
    c_out, _, kh, kw = p.filters.shape
    oh, ow = p.out_size(h, w)
    if grad_out.shape != (m, c_out, oh, ow):
        raise DimensionError(f"conv grad {grad_out.shape} != expected {(m, c_out, oh, ow)}")
    if cols is None:
        cols = _kernels.im2col(_pad(x, p.padding), kh, kw, p.stride, oh, ow)
    g = grad_out.transpose(0, 2, 3, 1).reshape(-1, c_out)
    fmat = p.filters.reshape(c_out, -1)
    grad_filters = (g.T @ cols).reshape(p.filters.shape)
    grad_bias = g.sum(axis=0)
    pd = p.padding
    dxp = _kernels.col2im(g @ fmat, m, c_in, h + 2 * pd, w + 2 * pd, kh, kw, p.stride, oh, ow)
    grad_x = dxp[:, :, pd:pd + h, pd:pd + w] if pd else dxp
    return np.ascontiguousarray(grad_x), grad_filters, grad_bias


# -- activations, pooling ----------------------------------------------------------

def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(x, grad_out):
    return grad_out * (x > 0)


@dataclass
class PoolCache:
    kind: str
    k: int
    stride: int
    padding: int
    in_shape: tuple
    argmax: np.ndarray = field(default=None, repr=False)


def pool2d_forward(x, kind, k, stride, padding=0):
    """Max or average pooling over k x k windows.

    Max pooling pads with -inf and routes gradient to the first maximum in
    row-major window order; average pooling pads with zeros and counts them.
    """
    if kind not in ("max", "avg"):
        raise ValueError(f"pool kind must be max or avg, got {kind!r}")
    if x.ndim != 4:
        raise DimensionError(f"pool input must be 4-D, got {x.shape}")
    m, c, h, w = x.shape
    if k < 1 or stride < 1 or padding < 0 or padding >= k:
        raise DimensionError(f"invalid pool geometry k={k} stride={stride} padding={padding}")
    hp, wp = h + 2 * padding, w + 2 * padding
    oh, ow = (hp - k) // stride + 1, (wp - k) // stride + 1
    if oh < 1 or ow < 1:
        raise DimensionError(f"pool window {k} does not fit input {h}x{w}")
    cache = PoolCache(kind, k, stride, padding, x.shape)
    if kind == "max":
        xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)), constant_values=-np.inf) if padding else x
        y, cache.argmax = _kernels.maxpool_forward(xp, k, stride, oh, ow)
    else:
        y = _kernels.avgpool_forward(_pad(x, padding), k, stride, oh, ow)
    return y, cache


def pool2d_backward(grad_out, cache):
    m, c, h, w = cache.in_shape
    pd = cache.padding
    hp, wp = h + 2 * pd, w + 2 * pd
    if cache.kind == "max":
        dxp = _kernels.maxpool_backward(grad_out, cache.argmax, hp, wp)
    else:
        dxp = _kernels.avgpool_backward(grad_out, cache.k, cache.stride, hp, wp)
    return np.ascontiguousarray(dxp[:, :, pd:pd + h, pd:pd + w]) if pd else dxp


# -- batch normalization ------------------------------------------------------------

def _bn_axes(x):
    return (0,) if x.ndim == 2 else (0,) + tuple(range(2, x.ndim))


def _bn_shape(x):
    return (1, x.shape[1]) + (1,) * (x.ndim - 2)


def batchnorm_forward(x, state, mode="train"):
    """Per-channel normalization. Train mode updates ``state``'s running stats in place."""
    axes, shp = _bn_axes(x), _bn_shape(x)
    if mode == "train":
        if x.shape[0] < 2:
            raise ValueError("batchnorm in train mode needs at least 2 samples")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        count = x.size // x.shape[1]
        state.running_mean = (1 - state.momentum) * state.running_mean + state.momentum * mean
        state.running_var = (1 - state.momentum) * state.running_var + state.momentum * var * count / (count - 1)
    elif mode == "eval":
        mean, var = state.running_mean, state.running_var
    else:
        raise ValueError(f"unknown batchnorm mode {mode!r}")
    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = (x - mean.reshape(shp)) * inv_std.reshape(shp)
    y = state.gamma.reshape(shp) * xhat + state.beta.reshape(shp)
    return y, (xhat, inv_std, mode)


def batchnorm_backward(grad_out, state, cache):
    xhat, inv_std, mode = cache
    axes, shp = _bn_axes(grad_out), _bn_shape(grad_out)
    dgamma = (grad_out * xhat).sum(axis=axes)
    dbeta = grad_out.sum(axis=axes)
    dxhat = grad_out * state.gamma.reshape(shp)
    if mode == "eval":
        return dxhat * inv_std.reshape(shp), dgamma, dbeta
    count = grad_out.size // grad_out.shape[1]
    dx = (inv_std.reshape(shp) / count) * (
        count * dxhat
        - dxhat.sum(axis=axes).reshape(shp)
        - xhat * (dxhat * xhat).sum(axis=axes).reshape(shp)
    )
    return dx, dgamma, dbeta


# -- dropout ------------------------------------------------------------------

def dropout_mask(shape, rate, seed):
    """Inverted-dropout mask: 0 with probability ``rate``, else 1/(1-rate)."""
    if rate == 0.0:
        return np.ones(shape)
    keep = rng(seed).random(shape) >= rate
    return keep / (1.0 - rate)


def dropout(x, spec, seed):
    if spec.mode == "eval" or spec.rate == 0.0:
        return x.copy()
    return x * dropout_mask(x.shape, spec.rate, seed)


# -- loss ---------------------------------------------------------------------

def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_xent(logits, labels):
    """Mean cross-entropy and its gradient (softmax - onehot) / m."""
    labels = np.asarray(labels)
    m, k = logits.shape
    if labels.shape != (m,):
        raise DimensionError(f"labels shape {labels.shape} != ({m},)")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(logsum - z[np.arange(m), labels]))
    grad = np.exp(z - logsum[:, None])
    grad[np.arange(m), labels] -= 1.0
    return loss, grad / m
