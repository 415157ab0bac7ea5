"""Neuron-wise correlation-maximizing regularizer and the CorrReg layers.

A layer's inputs are split into two disjoint views. For every output neuron
the two partial pre-activations ``y1 = x1 @ w1`` and ``y2 = x2 @ w2`` are
collected over the mini-batch and their correlation

    Corr = sum_i (y1_i - mu1)(y2_i - mu2) / sqrt(s1 * s2 + eps)

is maximized, where ``s1``, ``s2`` are *sums* of squared deviations. The
forward pass of a CorrReg layer is unchanged; only the backward pass picks up
``-lambda * dCorr``.
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import _kernels
from .exceptions import DimensionError, NumericError
from .layers import ConvParams, FcParams, conv2d_backward, conv2d_forward, fc_backward
from .tensor import batch_mean_var, rng

DEFAULT_EPS = 1e-8


@dataclass(frozen=True)
class TwoWayPartition:
    idx1: tuple
    idx2: tuple

    def __post_init__(self):
        i1 = tuple(sorted(int(i) for i in self.idx1))
        i2 = tuple(sorted(int(i) for i in self.idx2))
        if not i1 or not i2:
            raise ValueError("both partition halves must be non-empty")
        if set(i1) & set(i2):
            raise ValueError("partition halves overlap")
        object.__setattr__(self, "idx1", i1)
        object.__setattr__(self, "idx2", i2)

    @property
    def n_in(self):
        return len(self.idx1) + len(self.idx2)

    def check_covers(self, n_in):
        if self.n_in != n_in or set(self.idx1 + self.idx2) != set(range(n_in)):
            raise DimensionError(f"partition does not cover {n_in} inputs")

    def selectors(self):
        """Index objects for both halves; contiguous halves become slices."""
        return _selector(self.idx1), _selector(self.idx2)


def _selector(idx):
    if idx[-1] - idx[0] + 1 == len(idx):
        return slice(idx[0], idx[-1] + 1)
    return np.asarray(idx, dtype=np.int64)


@dataclass(frozen=True)
class CorrRegConfig:
    lam: float = 0.0
    eps: float = DEFAULT_EPS
    n_reg: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.eps <= 0:
            raise ValueError(f"eps must be > 0, got {self.eps}")
        if self.n_reg < 1:
            raise ValueError(f"n_reg must be >= 1, got {self.n_reg}")


def make_partitions(n_in, n_reg=1, seed=0):
    """Two-way splits of ``n_in`` inputs.

    One partition is first half / second half (the first half takes the
    extra index when ``n_in`` is odd). More than one partition means
    independent seeded shuffles, each cut the same way.
    """
    if n_in < 2:
        raise ValueError(f"need at least 2 inputs to partition, got {n_in}")
    if n_reg < 1:
        raise ValueError(f"n_reg must be >= 1, got {n_reg}")
    half = (n_in + 1) // 2
    if n_reg == 1:
        return [TwoWayPartition(tuple(range(half)), tuple(range(half, n_in)))]
    g = rng(seed)
    parts = []
    for _ in range(n_reg):
        perm = g.permutation(n_in)
        parts.append(TwoWayPartition(tuple(perm[:half]), tuple(perm[half:])))
    return parts


@dataclass(frozen=True)
class CorrBatchStats:
    y1: np.ndarray
    y2: np.ndarray
    mu1: float
    mu2: float
    sigma1_sq: float
    sigma2_sq: float
    eps: float

    @classmethod
    def from_features(cls, y1, y2, eps=DEFAULT_EPS):
        y1 = np.asarray(y1, dtype=np.float64).ravel()
        y2 = np.asarray(y2, dtype=np.float64).ravel()
        if y1.shape != y2.shape:
            raise DimensionError(f"feature lengths differ: {y1.size} vs {y2.size}")
        if y1.size < 2:
            raise ValueError("correlation needs a batch of at least 2")
        if not (np.all(np.isfinite(y1)) and np.all(np.isfinite(y2))):
            raise NumericError("non-finite internal features")
        mu1, s1 = batch_mean_var(y1)
        mu2, s2 = batch_mean_var(y2)
        return cls(y1, y2, mu1, mu2, s1, s2, float(eps))


def corr_value(stats):
    """The regularizer for one neuron. With eps=0 this is the Pearson coefficient."""
    num = float(np.dot(stats.y1 - stats.mu1, stats.y2 - stats.mu2))
    den = np.sqrt(stats.sigma1_sq * stats.sigma2_sq + stats.eps)
    val = num / den if den > 0 else np.nan
    if not np.isfinite(val):
        raise NumericError("correlation is undefined (zero variance with eps=0?)")
    # rounding can overshoot the Cauchy-Schwarz bound by an ulp
    return min(1.0, max(-1.0, val))


def corr(y1, y2, eps=DEFAULT_EPS):
    return corr_value(CorrBatchStats.from_features(y1, y2, eps))


def corr_grads(x1, x2, w1, w2, eps=DEFAULT_EPS):
    """Closed-form gradients of one neuron's correlation.

    Returns ``(dCorr/dw1, dCorr/dw2, dCorr/dx1, dCorr/dx2)`` where the input
    gradients have one row per batch sample. Intermediates follow the chain
    sigma^2 -> mu -> y -> (x, w), unsimplified.
    """
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    w1 = np.asarray(w1, dtype=np.float64)
    w2 = np.asarray(w2, dtype=np.float64)
    if x1.ndim != 2 or x2.ndim != 2 or x1.shape[0] != x2.shape[0]:
        raise DimensionError(f"x1 {x1.shape} and x2 {x2.shape} must be (m, n) with equal m")
    if w1.shape != (x1.shape[1],) or w2.shape != (x2.shape[1],):
        raise DimensionError(f"weights {w1.shape}/{w2.shape} do not match inputs {x1.shape}/{x2.shape}")
    m = x1.shape[0]
    if m < 2:
        raise ValueError("correlation needs a batch of at least 2")

    y1 = x1 @ w1
    y2 = x2 @ w2
    mu1 = y1.sum() / m
    mu2 = y2.sum() / m
    dev1 = y1 - mu1
    dev2 = y2 - mu2
    sigma1_sq = np.dot(dev1, dev1)
    sigma2_sq = np.dot(dev2, dev2)
    cross = np.dot(dev1, dev2)
    denom_sq = sigma1_sq * sigma2_sq + eps
    denom = np.sqrt(denom_sq)

    d_sigma1_sq = -0.5 * denom_sq ** -1.5 * sigma2_sq * cross
    d_sigma2_sq = -0.5 * denom_sq ** -1.5 * sigma1_sq * cross
    d_mu1 = -dev2.sum() / denom + d_sigma1_sq * (-2.0) * dev1.sum()
    d_mu2 = -dev1.sum() / denom + d_sigma2_sq * (-2.0) * dev2.sum()
    d_y1 = dev2 / denom + d_mu1 / m + d_sigma1_sq * 2.0 * dev1
    d_y2 = dev1 / denom + d_mu2 / m + d_sigma2_sq * 2.0 * dev2
    d_x1 = np.outer(d_y1, w1)
    d_x2 = np.outer(d_y2, w2)
    d_w1 = (d_y1[:, None] * x1).sum(axis=0)
    d_w2 = (d_y2[:, None] * x2).sum(axis=0)

    for g in (d_w1, d_w2, d_x1, d_x2):
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite correlation gradient")
    return d_w1, d_w2, d_x1, d_x2


# -- layer-level view machinery --------------------------------------------------
#
# Both CorrReg-FC and CorrReg-conv go through the same two helpers:
# view_features() gives the (m, n_samples_per_batch_item) internal features of
# each half, and view_backward() back-propagates separate upstream gradients
# through each half. Since z = y1 + y2 + b, calling view_backward with
# g1 = g2 = grad_out reproduces the plain layer backward.

@lru_cache(maxsize=256)
def _covers(part, n_in):
    part.check_covers(n_in)
    return True


def _check_parts(parts, n_in):
    if not parts:
        raise ValueError("at least one partition required")
    for part in parts:
        _covers(part, n_in)


def _n_in(p):
    return p.W.shape[0] if isinstance(p, FcParams) else p.filters.shape[1]


def view_features(x, p, part):
    """Internal features (y1, y2), each flattened to (m, n) with n = neurons x positions."""
    s1, s2 = part.selectors()
    if isinstance(p, FcParams):
        return x[:, s1] @ p.W[s1], x[:, s2] @ p.W[s2]
    zero = np.zeros_like(p.bias)
    m = x.shape[0]
    y1 = conv2d_forward(x[:, s1], ConvParams(p.filters[:, s1], zero, p.stride, p.padding))
    y2 = conv2d_forward(x[:, s2], ConvParams(p.filters[:, s2], zero, p.stride, p.padding))
    return y1.reshape(m, -1), y2.reshape(m, -1)


def view_backward(x, p, part, g1, g2):
    """Back-propagate per-view upstream gradients; returns (grad_x, grad_weight)."""
    s1, s2 = part.selectors()
    grad_x = np.empty_like(x)
    if isinstance(p, FcParams):
        grad_w = np.empty_like(p.W)
        for s, g in ((s1, g1), (s2, g2)):
            if isinstance(s, slice):
                # write straight into the output blocks; avoids temporaries
                np.matmul(g, p.W[s].T, out=grad_x[:, s])
                np.matmul(x[:, s].T, g, out=grad_w[s])
            else:
                grad_x[:, s] = g @ p.W[s].T
                grad_w[s] = x[:, s].T @ g
        return grad_x, grad_w
    grad_w = np.empty_like(p.filters)
    zero = np.zeros_like(p.bias)
    out_shape = (x.shape[0], p.filters.shape[0]) + p.out_size(*x.shape[2:])
    for s, g in ((s1, g1), (s2, g2)):
        sub = ConvParams(p.filters[:, s], zero, p.stride, p.padding)
        gx, gf, _ = conv2d_backward(np.ascontiguousarray(x[:, s]), sub, g.reshape(out_shape))
        grad_x[:, s] = gx
        grad_w[:, s] = gf
    return grad_x, grad_w


def layer_corr(x, p, part, eps=DEFAULT_EPS):
    """Correlation of every (neuron, position) for one partition, shape (n,)."""
    y1, y2 = view_features(x, p, part)
    c, _, _ = _kernels.corr_feature_grads(y1, y2, eps)
    return c


def bias_grad(p, grad_out):
    if isinstance(p, FcParams):
        return grad_out.sum(axis=0)
    return grad_out.sum(axis=(0, 2, 3))


def _corrreg_backward(x, p, grad_out, cfg, parts):
    _check_parts(parts, _n_in(p))
    m = x.shape[0]
    if m < 2:
        raise ValueError("CorrReg needs a batch of at least 2")
    gflat = grad_out.reshape(m, -1)
    grad_x = grad_w = None
    for part in parts:
        y1, y2 = view_features(x, p, part)
        _, dy1, dy2 = _kernels.corr_feature_grads(y1, y2, cfg.eps)
        dy1 *= -cfg.lam
        dy1 += gflat
        dy2 *= -cfg.lam
        dy2 += gflat
        gx, gw = view_backward(x, p, part, dy1, dy2)
        if grad_x is None:
            grad_x, grad_w = gx, gw
        else:
            grad_x += gx
            grad_w += gw
    if len(parts) > 1:
        grad_x /= len(parts)
        grad_w /= len(parts)
    # any NaN/Inf entry makes the sum non-finite; cheaper than an elementwise mask
    if not np.isfinite(grad_x.sum() + grad_w.sum()):
        raise NumericError("non-finite CorrReg gradient")
    return grad_x, grad_w, bias_grad(p, grad_out)


def corrreg_fc_backward(x, p, grad_out, cfg, parts):
    """fc backward of ``loss - lam * sum_j Corr_j``; averages over partitions."""
    if x.ndim != 2 or grad_out.shape != (x.shape[0], p.W.shape[1]):
        raise DimensionError(f"fc backward shapes: x {x.shape}, W {p.W.shape}, grad {grad_out.shape}")
    if cfg.lam == 0:
        return fc_backward(x, p, grad_out)
    return _corrreg_backward(x, p, grad_out, cfg, parts)


def corrreg_conv_backward(x, p, grad_out, cfg, parts):
    """Conv backward with the regularizer applied per (channel, row, col) location."""
    if p.filters.shape[1] < 2:
        raise ValueError("CorrReg conv needs at least 2 input channels")
    if cfg.lam == 0:
        return conv2d_backward(x, p, grad_out)
    return _corrreg_backward(x, p, grad_out, cfg, parts)


def corrreg_penalty_total(x, p, cfg, parts):
    """Sum of correlations over all regularized neurons (and positions), partition-averaged."""
    _check_parts(parts, _n_in(p))
    total = 0.0
    for part in parts:
        total += float(layer_corr(x, p, part, cfg.eps).sum())
    return total / len(parts)
