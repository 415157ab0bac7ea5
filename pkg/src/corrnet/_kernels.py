"""Hot inner loops, each in a numba and a pure-numpy flavour.

The public names in this module (``col2im``, ``maxpool_forward``,
``maxpool_backward``, ``avgpool_forward``, ``avgpool_backward``,
``corr_feature_grads``) dispatch to the numba versions unless numba is
missing or ``CORRNET_DISABLE_NUMBA`` is set to a truthy value before import.
``im2col`` always uses numpy, which measured faster. Both flavours stay importable as ``numba_impl`` / ``numpy_impl`` so they can be
tested and benchmarked against each other in a single process.

All loops run sequentially with a fixed reduction order, so results are
bit-reproducible for a given backend.
"""
import os
from types import SimpleNamespace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

_DISABLE = os.environ.get("CORRNET_DISABLE_NUMBA", "").strip().lower() not in ("", "0", "false", "no")
USE_NUMBA = HAVE_NUMBA and not _DISABLE
BACKEND = "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# pure numpy
# ---------------------------------------------------------------------------

def _np_im2col(xp, kh, kw, stride, oh, ow):
    # rows ordered (n, i, j); columns ordered (c, ki, kj) to match filters.reshape(c_out, -1)
    n, c = xp.shape[:2]
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :oh, :ow]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * oh * ow, c * kh * kw)


def _np_col2im(cols, n, c, hp, wp, kh, kw, stride, oh, ow):
    dxp = np.zeros((n, c, hp, wp))
    blocks = cols.reshape(n, oh, ow, c, kh, kw)
    for ki in range(kh):
        for kj in range(kw):
            dxp[:, :, ki:ki + stride * oh:stride, kj:kj + stride * ow:stride] += (
                blocks[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
            )
    return dxp


def _np_windows(xp, k, stride, oh, ow):
    return sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :oh, :ow]


def _np_maxpool_forward(xp, k, stride, oh, ow):
    win = _np_windows(xp, k, stride, oh, ow)
    n, c = xp.shape[:2]
    flat = win.reshape(n, c, oh, ow, k * k)
    arg = np.argmax(flat, axis=-1)  # first maximum in row-major window scan
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    ki, kj = np.divmod(arg, k)
    rows = ki + (np.arange(oh) * stride)[:, None]
    cols = kj + (np.arange(ow) * stride)[None, :]
    return out, (rows * xp.shape[3] + cols).astype(np.int64)


def _np_maxpool_backward(grad_out, argmax, hp, wp):
    n, c = grad_out.shape[:2]
    dxp = np.zeros((n, c, hp * wp))
    np.add.at(
        dxp,
        (np.arange(n)[:, None, None, None], np.arange(c)[None, :, None, None], argmax),
        grad_out,
    )
    return dxp.reshape(n, c, hp, wp)


def _np_avgpool_forward(xp, k, stride, oh, ow):
    return _np_windows(xp, k, stride, oh, ow).mean(axis=(-2, -1))


def _np_avgpool_backward(grad_out, k, stride, hp, wp):
    n, c, oh, ow = grad_out.shape
    dxp = np.zeros((n, c, hp, wp))
    g = grad_out / (k * k)
    for ki in range(k):
        for kj in range(k):
            dxp[:, :, ki:ki + stride * oh:stride, kj:kj + stride * ow:stride] += g
    return dxp


def _np_corr_feature_grads(y1, y2, eps):
    m = y1.shape[0]
    a = y1 - y1.sum(axis=0) / m
    b = y2 - y2.sum(axis=0) / m
    s12 = np.einsum("ij,ij->j", a, b)
    s1 = np.einsum("ij,ij->j", a, a)
    s2 = np.einsum("ij,ij->j", b, b)
    sa = a.sum(axis=0)
    sb = b.sum(axis=0)
    d = s1 * s2 + eps
    root = np.sqrt(d)
    corr = s12 / root
    d_s1 = -0.5 * d ** -1.5 * s2 * s12
    d_s2 = -0.5 * d ** -1.5 * s1 * s12
    d_mu1 = -sb / root + d_s1 * (-2.0) * sa
    d_mu2 = -sa / root + d_s2 * (-2.0) * sb
    # dy1 = b / root + d_mu1 / m + 2 d_s1 a, built in place to spare temporaries
    scratch = np.empty_like(a)
    dy1 = np.multiply(b, 1.0 / root)
    dy1 += np.multiply(a, 2.0 * d_s1, out=scratch)
    dy1 += d_mu1 / m
    dy2 = np.multiply(a, 1.0 / root)
    dy2 += np.multiply(b, 2.0 * d_s2, out=scratch)
    dy2 += d_mu2 / m
    return corr, dy1, dy2


numpy_impl = SimpleNamespace(
    im2col=_np_im2col,
    col2im=_np_col2im,
    maxpool_forward=_np_maxpool_forward,
    maxpool_backward=_np_maxpool_backward,
    avgpool_forward=_np_avgpool_forward,
    avgpool_backward=_np_avgpool_backward,
    corr_feature_grads=_np_corr_feature_grads,
)


# ---------------------------------------------------------------------------
# numba
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def _nb_im2col(xp, kh, kw, stride, oh, ow):
        n, c = xp.shape[0], xp.shape[1]
        cols = np.empty((n * oh * ow, c * kh * kw))
        for b in range(n):
            for i in range(oh):
                for j in range(ow):
                    row = (b * oh + i) * ow + j
                    col = 0
                    for ch in range(c):
                        for ki in range(kh):
                            for kj in range(kw):
                                cols[row, col] = xp[b, ch, i * stride + ki, j * stride + kj]
                                col += 1
        return cols

    @njit(cache=True)
    def _nb_col2im(cols, n, c, hp, wp, kh, kw, stride, oh, ow):
        dxp = np.zeros((n, c, hp, wp))
        for b in range(n):
            for i in range(oh):
                for j in range(ow):
                    row = (b * oh + i) * ow + j
                    col = 0
                    for ch in range(c):
                        for ki in range(kh):
                            for kj in range(kw):
                                dxp[b, ch, i * stride + ki, j * stride + kj] += cols[row, col]
                                col += 1
        return dxp

    @njit(cache=True)
    def _nb_maxpool_forward(xp, k, stride, oh, ow):
        n, c, wp = xp.shape[0], xp.shape[1], xp.shape[3]
        out = np.empty((n, c, oh, ow))
        arg = np.empty((n, c, oh, ow), dtype=np.int64)
        for b in range(n):
            for ch in range(c):
                for i in range(oh):
                    for j in range(ow):
                        r0 = i * stride
                        c0 = j * stride
                        best = xp[b, ch, r0, c0]
                        best_idx = r0 * wp + c0
                        for ki in range(k):
                            for kj in range(k):
                                v = xp[b, ch, r0 + ki, c0 + kj]
                                if v > best:
                                    best = v
                                    best_idx = (r0 + ki) * wp + c0 + kj
                        out[b, ch, i, j] = best
                        arg[b, ch, i, j] = best_idx
        return out, arg

    @njit(cache=True)
    def _nb_maxpool_backward(grad_out, argmax, hp, wp):
        n, c, oh, ow = grad_out.shape
        dxp = np.zeros((n, c, hp * wp))
        for b in range(n):
            for ch in range(c):
                for i in range(oh):
                    for j in range(ow):
                        dxp[b, ch, argmax[b, ch, i, j]] += grad_out[b, ch, i, j]
        return dxp.reshape((n, c, hp, wp))

    @njit(cache=True)
    def _nb_avgpool_forward(xp, k, stride, oh, ow):
        n, c = xp.shape[0], xp.shape[1]
        out = np.empty((n, c, oh, ow))
        inv = 1.0 / (k * k)
        for b in range(n):
            for ch in range(c):
                for i in range(oh):
                    for j in range(ow):
                        s = 0.0
                        for ki in range(k):
                            for kj in range(k):
                                s += xp[b, ch, i * stride + ki, j * stride + kj]
                        out[b, ch, i, j] = s * inv
        return out

    @njit(cache=True)
    def _nb_avgpool_backward(grad_out, k, stride, hp, wp):
        n, c, oh, ow = grad_out.shape
        dxp = np.zeros((n, c, hp, wp))
        inv = 1.0 / (k * k)
        for b in range(n):
            for ch in range(c):
                for i in range(oh):
                    for j in range(ow):
                        g = grad_out[b, ch, i, j] * inv
                        for ki in range(k):
                            for kj in range(k):
                                dxp[b, ch, i * stride + ki, j * stride + kj] += g
        return dxp

    @njit(cache=True)
    def _nb_corr_feature_grads(y1, y2, eps):
        # row-major sweeps with per-column accumulators; columns are independent
        m, n = y1.shape
        mu1 = np.zeros(n)
        mu2 = np.zeros(n)
        for i in range(m):
            for j in range(n):
                mu1[j] += y1[i, j]
                mu2[j] += y2[i, j]
        for j in range(n):
            mu1[j] /= m
            mu2[j] /= m
        s12 = np.zeros(n)
        s1 = np.zeros(n)
        s2 = np.zeros(n)
        sa = np.zeros(n)
        sb = np.zeros(n)
        for i in range(m):
            for j in range(n):
                a = y1[i, j] - mu1[j]
                b = y2[i, j] - mu2[j]
                s12[j] += a * b
                s1[j] += a * a
                s2[j] += b * b
                sa[j] += a
                sb[j] += b
        corr = np.empty(n)
        inv_root = np.empty(n)
        c1 = np.empty(n)
        c2 = np.empty(n)
        k1 = np.empty(n)
        k2 = np.empty(n)
        for j in range(n):
            d = s1[j] * s2[j] + eps
            root = np.sqrt(d)
            corr[j] = s12[j] / root
            d_s1 = -0.5 * d ** -1.5 * s2[j] * s12[j]
            d_s2 = -0.5 * d ** -1.5 * s1[j] * s12[j]
            d_mu1 = -sb[j] / root + d_s1 * (-2.0) * sa[j]
            d_mu2 = -sa[j] / root + d_s2 * (-2.0) * sb[j]
            inv_root[j] = 1.0 / root
            c1[j] = d_mu1 / m
            c2[j] = d_mu2 / m
            k1[j] = d_s1 * 2.0
            k2[j] = d_s2 * 2.0
        dy1 = np.empty((m, n))
        dy2 = np.empty((m, n))
        for i in range(m):
            for j in range(n):
                a = y1[i, j] - mu1[j]
                b = y2[i, j] - mu2[j]
                dy1[i, j] = b * inv_root[j] + c1[j] + k1[j] * a
                dy2[i, j] = a * inv_root[j] + c2[j] + k2[j] * b
        return corr, dy1, dy2

    numba_impl = SimpleNamespace(
        im2col=_nb_im2col,
        col2im=_nb_col2im,
        maxpool_forward=_nb_maxpool_forward,
        maxpool_backward=_nb_maxpool_backward,
        avgpool_forward=_nb_avgpool_forward,
        avgpool_backward=_nb_avgpool_backward,
        corr_feature_grads=_nb_corr_feature_grads,
    )
else:  # pragma: no cover
    numba_impl = None

_active = numba_impl if USE_NUMBA else numpy_impl


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def im2col(xp, kh, kw, stride, oh, ow):
    # numpy's strided copy beats the compiled loop at every size we measured
    # (benchmarks/bench_kernels.py), so this one kernel ignores the backend
    return numpy_impl.im2col(_c(xp), kh, kw, stride, oh, ow)


def col2im(cols, n, c, hp, wp, kh, kw, stride, oh, ow):
    return _active.col2im(_c(cols), n, c, hp, wp, kh, kw, stride, oh, ow)


def maxpool_forward(xp, k, stride, oh, ow):
    return _active.maxpool_forward(_c(xp), k, stride, oh, ow)


def maxpool_backward(grad_out, argmax, hp, wp):
    return _active.maxpool_backward(_c(grad_out), np.ascontiguousarray(argmax, dtype=np.int64), hp, wp)


def avgpool_forward(xp, k, stride, oh, ow):
    return _active.avgpool_forward(_c(xp), k, stride, oh, ow)


def avgpool_backward(grad_out, k, stride, hp, wp):
    return _active.avgpool_backward(_c(grad_out), k, stride, hp, wp)


def corr_feature_grads(y1, y2, eps):
    """Per-column correlation and its gradient w.r.t. both feature matrices.

    ``y1`` and ``y2`` are (m, n): column j holds the m batch samples of one
    neuron's two internal features. Returns ``(corr[n], dy1[m, n], dy2[m, n])``.
    """
    return _active.corr_feature_grads(_c(y1), _c(y2), float(eps))
