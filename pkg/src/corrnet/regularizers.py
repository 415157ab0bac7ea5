"""Baselines: full-batch CCA (with a finite-difference gradient) and L2Regu."""
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DimensionError, NumericError

EIG_FLOOR = 1e-12


@dataclass
class CcaResult:
    total_correlation: float
    constraint_residual1: float
    constraint_residual2: float
    canonical_correlations: list = field(default_factory=list)


def _inv_sqrt(cov, strict):
    evals, evecs = np.linalg.eigh(cov)
    if strict and evals.min() <= EIG_FLOOR * max(1.0, evals.max()):
        raise NumericError("auto-covariance is singular; use a positive ridge")
    evals = np.maximum(evals, EIG_FLOOR)
    return (evecs / np.sqrt(evals)) @ evecs.T


def _default_ridge(cov):
    return max(1e-4 * np.trace(cov) / cov.shape[0], EIG_FLOOR)


def cca_objective(X1, X2, k=None, ridge=None):
    """Sum of the top-k canonical correlations between two views.

    ``X1`` is (n1, m), ``X2`` is (n2, m); columns are samples and are centered
    here. ``ridge=None`` adds 1e-4 * trace(cov)/n to each auto-covariance;
    ``ridge=0`` adds nothing and raises ``NumericError`` on singularity.
    """
    X1 = np.asarray(X1, dtype=np.float64)
    X2 = np.asarray(X2, dtype=np.float64)
    if X1.ndim != 2 or X2.ndim != 2 or X1.shape[1] != X2.shape[1]:
        raise DimensionError(f"views must be (n, m) with equal m, got {X1.shape} and {X2.shape}")
    n1, m = X1.shape
    n2 = X2.shape[0]
    k = min(n1, n2) if k is None else k
    if not 1 <= k <= min(n1, n2):
        raise ValueError(f"k must be in [1, {min(n1, n2)}], got {k}")

    A = X1 - X1.mean(axis=1, keepdims=True)
    B = X2 - X2.mean(axis=1, keepdims=True)
    s11 = A @ A.T / m
    s22 = B @ B.T / m
    s12 = A @ B.T / m
    r1 = _default_ridge(s11) if ridge is None else ridge
    r2 = _default_ridge(s22) if ridge is None else ridge
    s11 = s11 + r1 * np.eye(n1)
    s22 = s22 + r2 * np.eye(n2)
    strict = ridge is not None and ridge == 0
    w1 = _inv_sqrt(s11, strict)
    w2 = _inv_sqrt(s22, strict)

    U, s, Vt = np.linalg.svd(w1 @ s12 @ w2)
    top = s[:k]
    if not np.all(np.isfinite(top)):
        raise NumericError("non-finite canonical correlations")
    P1 = w1 @ U[:, :k]
    P2 = w2 @ Vt[:k].T
    eye = np.eye(k)
    return CcaResult(
        total_correlation=float(top.sum()),
        constraint_residual1=float(np.linalg.norm(P1.T @ s11 @ P1 - eye)),
        constraint_residual2=float(np.linalg.norm(P2.T @ s22 @ P2 - eye)),
        canonical_correlations=[float(v) for v in top],
    )


def cca_projected_total(X1, X2, W1, W2, k=None, ridge=None):
    """CCA objective of the projected features W1^T X1 and W2^T X2."""
    return cca_objective(W1.T @ X1, W2.T @ X2, k, ridge).total_correlation


def cca_reg_gradient(X1, X2, W1, W2, k=None, ridge=None, h=1e-5):
    """Central-difference gradient of ``cca_projected_total`` w.r.t. W1 and W2.

    Costs two objective evaluations per weight entry, so keep layers tiny.
    """
    W1 = np.array(W1, dtype=np.float64)
    W2 = np.array(W2, dtype=np.float64)
    grads = []
    for W in (W1, W2):
        g = np.zeros_like(W)
        flat, gflat = W.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            fp = cca_projected_total(X1, X2, W1, W2, k, ridge)
            flat[i] = old - h
            fm = cca_projected_total(X1, X2, W1, W2, k, ridge)
            flat[i] = old
            gflat[i] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads[0], grads[1]


def l2regu(y1, y2):
    """Mean squared distance between paired view features, and its gradients."""
    y1 = np.asarray(y1, dtype=np.float64)
    y2 = np.asarray(y2, dtype=np.float64)
    if y1.shape != y2.shape or y1.ndim != 2:
        raise DimensionError(f"l2regu needs matching (m, d) inputs, got {y1.shape} and {y2.shape}")
    m = y1.shape[0]
    diff = y1 - y2
    value = float((diff * diff).sum() / m)
    g = 2.0 * diff / m
    return value, g, -g
