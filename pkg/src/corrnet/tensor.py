"""Dense float64 arrays and the few kernels everything else builds on.

Tensors are plain ``numpy.ndarray`` objects with dtype float64 and C order.
Randomness always comes from ``numpy.random.Generator(PCG64(seed))``.
"""
import numpy as np

from .exceptions import DimensionError, NumericError


def as_tensor(x, name="tensor"):
    """Return ``x`` as a C-contiguous float64 array, refusing NaN/Inf."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    check_finite(arr, name)
    return arr


def check_finite(arr, name="tensor"):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite values")
    return arr


def rng(seed):
    """The package-wide random generator for a given integer seed."""
    return np.random.Generator(np.random.PCG64(seed))


def matmul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"inner dimensions differ: {a.shape} x {b.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        out = a @ b
    return check_finite(out, "matmul result")


def batch_mean_var(v):
    """Mean and the *sum* of squared deviations of a 1-D sample.

    The second value has no 1/m factor; the correlation regularizer divides
    one such sum by another, so the batch size cancels.
    """
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("batch_mean_var needs at least one value")
    mean = v.sum() / v.size
    dev = v - mean
    return float(mean), float(np.dot(dev, dev))


def seeded_fill(shape, distribution=("gaussian", 0.0, 1.0), seed=0):
    """Fill a new tensor of ``shape`` from a named distribution.

    ``distribution`` is ``("gaussian", mean, std)`` or ``("uniform", low, high)``.
    Identical arguments give bit-identical output.
    """
    kind, p1, p2 = distribution
    g = rng(seed)
    if kind == "gaussian":
        if p2 < 0:
            raise ValueError(f"gaussian std must be >= 0, got {p2}")
        return g.normal(p1, p2, size=shape)
    if kind == "uniform":
        if p1 > p2:
            raise ValueError(f"uniform bounds reversed: {p1} > {p2}")
        return g.uniform(p1, p2, size=shape)
    raise ValueError(f"unknown distribution {kind!r}")
