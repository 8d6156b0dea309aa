"""
Dense-vector kernel shared by every scoring and loss function.

All arithmetic is float64. Functions accept a single vector or a stack of
row vectors where that makes sense (softmax, entropy, normalize_rows).
"""

import numpy as np

from src.errors import DimensionMismatchError, NonFiniteInputError, ZeroVectorError

ZERO_NORM = 1e-12

# Unit vectors whose norm is already within this many ulps of 1 are returned
# as-is, so normalize(normalize(v)) == normalize(v) bitwise.
_UNIT_TOLERANCE = 8 * np.finfo(np.float64).eps


def normalize(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    norm = float(np.linalg.norm(v))

    if not np.isfinite(norm):
        raise NonFiniteInputError("cannot normalize a vector with non-finite entries")
    if norm < ZERO_NORM:
        raise ZeroVectorError(f"vector norm {norm:.3g} is below {ZERO_NORM:g}")

    if abs(norm - 1.0) <= _UNIT_TOLERANCE:
        return v.copy()
    return v / norm


def normalize_rows(matrix) -> np.ndarray:
    """Row-wise `normalize`; raises ZeroVector naming the first bad row."""
    matrix = np.asarray(matrix, dtype=np.float64)
    norms = np.linalg.norm(matrix, axis=1)

    bad = np.flatnonzero(norms < ZERO_NORM)
    if bad.size:
        raise ZeroVectorError(f"row {int(bad[0])} has norm {norms[bad[0]]:.3g}")

    norms = np.where(np.abs(norms - 1.0) <= _UNIT_TOLERANCE, 1.0, norms)
    return matrix / norms[:, None]


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise DimensionMismatchError(f"cosine of d={u.shape} against d={v.shape}")
    return float(np.dot(u, v))


def softmax(logits, tau: float = 1.0) -> np.ndarray:
    """Temperature softmax over the last axis, max-stabilized."""
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")

    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise NonFiniteInputError("softmax received non-finite logits")

    z = z / tau
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def logsumexp(z, axis: int = -1) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    m = z.max(axis=axis, keepdims=True)
    out = m + np.log(np.exp(z - m).sum(axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


def entropy(p):
    """Shannon entropy in nats over the last axis, with 0·ln0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    safe = np.where(p > 0, p, 1.0)
    h = -(p * np.log(safe)).sum(axis=-1)
    h = np.maximum(h, 0.0)
    if h.ndim == 0:
        return float(h)
    return h
