"""Dense float64 primitives and numerically stable probability transforms.

Every public function widens its inputs to float64 and rejects NaN/Inf.
Argmax ties always resolve to the lowest index.
"""

from __future__ import annotations

import math

import numpy as np

from osrcal.errors import InvalidArgumentError

PROB_SUM_ATOL = 1e-9


def as_matrix(data, name: str = "logits", min_cols: int = 1) -> np.ndarray:
    """Return `data` as a finite 2-D float64 array, or raise."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise InvalidArgumentError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[1] < min_cols:
        raise InvalidArgumentError(f"{name} needs at least {min_cols} columns, got {arr.shape[1]}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} contains NaN or Inf")
    return arr


def as_logits(data) -> np.ndarray:
    arr = as_matrix(data, "logits", min_cols=2)
    if arr.shape[0] < 1:
        raise InvalidArgumentError("logits must have at least one row")
    return arr


def check_temperature(temperature: float) -> float:
    t = float(temperature)
    if not math.isfinite(t) or t <= 0.0:
        raise InvalidArgumentError(f"temperature must be positive and finite, got {temperature!r}")
    return t


def check_probs(probs, stochastic: bool = False, name: str = "probs") -> np.ndarray:
    """Validate a probability matrix (entries in [0, 1]).

    With ``stochastic=True`` every row must sum to one; otherwise rows may be
    subnormal (sum <= 1) or, for OSR-extended matrices, slightly above one.
    """
    arr = as_matrix(data=probs, name=name)
    if np.any(arr < 0.0) or np.any(arr > 1.0 + PROB_SUM_ATOL):
        raise InvalidArgumentError(f"{name} entries must lie in [0, 1]")
    if stochastic and arr.shape[0]:
        sums = arr.sum(axis=1)
        bad = np.flatnonzero(np.abs(sums - 1.0) > PROB_SUM_ATOL)
        if bad.size:
            raise InvalidArgumentError(f"{name} row {int(bad[0])} sums to {sums[bad[0]]!r}, expected 1")
    return arr


def logsumexp(row) -> float:
    """log(sum(exp(row))) with max subtraction, so large entries do not overflow."""
    x = np.asarray(row, dtype=np.float64).ravel()
    if x.size == 0:
        raise InvalidArgumentError("logsumexp of an empty vector")
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError("logsumexp input contains NaN or Inf")
    m = x.max()
    return float(m + np.log(np.sum(np.exp(x - m))))


def logsumexp_rows(matrix: np.ndarray) -> np.ndarray:
    """Row-wise logsumexp of a finite 2-D array (no validation)."""
    m = matrix.max(axis=1, keepdims=True)
    return (m + np.log(np.sum(np.exp(matrix - m), axis=1, keepdims=True)))[:, 0]


def softmax(logits, temperature: float = 1.0) -> np.ndarray:
    """Row-wise softmax of ``logits / temperature``.

    Args:
        logits: N x K matrix of finite scores (a single row is accepted).
        temperature: Positive scale; larger values flatten the distribution.

    Returns:
        Row-stochastic N x K float64 matrix.
    """
    t = check_temperature(temperature)
    z = as_logits(logits) / t
    return _softmax_rows(z)


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def argmax_row(row) -> tuple[int, float]:
    x = np.asarray(row, dtype=np.float64).ravel()
    if x.size == 0:
        raise InvalidArgumentError("argmax of an empty vector")
    # np.argmax returns the first maximal index.
    i = int(np.argmax(x))
    return i, float(x[i])
