"""Calibration and accuracy metrics for closed-set and open-set predictions.

Labels are compact: known classes are 0..K-1 and every unknown sample carries
the single placeholder index K. Open-set probability matrices have K+1
columns with the unknown class last.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from osrcal.errors import InvalidArgumentError
from osrcal.tensor import as_matrix, check_probs

DEFAULT_BINS = 15


@dataclass(frozen=True)
class ReliabilityBin:
    lo: float
    hi: float
    count: int
    avg_conf: float | None
    accuracy: float | None

    def to_dict(self) -> dict:
        return {
            "lo": self.lo,
            "hi": self.hi,
            "count": self.count,
            "avg_conf": self.avg_conf,
            "accuracy": self.accuracy,
        }


@dataclass(frozen=True)
class ReliabilityTable:
    """Per-bin confidence/accuracy summary behind a reliability diagram.

    Bin m covers ((m-1)/M, m/M]; empty bins report ``None`` for both averages.
    """

    bins: tuple[ReliabilityBin, ...]

    @property
    def num_bins(self) -> int:
        return len(self.bins)

    @property
    def total(self) -> int:
        return sum(b.count for b in self.bins)

    def to_list(self) -> list[dict]:
        return [b.to_dict() for b in self.bins]

    @classmethod
    def from_list(cls, rows: list[dict]) -> "ReliabilityTable":
        bins = []
        for r in rows:
            bins.append(
                ReliabilityBin(
                    lo=float(r["lo"]),
                    hi=float(r["hi"]),
                    count=int(r["count"]),
                    avg_conf=None if r["avg_conf"] is None else float(r["avg_conf"]),
                    accuracy=None if r["accuracy"] is None else float(r["accuracy"]),
                )
            )
        return cls(tuple(bins))


def _labels(labels, n: int, max_label: int, name: str = "labels") -> np.ndarray:
    y = np.asarray(labels)
    if y.ndim != 1 or y.shape[0] != n:
        raise InvalidArgumentError(f"{name} length {y.shape} does not match {n} samples")
    if y.size and not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.mod(y, 1) == 0):
            raise InvalidArgumentError(f"{name} must be integers")
    y = y.astype(np.int64)
    bad = np.flatnonzero((y < 0) | (y > max_label))
    if bad.size:
        raise InvalidArgumentError(f"{name}[{int(bad[0])}] = {int(y[bad[0]])} outside [0, {max_label}]")
    return y


def bin_index(confidence: np.ndarray, num_bins: int) -> np.ndarray:
    """Zero-based bin of each confidence: ceil(c*M) - 1, with c = 0 in the first bin."""
    idx = np.ceil(confidence * num_bins).astype(np.int64) - 1
    return np.clip(idx, 0, num_bins - 1)


def ece(probs, labels, num_bins: int = DEFAULT_BINS, predictions=None) -> tuple[float, ReliabilityTable]:
    """Expected calibration error with equal-width confidence bins.

    By default the prediction is the row argmax and its confidence the row
    maximum. Open-set methods whose decision is not the argmax (thresholding
    flags rows as unknown) pass `predictions`; confidence is then the
    probability the row assigns to the predicted column.

    Returns:
        The ECE value and the reliability table it was computed from.
    """
    if not isinstance(num_bins, (int, np.integer)) or num_bins < 1:
        raise InvalidArgumentError(f"num_bins must be a positive integer, got {num_bins!r}")
    p = check_probs(probs)
    n, c = p.shape
    if n == 0:
        raise InvalidArgumentError("ece of an empty prediction set")
    y = _labels(labels, n, c)
    if predictions is None:
        pred = np.argmax(p, axis=1)
        conf = p.max(axis=1)
    else:
        pred = _labels(predictions, n, c - 1, "predictions")
        conf = p[np.arange(n), pred]
    correct = (pred == y).astype(np.float64)
    idx = bin_index(conf, num_bins)

    counts = np.bincount(idx, minlength=num_bins)
    conf_sum = np.bincount(idx, weights=conf, minlength=num_bins)
    acc_sum = np.bincount(idx, weights=correct, minlength=num_bins)

    total = 0.0
    bins = []
    for m in range(num_bins):
        cnt = int(counts[m])
        if cnt:
            avg_conf = float(conf_sum[m] / cnt)
            acc = float(acc_sum[m] / cnt)
            total += cnt / n * abs(acc - avg_conf)
        else:
            avg_conf = acc = None
        bins.append(ReliabilityBin(m / num_bins, (m + 1) / num_bins, cnt, avg_conf, acc))
    return float(total), ReliabilityTable(tuple(bins))


def one_hot(labels: np.ndarray, num_cols: int) -> np.ndarray:
    out = np.zeros((labels.shape[0], num_cols))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def brier_closed(probs, labels) -> float:
    """Multi-class Brier score on known-class samples, in [0, 2]."""
    p = check_probs(probs, stochastic=True)
    n, k = p.shape
    if n == 0:
        raise InvalidArgumentError("brier of an empty prediction set")
    y = _labels(labels, n, k)
    if np.any(y == k):
        raise InvalidArgumentError("closed-set Brier score is undefined for unknown-labelled samples")
    return float(np.mean(np.sum((p - one_hot(y, k)) ** 2, axis=1)))


def unknown_probability(prob_row) -> float:
    """Probability that no known class is correct: the product of (1 - p_i)."""
    p = np.asarray(prob_row, dtype=np.float64).ravel()
    if np.any(~np.isfinite(p)) or np.any(p < 0.0) or np.any(p > 1.0):
        raise InvalidArgumentError("probabilities must lie in [0, 1]")
    return float(np.prod(1.0 - p))


def extend_osr(probs, renormalize: bool = False) -> np.ndarray:
    """Append an unknown-class column holding the product of (1 - p_i) per row.

    By default the K+1 rows are left unnormalized, so they may sum to more
    than one; ``renormalize=True`` divides each row by its sum.
    """
    p = as_matrix(probs, "probs")
    if np.any(p < 0.0) or np.any(p > 1.0):
        raise InvalidArgumentError("probabilities must lie in [0, 1]")
    unknown = np.prod(1.0 - p, axis=1)
    out = np.concatenate([p, unknown[:, None]], axis=1)
    if renormalize and out.shape[0]:
        out = out / out.sum(axis=1, keepdims=True)
    return out


def brier_osr(probs_osr, labels, columns: str = "k+1") -> float:
    """Open-set Brier score against one-hot targets over K+1 classes.

    Args:
        probs_osr: N x (K+1) matrix, unknown class last.
        labels: Compact labels in [0, K]; K marks an unknown sample.
        columns: ``"k+1"`` sums the squared error over every column (default);
            ``"k"`` sums over the first K columns only, so a missed unknown is
            never penalized through the unknown column.
    """
    if columns not in ("k", "k+1"):
        raise InvalidArgumentError(f"columns must be 'k' or 'k+1', got {columns!r}")
    p = np.asarray(probs_osr, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] < 3:
        raise InvalidArgumentError(f"open-set probabilities must be N x (K+1) with K >= 2, got {p.shape}")
    p = check_probs(p, name="probs_osr")
    n, width = p.shape
    if n == 0:
        raise InvalidArgumentError("brier of an empty prediction set")
    y = _labels(labels, n, width - 1)
    sq = (p - one_hot(y, width)) ** 2
    if columns == "k":
        sq = sq[:, :-1]
    return float(np.mean(np.sum(sq, axis=1)))


def accuracy_closed(probs, labels) -> float:
    p = as_matrix(probs, "probs")
    y = _labels(labels, p.shape[0], p.shape[1])
    if y.size == 0:
        raise InvalidArgumentError("accuracy of an empty prediction set")
    return float(np.mean(np.argmax(p, axis=1) == y))


def accuracy_osr(pred_labels, true_labels) -> float:
    """Fraction of exact matches; the unknown index counts as its own class."""
    pred = np.asarray(pred_labels)
    true = np.asarray(true_labels)
    if pred.shape != true.shape or pred.ndim != 1:
        raise InvalidArgumentError(f"label vectors differ in shape: {pred.shape} vs {true.shape}")
    if pred.size == 0:
        raise InvalidArgumentError("accuracy of an empty prediction set")
    return float(np.mean(pred.astype(np.int64) == true.astype(np.int64)))

