"""Open-set prediction: max-probability thresholding and OpenMax.

OpenMax fits one extreme-value tail per known class to the largest distances
between correctly classified training activations and that class's mean
activation vector (MAV). At test time the top-ranked activations are
discounted by the tail CDF of their distance, and the removed mass becomes
the activation of an explicit unknown class.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from osrcal.errors import FitError, InvalidArgumentError, StateError
from osrcal.tensor import as_matrix, check_probs, softmax

DEFAULT_TAIL_SIZE = 20
MIN_TAIL_SIZE = 5
DEFAULT_ALPHA = 3
DEFAULT_RETAIN_Q = 0.95
MIN_THRESHOLD_SAMPLES = 20
DISTANCES = ("euclidean", "cosine")

_K_LO, _K_HI, _K_TOL = 1e-3, 1e3, 1e-10


@dataclass(frozen=True)
class ThresholdRule:
    tau: float
    selection: str = "fixed"
    retain_q: float | None = None

    def __post_init__(self):
        if not math.isfinite(self.tau):
            raise InvalidArgumentError("tau must be finite")
        # Out-of-range thresholds are clamped rather than rejected.
        object.__setattr__(self, "tau", min(max(float(self.tau), 0.0), 1.0))

    def to_dict(self) -> dict:
        return {"tau": self.tau, "selection": self.selection, "retain_q": self.retain_q}

    @classmethod
    def from_dict(cls, d: dict) -> "ThresholdRule":
        q = d.get("retain_q")
        return cls(float(d["tau"]), d.get("selection", "fixed"), None if q is None else float(q))


def threshold_predict(probs, rule: ThresholdRule | float) -> np.ndarray:
    """Argmax label when the top probability reaches tau, else the unknown index K."""
    if not isinstance(rule, ThresholdRule):
        rule = ThresholdRule(float(rule))
    p = check_probs(probs, stochastic=True)
    k = p.shape[1]
    labels = np.argmax(p, axis=1)
    return np.where(p.max(axis=1) >= rule.tau, labels, k).astype(np.int64)


def choose_threshold(val_probs, retain_q: float = DEFAULT_RETAIN_Q) -> float:
    """Pick tau so that at least `retain_q` of known validation samples stay known.

    tau is the lower-interpolated (1 - q)-quantile of per-row max probability.
    """
    if not 0.0 < retain_q <= 1.0:
        raise InvalidArgumentError(f"retain_q must lie in (0, 1], got {retain_q!r}")
    p = check_probs(val_probs, stochastic=True)
    if p.shape[0] < MIN_THRESHOLD_SAMPLES:
        raise FitError(f"need at least {MIN_THRESHOLD_SAMPLES} validation samples to choose a threshold")
    conf = p.max(axis=1)
    return float(np.quantile(conf, 1.0 - retain_q, method="lower"))


# Weibull tails


@dataclass(frozen=True)
class WeibullTailModel:
    shape: float
    scale: float
    tail_size: int
    residual: float = 0.0

    def to_dict(self) -> dict:
        return {"shape": self.shape, "scale": self.scale, "tail_size": self.tail_size, "residual": self.residual}

    @classmethod
    def from_dict(cls, d: dict) -> "WeibullTailModel":
        return cls(float(d["shape"]), float(d["scale"]), int(d["tail_size"]), float(d.get("residual", 0.0)))


def weibull_score_equation(k: float, log_d: np.ndarray) -> float:
    """Profile-likelihood score for the Weibull shape.

    g(k) = sum(d^k ln d) / sum(d^k) - 1/k - mean(ln d), evaluated with the
    d^k weights formed in log space. g is increasing in k and its root is the
    maximum-likelihood shape.
    """
    a = k * log_d
    w = np.exp(a - a.max())
    return float(np.dot(w, log_d) / w.sum() - 1.0 / k - log_d.mean())


def fit_weibull_tail(distances, tail_size: int = DEFAULT_TAIL_SIZE) -> WeibullTailModel:
    """Maximum-likelihood two-parameter Weibull fit to the `tail_size` largest distances.

    The shape is found by bisection on [1e-3, 1e3] down to a 1e-10 bracket;
    the scale follows in closed form as (mean d^k)^(1/k).
    """
    d = np.asarray(distances, dtype=np.float64).ravel()
    if tail_size < MIN_TAIL_SIZE:
        raise InvalidArgumentError(f"tail_size must be at least {MIN_TAIL_SIZE}, got {tail_size}")
    if d.size < tail_size:
        raise FitError(f"need at least {tail_size} distances, got {d.size}")
    if not np.all(np.isfinite(d)) or np.any(d <= 0.0):
        raise FitError("distances must be finite and strictly positive")
    tail = np.sort(d)[-tail_size:]
    if tail[0] == tail[-1]:
        raise FitError("degenerate tail: all distances are equal")
    # g is scale invariant, so work on d / max(d) to keep d^k bounded.
    top = tail[-1]
    log_d = np.log(tail / top)

    lo, hi = _K_LO, _K_HI
    g_lo = weibull_score_equation(lo, log_d)
    g_hi = weibull_score_equation(hi, log_d)
    if g_lo > 0.0 or g_hi < 0.0:
        raise FitError(f"Weibull shape outside [{_K_LO}, {_K_HI}]; tail is too flat or too spread")
    while hi - lo > _K_TOL:
        mid = 0.5 * (lo + hi)
        if weibull_score_equation(mid, log_d) < 0.0:
            lo = mid
        else:
            hi = mid
    k = 0.5 * (lo + hi)
    a = k * log_d
    m = a.max()
    scale = top * math.exp((m + math.log(np.mean(np.exp(a - m)))) / k)
    return WeibullTailModel(k, scale, tail_size, weibull_score_equation(k, log_d))


def weibull_cdf(d, model: WeibullTailModel):
    """CDF of the fitted tail; 0 for d <= 0. Accepts scalars or arrays."""
    x = np.asarray(d, dtype=np.float64)
    pos = np.maximum(x, 0.0) / model.scale
    out = np.where(x > 0.0, -np.expm1(-(pos**model.shape)), 0.0)
    return float(out) if out.ndim == 0 else out


def weibull_loglik(samples, shape: float, scale: float) -> float:
    x = np.asarray(samples, dtype=np.float64) / scale
    return float(np.sum(np.log(shape / scale) + (shape - 1.0) * np.log(x) - x**shape))


# OpenMax


def pairwise_distance(rows: np.ndarray, centers: np.ndarray, metric: str = "euclidean") -> np.ndarray:
    """N x K distances between activation rows and class centers."""
    if metric == "euclidean":
        diff = rows[:, None, :] - centers[None, :, :]
        return np.sqrt(np.sum(diff * diff, axis=2))
    if metric == "cosine":
        rn = np.linalg.norm(rows, axis=1, keepdims=True)
        cn = np.linalg.norm(centers, axis=1, keepdims=True)
        denom = rn * cn.T
        sim = np.divide(rows @ centers.T, denom, out=np.zeros((rows.shape[0], centers.shape[0])), where=denom > 0)
        return np.clip(1.0 - sim, 0.0, 2.0)
    raise InvalidArgumentError(f"unknown distance {metric!r}; expected one of {DISTANCES}")


@dataclass(frozen=True, eq=False)
class OpenMaxModel:
    mavs: np.ndarray
    tails: tuple[WeibullTailModel, ...]
    alpha: int
    distance: str = "euclidean"
    tail_size: int = DEFAULT_TAIL_SIZE

    def __post_init__(self):
        mavs = np.asarray(self.mavs, dtype=np.float64)
        object.__setattr__(self, "mavs", mavs)
        if mavs.ndim != 2 or mavs.shape[0] != len(self.tails):
            raise InvalidArgumentError("need exactly one MAV and one tail model per known class")
        if not 1 <= self.alpha <= mavs.shape[0]:
            raise InvalidArgumentError(f"alpha must lie in [1, {mavs.shape[0]}], got {self.alpha}")
        if self.distance not in DISTANCES:
            raise InvalidArgumentError(f"unknown distance {self.distance!r}")

    @property
    def num_known(self) -> int:
        return self.mavs.shape[0]

    def to_dict(self) -> dict:
        return {
            "mavs": self.mavs.tolist(),
            "tails": [t.to_dict() for t in self.tails],
            "alpha": self.alpha,
            "eta": self.tail_size,
            "distance": self.distance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OpenMaxModel":
        return cls(
            mavs=np.asarray(d["mavs"], dtype=np.float64),
            tails=tuple(WeibullTailModel.from_dict(t) for t in d["tails"]),
            alpha=int(d["alpha"]),
            distance=d["distance"],
            tail_size=int(d["eta"]),
        )


def compute_mavs(activations, labels, predictions, min_correct: int = 1) -> np.ndarray:
    """Per-class mean of activation rows that are both labelled and predicted as that class."""
    a = as_matrix(activations, "activations")
    y = np.asarray(labels, dtype=np.int64)
    pred = np.asarray(predictions, dtype=np.int64)
    if y.shape != (a.shape[0],) or pred.shape != (a.shape[0],):
        raise InvalidArgumentError("labels and predictions must align with activation rows")
    k = a.shape[1]
    mavs = np.empty((k, a.shape[1]))
    for j in range(k):
        mask = (y == j) & (pred == j)
        if mask.sum() < max(min_correct, 1):
            raise FitError(f"class {j} has {int(mask.sum())} correctly classified samples, need {min_correct}")
        mavs[j] = a[mask].mean(axis=0)
    return mavs


def fit_openmax(
    activations,
    labels,
    predictions=None,
    tail_size: int = DEFAULT_TAIL_SIZE,
    alpha: int | None = None,
    distance: str = "euclidean",
) -> OpenMaxModel:
    """Fit MAVs and per-class Weibull tails on training activations.

    `predictions` defaults to the activation argmax.
    """
    a = as_matrix(activations, "activations", min_cols=2)
    if predictions is None:
        predictions = np.argmax(a, axis=1)
    y = np.asarray(labels, dtype=np.int64)
    pred = np.asarray(predictions, dtype=np.int64)
    k = a.shape[1]
    if alpha is None:
        alpha = min(DEFAULT_ALPHA, k)
    mavs = compute_mavs(a, y, pred, min_correct=tail_size)
    tails = []
    for j in range(k):
        rows = a[(y == j) & (pred == j)]
        dist = pairwise_distance(rows, mavs[j : j + 1], distance)[:, 0]
        try:
            tails.append(fit_weibull_tail(dist, tail_size))
        except FitError as exc:
            raise FitError(f"class {j}: {exc}") from None
    return OpenMaxModel(mavs, tuple(tails), int(alpha), distance, tail_size)


def rank_weights(activations: np.ndarray, alpha: int) -> np.ndarray:
    """N x K discount weights (alpha - r + 1)/alpha for the top-alpha ranks, 0 elsewhere."""
    n, k = activations.shape
    order = np.argsort(-activations, axis=1, kind="stable")
    weights = np.zeros((n, k))
    ranks = np.arange(alpha)
    weights[np.arange(n)[:, None], order[:, :alpha]] = (alpha - ranks) / alpha
    return weights


def revise_activations(activations, cdf_values, alpha: int) -> np.ndarray:
    """Apply the OpenMax revision given per-class tail CDF values.

    omega_j = 1 - w_j * cdf_j with w_j the rank weight; revised known
    activations are v_j * omega_j and the unknown activation collects
    sum_j v_j * (1 - omega_j). The K+1 outputs sum to the original total.
    """
    v = np.atleast_2d(np.asarray(activations, dtype=np.float64))
    cdf = np.atleast_2d(np.asarray(cdf_values, dtype=np.float64))
    omega = 1.0 - rank_weights(v, alpha) * cdf
    revised = v * omega
    unknown = np.sum(v * (1.0 - omega), axis=1, keepdims=True)
    return np.concatenate([revised, unknown], axis=1)


def _check_model(model) -> OpenMaxModel:
    if not isinstance(model, OpenMaxModel):
        raise StateError("OpenMax model is not fitted")
    return model


def openmax_recalibrate(activation_row, model: OpenMaxModel) -> np.ndarray:
    """Revised K+1 activation vector for a single sample."""
    model = _check_model(model)
    v = np.asarray(activation_row, dtype=np.float64).reshape(1, -1)
    if v.shape[1] != model.mavs.shape[1]:
        raise InvalidArgumentError(f"activation length {v.shape[1]} != MAV dimension {model.mavs.shape[1]}")
    return _revise(v, model)[0]


def _revise(v: np.ndarray, model: OpenMaxModel) -> np.ndarray:
    dist = pairwise_distance(v, model.mavs, model.distance)
    cdf = np.empty_like(dist)
    for j, tail in enumerate(model.tails):
        cdf[:, j] = weibull_cdf(dist[:, j], tail)
    return revise_activations(v, cdf, model.alpha)


def openmax_scores(activations, model: OpenMaxModel) -> np.ndarray:
    """N x (K+1) revised activations; softmax of these gives the OpenMax probabilities."""
    model = _check_model(model)
    v = np.asarray(activations, dtype=np.float64)
    if v.ndim != 2 or v.shape[1] != model.mavs.shape[1]:
        raise InvalidArgumentError(f"activations must be N x {model.mavs.shape[1]}, got {v.shape}")
    if v.shape[0] == 0:
        return np.zeros((0, model.num_known + 1))
    v = as_matrix(v, "activations")
    return _revise(v, model)


def openmax_predict(activations, model: OpenMaxModel, temperature: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """OpenMax probabilities over K+1 classes and the argmax labels (K = unknown).

    A temperature other than 1 rescales the revised activations before the
    softmax; the predicted labels do not depend on it.
    """
    scores = openmax_scores(activations, model)
    if scores.shape[0] == 0:
        return scores, np.zeros(0, dtype=np.int64)
    probs = softmax(scores, temperature)
    return probs, np.argmax(scores, axis=1).astype(np.int64)
