"""Temperature scaling.

The single temperature is fitted by minimizing validation NLL. The search
runs over the inverse temperature ``beta = 1/T``: NLL(beta) is a logsumexp of
linear functions minus a linear function, hence convex, so a golden-section
search on a bracket cannot get stuck in a local minimum.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from osrcal.errors import FitError, InvalidArgumentError
from osrcal.tensor import as_logits, check_temperature, logsumexp_rows, softmax

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
DEFAULT_BOUNDS = (0.05, 20.0)
MIN_VAL_SAMPLES = 10


@dataclass(frozen=True)
class TemperatureFit:
    temperature: float
    nll_before: float
    nll_after: float
    iterations: int
    bounds: tuple[float, float]
    boundary_hit: bool = False

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bounds"] = list(self.bounds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TemperatureFit":
        return cls(
            temperature=float(d["temperature"]),
            nll_before=float(d["nll_before"]),
            nll_after=float(d["nll_after"]),
            iterations=int(d["iterations"]),
            bounds=(float(d["bounds"][0]), float(d["bounds"][1])),
            boundary_hit=bool(d.get("boundary_hit", False)),
        )


def _known_labels(labels, n: int, k: int) -> np.ndarray:
    y = np.asarray(labels)
    if y.ndim != 1 or y.shape[0] != n:
        raise InvalidArgumentError(f"labels must be a vector of length {n}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.mod(y, 1) == 0):
            raise InvalidArgumentError("labels must be integers")
    y = y.astype(np.int64)
    if np.any(y == k):
        raise InvalidArgumentError("calibration uses known classes only; found the unknown index")
    if np.any((y < 0) | (y > k)):
        raise InvalidArgumentError(f"labels must lie in [0, {k - 1}]")
    return y


def _nll_beta(z: np.ndarray, true_logit: np.ndarray, beta: float) -> float:
    return float(np.mean(logsumexp_rows(beta * z) - beta * true_logit))


def nll(logits, labels, temperature: float = 1.0) -> float:
    """Mean negative log-likelihood of `labels` under ``softmax(logits / T)``."""
    t = check_temperature(temperature)
    z = as_logits(logits)
    y = _known_labels(labels, z.shape[0], z.shape[1])
    return _nll_beta(z, z[np.arange(z.shape[0]), y], 1.0 / t)


def fit_temperature(
    val_logits,
    val_labels,
    bounds: tuple[float, float] = DEFAULT_BOUNDS,
    tol: float = 1e-4,
) -> TemperatureFit:
    """Fit a single temperature on held-out known-class samples.

    Golden-section search over beta in [1/T_max, 1/T_min] until the bracket is
    narrower than ``tol * beta``. The result is deterministic for identical
    inputs. When the optimum sits on a bound, the bound itself is returned and
    ``boundary_hit`` is set.
    """
    t_min, t_max = float(bounds[0]), float(bounds[1])
    if not (0.0 < t_min < t_max) or not math.isfinite(t_max):
        raise InvalidArgumentError(f"invalid temperature bounds {bounds!r}")
    if not tol > 0:
        raise InvalidArgumentError("tol must be positive")
    z = np.asarray(val_logits, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < MIN_VAL_SAMPLES:
        raise FitError(f"validation set too small: need at least {MIN_VAL_SAMPLES} samples")
    z = as_logits(z)
    y = _known_labels(val_labels, z.shape[0], z.shape[1])
    if np.all(z.max(axis=1) == z.min(axis=1)):
        raise FitError("degenerate logits: every row is constant, temperature is unidentifiable")
    true_logit = z[np.arange(z.shape[0]), y]

    def f(beta: float) -> float:
        return _nll_beta(z, true_logit, beta)

    lo, hi = 1.0 / t_max, 1.0 / t_min
    f_lo, f_hi = f(lo), f(hi)
    a, b = lo, hi
    x1 = b - INV_PHI * (b - a)
    x2 = a + INV_PHI * (b - a)
    f1, f2 = f(x1), f(x2)
    iterations = 0
    while b - a >= tol * 0.5 * (a + b):
        iterations += 1
        # Ties move toward larger beta: a numerically flat NLL means sharper is no worse.
        if f1 < f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - INV_PHI * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + INV_PHI * (b - a)
            f2 = f(x2)
    beta, f_beta = (x1, f1) if f1 < f2 else (x2, f2)

    boundary_hit = False
    if f_hi <= f_beta and b == hi:
        beta, f_beta, boundary_hit = hi, f_hi, True
    elif f_lo < f_beta and a == lo:
        beta, f_beta, boundary_hit = lo, f_lo, True

    nll_before = f(1.0)
    temperature = 1.0 / beta
    # Bracket tolerance can leave the optimum a hair worse than T=1.
    if nll_before < f_beta and t_min <= 1.0 <= t_max:
        temperature, f_beta, boundary_hit = 1.0, nll_before, False
    if boundary_hit:
        temperature = t_min if beta == hi else t_max
    temperature = min(max(temperature, t_min), t_max)
    return TemperatureFit(
        temperature=temperature,
        nll_before=nll_before,
        nll_after=f_beta,
        iterations=iterations,
        bounds=(t_min, t_max),
        boundary_hit=boundary_hit,
    )


def apply_temperature(logits, temperature: float) -> np.ndarray:
    return softmax(logits, temperature)
