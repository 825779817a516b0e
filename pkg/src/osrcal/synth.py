"""Synthetic logits with a known calibration state.

Known class j is an isotropic Gaussian N(s * e_j, sigma^2 I) in R^D. The
Bayes posterior over known classes for a point a is a softmax of
-||a - mu_j||^2 / (2 sigma^2); dropping the class-independent -||a||^2 term
gives logits linear in a. Those logits times `scale` are what the generator
emits, so scale = 1 is exactly calibrated and scale = c needs temperature c.

Unknown classes sit at the midpoint of two random known means, pushed off
the segment between them by a random orthogonal offset. Samples there get
confident known-class logits, which is the overconfidence on unseen classes
that makes open-set calibration hard.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from osrcal.errors import InvalidArgumentError
from osrcal.protocol import mix_seed

VAL_FRACTION = 0.1


@dataclass(frozen=True)
class SynthConfig:
    num_known: int = 6
    num_unknown: int = 4
    samples_per_class: int = 2000
    test_per_class: int = 500
    dim: int | None = None
    separation: float = 4.0
    sigma: float = 1.0
    scale: float = 3.0
    unknown_offset: float = 0.5
    seed: int = 0

    def __post_init__(self):
        dim = self.num_known if self.dim is None else self.dim
        object.__setattr__(self, "dim", dim)
        if self.num_known < 2 or self.num_unknown < 0:
            raise InvalidArgumentError("need at least 2 known classes and a non-negative unknown count")
        if self.samples_per_class < 1 or self.test_per_class < 0:
            raise InvalidArgumentError("sample counts must be positive")
        if dim < self.num_known:
            raise InvalidArgumentError(f"dim ({dim}) must be at least num_known ({self.num_known})")
        if not (self.sigma > 0 and self.scale > 0 and self.separation > 0 and self.unknown_offset >= 0):
            raise InvalidArgumentError("sigma, scale and separation must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class SynthData:
    train_logits: np.ndarray
    train_labels: np.ndarray
    val_logits: np.ndarray
    val_labels: np.ndarray
    test_logits: np.ndarray
    test_labels: np.ndarray
    # Generating class of each test row: 0..K-1 known, K..K+U-1 unknown.
    test_source: np.ndarray
    means: np.ndarray


def class_means(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    k, d, s = cfg.num_known, cfg.dim, cfg.separation
    means = np.zeros((k + cfg.num_unknown, d))
    means[np.arange(k), np.arange(k)] = s
    for u in range(cfg.num_unknown):
        a, b = rng.choice(k, size=2, replace=False)
        axis = means[a] - means[b]
        axis /= np.linalg.norm(axis)
        r = rng.standard_normal(d)
        r -= np.dot(r, axis) * axis
        r /= np.linalg.norm(r)
        means[k + u] = 0.5 * (means[a] + means[b]) + cfg.unknown_offset * s * r
    return means


def bayes_logits(x: np.ndarray, known_means: np.ndarray, sigma: float, scale: float) -> np.ndarray:
    """scale * (a . mu_j - ||mu_j||^2 / 2) / sigma^2 for every row a."""
    half_sq = 0.5 * np.sum(known_means**2, axis=1)
    return scale * (x @ known_means.T - half_sq) / sigma**2


def synth_generate(cfg: SynthConfig) -> SynthData:
    """Draw train/val/test logits and compact labels; bitwise-deterministic in `cfg.seed`."""
    rng = np.random.default_rng(cfg.seed)
    k, u = cfg.num_known, cfg.num_unknown
    means = class_means(cfg, rng)
    known_means = means[:k]

    def draw(classes: np.ndarray) -> np.ndarray:
        return means[classes] + cfg.sigma * rng.standard_normal((classes.size, cfg.dim))

    pool = np.repeat(np.arange(k), cfg.samples_per_class)
    pool = pool[rng.permutation(pool.size)]
    pool_x = draw(pool)
    n_val = int(round(VAL_FRACTION * pool.size))

    source = np.repeat(np.arange(k + u), cfg.test_per_class)
    test_x = draw(source)
    test_labels = np.minimum(source, k)

    pool_logits = bayes_logits(pool_x, known_means, cfg.sigma, cfg.scale)
    return SynthData(
        train_logits=pool_logits[n_val:],
        train_labels=pool[n_val:],
        val_logits=pool_logits[:n_val],
        val_labels=pool[:n_val],
        test_logits=bayes_logits(test_x, known_means, cfg.sigma, cfg.scale),
        test_labels=test_labels.astype(np.int64),
        test_source=source.astype(np.int64),
        means=means,
    )


def run_seed(seed: int, run_index: int) -> int:
    """Per-run data seed, derived with the same mixing as the class splits."""
    return mix_seed(seed, run_index) >> 1
