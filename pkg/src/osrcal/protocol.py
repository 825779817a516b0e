"""Known/unknown split protocol and multi-run aggregation.

Splits are drawn with splitmix64 so they are reproducible in any language:

    mix(seed, run)  = splitmix64_output(seed ^ splitmix64_output(run))
    state_0         = mix(seed, run)
    next():           state += 0x9E3779B97F4A7C15; return finalize(state)

where ``finalize`` is the standard splitmix64 output function (xor-shift 30,
multiply 0xBF58476D1CE4E5B9, xor-shift 27, multiply 0x94D049BB133111EB,
xor-shift 31), all arithmetic modulo 2^64. Known classes are the first K
entries of a Fisher-Yates shuffle of 0..N-1 that draws index i from
[i, N) with an unbiased rejection-sampled bounded integer.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass

import numpy as np

from osrcal.dataio import MetricReport, RunManifest
from osrcal.errors import InvalidArgumentError

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
DEFAULT_RUNS = 5
AGGREGATED_METRICS = ("brier", "ece", "accuracy", "temperature")


def splitmix64_finalize(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def mix_seed(seed: int, run_index: int) -> int:
    return splitmix64_finalize((seed & MASK64) ^ splitmix64_finalize(run_index & MASK64))


class SplitMix64:
    def __init__(self, state: int):
        self.state = state & MASK64

    def next(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        return splitmix64_finalize(self.state)

    def below(self, n: int) -> int:
        """Uniform integer in [0, n) without modulo bias."""
        if n <= 0:
            raise InvalidArgumentError("bound must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next()
            if x < limit:
                return x % n


@dataclass(frozen=True)
class SplitSpec:
    num_total_classes: int = 10
    num_known: int = 6
    seed: int = 0
    run_index: int = 0

    def __post_init__(self):
        if not 1 <= self.num_known < self.num_total_classes:
            raise InvalidArgumentError(
                f"need 1 <= known < total, got known={self.num_known}, total={self.num_total_classes}"
            )
        if self.seed < 0 or self.run_index < 0:
            raise InvalidArgumentError("seed and run_index must be non-negative")


def generate_split(spec: SplitSpec, dataset_name: str = "synthetic") -> RunManifest:
    rng = SplitMix64(mix_seed(spec.seed, spec.run_index))
    ids = list(range(spec.num_total_classes))
    for i in range(spec.num_known):
        j = i + rng.below(spec.num_total_classes - i)
        ids[i], ids[j] = ids[j], ids[i]
    known = sorted(ids[: spec.num_known])
    remap = {c: spec.num_known for c in range(spec.num_total_classes)}
    remap.update({c: i for i, c in enumerate(known)})
    return RunManifest(
        seed=spec.seed,
        num_total_classes=spec.num_total_classes,
        known_class_ids=tuple(known),
        class_remap=remap,
        dataset_name=dataset_name,
        run_index=spec.run_index,
    )


def remap_labels(raw_labels, manifest: RunManifest) -> np.ndarray:
    """Original class ids -> compact ids (knowns 0..K-1, every unknown K)."""
    raw = np.asarray(raw_labels, dtype=np.int64)
    bad = np.flatnonzero((raw < 0) | (raw >= manifest.num_total_classes))
    if bad.size:
        i = int(bad[0])
        raise InvalidArgumentError(f"row {i + 1}: raw label {int(raw[i])} outside [0, {manifest.num_total_classes})")
    table = np.array([manifest.class_remap[c] for c in range(manifest.num_total_classes)], dtype=np.int64)
    return table[raw]


def known_ids_of(compact_labels, manifest: RunManifest) -> np.ndarray:
    """Inverse of `remap_labels` on known samples; unknowns map to -1."""
    y = np.asarray(compact_labels, dtype=np.int64)
    table = np.array(list(manifest.known_class_ids) + [-1], dtype=np.int64)
    return table[y]


@dataclass(frozen=True)
class MetricSummary:
    mean: float
    std: float
    min: float
    max: float

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std, "min": self.min, "max": self.max}


@dataclass(frozen=True)
class AggregateReport:
    method: str
    calibrated: bool
    runs: int
    metrics: dict[str, MetricSummary]

    def to_dict(self) -> dict:
        out = {"method": self.method, "calibrated": self.calibrated, "runs": self.runs}
        for name in AGGREGATED_METRICS:
            out[name] = self.metrics[name].to_dict() if name in self.metrics else None
        return out


def _summarize(values: list[float]) -> MetricSummary:
    ordered = sorted(values)
    # fsum keeps the mean independent of report order.
    mean = math.fsum(ordered) / len(ordered)
    std = statistics.stdev(ordered) if len(ordered) > 1 else 0.0
    mean = min(max(mean, ordered[0]), ordered[-1])
    return MetricSummary(mean, std, ordered[0], ordered[-1])


def aggregate_runs(reports: list[MetricReport]) -> AggregateReport:
    """Mean and sample standard deviation of each metric over R runs of one condition."""
    if not reports:
        raise InvalidArgumentError("no reports to aggregate")
    conditions = {(r.method, r.calibrated) for r in reports}
    if len(conditions) != 1:
        raise InvalidArgumentError(f"cannot aggregate mixed conditions: {sorted(conditions)}")
    method, calibrated = conditions.pop()
    metrics = {
        "brier": _summarize([r.brier for r in reports]),
        "ece": _summarize([r.ece for r in reports]),
        "accuracy": _summarize([r.accuracy for r in reports]),
    }
    temps = [r.temperature for r in reports if r.temperature is not None]
    if len(temps) == len(reports):
        metrics["temperature"] = _summarize(temps)
    return AggregateReport(method, calibrated, len(reports), metrics)
