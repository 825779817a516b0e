"""One evaluation run: three prediction methods, each before and after temperature scaling.

Open-set decisions (threshold and OpenMax labels) are always made on the
uncalibrated scores; the temperature only rescales reported confidence, so
each method has a single accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from osrcal.calibration import TemperatureFit, fit_temperature
from osrcal.dataio import MetricReport
from osrcal.errors import InvalidArgumentError
from osrcal.metrics import (
    DEFAULT_BINS,
    accuracy_closed,
    accuracy_osr,
    brier_closed,
    brier_osr,
    ece,
    extend_osr,
)
from osrcal.openset import (
    DEFAULT_RETAIN_Q,
    DEFAULT_TAIL_SIZE,
    OpenMaxModel,
    ThresholdRule,
    choose_threshold,
    fit_openmax,
    openmax_scores,
    threshold_predict,
)
from osrcal.tensor import as_logits, softmax

METHOD_NAMES = {"closed": "closed-set", "threshold": "open-set-threshold", "openmax": "open-set-openmax"}


@dataclass(frozen=True)
class EvalOptions:
    num_bins: int = DEFAULT_BINS
    renormalize_osr: bool = False
    brier_cols: str = "k+1"


@dataclass(frozen=True, eq=False)
class Prediction:
    """Uncalibrated and calibrated probabilities plus the method's decisions."""

    method: str
    probs_before: np.ndarray
    probs_after: np.ndarray | None
    labels: np.ndarray


def fit_threshold_rule(val_logits, tau: float | None = None, retain_q: float = DEFAULT_RETAIN_Q) -> ThresholdRule:
    if tau is not None:
        return ThresholdRule(tau, "fixed")
    t = choose_threshold(softmax(val_logits), retain_q)
    return ThresholdRule(t, "validation-quantile", retain_q)


def predict(
    method: str,
    logits,
    temperature: float | None = None,
    rule: ThresholdRule | None = None,
    model: OpenMaxModel | None = None,
    renormalize_osr: bool = False,
) -> Prediction:
    z = as_logits(logits)
    if method == "closed":
        before = softmax(z)
        after = None if temperature is None else softmax(z, temperature)
        return Prediction(method, before, after, np.argmax(before, axis=1))
    if method == "threshold":
        if rule is None:
            raise InvalidArgumentError("threshold prediction needs a ThresholdRule")
        plain = softmax(z)
        labels = threshold_predict(plain, rule)
        before = extend_osr(plain, renormalize_osr)
        after = None if temperature is None else extend_osr(softmax(z, temperature), renormalize_osr)
        return Prediction(method, before, after, labels)
    if method == "openmax":
        if model is None:
            raise InvalidArgumentError("OpenMax prediction needs a fitted model")
        scores = openmax_scores(z, model)
        # Scaling revised activations by 1/T equals refitting OpenMax on
        # logits/T: MAVs, distances and tail scales all scale by 1/T.
        before = softmax(scores)
        after = None if temperature is None else softmax(scores, temperature)
        return Prediction(method, before, after, np.argmax(scores, axis=1).astype(np.int64))
    raise InvalidArgumentError(f"unknown method {method!r}")


def score(pred: Prediction, labels, calibrated: bool, temperature: float | None, opts: EvalOptions) -> MetricReport:
    probs = pred.probs_after if calibrated else pred.probs_before
    if probs is None:
        raise InvalidArgumentError("no calibrated probabilities; pass a temperature")
    y = np.asarray(labels, dtype=np.int64)
    if pred.method == "closed":
        e, table = ece(probs, y, opts.num_bins)
        brier = brier_closed(probs, y)
        acc = accuracy_closed(pred.probs_before, y)
    else:
        e, table = ece(probs, y, opts.num_bins, predictions=pred.labels)
        brier = brier_osr(probs, y, opts.brier_cols)
        acc = accuracy_osr(pred.labels, y)
    return MetricReport(
        method=METHOD_NAMES[pred.method],
        calibrated=calibrated,
        brier=brier,
        ece=e,
        accuracy=acc,
        reliability=table,
        temperature=temperature if calibrated else None,
    )


def evaluate_method(
    method: str,
    test_logits,
    test_labels,
    temperature: float,
    rule: ThresholdRule | None = None,
    model: OpenMaxModel | None = None,
    opts: EvalOptions = EvalOptions(),
) -> tuple[MetricReport, MetricReport]:
    """Before/after report pair for one method.

    The closed-set method is scored on known-class test samples only.
    """
    z = np.asarray(test_logits, dtype=np.float64)
    y = np.asarray(test_labels, dtype=np.int64)
    if method == "closed":
        known = y < z.shape[1]
        z, y = z[known], y[known]
    pred = predict(method, z, temperature, rule, model, opts.renormalize_osr)
    return score(pred, y, False, None, opts), score(pred, y, True, temperature, opts)


@dataclass(frozen=True, eq=False)
class RunResult:
    fit: TemperatureFit
    rule: ThresholdRule
    model: OpenMaxModel
    reports: list[MetricReport]


def evaluate_run(
    train_logits,
    train_labels,
    val_logits,
    val_labels,
    test_logits,
    test_labels,
    tau: float | None = None,
    retain_q: float = DEFAULT_RETAIN_Q,
    tail_size: int = DEFAULT_TAIL_SIZE,
    alpha: int | None = None,
    distance: str = "euclidean",
    opts: EvalOptions = EvalOptions(),
) -> RunResult:
    """Fit temperature, threshold and OpenMax, then score all six conditions."""
    fit = fit_temperature(val_logits, val_labels)
    rule = fit_threshold_rule(val_logits, tau, retain_q)
    model = fit_openmax(train_logits, train_labels, tail_size=tail_size, alpha=alpha, distance=distance)
    reports: list[MetricReport] = []
    for method in METHOD_NAMES:
        reports.extend(
            evaluate_method(method, test_logits, test_labels, fit.temperature, rule=rule, model=model, opts=opts)
        )
    return RunResult(fit, rule, model, reports)
