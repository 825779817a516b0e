"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v -s`` or
``python tests/test_acceptance.py``.
"""

import json
import time

import numpy as np
import pytest

from cli_pipeline import run_pipeline
from oracles import brier_loops, ece_loops, extend_loops
from osrcal import dataio
from osrcal.calibration import fit_temperature, nll
from osrcal.dataio import MetricReport, canonical_json, load_array, save_array
from osrcal.metrics import brier_closed, brier_osr, ece, extend_osr, unknown_probability
from osrcal.openset import fit_weibull_tail, revise_activations
from osrcal.pipeline import evaluate_run
from osrcal.protocol import SplitSpec, generate_split
from osrcal.synth import SynthConfig, run_seed, synth_generate
from osrcal.tensor import softmax

RUNS = 5


def verdict(capsys, number: int, ok: bool, detail: str) -> None:
    with capsys.disabled():
        print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"criterion {number}: {detail}"


def _default_runs():
    results = []
    for r in range(RUNS):
        d = synth_generate(SynthConfig(seed=run_seed(0, r)))
        res = evaluate_run(d.train_logits, d.train_labels, d.val_logits, d.val_labels, d.test_logits, d.test_labels)
        results.append({(rep.method, rep.calibrated): rep for rep in res.reports})
    return results


@pytest.fixture(scope="module")
def default_runs():
    start = time.perf_counter()
    runs = _default_runs()
    return runs, time.perf_counter() - start


def _mean(runs, method, calibrated, metric):
    return float(np.mean([getattr(r[(method, calibrated)], metric) for r in runs]))


def test_criterion_1_table_orderings(capsys, default_runs):
    runs, elapsed = default_runs
    ece_cb, ece_ca = _mean(runs, "closed-set", False, "ece"), _mean(runs, "closed-set", True, "ece")
    ece_ob, ece_oa = (_mean(runs, "open-set-threshold", c, "ece") for c in (False, True))
    brier_cb, brier_ob = _mean(runs, "closed-set", False, "brier"), _mean(runs, "open-set-threshold", False, "brier")
    acc_c = _mean(runs, "closed-set", False, "accuracy")
    acc_o = _mean(runs, "open-set-threshold", False, "accuracy")
    acc_om = _mean(runs, "open-set-openmax", False, "accuracy")
    checks = {
        "a": ece_cb > ece_ca,
        "b": ece_ob > ece_oa,
        "c": ece_oa > 3 * ece_ca,
        "d": brier_ob > brier_cb,
        "e": acc_o < acc_c and acc_om < acc_c,
        "time": elapsed < 10,
    }
    detail = (
        f"ECE closed {ece_cb:.4f}->{ece_ca:.4f}, open {ece_ob:.4f}->{ece_oa:.4f}; "
        f"Brier closed {brier_cb:.4f} < open {brier_ob:.4f}; "
        f"acc closed {acc_c:.3f}, threshold {acc_o:.3f}, openmax {acc_om:.3f}; {elapsed:.2f}s; "
        f"failed: {[k for k, v in checks.items() if not v] or 'none'}"
    )
    verdict(capsys, 1, all(checks.values()), detail)


def test_criterion_2_temperature_recovery(capsys):
    start = time.perf_counter()
    n = 3334
    ratios = {}
    for c in (0.5, 1.0, 3.0):
        temps = []
        for seed in range(RUNS):
            cfg = SynthConfig(num_unknown=0, samples_per_class=n, test_per_class=0, scale=c, seed=seed)
            d = synth_generate(cfg)
            z = np.concatenate([d.val_logits, d.train_logits])
            y = np.concatenate([d.val_labels, d.train_labels])
            assert z.shape[0] >= 20000
            temps.append(fit_temperature(z, y).temperature)
        ratios[c] = float(np.mean(temps)) / c
    elapsed = time.perf_counter() - start
    ok = all(abs(r - 1) <= 0.15 for r in ratios.values()) and elapsed < 5
    detail = ", ".join(f"c={c}: T/c={r:.4f}" for c, r in ratios.items()) + f"; {elapsed:.2f}s"
    verdict(capsys, 2, ok, detail)


def test_criterion_3_closed_set_floor(capsys, default_runs):
    runs, _ = default_runs
    after = _mean(runs, "closed-set", True, "ece")
    verdict(capsys, 3, after < 0.02, f"closed-set ECE after scaling {after:.4f} (5 runs)")


def test_criterion_4_weibull_recovery(capsys):
    start = time.perf_counter()
    d = np.random.default_rng(2024).weibull(2.0, size=10000)
    m = fit_weibull_tail(d, tail_size=10000)
    elapsed = time.perf_counter() - start
    ok = 1.9 <= m.shape <= 2.1 and 0.98 <= m.scale <= 1.02 and abs(m.residual) < 1e-8 and elapsed < 1
    verdict(capsys, 4, ok, f"k={m.shape:.4f}, lambda={m.scale:.4f}, |g|={abs(m.residual):.1e}, {elapsed:.3f}s")


def test_criterion_5_oracle_equivalence(capsys):
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(100):
        n, k = int(rng.integers(1, 9)), int(rng.integers(2, 5))
        probs = rng.dirichlet(np.full(k, 0.5), size=n)
        known = rng.integers(0, k, n)
        mixed = rng.integers(0, k + 1, n)
        osr = extend_osr(probs)
        preds = rng.integers(0, k + 1, n)
        diffs = [
            ece(probs, mixed)[0] - ece_loops(probs, mixed, 15),
            ece(osr, mixed, predictions=preds)[0] - ece_loops(osr, mixed, 15, preds),
            brier_closed(probs, known) - brier_loops(probs, known),
            np.max(np.abs(osr - np.array(extend_loops(probs)))),
            brier_osr(osr, mixed) - brier_loops(osr, mixed),
            brier_osr(osr, mixed, "k") - brier_loops(osr, mixed, k),
        ]
        worst = max(worst, max(abs(float(x)) for x in diffs))
    verdict(capsys, 5, worst <= 1e-12, f"max deviation {worst:.1e} over 100 instances")


def test_criterion_6_algebraic_invariants(capsys):
    rng = np.random.default_rng(6)
    z = rng.normal(scale=5, size=(10000, 8))
    base = np.argmax(z, axis=1)
    argmax_ok = all(np.array_equal(np.argmax(softmax(z, t), axis=1), base) for t in (0.1, 1.0, 10.0))

    v = rng.normal(scale=10, size=(10000, 6))
    revised = revise_activations(v, rng.random((10000, 6)), 3)
    conservation = float(np.max(np.abs(revised.sum(axis=1) - v.sum(axis=1))))

    betas = np.linspace(0.05, 20, 400)
    h = betas[1] - betas[0]
    worst_second = np.inf
    for _ in range(20):
        logits = rng.normal(scale=rng.uniform(0.5, 5), size=(int(rng.integers(10, 80)), int(rng.integers(2, 7))))
        labels = rng.integers(0, logits.shape[1], logits.shape[0])
        f = np.array([nll(logits, labels, 1 / b) for b in betas])
        second = (f[2:] - 2 * f[1:-1] + f[:-2]) / h**2
        worst_second = min(worst_second, float(np.min(second + 1e-12 * (1 + np.abs(f[1:-1])) / h**2)))

    one_hot = unknown_probability([0.0, 1.0, 0.0])
    all_zero = unknown_probability([0.0, 0.0, 0.0])
    ok = argmax_ok and conservation <= 1e-12 and worst_second >= 0 and one_hot == 0.0 and all_zero == 1.0
    detail = (
        f"argmax invariant {argmax_ok}, conservation {conservation:.1e}, "
        f"convex {worst_second >= 0}, unknown prob one-hot {one_hot} / zeros {all_zero}"
    )
    verdict(capsys, 6, ok, detail)


def test_criterion_7_determinism_and_round_trips(capsys, tmp_path):
    def reports():
        d = synth_generate(SynthConfig(samples_per_class=300, test_per_class=100, seed=run_seed(9, 1)))
        res = evaluate_run(d.train_logits, d.train_labels, d.val_logits, d.val_labels, d.test_logits, d.test_labels)
        return [canonical_json(r.to_dict()) for r in res.reports]

    deterministic = reports() == reports()

    x = np.random.default_rng(7).normal(scale=1e5, size=(100, 6))
    save_array(x, tmp_path / "x.npy")
    npy_exact = load_array(tmp_path / "x.npy").tobytes() == x.tobytes()

    manifest = generate_split(SplitSpec(seed=9, run_index=3))
    dataio.save_manifest(manifest, tmp_path / "m.json")
    manifest_ok = dataio.load_manifest(tmp_path / "m.json") == manifest

    doc = json.loads(reports()[1])
    report = MetricReport.from_dict(doc)
    dataio.save_report(report, tmp_path / "r.json")
    report_ok = dataio.load_report(tmp_path / "r.json").to_dict() == report.to_dict() == doc

    ok = deterministic and npy_exact and manifest_ok and report_ok
    detail = f"reports identical {deterministic}, npy exact {npy_exact}, manifest {manifest_ok}, report {report_ok}"
    verdict(capsys, 7, ok, detail)


def test_criterion_8_cli_smoke(capsys, tmp_path):
    start = time.perf_counter()
    try:
        agg_dir = run_pipeline(tmp_path, runs=RUNS)
        error = None
    except AssertionError as exc:
        agg_dir, error = None, str(exc)
    found = set()
    if agg_dir is not None:
        for path in agg_dir.glob("*.json"):
            doc = dataio.read_json(path)
            dataio.validate_aggregate(doc)
            found.add((doc["method"], doc["calibrated"]))
        for path in tmp_path.glob("run*/reports/*.json"):
            dataio.validate_report(dataio.read_json(path))
    expected = {(m, c) for m in dataio.METHODS for c in (False, True)}
    ok = error is None and found == expected
    detail = error or f"{len(found)} aggregate conditions, {time.perf_counter() - start:.2f}s"
    verdict(capsys, 8, ok, detail)


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
