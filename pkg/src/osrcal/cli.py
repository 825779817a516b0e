"""Command-line interface.

    osrcal split      --total 10 --known 6 --runs 5 --seed 0 --out-dir runs/
    osrcal synth      --manifest runs/manifest_run0.json --out-dir runs/run0
    osrcal calibrate  --logits val_logits.npy --labels val_labels.npy --out fit.json
    osrcal predict    --method threshold --logits test_logits.npy --val-logits val_logits.npy --out-dir pred/
    osrcal evaluate   --method openmax --logits ... --labels ... --calibration fit.json --out-dir reports/
    osrcal aggregate  --reports reports/*.json --out-dir agg/
    osrcal diagram    --report reports/closed-set_before.json --out closed_before.svg

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numerical
fit failure. Failures print one JSON line on stderr.
"""

from __future__ import annotations

import argparse
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from osrcal import dataio
from osrcal.calibration import DEFAULT_BOUNDS, TemperatureFit, fit_temperature
from osrcal.diagram import render_reliability_svg
from osrcal.errors import FitError, ToolkitError, ValidationError
from osrcal.metrics import DEFAULT_BINS
from osrcal.openset import (
    DEFAULT_RETAIN_Q,
    DEFAULT_TAIL_SIZE,
    DISTANCES,
    OpenMaxModel,
    ThresholdRule,
    fit_openmax,
)
from osrcal.pipeline import METHOD_NAMES, EvalOptions, evaluate_method, fit_threshold_rule, predict
from osrcal.protocol import DEFAULT_RUNS, SplitSpec, aggregate_runs, generate_split, remap_labels
from osrcal.synth import SynthConfig, run_seed, synth_generate

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_FIT = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _ext(fmt: str) -> str:
    return ".npy" if fmt == "npy" else ".csv"


def _load_labels(path, manifest_path, num_known: int) -> np.ndarray:
    raw = dataio.load_labels(path)
    if manifest_path:
        manifest = dataio.load_manifest(manifest_path)
        if manifest.num_known != num_known:
            raise ValidationError(
                f"manifest has {manifest.num_known} known classes but logits have {num_known} columns"
            )
        return remap_labels(raw, manifest)
    dataio.validate_labels(raw, num_known)
    return raw


def _temperature(args) -> float | None:
    if getattr(args, "temperature", None) is not None:
        return args.temperature
    if getattr(args, "calibration", None):
        return TemperatureFit.from_dict(dataio.read_json(args.calibration)).temperature
    return None


def _threshold_rule(args) -> ThresholdRule:
    if args.rule:
        return ThresholdRule.from_dict(dataio.read_json(args.rule))
    if args.tau is not None:
        return ThresholdRule(args.tau, "fixed")
    if not args.val_logits:
        raise UsageError("threshold method needs --tau, --rule, or --val-logits")
    return fit_threshold_rule(dataio.load_array(args.val_logits), None, args.retain_q)


def _openmax_model(args) -> OpenMaxModel:
    if args.model:
        return OpenMaxModel.from_dict(dataio.read_json(args.model))
    if not (args.train_logits and args.train_labels):
        raise UsageError("openmax method needs --model, or --train-logits and --train-labels")
    z = dataio.load_array(args.train_logits)
    y = _load_labels(args.train_labels, args.manifest, z.shape[1])
    model = fit_openmax(z, y, tail_size=args.eta, alpha=args.alpha, distance=args.distance)
    if args.save_model:
        dataio.write_json(model.to_dict(), args.save_model)
    return model


def cmd_split(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for run in range(args.runs):
        manifest = generate_split(SplitSpec(args.total, args.known, args.seed, run), args.dataset)
        dataio.save_manifest(manifest, out / f"manifest_run{run}.json")
    print(f"wrote {args.runs} manifests to {out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    known, unknown, seed = args.known, args.unknown, run_seed(args.seed, args.run_index)
    manifest = None
    if args.manifest:
        manifest = dataio.load_manifest(args.manifest)
        known = manifest.num_known
        unknown = manifest.num_total_classes - known
        seed = run_seed(manifest.seed, manifest.run_index)
    cfg = SynthConfig(
        num_known=known,
        num_unknown=unknown,
        samples_per_class=args.samples_per_class,
        test_per_class=args.test_per_class,
        dim=args.dim,
        separation=args.separation,
        sigma=args.sigma,
        scale=args.scale,
        seed=seed,
    )
    data = synth_generate(cfg)
    train_y, val_y, test_y = data.train_labels, data.val_labels, data.test_labels
    if manifest is not None:
        # Write original class ids so the manifest's remap is exercised downstream.
        unknown_ids = [c for c in range(manifest.num_total_classes) if c not in manifest.known_class_ids]
        to_raw = np.array(list(manifest.known_class_ids) + unknown_ids, dtype=np.int64)
        train_y, val_y, test_y = to_raw[train_y], to_raw[val_y], to_raw[data.test_source]
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ext = _ext(args.format)
    for name, arr in (("train", data.train_logits), ("val", data.val_logits), ("test", data.test_logits)):
        dataio.save_array(arr, out / f"{name}_logits{ext}", args.format)
    for name, arr in (("train", train_y), ("val", val_y), ("test", test_y)):
        dataio.save_labels(arr, out / f"{name}_labels{ext}", args.format)
    dataio.write_json(cfg.to_dict(), out / "synth_config.json")
    print(f"wrote synthetic run (seed {seed}) to {out}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    z = dataio.load_array(args.logits)
    y = _load_labels(args.labels, args.manifest, z.shape[1])
    if np.any(y == z.shape[1]):
        # Calibration is fitted on known classes only.
        keep = y < z.shape[1]
        z, y = z[keep], y[keep]
    fit = fit_temperature(z, y, bounds=(args.t_min, args.t_max), tol=args.tol)
    dataio.write_json(fit.to_dict(), args.out)
    print(f"T = {fit.temperature:.6g} (NLL {fit.nll_before:.6g} -> {fit.nll_after:.6g})")
    return EXIT_OK


def cmd_predict(args) -> int:
    z = dataio.load_array(args.logits)
    rule = model = None
    if args.method == "threshold":
        rule = _threshold_rule(args)
    elif args.method == "openmax":
        model = _openmax_model(args)
    temperature = _temperature(args)
    pred = predict(args.method, z, temperature, rule, model, args.renormalize_osr)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ext = _ext(args.format)
    dataio.save_array(pred.probs_before, out / f"probs{ext}", args.format)
    if pred.probs_after is not None:
        dataio.save_array(pred.probs_after, out / f"probs_calibrated{ext}", args.format)
    dataio.save_labels(pred.labels, out / f"pred_labels{ext}", args.format)
    if rule is not None:
        dataio.write_json(rule.to_dict(), out / "rule.json")
    print(f"wrote {args.method} predictions for {z.shape[0]} samples to {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    z = dataio.load_array(args.logits)
    y = _load_labels(args.labels, args.manifest, z.shape[1])
    temperature = _temperature(args)
    if temperature is None:
        raise UsageError("evaluate needs --temperature or --calibration")
    rule = model = None
    if args.method == "threshold":
        rule = _threshold_rule(args)
    elif args.method == "openmax":
        model = _openmax_model(args)
    opts = EvalOptions(num_bins=args.bins, renormalize_osr=args.renormalize_osr, brier_cols=args.brier_cols)
    before, after = evaluate_method(args.method, z, y, temperature, rule=rule, model=model, opts=opts)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    name = METHOD_NAMES[args.method]
    for tag, report in (("before", before), ("after", after)):
        dataio.save_report(report, out / f"{name}_{tag}.json")
        print(f"{name} {tag}: brier={report.brier:.4f} ece={report.ece:.4f} acc={report.accuracy:.4f}")
    return EXIT_OK


def cmd_aggregate(args) -> int:
    groups = defaultdict(list)
    for path in args.reports:
        report = dataio.load_report(path)
        groups[(report.method, report.calibrated)].append(report)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for (method, calibrated), reports in sorted(groups.items()):
        agg = aggregate_runs(reports)
        tag = "after" if calibrated else "before"
        doc = agg.to_dict()
        dataio.validate_aggregate(doc)
        dataio.write_json(doc, out / f"aggregate_{method}_{tag}.json")
        m = agg.metrics
        print(
            f"{method} {tag} (R={agg.runs}): brier={m['brier'].mean:.4f}±{m['brier'].std:.4f} "
            f"ece={m['ece'].mean:.4f}±{m['ece'].std:.4f} acc={m['accuracy'].mean:.4f}"
        )
    return EXIT_OK


def cmd_diagram(args) -> int:
    report = dataio.load_report(args.report)
    title = args.title
    if title is None:
        title = f"{report.method} ({'after' if report.calibrated else 'before'} calibration)"
    Path(args.out).write_text(render_reliability_svg(report.reliability, title))
    return EXIT_OK


def _add_openset_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--method", choices=sorted(METHOD_NAMES), required=True)
    p.add_argument("--manifest", help="remap raw labels through this split manifest")
    p.add_argument("--temperature", type=float)
    p.add_argument("--calibration", help="TemperatureFit JSON written by `calibrate`")
    p.add_argument("--tau", type=float, help="fixed max-probability threshold")
    p.add_argument("--retain-q", type=float, default=DEFAULT_RETAIN_Q)
    p.add_argument("--val-logits", help="known-class validation logits for choosing tau")
    p.add_argument("--rule", help="threshold rule JSON written by `predict`")
    p.add_argument("--model", help="OpenMax model JSON")
    p.add_argument("--train-logits")
    p.add_argument("--train-labels")
    p.add_argument("--save-model")
    p.add_argument("--eta", type=int, default=DEFAULT_TAIL_SIZE, help="Weibull tail size")
    p.add_argument("--alpha", type=int, default=None, help="number of revised classes (default min(3, K))")
    p.add_argument("--distance", choices=DISTANCES, default="euclidean")
    p.add_argument("--renormalize-osr", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="osrcal", description="Calibration and open-set recognition evaluation.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("split", help="write seeded known/unknown split manifests")
    p.add_argument("--total", type=int, default=10)
    p.add_argument("--known", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--runs", type=int, default=DEFAULT_RUNS)
    p.add_argument("--dataset", default="synthetic")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("synth", help="generate synthetic train/val/test logits")
    p.add_argument("--manifest")
    p.add_argument("--known", type=int, default=6)
    p.add_argument("--unknown", type=int, default=4)
    p.add_argument("--samples-per-class", type=int, default=2000)
    p.add_argument("--test-per-class", type=int, default=500)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--separation", type=float, default=4.0)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--scale", type=float, default=3.0, help="logit multiplier; >1 is overconfident")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--run-index", type=int, default=0)
    p.add_argument("--format", choices=("csv", "npy"), default="npy")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("calibrate", help="fit a temperature on validation logits")
    p.add_argument("--logits", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--manifest")
    p.add_argument("--t-min", type=float, default=DEFAULT_BOUNDS[0])
    p.add_argument("--t-max", type=float, default=DEFAULT_BOUNDS[1])
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("predict", help="write probabilities and predicted labels")
    _add_openset_flags(p)
    p.add_argument("--logits", required=True)
    p.add_argument("--format", choices=("csv", "npy"), default="npy")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="metric reports before and after temperature scaling")
    _add_openset_flags(p)
    p.add_argument("--logits", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--bins", type=int, default=DEFAULT_BINS)
    p.add_argument("--brier-cols", choices=("k", "k+1"), default="k+1")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("aggregate", help="mean and std of reports over runs")
    p.add_argument("--reports", nargs="+", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("diagram", help="render a report's reliability table as SVG")
    p.add_argument("--report", required=True)
    p.add_argument("--title")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_diagram)
    return parser


def _fail(code: int, kind: str, message: str) -> int:
    sys.stderr.write(dataio.canonical_json({"error": kind, "exit_code": code, "message": message}) + "\n")
    return code


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "bins", 1) < 1:
            raise UsageError("--bins must be at least 1")
        return args.func(args)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", str(exc))
    except FitError as exc:
        return _fail(EXIT_FIT, exc.kind, str(exc))
    except ToolkitError as exc:
        return _fail(EXIT_DATA, exc.kind, str(exc))
    except OSError as exc:
        return _fail(EXIT_DATA, "io", f"{exc.filename}: {exc.strerror}")


if __name__ == "__main__":
    sys.exit(main())
