"""Command-line interface.

Data goes to files or stdout; logs go to stderr. Exit status is 0 on success,
1 on a library error and 2 on a usage error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from rsad import baselines, metrics, storage, synth
from rsad.detector import DEFAULT_ALPHA, DEFAULT_K, DEFAULT_M, Detector
from rsad.errors import EmptyInputError, InvalidConfigError, RSADError
from rsad.projection import jl_distortion_check, orthogonality_audit, sample_ensemble
from rsad.prototype import Truth, calibration_split

logger = logging.getLogger("rsad")


def _int_list(text: str) -> list[int]:
    items = [t.strip() for t in text.split(",") if t.strip()]
    try:
        return [int(t) for t in items]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated integer list: {text!r}") from None


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _add_rsa_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="master seed for projection ensembles")
    p.add_argument("--metric", choices=("euclidean", "cosine"), default="euclidean")


# ------------------------------------------------------------------ commands


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = synth.SyntheticConfig(
        K=args.K,
        d=args.d,
        n_per_class=args.n_per_class,
        center_scale=args.center_scale,
        noise_sigma=args.noise_sigma,
        shift_fraction=args.shift_fraction,
        nonrobust_fraction=args.nonrobust_fraction,
        seed=args.seed,
        layer_id=args.layer_id,
    )
    calibration, test = synth.generate(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    storage.write_activations(calibration, out / "calibration.rsad")
    storage.write_activations(test, out / "test.rsad")
    logger.info("wrote %d calibration and %d test records to %s", len(calibration), len(test), out)
    return 0


def cmd_calibrate(args: argparse.Namespace) -> int:
    sets = [storage.read_activations(p) for p in args.clean]
    if args.fraction < 1.0:
        sets = [calibration_split(s, args.fraction, args.seed)[0] for s in sets]
    detector = Detector.calibrate(
        sets, k=args.k, M=args.M, seed=args.seed, metric=args.metric, alpha=args.alpha
    )
    storage.write_detector(detector, args.out)
    lines = []
    for layer in detector.layers:
        protos = layer.prototypes
        counts = ",".join(str(c) for c in protos.support_counts)
        lines.append(f"layer={layer.layer_id} K={protos.K} d={protos.dim} counts={counts}")
    sys.stdout.write("\n".join(lines) + "\n")
    return 0


def _baseline(args: argparse.Namespace):
    if args.calibration is None:
        raise InvalidConfigError(f"--detector {args.detector} requires --calibration")
    calibration = storage.read_activations(args.calibration)
    if args.detector == "lid":
        return baselines.LidDetector(args.knn, args.metric).fit(calibration)
    return baselines.MahalanobisDetector(args.ridge).fit(calibration)


def score_rows(args: argparse.Namespace) -> list[storage.ReportRow]:
    tests = [storage.read_activations(p) for p in args.test]
    if args.detector == "rsa":
        if args.model is None:
            raise InvalidConfigError("--detector rsa requires --model DETECTOR_FILE")
        detector = storage.read_detector(args.model)
        if args.alpha is not None:
            detector = detector.with_alpha(args.alpha)
        results = detector.score(tests, threads=args.threads)
        return storage.rows_from_results(results, tests[0])
    if len(tests) != 1:
        raise InvalidConfigError("baseline detectors score a single layer")
    scorer = _baseline(args)
    raw = scorer.raw_scores(tests[0])
    alpha = DEFAULT_ALPHA if args.alpha is None else args.alpha
    anomaly = np.asarray(scorer.calibration.anomaly(raw), dtype=np.float64).reshape(-1)
    # Same orientation as the RSA rule: flag when the clean-side quantile drops below alpha.
    verdicts = ((1.0 - anomaly) < alpha).astype(int)
    oriented = scorer.calibration.oriented(raw)
    return storage.rows_from_scores(tests[0], oriented, verdicts)


def cmd_score(args: argparse.Namespace) -> int:
    rows = score_rows(args)
    _emit(storage.format_report(rows), args.out)
    flagged = sum(r.verdict for r in rows)
    logger.info("scored %d samples, %d flagged", len(rows), flagged)
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    rows = storage.read_report(args.report)
    known = [r for r in rows if r.truth is not None]
    if len(known) < len(rows):
        logger.warning("ignoring %d rows without ground truth", len(rows) - len(known))
    curve = metrics.roc_curve([metrics.LabeledScore(r.sample_id, r.score, r.truth) for r in known])
    if args.out:
        metrics.write_roc_csv(curve, args.out)
    sys.stdout.write(metrics.format_auc(curve.auc) + "\n")
    return 0


def sweep_table(
    calibration,
    test,
    ks: Sequence[int],
    Ms: Sequence[int],
    seed: int = 0,
    metric: str = "euclidean",
    threads: int = 1,
) -> list[tuple[int, int, float]]:
    """AUC of the RSA detector for every ``(k, M)`` in the grid."""
    if not ks or not Ms:
        raise EmptyInputError("sweep grid is empty")
    truth = np.asarray(test.truth)
    if np.any(truth == Truth.UNKNOWN):
        raise InvalidConfigError("sweep needs ground truth for every test record")
    table = []
    for k in ks:
        for M in Ms:
            detector = Detector.calibrate(calibration, k=k, M=M, seed=seed, metric=metric)
            results = detector.score(test, threads=threads)
            scores = [r.adversarial_score for r in results]
            table.append((k, M, metrics.auc_from_arrays(scores, truth)))
    return table


def cmd_sweep(args: argparse.Namespace) -> int:
    calibration = storage.read_activations(args.calibration)
    test = storage.read_activations(args.test)
    table = sweep_table(calibration, test, args.k_list, args.M_list, args.seed, args.metric, args.threads)
    lines = ["k,M,auc"] + [f"{k},{M},{a!r}" for k, M, a in table]
    _emit("\n".join(lines) + "\n", args.out)
    return 0


def cmd_jl_check(args: argparse.Namespace) -> int:
    if args.activations:
        points = storage.read_activations(args.activations).vectors.astype(np.float64)
        if args.n_points:
            points = points[: args.n_points]
    else:
        gen = np.random.default_rng(np.random.SeedSequence([args.seed, 0x4A4C]))
        points = gen.standard_normal((args.n_points or 32, args.d))
    ensemble = sample_ensemble(args.seed, "jl-check", args.trials, args.k, points.shape[1])
    reports = [jl_distortion_check(points, R, args.epsilon) for R in ensemble]
    lines = [reports[0].as_text()]
    if args.trials > 1:
        within = np.array([r.within_bound_fraction for r in reports])
        ratios = np.concatenate([r.ratios for r in reports])
        audit = orthogonality_audit(ensemble)
        lines += [
            f"trials={args.trials}",
            f"mean_within_bound_fraction={float(within.mean())!r}",
            f"pooled_mean_ratio={float(ratios.mean())!r}",
            f"pooled_ratio_std_error={float(ratios.std(ddof=1) / np.sqrt(ratios.size))!r}",
            f"mean_row_inner_product={audit['mean_row_inner_product']!r}",
            f"mean_row_sq_norm={audit['mean_row_sq_norm']!r}",
        ]
    _emit("\n".join(lines) + "\n", args.out)
    return 0


# -------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rsad", description="Random subspace adversarial detection")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic calibration/test activation files")
    p.add_argument("--K", type=int, default=4)
    p.add_argument("--d", type=int, default=128)
    p.add_argument("--n-per-class", type=int, default=500)
    p.add_argument("--center-scale", type=float, default=10.0)
    p.add_argument("--noise-sigma", type=float, default=1.0)
    p.add_argument("--shift-fraction", type=float, default=0.6)
    p.add_argument("--nonrobust-fraction", type=float, default=0.25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--layer-id", default="penultimate")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("calibrate", help="fit prototypes and write a detector file")
    p.add_argument("clean", nargs="+", help="clean activation file(s), one per layer")
    p.add_argument("--k", type=int, default=DEFAULT_K)
    p.add_argument("--M", type=int, default=DEFAULT_M)
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    p.add_argument("--fraction", type=float, default=1.0, help="class-stratified share of records to use")
    _add_rsa_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("score", help="score test activations, write a CSV report")
    p.add_argument("test", nargs="+", help="test activation file(s), one per detector layer")
    p.add_argument("--detector", choices=("rsa", "lid", "dmd"), default="rsa")
    p.add_argument("--model", help="detector file (rsa)")
    p.add_argument("--calibration", help="clean calibration activations (lid, dmd)")
    p.add_argument("--alpha", type=float, default=None, help="decision threshold; rsa defaults to the stored value")
    p.add_argument("--metric", choices=("euclidean", "cosine"), default="euclidean", help="lid distance")
    p.add_argument("--knn", type=int, default=baselines.DEFAULT_K_NEIGHBORS)
    p.add_argument("--ridge", type=float, default=None)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("evaluate", help="AUC and ROC curve of a scored report")
    p.add_argument("report")
    p.add_argument("--out", help="ROC CSV path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="AUC over a grid of k and M")
    p.add_argument("calibration")
    p.add_argument("test")
    p.add_argument("--k-list", type=_int_list, default=[DEFAULT_K])
    p.add_argument("--M-list", type=_int_list, default=[DEFAULT_M])
    p.add_argument("--threads", type=int, default=1)
    _add_rsa_flags(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("jl-check", help="empirical Johnson-Lindenstrauss distortion report")
    p.add_argument("activations", nargs="?", help="activation file; standard-normal points if omitted")
    p.add_argument("--k", type=int, default=128)
    p.add_argument("--epsilon", type=float, default=0.5)
    p.add_argument("--n-points", type=int, default=None)
    p.add_argument("--d", type=int, default=512)
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_jl_check)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )
    try:
        return args.func(args)
    except RSADError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return 1
    except OSError as exc:
        logger.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
