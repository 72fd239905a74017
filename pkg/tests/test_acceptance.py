"""Acceptance criteria. Each test appends one PASS/FAIL line to the summary."""

import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import ACCEPTANCE_LINES
from test_detector import naive_labels
from test_storage import activation_sets, roundtrip_bytes_equal
from rsad.baselines import LidConfig, lid_score
from rsad.cli import main, sweep_table
from rsad.detector import Detector, decide, random_subspace_analysis
from rsad.metrics import auc_from_arrays
from rsad.projection import jl_distortion_check, sample_ensemble
from rsad.prototype import ActivationSet, PrototypeSet, fit_prototypes
from rsad.storage import format_report, rows_from_results, write_activations

pytestmark = pytest.mark.acceptance


def record(number, ok, detail):
    ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
    assert ok, detail


def test_criterion_1_oracle_equivalence():
    gen = np.random.default_rng(2024)
    mismatches, elapsed = 0, 0.0
    for i in range(200):
        d = int(gen.integers(2, 65))
        K = int(gen.integers(2, 6))
        M = int(gen.integers(1, 17))
        k = int(gen.integers(1, d + 1))
        P = PrototypeSet("layer", gen.standard_normal((K, d)) * 3, np.ones(K, dtype=np.int64))
        ens = sample_ensemble(int(gen.integers(2**63)), "layer", M, k, d)
        z = gen.standard_normal(d) * 3
        start = time.perf_counter()
        got = random_subspace_analysis(z, P, ens).labels
        elapsed += time.perf_counter() - start
        mismatches += list(got) != naive_labels(z.tolist(), P.prototypes.tolist(), ens)
    record(1, mismatches == 0 and elapsed < 10.0,
           f"{200 - mismatches}/200 instances match the naive oracle, detector time {elapsed:.2f}s (< 10s)")


def test_criterion_2_decision_lattice():
    failures, checked = [], 0
    for T in range(1, 33):
        lattice = [c / T for c in range(T + 1)]
        for x in lattice:
            checked += 1
            if decide(x, 0.0) != 0:
                failures.append(("alpha=0", x))
            if decide(x, 1.0) != int(x < 1.0):
                failures.append(("alpha=1", x))
            for a in lattice:
                if decide(x, a) != int(x < a):
                    failures.append((x, a))
    ok = not failures and decide(1.0, 1.0) == 0
    record(2, ok, f"decide() exact on {checked} lattice scores for T <= 32, {len(failures)} violations")


def test_criterion_3_jl_check():
    start = time.perf_counter()
    gen = np.random.default_rng(np.random.SeedSequence([3, 512]))
    points = gen.standard_normal((32, 512))
    ensemble = sample_ensemble(31337, "jl-acceptance", 100, 128, 512)
    reports = [jl_distortion_check(points, R, 0.5) for R in ensemble]
    elapsed = time.perf_counter() - start
    within = float(np.mean([r.within_bound_fraction for r in reports]))
    means = np.array([r.mean_ratio for r in reports])
    se = means.std(ddof=1) / np.sqrt(means.size)
    z = abs(means.mean() - 1.0) / se
    ok = within >= 0.95 and z <= 3.0 and elapsed < 30.0
    record(3, ok, f"within_bound_fraction={within:.4f} (>= 0.95), mean ratio {means.mean():.5f} "
                  f"is {z:.2f} SE from 1 (<= 3), {elapsed:.2f}s (< 30s)")


def test_criterion_4_auc_oracle():
    gen = np.random.default_rng(4)
    worst = 0.0
    for _ in range(1000):
        n = int(gen.integers(2, 201))
        truth = gen.integers(0, 2, n)
        truth[gen.choice(n, 2, replace=False)] = [0, 1]
        levels = int(gen.integers(1, 20))
        scores = gen.integers(0, levels, n) / levels if gen.uniform() < 0.5 else gen.standard_normal(n)
        pos, neg = scores[truth == 1], scores[truth == 0]
        diff = pos[:, None] - neg[None, :]
        pairwise = ((diff > 0).sum() + 0.5 * (diff == 0).sum()) / (pos.size * neg.size)
        worst = max(worst, abs(auc_from_arrays(scores, truth) - pairwise))
    record(4, worst <= 1e-12, f"max |AUC - pairwise statistic| = {worst:.3e} over 1000 sets (<= 1e-12)")


def _rsa_auc(data, k, M):
    det = Detector.calibrate(data.calibration, k=k, M=M, seed=0)
    scores = [r.adversarial_score for r in det.score(data.test, threads=4)]
    return auc_from_arrays(scores, data.test.truth.astype(int))


def test_criterion_5_synthetic_separability(acceptance_synth):
    start = time.perf_counter()
    base = _rsa_auc(acceptance_synth, 16, 8)
    low = _rsa_auc(acceptance_synth, 16, 2)
    high = _rsa_auc(acceptance_synth, 16, 32)
    elapsed = time.perf_counter() - start
    ok = base >= 0.90 and high - low >= 0.05 and elapsed < 60.0
    record(5, ok, f"AUC(k=16,M=8)={base:.4f} (>= 0.90), AUC(M=32)-AUC(M=2)={high:.4f}-{low:.4f}"
                  f"={high - low:.4f} (>= 0.05), {elapsed:.2f}s (< 60s)")


def test_criterion_6_k_sweep_shape(acceptance_synth):
    table = sweep_table(acceptance_synth.calibration, acceptance_synth.test,
                        [8, 16, 32, 64, 128], [8], seed=0, threads=4)
    aucs = {k: a for k, _, a in table}
    best = max(aucs.values())
    shown = ", ".join(f"k={k}:{a:.4f}" for k, a in aucs.items())
    record(6, aucs[128] <= best - 0.02, f"AUC(k=128)={aucs[128]:.4f} <= max-0.02={best - 0.02:.4f} [{shown}]")


def test_criterion_7_lid_sanity():
    from test_baselines import ball_points
    from conftest import make_set

    estimates = []
    for trial in range(50):
        gen = np.random.default_rng(np.random.SeedSequence([7, trial]))
        ref = make_set(ball_points(gen, 2000), np.zeros(2000, dtype=int))
        estimates.append(lid_score(np.zeros(32), LidConfig(ref, 20)))
    mean = float(np.mean(estimates))
    record(7, 3.5 <= mean <= 6.5,
           f"mean LID {mean:.3f} over 50 centre queries in [3.5, 6.5] (range {min(estimates):.2f}-{max(estimates):.2f})")


def test_criterion_8_cli_determinism(acceptance_synth, tmp_path, capsys):
    cal, test = tmp_path / "cal.rsad", tmp_path / "test.rsad"
    write_activations(acceptance_synth.calibration, cal)
    write_activations(acceptance_synth.test, test)
    model = tmp_path / "det.rsad"
    main(["calibrate", str(cal), "--k", "16", "--M", "8", "--seed", "42", "--alpha", "0.9",
          "--out", str(model)])
    det = Detector.calibrate(acceptance_synth.calibration, k=16, M=8, seed=42, alpha=0.9)
    expected = format_report(rows_from_results(det.score(acceptance_synth.test), acceptance_synth.test))
    identical = {}
    for threads in (1, 8):
        out = tmp_path / f"r{threads}.csv"
        code = main(["score", str(test), "--model", str(model), "--threads", str(threads), "--out", str(out)])
        identical[threads] = code == 0 and out.read_bytes() == expected.encode()
    capsys.readouterr()
    record(8, all(identical.values()),
           f"CLI report bit-identical to in-memory path: threads=1 {identical[1]}, threads=8 {identical[8]}")


class _Counter:
    def __init__(self):
        self.n = 0


def _scale_suite(counter):
    @settings(max_examples=150, deadline=None, derandomize=True)
    @given(st.integers(2, 24), st.integers(2, 5), st.integers(1, 8), st.integers(0, 2**32 - 1),
           st.integers(-20, 20), st.sampled_from(["euclidean", "cosine"]))
    def check(d, K, M, seed, exponent, metric):
        counter.n += 1
        gen = np.random.default_rng(seed)
        k = int(gen.integers(1, d + 1))
        P = gen.standard_normal((K, d))
        z = gen.standard_normal(d)
        ens = sample_ensemble(seed, "layer", M, k, d)
        c = 2.0 ** exponent
        base = random_subspace_analysis(z, PrototypeSet("layer", P, np.ones(K, int)), ens, metric)
        scaled = random_subspace_analysis(c * z, PrototypeSet("layer", c * P, np.ones(K, int)), ens, metric)
        assert base == scaled

    check()


def _permutation_suite(counter):
    @settings(max_examples=150, deadline=None, derandomize=True)
    @given(st.integers(1, 16), st.integers(1, 4), st.integers(1, 40), st.integers(0, 2**32 - 1))
    def check(d, K, extra, seed):
        counter.n += 1
        gen = np.random.default_rng(seed)
        n = K + extra
        labels = np.concatenate([np.arange(K), gen.integers(0, K, extra)]).astype(np.int32)
        vecs = (gen.standard_normal((n, d)) * 10 ** gen.uniform(-3, 3)).astype(np.float32)
        ids = tuple(f"id{j:04d}" for j in gen.permutation(n))
        truth = np.zeros(n, np.uint8)
        a = ActivationSet("layer", K, ids, labels, truth, vecs)
        perm = gen.permutation(n)
        b = a.subset(perm)
        pa, pb = fit_prototypes(a), fit_prototypes(b)
        assert pa.prototypes.tobytes() == pb.prototypes.tobytes()
        assert np.array_equal(pa.support_counts, pb.support_counts)

    check()


def _roundtrip_suite(counter):
    @settings(max_examples=150, deadline=None, derandomize=True)
    @given(activation_sets())
    def check(aset):
        counter.n += 1
        assert roundtrip_bytes_equal(aset)

    check()


def test_criterion_9_property_suites():
    results = {}
    for name, suite in (("scale invariance", _scale_suite), ("permutation invariance", _permutation_suite),
                        ("RSAD round-trip", _roundtrip_suite)):
        counter = _Counter()
        try:
            suite(counter)
            failed = False
        except Exception:  # hypothesis may wrap the falsifying example
            failed = True
        results[name] = (counter.n, failed)
    ok = all(n >= 100 and not failed for n, failed in results.values())
    shown = ", ".join(f"{k}: {n} cases {'FAILED' if f else 'ok'}" for k, (n, f) in results.items())
    record(9, ok, shown)
