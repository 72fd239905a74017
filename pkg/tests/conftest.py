from __future__ import annotations

import numpy as np
import pytest

from rsad import synth
from rsad.prototype import ActivationSet, Truth

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_set(vectors, labels, layer_id="pen", n_classes=None, truth=None, ids=None):
    vectors = np.asarray(vectors, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int32)
    n = len(labels)
    if n_classes is None:
        n_classes = int(labels.max()) + 1 if n else 0
    if truth is None:
        truth = np.full(n, Truth.CLEAN)
    if ids is None:
        ids = tuple(f"s{i:05d}" for i in range(n))
    return ActivationSet(layer_id, n_classes, tuple(ids), labels, truth, vectors)


@pytest.fixture(scope="session")
def small_synth():
    cfg = synth.SyntheticConfig(K=3, d=32, n_per_class=60, center_scale=10.0, noise_sigma=1.0,
                                shift_fraction=0.6, nonrobust_fraction=0.25, seed=11)
    return synth.generate_dataset(cfg)


@pytest.fixture(scope="session")
def acceptance_synth():
    cfg = synth.SyntheticConfig(K=4, d=128, n_per_class=500, center_scale=10.0, noise_sigma=1.0,
                                shift_fraction=0.6, nonrobust_fraction=0.25, seed=3)
    return synth.generate_dataset(cfg)
