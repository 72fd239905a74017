"""ROC curves and AUC for detector scores (higher score = more adversarial)."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from rsad.errors import NonFiniteInputError, SingleClassError


@dataclass(frozen=True)
class LabeledScore:
    sample_id: str
    score: float
    truth: int  # 0 clean, 1 adversarial


@dataclass(frozen=True)
class RocCurve:
    """Staircase of ``(threshold, fpr, tpr)`` points from (0, 0) to (1, 1)."""

    points: tuple[tuple[float, float, float], ...]
    auc: float

    @property
    def fpr(self) -> np.ndarray:
        return np.array([p[1] for p in self.points])

    @property
    def tpr(self) -> np.ndarray:
        return np.array([p[2] for p in self.points])


def _arrays(scores: Iterable[LabeledScore]) -> tuple[np.ndarray, np.ndarray]:
    items = list(scores)
    s = np.array([x.score for x in items], dtype=np.float64)
    y = np.array([x.truth for x in items], dtype=np.int64)
    return s, y


def roc_from_arrays(scores, truth) -> RocCurve:
    """ROC curve for parallel arrays of scores and 0/1 truth values.

    A sample is called adversarial when its score is ``>= threshold``. The
    thresholds are ``+inf`` followed by every distinct score in decreasing
    order, so tied scores move the curve in a single diagonal step. The area
    is accumulated in integer counts and divided once, which makes it equal to
    the tie-corrected Mann-Whitney statistic ``U / (n0 * n1)``.

    Raises:
        SingleClassError: If either class is absent.
    """
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(truth, dtype=np.int64).reshape(-1)
    if s.shape != y.shape:
        raise ValueError("scores and truth must have the same length")
    if not np.all(np.isfinite(s)):
        raise NonFiniteInputError("scores must be finite")
    if np.any((y != 0) & (y != 1)):
        raise ValueError("truth values must be 0 or 1")
    n1 = int(y.sum())
    n0 = int(y.size - n1)
    if n0 == 0 or n1 == 0:
        raise SingleClassError(f"need both classes, got {n0} clean and {n1} adversarial")

    order = np.argsort(-s, kind="stable")
    s_sorted, y_sorted = s[order], y[order]
    # Last index of each run of equal scores.
    ends = np.flatnonzero(np.r_[s_sorted[1:] != s_sorted[:-1], True])
    tp = np.cumsum(y_sorted)[ends]
    fp = (ends + 1) - tp
    thresholds = s_sorted[ends]

    points = [(math.inf, 0.0, 0.0)]
    area2 = 0  # twice the area, in units of 1 / (n0 * n1)
    prev_tp = prev_fp = 0
    for thr, t, f in zip(thresholds.tolist(), tp.tolist(), fp.tolist()):
        area2 += (f - prev_fp) * (t + prev_tp)
        points.append((thr, f / n0, t / n1))
        prev_tp, prev_fp = t, f
    return RocCurve(tuple(points), area2 / (2 * n0 * n1))


def roc_curve(scores: Sequence[LabeledScore]) -> RocCurve:
    s, y = _arrays(scores)
    return roc_from_arrays(s, y)


def auc(scores: Sequence[LabeledScore]) -> float:
    return roc_curve(scores).auc


def auc_from_arrays(scores, truth) -> float:
    return roc_from_arrays(scores, truth).auc


def write_roc_csv(curve: RocCurve, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["threshold", "fpr", "tpr"])
        for thr, fpr, tpr in curve.points:
            writer.writerow([repr(thr), repr(fpr), repr(tpr)])


def format_auc(value: float) -> str:
    return f"auc={value!r}"
