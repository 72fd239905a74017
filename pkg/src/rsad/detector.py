"""Random subspace analysis detector.

A test activation and every class prototype are projected into each of the
``M`` random subspaces of a layer, and the label of the closest projected
prototype is recorded. Clean activations keep choosing the same prototype;
activations whose position depends on manipulated features do not. The
fraction of labels that agree with the modal label is the consistency score,
and a sample is flagged when that fraction falls below ``alpha``.

Batch scoring works on fixed-size row blocks. A block's result depends only on
its own rows, so serial and threaded runs produce bit-identical output.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from rsad.errors import (
    AlphaOutOfRangeError,
    DimensionMismatchError,
    EmptyInputError,
    InvalidConfigError,
    LayerMismatchError,
    SingleClassError,
)
from rsad.projection import ProjectionEnsemble, sample_ensemble
from rsad.prototype import ActivationSet, PrototypeSet, distance_matrix, fit_prototypes

logger = logging.getLogger(__name__)

DEFAULT_K = 16
DEFAULT_M = 8
DEFAULT_ALPHA = 1.0
DEFAULT_METRIC = "euclidean"
BLOCK_ROWS = 256


@dataclass(frozen=True)
class NearestLabelSet:
    """Nearest-prototype label for each projection of one layer, in ensemble order."""

    layer_id: str
    labels: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class DetectionResult:
    sample_id: str
    consistency: float
    adversarial_score: float
    verdict: int
    alpha: float
    labels: tuple[int, ...]
    mode_label: int


@dataclass(frozen=True)
class LayerModel:
    """Calibrated state of one layer: its prototypes and projection ensemble."""

    prototypes: PrototypeSet
    ensemble: ProjectionEnsemble

    def __post_init__(self) -> None:
        if self.prototypes.layer_id != self.ensemble.layer_id:
            raise LayerMismatchError(
                f"prototypes for {self.prototypes.layer_id!r} paired with an ensemble "
                f"for {self.ensemble.layer_id!r}"
            )
        if self.prototypes.dim != self.ensemble.d:
            raise DimensionMismatchError(
                f"prototypes have d={self.prototypes.dim}, ensemble has d={self.ensemble.d}"
            )

    @property
    def layer_id(self) -> str:
        return self.prototypes.layer_id


def _layer_labels(Z: np.ndarray, layer: LayerModel, metric: str) -> np.ndarray:
    """Nearest projected-prototype labels, shape ``(n, M)``, for a block of rows."""
    P = layer.prototypes.prototypes
    out = np.empty((Z.shape[0], layer.ensemble.M), dtype=np.int64)
    for m, R in enumerate(layer.ensemble):
        Zp = Z @ R.entries.T
        Pp = P @ R.entries.T
        out[:, m] = np.argmin(distance_matrix(Zp, Pp, metric), axis=1)
    return out


def random_subspace_analysis(
    z,
    prototypes: PrototypeSet,
    ensemble: ProjectionEnsemble,
    metric: str = DEFAULT_METRIC,
) -> NearestLabelSet:
    """Nearest-prototype label of ``z`` in every subspace of ``ensemble``.

    Raises:
        LayerMismatchError: If prototypes and ensemble belong to different layers.
        DimensionMismatchError: If ``z`` does not have the ensemble's ambient dimension.
    """
    layer = LayerModel(prototypes, ensemble)
    vec = np.asarray(z, dtype=np.float64)
    if vec.shape != (ensemble.d,):
        raise DimensionMismatchError(f"expected a vector of length {ensemble.d}, got {vec.shape}")
    labels = _layer_labels(vec[None, :], layer, metric)[0]
    return NearestLabelSet(prototypes.layer_id, tuple(int(c) for c in labels))


def aggregate_layers(per_layer: Sequence[NearestLabelSet]) -> tuple[int, ...]:
    """Unweighted multiset union (concatenation) of per-layer label sets."""
    if not per_layer:
        raise EmptyInputError("need at least one layer to aggregate")
    out: list[int] = []
    for nls in per_layer:
        out.extend(nls.labels)
    return tuple(out)


def mode_and_count(labels: Sequence[int]) -> tuple[int, int]:
    """Most frequent label (smallest on ties) and its count."""
    arr = np.asarray(labels, dtype=np.int64)
    if arr.size == 0:
        raise EmptyInputError("label multiset is empty")
    counts = np.bincount(arr)
    mode = int(np.argmax(counts))
    return mode, int(counts[mode])


def consistency_score(labels: Sequence[int]) -> float:
    """Fraction of labels equal to the modal label."""
    mode, count = mode_and_count(labels)
    return count / len(labels)


def decide(consistency: float, alpha: float) -> int:
    """1 (adversarial) iff ``consistency < alpha``, else 0."""
    if not 0.0 <= alpha <= 1.0:
        raise AlphaOutOfRangeError(f"alpha must lie in [0, 1], got {alpha}")
    if not 0.0 <= consistency <= 1.0:
        raise AlphaOutOfRangeError(f"consistency must lie in [0, 1], got {consistency}")
    return int(consistency < alpha)


def _result(sample_id: str, labels: tuple[int, ...], alpha: float) -> DetectionResult:
    mode, count = mode_and_count(labels)
    consistency = count / len(labels)
    return DetectionResult(
        sample_id=sample_id,
        consistency=consistency,
        adversarial_score=1.0 - consistency,
        verdict=decide(consistency, alpha),
        alpha=alpha,
        labels=labels,
        mode_label=mode,
    )


def _as_layer_list(obj, layer_ids: Sequence[str], what: str) -> list:
    if isinstance(obj, Mapping):
        try:
            return [obj[lid] for lid in layer_ids]
        except KeyError as exc:
            raise LayerMismatchError(f"no {what} for layer {exc.args[0]!r}") from None
    if not isinstance(obj, (list, tuple)):
        obj = [obj]
    if len(obj) != len(layer_ids):
        raise LayerMismatchError(f"expected {len(layer_ids)} {what}, got {len(obj)}")
    return list(obj)


def _check_aligned(tests: Sequence[ActivationSet], layers: Sequence[LayerModel]) -> None:
    for test, layer in zip(tests, layers):
        if test.layer_id != layer.layer_id:
            raise LayerMismatchError(
                f"test data for {test.layer_id!r} scored against layer {layer.layer_id!r}"
            )
        if len(test) and test.dim != layer.ensemble.d:
            raise DimensionMismatchError(
                f"layer {layer.layer_id!r}: test d={test.dim}, detector d={layer.ensemble.d}"
            )
    first = tests[0].sample_ids
    for test in tests[1:]:
        if test.sample_ids != first:
            raise LayerMismatchError("per-layer test sets must list the same samples in order")


def score_batch(
    test: ActivationSet | Sequence[ActivationSet],
    prototypes: PrototypeSet | Sequence[PrototypeSet],
    ensembles: ProjectionEnsemble | Sequence[ProjectionEnsemble],
    metric: str = DEFAULT_METRIC,
    alpha: float = DEFAULT_ALPHA,
    threads: int = 1,
) -> list[DetectionResult]:
    """Score every test record, aggregating labels over all given layers.

    ``test`` holds one :class:`ActivationSet` per layer (or a single set); sets
    are matched to prototypes and ensembles by position and must list the same
    sample ids in the same order. Output order follows the input.
    """
    protos = prototypes if isinstance(prototypes, (list, tuple)) else [prototypes]
    ens = ensembles if isinstance(ensembles, (list, tuple)) else [ensembles]
    if len(protos) != len(ens):
        raise LayerMismatchError("need one ensemble per prototype set")
    layers = [LayerModel(p, e) for p, e in zip(protos, ens)]
    tests = _as_layer_list(test, [l.layer_id for l in layers], "test sets")
    return _score_layers(tests, layers, metric, alpha, threads)


def _score_layers(
    tests: Sequence[ActivationSet],
    layers: Sequence[LayerModel],
    metric: str,
    alpha: float,
    threads: int,
) -> list[DetectionResult]:
    if not layers:
        raise EmptyInputError("detector has no layers")
    if not 0.0 <= alpha <= 1.0:
        raise AlphaOutOfRangeError(f"alpha must lie in [0, 1], got {alpha}")
    if threads < 1:
        raise InvalidConfigError(f"threads must be >= 1, got {threads}")
    _check_aligned(tests, layers)
    n = len(tests[0])
    if n == 0:
        return []
    blocks = [(s, min(s + BLOCK_ROWS, n)) for s in range(0, n, BLOCK_ROWS)]
    mats = [t.vectors.astype(np.float64) for t in tests]

    def run(bounds: tuple[int, int]) -> np.ndarray:
        lo, hi = bounds
        return np.concatenate(
            [_layer_labels(Z[lo:hi], layer, metric) for Z, layer in zip(mats, layers)], axis=1
        )

    if threads == 1 or len(blocks) == 1:
        parts = [run(b) for b in blocks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, blocks))
    labels = np.concatenate(parts, axis=0)
    ids = tests[0].sample_ids
    return [_result(ids[i], tuple(int(c) for c in labels[i]), alpha) for i in range(n)]


@dataclass(frozen=True)
class Detector:
    """Calibrated random-subspace detector over one or more layers."""

    layers: tuple[LayerModel, ...]
    metric: str = DEFAULT_METRIC
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self) -> None:
        layers = tuple(self.layers)
        if not layers:
            raise EmptyInputError("detector has no layers")
        if len({l.layer_id for l in layers}) != len(layers):
            raise LayerMismatchError("layer ids must be unique")
        Ks = {l.prototypes.K for l in layers}
        if len(Ks) != 1:
            raise LayerMismatchError(f"layers disagree on the class count: {sorted(Ks)}")
        if Ks.pop() < 2:
            raise SingleClassError("a single-class prototype set makes every sample consistent")
        if self.metric not in ("euclidean", "cosine"):
            raise InvalidConfigError(f"unknown metric {self.metric!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise AlphaOutOfRangeError(f"alpha must lie in [0, 1], got {self.alpha}")
        object.__setattr__(self, "layers", layers)

    @classmethod
    def calibrate(
        cls,
        calibration: ActivationSet | Sequence[ActivationSet],
        k: int = DEFAULT_K,
        M: int = DEFAULT_M,
        seed: int = 0,
        metric: str = DEFAULT_METRIC,
        alpha: float = DEFAULT_ALPHA,
    ) -> Detector:
        """Fit prototypes on clean data and draw one ensemble per layer."""
        sets = calibration if isinstance(calibration, (list, tuple)) else [calibration]
        layers = []
        for cal in sets:
            protos = fit_prototypes(cal)
            ensemble = sample_ensemble(seed, cal.layer_id, M, k, cal.dim)
            layers.append(LayerModel(protos, ensemble))
            logger.info(
                "calibrated layer %s: K=%d d=%d counts=%s k=%d M=%d",
                cal.layer_id, protos.K, protos.dim, protos.support_counts.tolist(), k, M,
            )
        return cls(tuple(layers), metric=metric, alpha=alpha)

    @property
    def layer_ids(self) -> tuple[str, ...]:
        return tuple(l.layer_id for l in self.layers)

    def with_alpha(self, alpha: float) -> Detector:
        return Detector(self.layers, self.metric, alpha)

    def nearest_labels(self, z_per_layer: Sequence) -> list[NearestLabelSet]:
        return [
            random_subspace_analysis(z, l.prototypes, l.ensemble, self.metric)
            for z, l in zip(z_per_layer, self.layers)
        ]

    def score(
        self, test: ActivationSet | Sequence[ActivationSet], threads: int = 1
    ) -> list[DetectionResult]:
        tests = _as_layer_list(test, self.layer_ids, "test sets")
        return _score_layers(tests, self.layers, self.metric, self.alpha, threads)
