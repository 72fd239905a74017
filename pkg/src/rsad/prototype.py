"""Activation sets, class prototypes and prototype distances."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from rsad.errors import (
    AdversarialInCalibrationError,
    DimensionMismatchError,
    EmptyClassError,
    InvalidConfigError,
    NonFiniteInputError,
    ZeroNormCosineError,
)

UNKNOWN_LABEL = -1
METRICS = ("euclidean", "cosine")


class Truth(enum.IntEnum):
    """Ground-truth flag of an activation record (values match the file format)."""

    CLEAN = 0
    ADVERSARIAL = 1
    UNKNOWN = 2


@dataclass(frozen=True, eq=False)
class ActivationSet:
    """Labelled activation vectors for one layer.

    Vectors are held as float32, which is also their on-disk precision; every
    computation upcasts to float64. Sample ids must be unique within a set.

    Attributes:
        layer_id: Name of the source layer.
        n_classes: Number of classes ``K`` declared for the set.
        sample_ids: One identifier per record.
        labels: int32 class labels in ``[0, K)``, or ``-1`` when unknown.
        truth: uint8 :class:`Truth` flags.
        vectors: float32 array of shape ``(N, d)``.
    """

    layer_id: str
    n_classes: int
    sample_ids: tuple[str, ...]
    labels: np.ndarray
    truth: np.ndarray
    vectors: np.ndarray

    def __post_init__(self) -> None:
        ids = tuple(str(s) for s in self.sample_ids)
        n = len(ids)
        labels = np.array(self.labels, dtype=np.int32).reshape(-1)
        truth = np.array(self.truth, dtype=np.uint8).reshape(-1)
        vectors = np.array(self.vectors, dtype=np.float32, order="C")
        if vectors.ndim == 1 and vectors.size == 0:
            vectors = vectors.reshape(0, 0)
        if vectors.ndim != 2:
            raise DimensionMismatchError(f"vectors must be 2D, got shape {vectors.shape}")
        if not (labels.size == truth.size == vectors.shape[0] == n):
            raise DimensionMismatchError("sample_ids, labels, truth and vectors disagree in length")
        if self.n_classes < 0:
            raise InvalidConfigError("n_classes must be non-negative")
        if n and (labels.min() < UNKNOWN_LABEL or labels.max() >= self.n_classes):
            raise InvalidConfigError(f"class labels must lie in [-1, {self.n_classes})")
        if n and truth.max() > Truth.UNKNOWN:
            raise InvalidConfigError("truth flags must be 0, 1 or 2")
        if not np.all(np.isfinite(vectors)):
            raise NonFiniteInputError("activation vectors must be finite")
        if len(set(ids)) != n:
            raise InvalidConfigError("sample ids must be unique")
        for arr in (labels, truth, vectors):
            arr.setflags(write=False)
        object.__setattr__(self, "sample_ids", ids)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "truth", truth)
        object.__setattr__(self, "vectors", vectors)

    @classmethod
    def from_records(
        cls,
        layer_id: str,
        n_classes: int,
        records: Iterable[tuple[str, int, int, Sequence[float]]],
        dim: int | None = None,
    ) -> ActivationSet:
        """Build a set from ``(sample_id, label, truth, vector)`` tuples."""
        records = list(records)
        ids = [r[0] for r in records]
        labels = [r[1] for r in records]
        truth = [int(r[2]) for r in records]
        if records:
            vectors = np.array([np.asarray(r[3], dtype=np.float32) for r in records])
        else:
            vectors = np.zeros((0, dim or 0), dtype=np.float32)
        return cls(layer_id, n_classes, tuple(ids), labels, truth, vectors)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.sample_ids)

    def subset(self, indices: Sequence[int] | np.ndarray) -> ActivationSet:
        idx = np.asarray(indices, dtype=np.int64)
        return ActivationSet(
            self.layer_id,
            self.n_classes,
            tuple(self.sample_ids[i] for i in idx),
            self.labels[idx],
            self.truth[idx],
            self.vectors[idx],
        )

    def equals(self, other: ActivationSet) -> bool:
        """Field-by-field, bit-level equality."""
        return (
            self.layer_id == other.layer_id
            and self.n_classes == other.n_classes
            and self.sample_ids == other.sample_ids
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.truth, other.truth)
            and self.vectors.shape == other.vectors.shape
            and self.vectors.tobytes() == other.vectors.tobytes()
        )


@dataclass(frozen=True, eq=False)
class PrototypeSet:
    """One mean activation vector per class for a layer."""

    layer_id: str
    prototypes: np.ndarray
    support_counts: np.ndarray

    def __post_init__(self) -> None:
        protos = np.array(self.prototypes, dtype=np.float64, order="C")
        counts = np.array(self.support_counts, dtype=np.int64).reshape(-1)
        if protos.ndim != 2 or protos.shape[0] != counts.size:
            raise DimensionMismatchError("need exactly one prototype per support count")
        if counts.size and counts.min() < 1:
            raise EmptyClassError("every class needs at least one supporting record")
        if not np.all(np.isfinite(protos)):
            raise NonFiniteInputError("prototypes must be finite")
        protos.setflags(write=False)
        counts.setflags(write=False)
        object.__setattr__(self, "prototypes", protos)
        object.__setattr__(self, "support_counts", counts)

    @property
    def K(self) -> int:
        return self.prototypes.shape[0]

    @property
    def dim(self) -> int:
        return self.prototypes.shape[1]

    def scaled(self, factor: float) -> PrototypeSet:
        return PrototypeSet(self.layer_id, self.prototypes * factor, self.support_counts)


def fit_prototypes(calibration: ActivationSet) -> PrototypeSet:
    """Per-class arithmetic mean of clean calibration activations.

    Records are summed in ``sample_id`` order so the result does not depend on
    file ordering. Records flagged unknown are treated as clean.

    Raises:
        AdversarialInCalibrationError: If any record is flagged adversarial.
        EmptyClassError: If a class in ``[0, K)`` has no records, or a record's
            label is unknown.
    """
    if np.any(calibration.truth == Truth.ADVERSARIAL):
        raise AdversarialInCalibrationError("calibration data must be clean-only")
    if np.any(calibration.labels == UNKNOWN_LABEL):
        raise EmptyClassError("calibration records need class labels")
    K = calibration.n_classes
    order = sorted(range(len(calibration)), key=calibration.sample_ids.__getitem__)
    labels = calibration.labels[order]
    vectors = calibration.vectors[order].astype(np.float64)
    counts = np.bincount(labels, minlength=K) if len(labels) else np.zeros(K, dtype=np.int64)
    missing = np.flatnonzero(counts == 0)
    if missing.size or K == 0:
        raise EmptyClassError(f"classes without calibration records: {missing.tolist()}")
    protos = np.empty((K, calibration.dim), dtype=np.float64)
    for c in range(K):
        protos[c] = vectors[labels == c].sum(axis=0) / counts[c]
    return PrototypeSet(calibration.layer_id, protos, counts)


def _check_metric(metric: str) -> None:
    if metric not in METRICS:
        raise InvalidConfigError(f"unknown metric {metric!r}; expected one of {METRICS}")


def distance(u, v, metric: str = "euclidean") -> float:
    """Euclidean distance, or cosine distance ``1 - cos(u, v)`` in ``[0, 2]``."""
    _check_metric(metric)
    a = np.asarray(u, dtype=np.float64)
    b = np.asarray(v, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionMismatchError(f"shapes {a.shape} and {b.shape} differ")
    if metric == "euclidean":
        diff = a - b
        return float(np.sqrt(diff @ diff))
    na, nb = np.sqrt(a @ a), np.sqrt(b @ b)
    if na == 0.0 or nb == 0.0:
        raise ZeroNormCosineError("cosine distance is undefined for zero vectors")
    return float(np.clip(1.0 - (a @ b) / (na * nb), 0.0, 2.0))


def distance_matrix(Z: np.ndarray, P: np.ndarray, metric: str = "euclidean") -> np.ndarray:
    """Distances between every row of ``Z`` (n, k) and every row of ``P`` (K, k).

    Each entry is computed from the explicit difference (euclidean) or explicit
    norms (cosine), so row ``i`` of the result does not depend on the other rows.
    """
    _check_metric(metric)
    if Z.shape[1] != P.shape[1]:
        raise DimensionMismatchError(f"vector lengths {Z.shape[1]} and {P.shape[1]} differ")
    if metric == "euclidean":
        diff = Z[:, None, :] - P[None, :, :]
        return np.sqrt(np.einsum("nkj,nkj->nk", diff, diff))
    zn = np.sqrt(np.einsum("nj,nj->n", Z, Z))
    pn = np.sqrt(np.einsum("kj,kj->k", P, P))
    if np.any(zn == 0.0) or np.any(pn == 0.0):
        raise ZeroNormCosineError("cosine distance is undefined for zero vectors")
    dots = np.einsum("nj,kj->nk", Z, P)
    return np.clip(1.0 - dots / (zn[:, None] * pn[None, :]), 0.0, 2.0)


def nearest_prototype(z, prototypes: PrototypeSet, metric: str = "euclidean") -> tuple[int, float]:
    """Label and distance of the closest prototype; ties go to the smallest label."""
    vec = np.asarray(z, dtype=np.float64)
    if vec.shape != (prototypes.dim,):
        raise DimensionMismatchError(f"expected a vector of length {prototypes.dim}")
    dists = distance_matrix(vec[None, :], prototypes.prototypes, metric)[0]
    label = int(np.argmin(dists))
    return label, float(dists[label])


def calibration_split(
    clean: ActivationSet, fraction: float, seed: int = 0
) -> tuple[ActivationSet, ActivationSet]:
    """Split off a seeded, class-stratified ``fraction`` of records for calibration.

    Each class keeps ``max(1, round(fraction * n_c))`` records in the calibration
    part; the rest are returned as the held-out part.
    """
    if not 0.0 < fraction <= 1.0:
        raise InvalidConfigError(f"fraction must lie in (0, 1], got {fraction}")
    gen = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    order = np.array(sorted(range(len(clean)), key=clean.sample_ids.__getitem__), dtype=np.int64)
    chosen: list[int] = []
    for c in np.unique(clean.labels):
        members = order[clean.labels[order] == c]
        take = max(1, int(round(fraction * members.size)))
        chosen.extend(gen.permutation(members)[:take].tolist())
    chosen_set = set(chosen)
    rest = [i for i in range(len(clean)) if i not in chosen_set]
    return clean.subset(sorted(chosen)), clean.subset(rest)
