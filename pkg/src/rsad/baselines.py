"""One-class baseline detectors: local intrinsic dimensionality and Mahalanobis.

Both scorers are fitted on clean activations only. Their raw scalar scores are
turned into anomaly levels by :class:`OneClassCalibration`, an empirical
quantile map over the clean calibration scores. The map is monotone, so
ranking by anomaly level never reverses the ranking by raw score.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg

from rsad.errors import (
    AdversarialInCalibrationError,
    DimensionMismatchError,
    EmptyClassError,
    InsufficientReferencesError,
    InvalidConfigError,
    NonFiniteInputError,
    SingularCovarianceError,
    TooFewScoresError,
    ZeroNormCosineError,
    ZeroRadiusError,
)
from rsad.prototype import UNKNOWN_LABEL, ActivationSet, Truth

DEFAULT_K_NEIGHBORS = 20
MIN_ONE_CLASS_SCORES = 10
_KNN_SLACK = 8
_QUERY_BLOCK = 512


# --------------------------------------------------------------------------- LID


@dataclass(frozen=True)
class LidConfig:
    """Reference set and neighbourhood size for LID estimates."""

    reference_set: ActivationSet
    k_neighbors: int = DEFAULT_K_NEIGHBORS

    def __post_init__(self) -> None:
        if self.k_neighbors < 2:
            raise InvalidConfigError(f"k_neighbors must be >= 2, got {self.k_neighbors}")
        if len(self.reference_set) <= self.k_neighbors:
            raise InsufficientReferencesError(
                f"reference set has {len(self.reference_set)} points; "
                f"need more than k_neighbors={self.k_neighbors}"
            )


def lid_from_distances(radii: np.ndarray) -> float:
    """Maximum-likelihood LID from sorted neighbour distances ``r_1 <= ... <= r_k``.

    ``-1 / mean(log(r_i / r_k))``. Returns ``inf`` when all neighbours sit at the
    same radius, and 0 when some neighbour coincides with the query.

    Raises:
        ZeroRadiusError: If ``r_k == 0``.
    """
    r = np.asarray(radii, dtype=np.float64)
    rk = r[-1]
    if rk <= 0.0:
        raise ZeroRadiusError("all k nearest neighbours coincide with the query")
    with np.errstate(divide="ignore"):
        mean_log = float(np.mean(np.log(r / rk)))
    if mean_log == 0.0:
        return math.inf
    return -1.0 / mean_log


class _FlatIndex:
    """Brute-force k-NN over an immutable reference matrix."""

    def __init__(self, reference: ActivationSet, metric: str) -> None:
        if metric not in ("euclidean", "cosine"):
            raise InvalidConfigError(f"unknown metric {metric!r}")
        self.metric = metric
        self.ids = {sid: i for i, sid in enumerate(reference.sample_ids)}
        X = reference.vectors.astype(np.float64)
        if metric == "cosine":
            norms = np.linalg.norm(X, axis=1)
            if np.any(norms == 0.0):
                raise ZeroNormCosineError("reference set contains a zero vector")
            X = X / norms[:, None]
        self.X = X
        self.sq = np.einsum("ij,ij->i", X, X)

    def _exact(self, q: np.ndarray, rows: np.ndarray) -> np.ndarray:
        if self.metric == "euclidean":
            diff = self.X[rows] - q
            return np.sqrt(np.einsum("ij,ij->i", diff, diff))
        return np.clip(1.0 - self.X[rows] @ q, 0.0, 2.0)

    def knn(self, Q: np.ndarray, k: int, exclude: Sequence[str | None]) -> np.ndarray:
        """Sorted distances to the ``k`` nearest references for each query row."""
        Q = np.asarray(Q, dtype=np.float64)
        if Q.ndim != 2 or Q.shape[1] != self.X.shape[1]:
            raise DimensionMismatchError(f"queries must have length {self.X.shape[1]}")
        if not np.all(np.isfinite(Q)):
            raise NonFiniteInputError("queries must be finite")
        if self.metric == "cosine":
            qn = np.linalg.norm(Q, axis=1)
            if np.any(qn == 0.0):
                raise ZeroNormCosineError("query is a zero vector")
            Q = Q / qn[:, None]
        n_ref = self.X.shape[0]
        out = np.empty((Q.shape[0], k), dtype=np.float64)
        for lo in range(0, Q.shape[0], _QUERY_BLOCK):
            block = Q[lo : lo + _QUERY_BLOCK]
            # Expanded-form distances only shortlist candidates; the kept
            # distances are recomputed from explicit differences.
            approx = self.sq[None, :] + np.einsum("ij,ij->i", block, block)[:, None]
            approx -= 2.0 * block @ self.X.T
            for i, q in enumerate(block):
                row = approx[i]
                skip = exclude[lo + i]
                skip_idx = self.ids.get(skip) if skip is not None else None
                if skip_idx is not None:
                    row[skip_idx] = np.inf
                available = n_ref - (skip_idx is not None)
                if available < k:
                    raise InsufficientReferencesError(
                        f"only {available} references remain for k={k}"
                    )
                take = min(k + _KNN_SLACK, available)
                cand = np.argpartition(row, take - 1)[:take]
                if skip_idx is not None:
                    cand = cand[cand != skip_idx]
                exact = np.sort(self._exact(q, cand))
                out[lo + i] = exact[:k]
        return out


def lid_score(
    z,
    cfg: LidConfig,
    metric: str = "euclidean",
    sample_id: str | None = None,
) -> float:
    """LID estimate of ``z`` from its ``k_neighbors`` nearest reference points.

    A reference record whose sample id equals ``sample_id`` is excluded, so
    calibration points can be scored against their own reference set.
    """
    vec = np.asarray(z, dtype=np.float64)[None, :]
    radii = _FlatIndex(cfg.reference_set, metric).knn(vec, cfg.k_neighbors, [sample_id])[0]
    return lid_from_distances(radii)


def lid_scores(test: ActivationSet, cfg: LidConfig, metric: str = "euclidean") -> np.ndarray:
    """LID of every test record; records shared with the reference set are left out of their own neighbourhood."""
    if len(test) == 0:
        return np.empty(0)
    index = _FlatIndex(cfg.reference_set, metric)
    radii = index.knn(test.vectors, cfg.k_neighbors, list(test.sample_ids))
    return np.array([lid_from_distances(r) for r in radii])


# ------------------------------------------------------------------ Mahalanobis


@dataclass(eq=False)
class GaussianClassModel:
    """Class means with one covariance matrix shared by all classes."""

    class_means: np.ndarray
    shared_covariance: np.ndarray
    regularization: float
    _cho: tuple = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.class_means = np.array(self.class_means, dtype=np.float64)
        cov = np.array(self.shared_covariance, dtype=np.float64)
        d = self.class_means.shape[1]
        if cov.shape != (d, d):
            raise DimensionMismatchError(f"covariance must be {d}x{d}, got {cov.shape}")
        cov = 0.5 * (cov + cov.T)
        try:
            self._cho = linalg.cho_factor(cov, lower=True, check_finite=True)
        except (linalg.LinAlgError, ValueError) as exc:
            raise SingularCovarianceError(f"covariance is not positive definite: {exc}") from None
        self.shared_covariance = cov

    @property
    def K(self) -> int:
        return self.class_means.shape[0]

    @property
    def dim(self) -> int:
        return self.class_means.shape[1]

    def squared_distances(self, Z: np.ndarray) -> np.ndarray:
        """Squared Mahalanobis distance of each row of ``Z`` to each class mean."""
        Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
        if Z.shape[1] != self.dim:
            raise DimensionMismatchError(f"expected vectors of length {self.dim}")
        out = np.empty((Z.shape[0], self.K))
        for c, mu in enumerate(self.class_means):
            diff = Z - mu
            sol = linalg.cho_solve(self._cho, diff.T)
            out[:, c] = np.einsum("ij,ji->i", diff, sol)
        return out


def _clean_labelled(calibration: ActivationSet) -> None:
    if np.any(calibration.truth == Truth.ADVERSARIAL):
        raise AdversarialInCalibrationError("calibration data must be clean-only")
    if np.any(calibration.labels == UNKNOWN_LABEL):
        raise EmptyClassError("calibration records need class labels")


def pooled_covariance(X: np.ndarray, y: np.ndarray, K: int) -> tuple[np.ndarray, np.ndarray]:
    """Class means and within-class scatter divided by ``N - K``."""
    N, d = X.shape
    means = np.zeros((K, d))
    scatter = np.zeros((d, d))
    for c in range(K):
        Xc = X[y == c]
        means[c] = Xc.mean(axis=0)
        centred = Xc - means[c]
        scatter += centred.T @ centred
    return means, scatter / (N - K)


def fit_gaussian_model(calibration: ActivationSet, ridge: float | None = None) -> GaussianClassModel:
    """Fit class means and a tied covariance with ``ridge * I`` added.

    ``ridge=None`` uses ``1e-3 * trace(cov) / d``.

    Raises:
        EmptyClassError: If a class has fewer than two records.
        SingularCovarianceError: If the regularised covariance is not positive definite.
    """
    _clean_labelled(calibration)
    K = calibration.n_classes
    counts = np.bincount(calibration.labels, minlength=K) if len(calibration) else np.zeros(K)
    if K == 0 or np.any(counts < 2):
        raise EmptyClassError(f"every class needs >= 2 records, got counts {list(counts)}")
    X = calibration.vectors.astype(np.float64)
    means, cov = pooled_covariance(X, calibration.labels, K)
    d = X.shape[1]
    if ridge is None:
        ridge = 1e-3 * float(np.trace(cov)) / d
    if ridge < 0:
        raise InvalidConfigError(f"ridge must be non-negative, got {ridge}")
    return GaussianClassModel(means, cov + ridge * np.eye(d), float(ridge))


def mahalanobis_confidence(z, model: GaussianClassModel) -> float:
    """``max_c -(z - mu_c)^T Sigma^{-1} (z - mu_c)``; higher means more clean."""
    vec = np.asarray(z, dtype=np.float64)
    if vec.shape != (model.dim,):
        raise DimensionMismatchError(f"expected a vector of length {model.dim}")
    return float(-model.squared_distances(vec[None, :]).min())


def mahalanobis_confidences(test: ActivationSet, model: GaussianClassModel) -> np.ndarray:
    if len(test) == 0:
        return np.empty(0)
    return -model.squared_distances(test.vectors).min(axis=1)


# ------------------------------------------------------------- one-class map


@dataclass(frozen=True, eq=False)
class OneClassCalibration:
    """Empirical anomaly quantile learned from clean scores.

    ``anomaly(s)`` is the fraction of calibration scores strictly less anomalous
    than ``s``, where "more anomalous" means larger when
    ``higher_is_anomalous`` is set and smaller otherwise.
    """

    reference_scores: np.ndarray
    higher_is_anomalous: bool = True

    def oriented(self, scores) -> np.ndarray:
        s = np.asarray(scores, dtype=np.float64)
        return s if self.higher_is_anomalous else -s

    def anomaly(self, scores) -> np.ndarray | float:
        s = np.asarray(scores, dtype=np.float64)
        ref = self.reference_scores
        if self.higher_is_anomalous:
            below = np.searchsorted(ref, s, side="left")
        else:
            below = ref.size - np.searchsorted(ref, s, side="right")
        out = below / ref.size
        return float(out) if out.ndim == 0 else out


def fit_one_class(clean_scores, higher_is_anomalous: bool = True) -> OneClassCalibration:
    """Store sorted clean scores for the quantile map.

    Raises:
        TooFewScoresError: With fewer than 10 scores.
    """
    ref = np.sort(np.asarray(clean_scores, dtype=np.float64).reshape(-1))
    if ref.size < MIN_ONE_CLASS_SCORES:
        raise TooFewScoresError(f"need >= {MIN_ONE_CLASS_SCORES} clean scores, got {ref.size}")
    if np.any(np.isnan(ref)):
        raise NonFiniteInputError("clean scores contain NaN")
    ref.setflags(write=False)
    return OneClassCalibration(ref, higher_is_anomalous)


# ------------------------------------------------------------ fitted scorers


class LidDetector:
    """LID scorer plus one-class calibration; higher LID is more anomalous."""

    name = "lid"
    higher_is_anomalous = True

    def __init__(self, k_neighbors: int = DEFAULT_K_NEIGHBORS, metric: str = "euclidean") -> None:
        self.k_neighbors = k_neighbors
        self.metric = metric
        self.cfg: LidConfig | None = None
        self.calibration: OneClassCalibration | None = None

    def fit(self, calibration: ActivationSet) -> LidDetector:
        _clean_labelled(calibration)
        self.cfg = LidConfig(calibration, self.k_neighbors)
        # Each calibration point is scored with itself removed from the reference set.
        clean = lid_scores(calibration, self.cfg, self.metric)
        self.calibration = fit_one_class(clean, self.higher_is_anomalous)
        return self

    def raw_scores(self, test: ActivationSet) -> np.ndarray:
        if self.cfg is None:
            raise RuntimeError("LidDetector has not been fitted")
        return lid_scores(test, self.cfg, self.metric)


class MahalanobisDetector:
    """Tied-covariance Gaussian confidence plus one-class calibration; low confidence is anomalous."""

    name = "dmd"
    higher_is_anomalous = False

    def __init__(self, ridge: float | None = None) -> None:
        self.ridge = ridge
        self.model: GaussianClassModel | None = None
        self.calibration: OneClassCalibration | None = None

    def fit(self, calibration: ActivationSet) -> MahalanobisDetector:
        self.model = fit_gaussian_model(calibration, self.ridge)
        clean = mahalanobis_confidences(calibration, self.model)
        self.calibration = fit_one_class(clean, self.higher_is_anomalous)
        return self

    def raw_scores(self, test: ActivationSet) -> np.ndarray:
        if self.model is None:
            raise RuntimeError("MahalanobisDetector has not been fitted")
        return mahalanobis_confidences(test, self.model)
