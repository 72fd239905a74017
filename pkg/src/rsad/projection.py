"""Gaussian random projections and empirical Johnson-Lindenstrauss audits.

Matrices are never persisted entry by entry. Each one is a deterministic
function of ``(master_seed, layer_id, index, k, d)`` drawn from the
counter-based stream in :mod:`rsad.rng`, so any member of an ensemble can be
rebuilt on its own.

Projection applies the raw matrix product with no ``1/sqrt(k)`` factor.
Nearest-prototype decisions are unaffected by a common positive scale; the
normalisation only matters when comparing distances across spaces, which is
done inside :func:`jl_distortion_check`.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence

import numpy as np

from rsad import rng
from rsad.errors import (
    DegeneratePairError,
    DimensionMismatchError,
    EpsilonOutOfRangeError,
    InvalidDimensionsError,
    NonFiniteInputError,
)


@dataclass(frozen=True, eq=False)
class ProjectionMatrix:
    """A ``k x d`` matrix with i.i.d. standard normal entries.

    Attributes:
        entries: Read-only float64 array of shape ``(rows, cols)``.
        seed: Master seed of the ensemble the matrix belongs to.
        index: Position of the matrix within its ensemble.
        layer_id: Layer the ensemble was keyed on.
    """

    entries: np.ndarray
    seed: int
    index: int
    layer_id: str = ""

    def __post_init__(self) -> None:
        entries = np.array(self.entries, dtype=np.float64, order="C")
        if entries.ndim != 2:
            raise InvalidDimensionsError(f"expected a 2D matrix, got shape {entries.shape}")
        k, d = entries.shape
        if k < 1 or d < 1 or k > d:
            raise InvalidDimensionsError(f"need 1 <= k <= d, got k={k}, d={d}")
        if not np.all(np.isfinite(entries)):
            raise NonFiniteInputError("projection entries must be finite")
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    @property
    def rows(self) -> int:
        return self.entries.shape[0]

    @property
    def cols(self) -> int:
        return self.entries.shape[1]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ProjectionMatrix):
            return NotImplemented
        return (
            self.seed == other.seed
            and self.index == other.index
            and self.layer_id == other.layer_id
            and self.entries.shape == other.entries.shape
            and self.entries.tobytes() == other.entries.tobytes()
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class ProjectionEnsemble:
    """Ordered set of ``M`` projection matrices sharing one ``(k, d)``."""

    projections: tuple[ProjectionMatrix, ...]
    master_seed: int
    layer_id: str

    def __post_init__(self) -> None:
        projections = tuple(self.projections)
        if not projections:
            raise InvalidDimensionsError("an ensemble needs at least one projection")
        shape = projections[0].entries.shape
        for position, matrix in enumerate(projections):
            if matrix.entries.shape != shape:
                raise InvalidDimensionsError("all ensemble members must share (k, d)")
            if matrix.index != position:
                raise InvalidDimensionsError(
                    f"member {position} carries index {matrix.index}; indices must be 0..M-1"
                )
        object.__setattr__(self, "projections", projections)

    @property
    def M(self) -> int:
        return len(self.projections)

    @property
    def k(self) -> int:
        return self.projections[0].rows

    @property
    def d(self) -> int:
        return self.projections[0].cols

    def __len__(self) -> int:
        return len(self.projections)

    def __iter__(self):
        return iter(self.projections)

    def __getitem__(self, index: int) -> ProjectionMatrix:
        return self.projections[index]


@dataclass(frozen=True)
class DistortionReport:
    """Summary of normalised squared-distance ratios over all point pairs."""

    epsilon: float
    pair_count: int
    within_bound_fraction: float
    min_ratio: float
    max_ratio: float
    mean_ratio: float
    required_dim: int
    degenerate_pairs: int = 0
    ratios: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False, compare=False)

    def as_text(self) -> str:
        lines = [
            f"epsilon={self.epsilon!r}",
            f"pair_count={self.pair_count}",
            f"degenerate_pairs={self.degenerate_pairs}",
            f"within_bound_fraction={self.within_bound_fraction!r}",
            f"min_ratio={self.min_ratio!r}",
            f"max_ratio={self.max_ratio!r}",
            f"mean_ratio={self.mean_ratio!r}",
            f"required_dim={self.required_dim}",
        ]
        return "\n".join(lines)


def _check_counts(M: int, k: int, d: int) -> None:
    if M < 1 or k < 1 or d < 1:
        raise InvalidDimensionsError(f"counts must be positive, got M={M}, k={k}, d={d}")
    if k > d:
        raise InvalidDimensionsError(f"subspace dimension k={k} exceeds ambient dimension d={d}")


def sample_matrix(master_seed: int, layer_id: str, index: int, k: int, d: int) -> ProjectionMatrix:
    """Regenerate member ``index`` of an ensemble without touching the others."""
    _check_counts(1, k, d)
    key = rng.stream_key(master_seed, layer_id, index)
    entries = rng.standard_normals(key, 0, k * d).reshape(k, d)
    return ProjectionMatrix(entries=entries, seed=master_seed, index=index, layer_id=layer_id)


def sample_ensemble(master_seed: int, layer_id: str, M: int, k: int, d: int) -> ProjectionEnsemble:
    """Draw ``M`` independent ``k x d`` Gaussian matrices for one layer.

    Raises:
        InvalidDimensionsError: If any count is zero or ``k > d``.
    """
    _check_counts(M, k, d)
    projections = tuple(sample_matrix(master_seed, layer_id, m, k, d) for m in range(M))
    return ProjectionEnsemble(projections=projections, master_seed=master_seed, layer_id=layer_id)


def project(R: ProjectionMatrix, z) -> np.ndarray:
    """Return ``R @ z`` (float64) for one vector or a ``(n, d)`` batch."""
    arr = np.asarray(z, dtype=np.float64)
    if arr.ndim not in (1, 2) or arr.shape[-1] != R.cols:
        raise DimensionMismatchError(
            f"expected vectors of length {R.cols}, got shape {arr.shape}"
        )
    if not np.all(np.isfinite(arr)):
        raise NonFiniteInputError("cannot project non-finite values")
    if arr.ndim == 1:
        return R.entries @ arr
    return arr @ R.entries.T


def row_checksum(R: ProjectionMatrix) -> bytes:
    """8-byte blake2b digest of the first row, used as a regeneration check."""
    first = np.ascontiguousarray(R.entries[0], dtype="<f8")
    return hashlib.blake2b(first.tobytes(), digest_size=8).digest()


def orthogonality_audit(ensemble: ProjectionEnsemble) -> dict[str, float]:
    """Mean off-diagonal row inner product and mean squared row norm.

    Rows of an i.i.d. Gaussian matrix are only approximately orthogonal; these two
    numbers quantify how close (expected values 0 and ``d``).
    """
    inner, norms = [], []
    for R in ensemble:
        gram = R.entries @ R.entries.T
        k = gram.shape[0]
        norms.append(np.trace(gram) / k)
        if k > 1:
            off = gram[~np.eye(k, dtype=bool)]
            inner.append(off.mean())
    return {
        "mean_row_inner_product": float(np.mean(inner)) if inner else 0.0,
        "mean_row_sq_norm": float(np.mean(norms)),
    }


def required_dimension(n_points: int, epsilon: float) -> int:
    """Target dimension ``ceil(8 ln n / eps^2)`` from the J-L lemma."""
    return math.ceil(8.0 * math.log(n_points) / epsilon**2)


def jl_distortion_check(
    points: Sequence[Sequence[float]] | np.ndarray,
    R: ProjectionMatrix,
    epsilon: float,
) -> DistortionReport:
    """Measure pairwise squared-distance distortion of ``R``.

    For each unordered pair the ratio ``||R(x_i - x_j)||^2 / (k * ||x_i - x_j||^2)``
    is computed; its expectation is 1 for standard normal entries. Coincident
    pairs are skipped and counted in ``degenerate_pairs``.

    Raises:
        EpsilonOutOfRangeError: If ``epsilon`` is not in ``(0, 1)``.
        DegeneratePairError: If no pair of distinct points exists.
    """
    if not 0.0 < epsilon < 1.0:
        raise EpsilonOutOfRangeError(f"epsilon must lie in (0, 1), got {epsilon}")
    X = np.asarray(points, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != R.cols:
        raise DimensionMismatchError(f"expected points of length {R.cols}, got shape {X.shape}")
    if X.shape[0] < 2:
        raise DegeneratePairError("need at least two points")
    if not np.all(np.isfinite(X)):
        raise NonFiniteInputError("points must be finite")

    projected = project(R, X)
    ratios = []
    degenerate = 0
    for i, j in combinations(range(X.shape[0]), 2):
        diff = X[i] - X[j]
        ambient = float(diff @ diff)
        if ambient == 0.0:
            degenerate += 1
            continue
        pdiff = projected[i] - projected[j]
        ratios.append(float(pdiff @ pdiff) / (R.rows * ambient))
    if not ratios:
        raise DegeneratePairError("all point pairs coincide; no distance ratio is defined")

    r = np.array(ratios)
    inside = (r >= 1.0 - epsilon) & (r <= 1.0 + epsilon)
    return DistortionReport(
        epsilon=epsilon,
        pair_count=int(r.size),
        within_bound_fraction=float(inside.mean()),
        min_ratio=float(r.min()),
        max_ratio=float(r.max()),
        mean_ratio=float(np.clip(r.mean(), r.min(), r.max())),
        required_dim=required_dimension(X.shape[0], epsilon),
        degenerate_pairs=degenerate,
        ratios=r,
    )
